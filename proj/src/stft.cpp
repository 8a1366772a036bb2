#include "tgcn/stft.hpp"

#include <cmath>
#include <memory>
#include <string>
#include <vector>

namespace tgcn {

namespace {

// Fixed linear map for one frame: precomputed real/imag DFT bases with the
// window folded in, so the transform (and its transpose for the backward
// pass) are plain dot products.
struct DftBasis {
  int window_len, bins;
  std::vector<double> cos_b, sin_b;  // bins x window_len

  explicit DftBasis(const StftSpec& spec)
      : window_len(spec.window_len), bins(spec.bins()) {
    cos_b.resize(static_cast<std::size_t>(bins) * window_len);
    sin_b.resize(static_cast<std::size_t>(bins) * window_len);
    for (int b = 0; b < bins; ++b)
      for (int s = 0; s < window_len; ++s) {
        double w = 1.0;
        if (spec.window == StftWindow::Hann)
          w = 0.5 * (1.0 - std::cos(2.0 * M_PI * s / window_len));
        const double theta = 2.0 * M_PI * b * s / window_len;
        cos_b[static_cast<std::size_t>(b) * window_len + s] = w * std::cos(theta);
        sin_b[static_cast<std::size_t>(b) * window_len + s] = -w * std::sin(theta);
      }
  }
};

void check_signal(const Tensor& signal, const StftSpec& spec) {
  spec.check();
  if (signal.rank() != 2)
    throw ShapeError("stft: signal must be T_raw x p, got " +
                     shape_str(signal.shape()));
  if (signal.extent(0) < spec.window_len)
    throw ValueError("stft: signal length " + std::to_string(signal.extent(0)) +
                     " shorter than one window of " +
                     std::to_string(spec.window_len));
}

struct StftForward {
  Tensor out;      // frames x p x bins
  Tensor re, im;   // frames x p x bins, saved for the backward pass
};

StftForward stft_forward(const Tensor& signal, const StftSpec& spec,
                         const DftBasis& basis, bool keep_parts) {
  const int t_raw = signal.extent(0);
  const int p = signal.extent(1);
  const int frames = spec.frame_count(t_raw);
  const int bins = spec.bins();
  const int w = spec.window_len;
  const int hop = spec.hop();

  StftForward r;
  r.out = Tensor({frames, p, bins});
  if (keep_parts) {
    r.re = Tensor({frames, p, bins});
    r.im = Tensor({frames, p, bins});
  }
  std::vector<double> frame(static_cast<std::size_t>(w));
  for (int f = 0; f < frames; ++f) {
    const int t0 = f * hop;
    for (int n = 0; n < p; ++n) {
      for (int s = 0; s < w; ++s)
        frame[static_cast<std::size_t>(s)] =
            signal[(static_cast<std::size_t>(t0) + s) * p + n];
      for (int b = 0; b < bins; ++b) {
        const double* cb = basis.cos_b.data() + static_cast<std::size_t>(b) * w;
        const double* sb = basis.sin_b.data() + static_cast<std::size_t>(b) * w;
        double re = 0.0, im = 0.0;
        for (int s = 0; s < w; ++s) {
          re += cb[s] * frame[static_cast<std::size_t>(s)];
          im += sb[s] * frame[static_cast<std::size_t>(s)];
        }
        const std::size_t o =
            (static_cast<std::size_t>(f) * p + n) * bins + b;
        r.out[o] = std::log(std::sqrt(re * re + im * im) + spec.epsilon);
        if (keep_parts) {
          r.re[o] = re;
          r.im[o] = im;
        }
      }
    }
  }
  return r;
}

}  // namespace

int StftSpec::frame_count(int t_raw) const {
  check();
  if (t_raw < window_len)
    throw ValueError("stft: signal length " + std::to_string(t_raw) +
                     " shorter than one window of " + std::to_string(window_len));
  return (t_raw - window_len) / hop() + 1;
}

void StftSpec::check() const {
  if (window_len < 2 || window_len % 2 != 0)
    throw ValueError("stft: window length must be even and >= 2, got " +
                     std::to_string(window_len));
  if (overlap < 0 || overlap >= window_len)
    throw ValueError("stft: overlap must satisfy 0 <= overlap < window, got " +
                     std::to_string(overlap));
  if (epsilon <= 0.0) throw ValueError("stft: log floor must be positive");
}

Tensor stft_log_magnitude(const Tensor& signal, const StftSpec& spec) {
  check_signal(signal, spec);
  DftBasis basis(spec);
  return stft_forward(signal, spec, basis, false).out;
}

Value stft_log_magnitude(Tape& tape, Value signal, const StftSpec& spec) {
  const Tensor& sig = tape.value(signal);
  check_signal(sig, spec);
  auto basis = std::make_shared<DftBasis>(spec);
  StftForward fwd = stft_forward(sig, spec, *basis, true);

  const int p = sig.extent(1);
  const int frames = fwd.out.extent(0);
  const int bins = spec.bins();
  const int w = spec.window_len;
  const int hop = spec.hop();
  const double eps = spec.epsilon;

  return tape.make_node(
      std::move(fwd.out), {signal},
      [basis, signal, re = std::move(fwd.re), im = std::move(fwd.im), p, frames,
       bins, w, hop, eps](Tape& t, Value self) {
        // out = log(m + eps), m = sqrt(re^2 + im^2); dm/dre = re/m, zero at
        // m == 0 (subgradient choice keeps everything finite).
        const Tensor& grad_out = t.grad(self);
        Tensor& grad_in = t.grad_mut(signal);
        for (int f = 0; f < frames; ++f) {
          const int t0 = f * hop;
          for (int n = 0; n < p; ++n) {
            for (int b = 0; b < bins; ++b) {
              const std::size_t o =
                  (static_cast<std::size_t>(f) * p + n) * bins + b;
              const double go = grad_out[o];
              if (go == 0.0) continue;
              const double m = std::sqrt(re[o] * re[o] + im[o] * im[o]);
              if (m == 0.0) continue;
              const double dm = go / (m + eps);
              const double dre = dm * re[o] / m;
              const double dim = dm * im[o] / m;
              const double* cb =
                  basis->cos_b.data() + static_cast<std::size_t>(b) * w;
              const double* sb =
                  basis->sin_b.data() + static_cast<std::size_t>(b) * w;
              for (int s = 0; s < w; ++s)
                grad_in[(static_cast<std::size_t>(t0) + s) * p + n] +=
                    dre * cb[s] + dim * sb[s];
            }
          }
        }
      });
}

}  // namespace tgcn
