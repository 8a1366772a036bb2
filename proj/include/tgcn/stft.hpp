#pragma once

#include "tgcn/tape.hpp"
#include "tgcn/tensor.hpp"

namespace tgcn {

enum class StftWindow { Rectangular, Hann };

struct StftSpec {
  int window_len = 64;
  int overlap = 32;
  double epsilon = 1e-6;  // log floor
  StftWindow window = StftWindow::Rectangular;

  int hop() const { return window_len - overlap; }
  int bins() const { return window_len / 2 + 1; }
  int frame_count(int t_raw) const;  // throws if t_raw < window_len
  void check() const;
};

// Per-lead log-magnitude spectrogram: signal T_raw x p to frames x p x bins,
// value = log(|windowed DFT coefficient| + epsilon). No end padding, so
// frames = floor((T_raw - window) / hop) + 1.
Tensor stft_log_magnitude(const Tensor& signal, const StftSpec& spec);

// Same map recorded on the tape, so gradients reach the raw waveform.
Value stft_log_magnitude(Tape& tape, Value signal, const StftSpec& spec);

}  // namespace tgcn
