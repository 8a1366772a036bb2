#include "tgcn/tape.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <utility>

namespace tgcn {

namespace {

std::size_t prod(const std::vector<int>& shape, int from, int to) {
  std::size_t n = 1;
  for (int i = from; i < to; ++i) n *= static_cast<std::size_t>(shape[i]);
  return n;
}

void check_axis(const Tensor& t, int axis, const char* op) {
  if (axis < 0 || axis >= t.rank())
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                     " out of range for " + shape_str(t.shape()));
}

struct ConvDims {
  int t_in, c_in, t_k, c_out, pad, t_out;
};

ConvDims conv_dims(int t_in, int c_in, const Tensor& kernel, const Tensor& bias,
                   Padding padding) {
  if (kernel.rank() != 3)
    throw ShapeError("conv1d: kernel must be t x c_out x c_in, got " +
                     shape_str(kernel.shape()));
  ConvDims d;
  d.t_in = t_in;
  d.c_in = c_in;
  d.t_k = kernel.extent(0);
  d.c_out = kernel.extent(1);
  if (kernel.extent(2) != c_in)
    throw ShapeError("conv1d: kernel expects " +
                     std::to_string(kernel.extent(2)) + " input channels, input has " +
                     std::to_string(c_in));
  if (bias.rank() != 1 || bias.extent(0) != d.c_out)
    throw ShapeError("conv1d: bias shape " + shape_str(bias.shape()) +
                     " does not match c_out " + std::to_string(d.c_out));
  if (padding == Padding::Same) {
    if (d.t_k % 2 == 0)
      throw ShapeError("conv1d: same padding requires an odd temporal kernel, got " +
                       std::to_string(d.t_k));
    d.pad = (d.t_k - 1) / 2;
    d.t_out = t_in;
  } else {
    if (d.t_k > t_in)
      throw ShapeError("conv1d: kernel size " + std::to_string(d.t_k) +
                       " exceeds input length " + std::to_string(t_in));
    d.pad = 0;
    d.t_out = t_in - d.t_k + 1;
  }
  return d;
}

// One sequence. `in_stride`/`out_stride` are the element strides between
// consecutive time steps, so the same routine serves both the 2D op and the
// per-sequence slices of a T x p x c tensor.
void conv1d_seq_forward(const double* in, int in_stride, const double* kernel,
                        const double* bias, const ConvDims& d, double* out,
                        int out_stride) {
  for (int tau = 0; tau < d.t_out; ++tau) {
    double* o_row = out + static_cast<std::size_t>(tau) * out_stride;
    for (int o = 0; o < d.c_out; ++o) o_row[o] = bias[o];
    for (int dt = 0; dt < d.t_k; ++dt) {
      const int tt = tau + dt - d.pad;
      if (tt < 0 || tt >= d.t_in) continue;
      const double* i_row = in + static_cast<std::size_t>(tt) * in_stride;
      const double* k_row = kernel + static_cast<std::size_t>(dt) * d.c_out * d.c_in;
      for (int o = 0; o < d.c_out; ++o) {
        const double* k_o = k_row + static_cast<std::size_t>(o) * d.c_in;
        double acc = 0.0;
        for (int i = 0; i < d.c_in; ++i) acc += k_o[i] * i_row[i];
        o_row[o] += acc;
      }
    }
  }
}

void conv1d_seq_backward(const double* in, int in_stride, const double* kernel,
                         const ConvDims& d, const double* g_out, int out_stride,
                         double* g_in, double* g_kernel, double* g_bias) {
  for (int tau = 0; tau < d.t_out; ++tau) {
    const double* g_row = g_out + static_cast<std::size_t>(tau) * out_stride;
    for (int o = 0; o < d.c_out; ++o) g_bias[o] += g_row[o];
    for (int dt = 0; dt < d.t_k; ++dt) {
      const int tt = tau + dt - d.pad;
      if (tt < 0 || tt >= d.t_in) continue;
      const double* i_row = in + static_cast<std::size_t>(tt) * in_stride;
      double* gi_row = g_in + static_cast<std::size_t>(tt) * in_stride;
      const std::size_t k_base = static_cast<std::size_t>(dt) * d.c_out * d.c_in;
      for (int o = 0; o < d.c_out; ++o) {
        const double g = g_row[o];
        if (g == 0.0) continue;
        const double* k_o = kernel + k_base + static_cast<std::size_t>(o) * d.c_in;
        double* gk_o = g_kernel + k_base + static_cast<std::size_t>(o) * d.c_in;
        for (int i = 0; i < d.c_in; ++i) {
          gk_o[i] += g * i_row[i];
          gi_row[i] += g * k_o[i];
        }
      }
    }
  }
}

}  // namespace

const Tape::Node& Tape::node_at(Value v) const {
  if (v.node < 0 || static_cast<std::size_t>(v.node) >= nodes_.size())
    throw Error("value does not belong to this tape");
  return nodes_[static_cast<std::size_t>(v.node)];
}

Tape::Node& Tape::node_at(Value v) {
  if (v.node < 0 || static_cast<std::size_t>(v.node) >= nodes_.size())
    throw Error("value does not belong to this tape");
  return nodes_[static_cast<std::size_t>(v.node)];
}

Value Tape::leaf(Tensor value) {
  return make_node(std::move(value), {}, nullptr);
}

Value Tape::make_node(Tensor value, std::vector<Value> inputs, BackwardFn backward) {
  for (Value in : inputs) node_at(in);  // validate
  Node n;
  n.value = std::move(value);
  n.inputs = std::move(inputs);
  n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Value{static_cast<int>(nodes_.size()) - 1};
}

const Tensor& Tape::grad(Value v) { return grad_mut(v); }

Tensor& Tape::grad_mut(Value v) {
  Node& n = node_at(v);
  if (n.grad.empty() && n.value.numel() > 0) n.grad = Tensor(n.value.shape());
  return n.grad;
}

void Tape::backward(Value loss) {
  Node& l = node_at(loss);
  if (l.value.numel() != 1)
    throw ShapeError("backward: loss must be scalar, got " +
                     shape_str(l.value.shape()));
  for (Node& n : nodes_) n.grad = Tensor();
  grad_mut(loss)[0] = 1.0;
  for (int idx = loss.node; idx >= 0; --idx) {
    Node& n = nodes_[static_cast<std::size_t>(idx)];
    if (n.grad.empty() || !n.backward) continue;
    n.backward(*this, Value{idx});
  }
}

// --- ops ---------------------------------------------------------------

Value Tape::conv1d(Value input, Value kernel, Value bias, Padding padding) {
  const Tensor& in = value(input);
  if (in.rank() != 2)
    throw ShapeError("conv1d: input must be T x c_in, got " +
                     shape_str(in.shape()));
  const ConvDims d = conv_dims(in.extent(0), in.extent(1), value(kernel),
                               value(bias), padding);
  Tensor out({d.t_out, d.c_out});
  conv1d_seq_forward(in.data(), d.c_in, value(kernel).data(), value(bias).data(),
                     d, out.data(), d.c_out);
  return make_node(std::move(out), {input, kernel, bias},
                   [d](Tape& t, Value self) {
                     const auto& node = t.node_at(self);
                     const Tensor& g = node.grad;
                     Value vin = node.inputs[0], vk = node.inputs[1],
                           vb = node.inputs[2];
                     conv1d_seq_backward(t.value(vin).data(), d.c_in,
                                         t.value(vk).data(), d, g.data(), d.c_out,
                                         t.grad_mut(vin).data(),
                                         t.grad_mut(vk).data(),
                                         t.grad_mut(vb).data());
                   });
}

Value Tape::seq_conv1d(Value input, Value kernel, Value bias, Padding padding) {
  const Tensor& in = value(input);
  if (in.rank() != 3)
    throw ShapeError("seq_conv1d: input must be T x p x c_in, got " +
                     shape_str(in.shape()));
  const int p = in.extent(1);
  const ConvDims d = conv_dims(in.extent(0), in.extent(2), value(kernel),
                               value(bias), padding);
  Tensor out({d.t_out, p, d.c_out});
  for (int n = 0; n < p; ++n) {
    conv1d_seq_forward(in.data() + static_cast<std::size_t>(n) * d.c_in,
                       p * d.c_in, value(kernel).data(), value(bias).data(), d,
                       out.data() + static_cast<std::size_t>(n) * d.c_out,
                       p * d.c_out);
  }
  return make_node(std::move(out), {input, kernel, bias},
                   [d, p](Tape& t, Value self) {
                     const auto& node = t.node_at(self);
                     const Tensor& g = node.grad;
                     Value vin = node.inputs[0], vk = node.inputs[1],
                           vb = node.inputs[2];
                     const double* in_data = t.value(vin).data();
                     const double* k_data = t.value(vk).data();
                     double* gi = t.grad_mut(vin).data();
                     double* gk = t.grad_mut(vk).data();
                     double* gb = t.grad_mut(vb).data();
                     for (int n = 0; n < p; ++n) {
                       conv1d_seq_backward(
                           in_data + static_cast<std::size_t>(n) * d.c_in,
                           p * d.c_in, k_data, d,
                           g.data() + static_cast<std::size_t>(n) * d.c_out,
                           p * d.c_out,
                           gi + static_cast<std::size_t>(n) * d.c_in, gk, gb);
                     }
                   });
}

Value Tape::dense(Value input, Value weight, Value bias) {
  const Tensor& in = value(input);
  const Tensor& w = value(weight);
  const Tensor& b = value(bias);
  if (in.rank() != 1 || w.rank() != 2 || b.rank() != 1)
    throw ShapeError("dense: expects vector input, m x n weight, m bias");
  const int n = in.extent(0), m = w.extent(0);
  if (w.extent(1) != n || b.extent(0) != m)
    throw ShapeError("dense: weight " + shape_str(w.shape()) + ", bias " +
                     shape_str(b.shape()) + " incompatible with input " +
                     shape_str(in.shape()));
  Tensor out({m});
  for (int o = 0; o < m; ++o) {
    const double* w_row = w.data() + static_cast<std::size_t>(o) * n;
    double acc = b[static_cast<std::size_t>(o)];
    for (int i = 0; i < n; ++i) acc += w_row[i] * in[static_cast<std::size_t>(i)];
    out[static_cast<std::size_t>(o)] = acc;
  }
  return make_node(std::move(out), {input, weight, bias},
                   [m, n](Tape& t, Value self) {
                     const auto& node = t.node_at(self);
                     const Tensor& g = node.grad;
                     Value vin = node.inputs[0], vw = node.inputs[1],
                           vb = node.inputs[2];
                     const double* in_d = t.value(vin).data();
                     const double* w_d = t.value(vw).data();
                     double* gi = t.grad_mut(vin).data();
                     double* gw = t.grad_mut(vw).data();
                     double* gb = t.grad_mut(vb).data();
                     for (int o = 0; o < m; ++o) {
                       const double go = g[static_cast<std::size_t>(o)];
                       gb[o] += go;
                       if (go == 0.0) continue;
                       const double* w_row = w_d + static_cast<std::size_t>(o) * n;
                       double* gw_row = gw + static_cast<std::size_t>(o) * n;
                       for (int i = 0; i < n; ++i) {
                         gw_row[i] += go * in_d[i];
                         gi[i] += go * w_row[i];
                       }
                     }
                   });
}

Value Tape::relu(Value input) {
  const Tensor& in = value(input);
  Tensor out(in.shape());
  for (std::size_t i = 0; i < in.numel(); ++i)
    out[i] = in[i] > 0.0 ? in[i] : 0.0;
  return make_node(std::move(out), {input}, [](Tape& t, Value self) {
    const auto& node = t.node_at(self);
    const Tensor& g = node.grad;
    Value vin = node.inputs[0];
    const Tensor& in = t.value(vin);
    Tensor& gi = t.grad_mut(vin);
    for (std::size_t i = 0; i < in.numel(); ++i)
      if (in[i] > 0.0) gi[i] += g[i];
  });
}

Value Tape::sigmoid(Value input) {
  const Tensor& in = value(input);
  Tensor out(in.shape());
  for (std::size_t i = 0; i < in.numel(); ++i)
    out[i] = 1.0 / (1.0 + std::exp(-in[i]));
  return make_node(std::move(out), {input}, [](Tape& t, Value self) {
    const auto& node = t.node_at(self);
    const Tensor& g = node.grad;
    const Tensor& s = node.value;
    Tensor& gi = t.grad_mut(node.inputs[0]);
    for (std::size_t i = 0; i < s.numel(); ++i)
      gi[i] += g[i] * s[i] * (1.0 - s[i]);
  });
}

Value Tape::reduce(Value input, int axis, ReduceKind kind) {
  const Tensor& in = value(input);
  check_axis(in, axis, "reduce");
  const auto& shape = in.shape();
  const std::size_t outer = prod(shape, 0, axis);
  const int n = shape[static_cast<std::size_t>(axis)];
  const std::size_t inner = prod(shape, axis + 1, in.rank());
  std::vector<int> out_shape;
  for (int i = 0; i < in.rank(); ++i)
    if (i != axis) out_shape.push_back(shape[static_cast<std::size_t>(i)]);
  if (out_shape.empty()) out_shape = {1};
  Tensor out(out_shape);

  if (kind == ReduceKind::Mean) {
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t r = 0; r < inner; ++r) {
        double acc = 0.0;
        for (int j = 0; j < n; ++j)
          acc += in[(o * n + static_cast<std::size_t>(j)) * inner + r];
        out[o * inner + r] = acc / n;
      }
    return make_node(std::move(out), {input},
                     [outer, n, inner](Tape& t, Value self) {
                       const auto& node = t.node_at(self);
                       const Tensor& g = node.grad;
                       Tensor& gi = t.grad_mut(node.inputs[0]);
                       for (std::size_t o = 0; o < outer; ++o)
                         for (std::size_t r = 0; r < inner; ++r) {
                           const double share = g[o * inner + r] / n;
                           for (int j = 0; j < n; ++j)
                             gi[(o * n + static_cast<std::size_t>(j)) * inner + r] +=
                                 share;
                         }
                     });
  }

  // Max: the lowest index wins ties, so backward routing is deterministic.
  std::vector<int> argmax(outer * inner, 0);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t r = 0; r < inner; ++r) {
      double best = in[(o * n) * inner + r];
      int best_j = 0;
      for (int j = 1; j < n; ++j) {
        const double v = in[(o * n + static_cast<std::size_t>(j)) * inner + r];
        if (v > best) {
          best = v;
          best_j = j;
        }
      }
      out[o * inner + r] = best;
      argmax[o * inner + r] = best_j;
    }
  return make_node(std::move(out), {input},
                   [outer, n, inner, argmax = std::move(argmax)](Tape& t,
                                                                 Value self) {
                     const auto& node = t.node_at(self);
                     const Tensor& g = node.grad;
                     Tensor& gi = t.grad_mut(node.inputs[0]);
                     for (std::size_t o = 0; o < outer; ++o)
                       for (std::size_t r = 0; r < inner; ++r) {
                         const std::size_t j =
                             static_cast<std::size_t>(argmax[o * inner + r]);
                         gi[(o * n + j) * inner + r] += g[o * inner + r];
                       }
                   });
}

Value Tape::concat(Value a, Value b, int axis) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  check_axis(ta, axis, "concat");
  if (ta.rank() != tb.rank())
    throw ShapeError("concat: rank mismatch " + shape_str(ta.shape()) + " vs " +
                     shape_str(tb.shape()));
  for (int i = 0; i < ta.rank(); ++i)
    if (i != axis && ta.extent(i) != tb.extent(i))
      throw ShapeError("concat: shapes " + shape_str(ta.shape()) + " and " +
                       shape_str(tb.shape()) + " differ off axis " +
                       std::to_string(axis));
  const std::size_t outer = prod(ta.shape(), 0, axis);
  const std::size_t inner = prod(ta.shape(), axis + 1, ta.rank());
  const std::size_t na = static_cast<std::size_t>(ta.extent(axis)) * inner;
  const std::size_t nb = static_cast<std::size_t>(tb.extent(axis)) * inner;
  std::vector<int> out_shape = ta.shape();
  out_shape[static_cast<std::size_t>(axis)] = ta.extent(axis) + tb.extent(axis);
  Tensor out(out_shape);
  for (std::size_t o = 0; o < outer; ++o) {
    std::memcpy(out.data() + o * (na + nb), ta.data() + o * na, na * sizeof(double));
    std::memcpy(out.data() + o * (na + nb) + na, tb.data() + o * nb,
                nb * sizeof(double));
  }
  return make_node(std::move(out), {a, b},
                   [outer, na, nb](Tape& t, Value self) {
                     const auto& node = t.node_at(self);
                     const Tensor& g = node.grad;
                     Tensor& ga = t.grad_mut(node.inputs[0]);
                     Tensor& gb = t.grad_mut(node.inputs[1]);
                     for (std::size_t o = 0; o < outer; ++o) {
                       const double* src = g.data() + o * (na + nb);
                       for (std::size_t i = 0; i < na; ++i) ga[o * na + i] += src[i];
                       for (std::size_t i = 0; i < nb; ++i)
                         gb[o * nb + i] += src[na + i];
                     }
                   });
}

Value Tape::select(Value input, int axis, int index) {
  const Tensor& in = value(input);
  check_axis(in, axis, "select");
  const int n = in.extent(axis);
  if (index < 0 || index >= n)
    throw ShapeError("select: index " + std::to_string(index) +
                     " out of range for axis extent " + std::to_string(n));
  const std::size_t outer = prod(in.shape(), 0, axis);
  const std::size_t inner = prod(in.shape(), axis + 1, in.rank());
  std::vector<int> out_shape;
  for (int i = 0; i < in.rank(); ++i)
    if (i != axis) out_shape.push_back(in.extent(i));
  if (out_shape.empty()) out_shape = {1};
  Tensor out(out_shape);
  for (std::size_t o = 0; o < outer; ++o)
    std::memcpy(out.data() + o * inner,
                in.data() + (o * n + static_cast<std::size_t>(index)) * inner,
                inner * sizeof(double));
  return make_node(std::move(out), {input},
                   [outer, inner, n, index](Tape& t, Value self) {
                     const auto& node = t.node_at(self);
                     const Tensor& g = node.grad;
                     Tensor& gi = t.grad_mut(node.inputs[0]);
                     for (std::size_t o = 0; o < outer; ++o) {
                       double* dst =
                           gi.data() +
                           (o * n + static_cast<std::size_t>(index)) * inner;
                       const double* src = g.data() + o * inner;
                       for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
                     }
                   });
}

Value Tape::stack(const std::vector<Value>& parts, int axis) {
  if (parts.empty()) throw ShapeError("stack: no parts");
  const Tensor& first = value(parts[0]);
  if (axis < 0 || axis > first.rank())
    throw ShapeError("stack: axis " + std::to_string(axis) +
                     " out of range for rank " + std::to_string(first.rank()));
  for (const Value& v : parts)
    if (!value(v).same_shape(first))
      throw ShapeError("stack: parts must share a shape");
  const std::size_t outer = prod(first.shape(), 0, axis);
  const std::size_t rest = prod(first.shape(), axis, first.rank());
  const std::size_t np = parts.size();
  std::vector<int> out_shape = first.shape();
  out_shape.insert(out_shape.begin() + axis, static_cast<int>(np));
  Tensor out(out_shape);
  for (std::size_t j = 0; j < np; ++j) {
    const Tensor& part = value(parts[j]);
    for (std::size_t o = 0; o < outer; ++o)
      std::memcpy(out.data() + (o * np + j) * rest, part.data() + o * rest,
                  rest * sizeof(double));
  }
  return make_node(std::move(out), parts,
                   [outer, rest, np](Tape& t, Value self) {
                     const auto& node = t.node_at(self);
                     const Tensor& g = node.grad;
                     for (std::size_t j = 0; j < np; ++j) {
                       Tensor& gp = t.grad_mut(node.inputs[j]);
                       for (std::size_t o = 0; o < outer; ++o) {
                         const double* src = g.data() + (o * np + j) * rest;
                         double* dst = gp.data() + o * rest;
                         for (std::size_t i = 0; i < rest; ++i) dst[i] += src[i];
                       }
                     }
                   });
}

Value Tape::reshape(Value input, std::vector<int> shape) {
  const Tensor& in = value(input);
  if (shape_numel(shape) != in.numel())
    throw ShapeError("reshape: " + shape_str(in.shape()) + " to " +
                     shape_str(shape) + " changes element count");
  Tensor out(std::move(shape));
  std::memcpy(out.data(), in.data(), in.numel() * sizeof(double));
  return make_node(std::move(out), {input}, [](Tape& t, Value self) {
    const auto& node = t.node_at(self);
    const Tensor& g = node.grad;
    Tensor& gi = t.grad_mut(node.inputs[0]);
    for (std::size_t i = 0; i < g.numel(); ++i) gi[i] += g[i];
  });
}

Value Tape::add(Value a, Value b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  if (!ta.same_shape(tb))
    throw ShapeError("add: shape mismatch " + shape_str(ta.shape()) + " vs " +
                     shape_str(tb.shape()));
  Tensor out(ta.shape());
  for (std::size_t i = 0; i < ta.numel(); ++i) out[i] = ta[i] + tb[i];
  return make_node(std::move(out), {a, b}, [](Tape& t, Value self) {
    const auto& node = t.node_at(self);
    const Tensor& g = node.grad;
    Tensor& ga = t.grad_mut(node.inputs[0]);
    Tensor& gb = t.grad_mut(node.inputs[1]);
    for (std::size_t i = 0; i < g.numel(); ++i) {
      ga[i] += g[i];
      gb[i] += g[i];
    }
  });
}

Value Tape::mul(Value a, Value b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  if (!ta.same_shape(tb))
    throw ShapeError("mul: shape mismatch " + shape_str(ta.shape()) + " vs " +
                     shape_str(tb.shape()));
  Tensor out(ta.shape());
  for (std::size_t i = 0; i < ta.numel(); ++i) out[i] = ta[i] * tb[i];
  return make_node(std::move(out), {a, b}, [](Tape& t, Value self) {
    const auto& node = t.node_at(self);
    const Tensor& g = node.grad;
    const Tensor& ta = t.value(node.inputs[0]);
    const Tensor& tb = t.value(node.inputs[1]);
    Tensor& ga = t.grad_mut(node.inputs[0]);
    Tensor& gb = t.grad_mut(node.inputs[1]);
    for (std::size_t i = 0; i < g.numel(); ++i) {
      ga[i] += g[i] * tb[i];
      gb[i] += g[i] * ta[i];
    }
  });
}

Value Tape::scale(Value a, double factor) {
  const Tensor& ta = value(a);
  Tensor out(ta.shape());
  for (std::size_t i = 0; i < ta.numel(); ++i) out[i] = ta[i] * factor;
  return make_node(std::move(out), {a}, [factor](Tape& t, Value self) {
    const auto& node = t.node_at(self);
    const Tensor& g = node.grad;
    Tensor& ga = t.grad_mut(node.inputs[0]);
    for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * factor;
  });
}

Value Tape::batch_norm(Value input, Value gamma, Value beta,
                       BatchNormState* state, Mode mode, double epsilon,
                       double momentum) {
  const Tensor& in = value(input);
  if (in.rank() < 1) throw ShapeError("batch_norm: input must have a channel axis");
  const int c = in.extent(in.rank() - 1);
  const Tensor& g_t = value(gamma);
  const Tensor& b_t = value(beta);
  if (g_t.rank() != 1 || g_t.extent(0) != c || b_t.rank() != 1 || b_t.extent(0) != c)
    throw ShapeError("batch_norm: gamma/beta must be {" + std::to_string(c) + "}");
  if (!state) throw Error("batch_norm: missing running statistics");
  const std::size_t m = in.numel() / static_cast<std::size_t>(c);

  Tensor mean({c}), inv_std({c});
  if (mode == Mode::Train) {
    Tensor var({c});
    for (std::size_t i = 0; i < in.numel(); ++i)
      mean[i % static_cast<std::size_t>(c)] += in[i];
    for (int ch = 0; ch < c; ++ch) mean[static_cast<std::size_t>(ch)] /= static_cast<double>(m);
    for (std::size_t i = 0; i < in.numel(); ++i) {
      const double d = in[i] - mean[i % static_cast<std::size_t>(c)];
      var[i % static_cast<std::size_t>(c)] += d * d;
    }
    for (int ch = 0; ch < c; ++ch) {
      var[static_cast<std::size_t>(ch)] /= static_cast<double>(m);
      inv_std[static_cast<std::size_t>(ch)] =
          1.0 / std::sqrt(var[static_cast<std::size_t>(ch)] + epsilon);
      state->running_mean[static_cast<std::size_t>(ch)] =
          (1.0 - momentum) * state->running_mean[static_cast<std::size_t>(ch)] +
          momentum * mean[static_cast<std::size_t>(ch)];
      state->running_var[static_cast<std::size_t>(ch)] =
          (1.0 - momentum) * state->running_var[static_cast<std::size_t>(ch)] +
          momentum * var[static_cast<std::size_t>(ch)];
    }
  } else {
    for (int ch = 0; ch < c; ++ch) {
      mean[static_cast<std::size_t>(ch)] = state->running_mean[static_cast<std::size_t>(ch)];
      inv_std[static_cast<std::size_t>(ch)] =
          1.0 / std::sqrt(state->running_var[static_cast<std::size_t>(ch)] + epsilon);
    }
  }

  Tensor xhat(in.shape());
  Tensor out(in.shape());
  for (std::size_t i = 0; i < in.numel(); ++i) {
    const std::size_t ch = i % static_cast<std::size_t>(c);
    xhat[i] = (in[i] - mean[ch]) * inv_std[ch];
    out[i] = g_t[ch] * xhat[i] + b_t[ch];
  }

  const bool train = mode == Mode::Train;
  return make_node(
      std::move(out), {input, gamma, beta},
      [c, m, train, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          Tape& t, Value self) {
        const auto& node = t.node_at(self);
        const Tensor& g = node.grad;
        const Tensor& gam = t.value(node.inputs[1]);
        Tensor& gi = t.grad_mut(node.inputs[0]);
        Tensor& gg = t.grad_mut(node.inputs[1]);
        Tensor& gb = t.grad_mut(node.inputs[2]);
        const std::size_t cc = static_cast<std::size_t>(c);
        std::vector<double> sum_g(cc, 0.0), sum_gx(cc, 0.0);
        for (std::size_t i = 0; i < g.numel(); ++i) {
          const std::size_t ch = i % cc;
          sum_g[ch] += g[i];
          sum_gx[ch] += g[i] * xhat[i];
        }
        for (std::size_t ch = 0; ch < cc; ++ch) {
          gg[ch] += sum_gx[ch];
          gb[ch] += sum_g[ch];
        }
        if (train) {
          const double inv_m = 1.0 / static_cast<double>(m);
          for (std::size_t i = 0; i < g.numel(); ++i) {
            const std::size_t ch = i % cc;
            gi[i] += gam[ch] * inv_std[ch] *
                     (g[i] - sum_g[ch] * inv_m - xhat[i] * sum_gx[ch] * inv_m);
          }
        } else {
          for (std::size_t i = 0; i < g.numel(); ++i) {
            const std::size_t ch = i % cc;
            gi[i] += gam[ch] * inv_std[ch] * g[i];
          }
        }
      });
}

Value Tape::dropout(Value input, double p, Mode mode, Rng& rng) {
  if (p < 0.0 || p >= 1.0)
    throw ValueError("dropout: probability must be in [0, 1), got " +
                     std::to_string(p));
  if (mode == Mode::Eval || p == 0.0) return input;
  const Tensor& in = value(input);
  const double keep_scale = 1.0 / (1.0 - p);
  Tensor mult(in.shape());
  Tensor out(in.shape());
  for (std::size_t i = 0; i < in.numel(); ++i) {
    mult[i] = rng.bernoulli(p) ? 0.0 : keep_scale;
    out[i] = in[i] * mult[i];
  }
  return make_node(std::move(out), {input},
                   [mult = std::move(mult)](Tape& t, Value self) {
                     const auto& node = t.node_at(self);
                     const Tensor& g = node.grad;
                     Tensor& gi = t.grad_mut(node.inputs[0]);
                     for (std::size_t i = 0; i < g.numel(); ++i)
                       gi[i] += g[i] * mult[i];
                   });
}

Value Tape::temporal_pool(Value input, ReduceKind kind) {
  const Tensor& in = value(input);
  if (in.rank() < 1) throw ShapeError("temporal_pool: empty shape");
  const int t_in = in.extent(0);
  const int t_out = (t_in + 1) / 2;
  const std::size_t inner = prod(in.shape(), 1, in.rank());
  std::vector<int> out_shape = in.shape();
  out_shape[0] = t_out;
  Tensor out(out_shape);
  std::vector<std::uint8_t> pick;  // max only: 0 or 1 within the window
  if (kind == ReduceKind::Max) pick.assign(static_cast<std::size_t>(t_out) * inner, 0);
  for (int w = 0; w < t_out; ++w) {
    const int t0 = 2 * w;
    const bool pair = t0 + 1 < t_in;
    const double* a = in.data() + static_cast<std::size_t>(t0) * inner;
    const double* b = pair ? a + inner : nullptr;
    double* o = out.data() + static_cast<std::size_t>(w) * inner;
    if (kind == ReduceKind::Mean) {
      for (std::size_t i = 0; i < inner; ++i)
        o[i] = pair ? 0.5 * (a[i] + b[i]) : a[i];
    } else {
      for (std::size_t i = 0; i < inner; ++i) {
        if (pair && b[i] > a[i]) {
          o[i] = b[i];
          pick[static_cast<std::size_t>(w) * inner + i] = 1;
        } else {
          o[i] = a[i];
        }
      }
    }
  }
  return make_node(
      std::move(out), {input},
      [t_in, t_out, inner, kind, pick = std::move(pick)](Tape& t, Value self) {
        const auto& node = t.node_at(self);
        const Tensor& g = node.grad;
        Tensor& gi = t.grad_mut(node.inputs[0]);
        for (int w = 0; w < t_out; ++w) {
          const int t0 = 2 * w;
          const bool pair = t0 + 1 < t_in;
          const double* go = g.data() + static_cast<std::size_t>(w) * inner;
          double* ga = gi.data() + static_cast<std::size_t>(t0) * inner;
          if (kind == ReduceKind::Mean) {
            for (std::size_t i = 0; i < inner; ++i) {
              if (pair) {
                ga[i] += 0.5 * go[i];
                ga[inner + i] += 0.5 * go[i];
              } else {
                ga[i] += go[i];
              }
            }
          } else {
            for (std::size_t i = 0; i < inner; ++i) {
              const std::size_t off =
                  pick[static_cast<std::size_t>(w) * inner + i] ? inner : 0;
              ga[off + i] += go[i];
            }
          }
        }
      });
}

Value Tape::bce_loss(Value probability, double label) {
  const Tensor& in = value(probability);
  if (in.numel() != 1)
    throw ShapeError("bce_loss: probability must be scalar, got " +
                     shape_str(in.shape()));
  if (label != 0.0 && label != 1.0)
    throw ValueError("bce_loss: label must be 0 or 1");
  constexpr double kEps = 1e-7;
  const double raw = in[0];
  const double p = std::clamp(raw, kEps, 1.0 - kEps);
  const double loss = -(label * std::log(p) + (1.0 - label) * std::log(1.0 - p));
  const bool clamped = raw < kEps || raw > 1.0 - kEps;
  return make_node(Tensor::scalar(loss), {probability},
                   [p, label, clamped](Tape& t, Value self) {
                     if (clamped) return;
                     const auto& node = t.node_at(self);
                     const double g = node.grad[0];
                     Tensor& gi = t.grad_mut(node.inputs[0]);
                     gi[0] += g * (-label / p + (1.0 - label) / (1.0 - p));
                   });
}

}  // namespace tgcn
