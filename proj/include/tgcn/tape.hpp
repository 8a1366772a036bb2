#pragma once

#include <deque>
#include <functional>
#include <vector>

#include "tgcn/rng.hpp"
#include "tgcn/tensor.hpp"

namespace tgcn {

enum class Mode { Train, Eval };
enum class Padding { Same, Valid };
enum class ReduceKind { Max, Mean };

// Handle into a Tape. Only meaningful together with the tape that issued it.
struct Value {
  int node = -1;
};

// Per-site batch-norm running statistics. Owned by the model; updated by the
// tape at record time in train mode, read as constants in eval mode.
struct BatchNormState {
  Tensor running_mean;  // shape {c}
  Tensor running_var;   // shape {c}
};

// Append-only record of a forward computation, with reverse-mode gradients.
// Every node's inputs precede it, so a single reverse sweep is a valid
// topological traversal. Confined to one thread for the duration of a
// forward/backward pass.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, Value self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Value leaf(Tensor value);

  // Low-level node constructor used by ops defined outside this class
  // (the STFT lives in the stft module but records through here).
  Value make_node(Tensor value, std::vector<Value> inputs, BackwardFn backward);

  const Tensor& value(Value v) const { return node_at(v).value; }
  // Gradient of the last backward() loss w.r.t. this node. Zero tensor if the
  // node did not influence the loss.
  const Tensor& grad(Value v);
  // Mutable accumulation slot, allocated (zeros) on demand. For backward fns.
  Tensor& grad_mut(Value v);

  std::size_t size() const { return nodes_.size(); }

  // Reverse sweep from a scalar loss node. Resets all gradient slots first,
  // so repeated calls on the same tape are independent and deterministic.
  void backward(Value loss);

  // --- ops -----------------------------------------------------------------

  // input: T_in x c_in, kernel: t x c_out x c_in, bias: c_out.
  Value conv1d(Value input, Value kernel, Value bias, Padding padding);
  // input: T x p x c_in; the same kernel is applied to every sequence.
  Value seq_conv1d(Value input, Value kernel, Value bias, Padding padding);
  // input: n, weight: m x n, bias: m.
  Value dense(Value input, Value weight, Value bias);
  Value relu(Value input);
  Value sigmoid(Value input);
  Value reduce(Value input, int axis, ReduceKind kind);
  Value concat(Value a, Value b, int axis);
  // Removes `axis`, keeping the slice at `index`.
  Value select(Value input, int axis, int index);
  // Inserts a new axis at `axis`; all parts must share a shape.
  Value stack(const std::vector<Value>& parts, int axis);
  Value reshape(Value input, std::vector<int> shape);
  Value add(Value a, Value b);
  Value mul(Value a, Value b);  // elementwise
  Value scale(Value a, double factor);
  // Channel axis is the last one; normalizes over all other positions.
  Value batch_norm(Value input, Value gamma, Value beta, BatchNormState* state,
                   Mode mode, double epsilon, double momentum);
  Value dropout(Value input, double p, Mode mode, Rng& rng);
  // Non-overlapping windows of 2 along axis 0, trailing singleton kept.
  Value temporal_pool(Value input, ReduceKind kind);
  // Binary cross-entropy against a fixed 0/1 label; input is a {1} scalar
  // probability, clamped to [1e-7, 1 - 1e-7].
  Value bce_loss(Value probability, double label);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<Value> inputs;
    BackwardFn backward;
  };

  const Node& node_at(Value v) const;
  Node& node_at(Value v);

  // Deque keeps references from value()/grad_mut() stable while new nodes
  // are appended mid-expression.
  std::deque<Node> nodes_;
};

}  // namespace tgcn
