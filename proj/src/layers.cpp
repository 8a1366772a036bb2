#include "tgcn/layers.hpp"

#include <string>

namespace tgcn {

void check_layer_spec(const StcLayerSpec& spec) {
  if (spec.k < 0) throw ValueError("stc layer: k must be >= 0");
  if (spec.t < 1 || spec.t % 2 == 0)
    throw ValueError("stc layer: temporal kernel size must be odd, got " +
                     std::to_string(spec.t));
  if (spec.c_out < 1) throw ValueError("stc layer: c_out must be >= 1");
  if (spec.rule == StcRule::B && spec.t2 != 1 && spec.t2 != spec.t)
    throw ValueError("stc layer: t2 must be 1 or t, got " +
                     std::to_string(spec.t2));
}

std::size_t stc_param_count(const StcLayerSpec& spec, int c_in) {
  check_layer_spec(spec);
  const std::size_t c = static_cast<std::size_t>(spec.c_out);
  std::size_t n = static_cast<std::size_t>(spec.t) * c * static_cast<std::size_t>(c_in) + c;
  n += 2 * c;  // bn before g / g2
  if (spec.rule == StcRule::B) {
    n += static_cast<std::size_t>(spec.t2) * c * (2 * c) + c;
    if (spec.use_g1) n += 2 * (2 * c);  // bn before g1 on concatenated channels
  }
  return n;
}

namespace {

Value apply_bn_relu(Tape& tape, Value x, const BnBinding& bn, Mode mode) {
  Value y = tape.batch_norm(x, bn.gamma, bn.beta, bn.state, mode,
                            kBatchNormEpsilon, kBatchNormMomentum);
  return tape.relu(y);
}

}  // namespace

Value stc_forward(Tape& tape, Value h_prev, const Reachability& reach,
                  const StcLayerSpec& spec, const StcBinding& params, Mode mode) {
  check_layer_spec(spec);
  const Tensor& h = tape.value(h_prev);
  if (h.rank() != 3)
    throw ShapeError("stc_forward: input must be T x p x c, got " +
                     shape_str(h.shape()));
  const int p = h.extent(1);
  if (reach.node_count() != p)
    throw ShapeError("stc_forward: reachability over " +
                     std::to_string(reach.node_count()) + " nodes, input has " +
                     std::to_string(p));
  if (reach.k() != spec.k)
    throw ValueError("stc_forward: reachability built with k=" +
                     std::to_string(reach.k()) + ", layer wants k=" +
                     std::to_string(spec.k));

  // Shared filter applied to every sequence.
  Value a_all = tape.seq_conv1d(h_prev, params.w_int, params.b_int, Padding::Same);

  std::vector<Value> a_node(static_cast<std::size_t>(p));
  for (int i = 0; i < p; ++i) a_node[static_cast<std::size_t>(i)] = tape.select(a_all, 1, i);

  // Aggregation stacks the neighbor maps and reduces along the stacked axis,
  // so max routes gradients through the argmax and mean divides by the
  // neighborhood size of each node.
  auto aggregate = [&](const std::vector<int>& members) -> Value {
    if (members.size() == 1) return a_node[static_cast<std::size_t>(members[0])];
    std::vector<Value> parts;
    parts.reserve(members.size());
    for (int j : members) parts.push_back(a_node[static_cast<std::size_t>(j)]);
    return tape.reduce(tape.stack(parts, 0), 0, spec.aggregate);
  };

  if (spec.rule == StcRule::A) {
    std::vector<Value> z(static_cast<std::size_t>(p));
    for (int i = 0; i < p; ++i)
      z[static_cast<std::size_t>(i)] = aggregate(reach.neighborhood(i));
    Value z_all = tape.stack(z, 1);
    return apply_bn_relu(tape, z_all, params.bn_main, mode);
  }

  // Rule B: open neighborhood; an isolated node falls back to its own
  // features, so [z_i, a_i] = [a_i, a_i] and shapes stay fixed.
  std::vector<Value> cat(static_cast<std::size_t>(p));
  for (int i = 0; i < p; ++i) {
    std::vector<int> open;
    for (int j : reach.neighborhood(i))
      if (j != i) open.push_back(j);
    Value z = open.empty() ? a_node[static_cast<std::size_t>(i)] : aggregate(open);
    cat[static_cast<std::size_t>(i)] =
        tape.concat(z, a_node[static_cast<std::size_t>(i)], 1);
  }
  Value combined = tape.stack(cat, 1);  // T x p x 2c
  if (spec.use_g1) combined = apply_bn_relu(tape, combined, params.bn_g1, mode);
  Value out = tape.seq_conv1d(combined, params.w_comb, params.b_comb, Padding::Same);
  return apply_bn_relu(tape, out, params.bn_main, mode);
}

Value temporal_pool(Tape& tape, Value h, ReduceKind kind) {
  return tape.temporal_pool(h, kind);
}

HeadOutput prediction_head(Tape& tape, Value h_final, const HeadBinding& params,
                           double dropout_p, Mode mode, Rng* rng) {
  const std::vector<int> h_shape = tape.value(h_final).shape();
  if (h_shape.size() != 3)
    throw ShapeError("prediction_head: input must be T x p x c, got " +
                     shape_str(h_shape));
  Value pooled = tape.reduce(h_final, 1, ReduceKind::Mean);  // T x c
  const int flat = h_shape[0] * h_shape[2];
  Value x = tape.reshape(pooled, {flat});
  for (const DenseBinding& layer : params.hidden) {
    x = tape.relu(tape.dense(x, layer.w, layer.b));
    if (mode == Mode::Train && dropout_p > 0.0) {
      if (!rng) throw Error("prediction_head: train-mode dropout needs an rng");
      x = tape.dropout(x, dropout_p, mode, *rng);
    }
  }
  Value logit = tape.dense(x, params.out.w, params.out.b);
  return HeadOutput{logit, tape.sigmoid(logit)};
}

}  // namespace tgcn
