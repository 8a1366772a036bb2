#pragma once

#include <cstddef>
#include <vector>

#include "tgcn/graph.hpp"
#include "tgcn/tape.hpp"

namespace tgcn {

enum class StcRule { A, B };

// One spatio-temporal convolutional layer: spatial reach k, temporal kernel
// size t, output channels c_out. Rule A aggregates over the closed k-step
// neighborhood then applies the nonlinearity; rule B aggregates over the open
// neighborhood, concatenates with the node's own features, and applies a
// second learned transform of temporal size t2.
struct StcLayerSpec {
  int k = 1;
  int t = 3;
  int c_out = 32;
  StcRule rule = StcRule::B;
  ReduceKind aggregate = ReduceKind::Max;
  int t2 = 1;          // rule B only; 1 or t
  bool use_g1 = false; // rule B: nonlinearity (with batch norm) on [z, a]
};

void check_layer_spec(const StcLayerSpec& spec);

// Trainable parameter count for one layer, including batch-norm gamma/beta.
// A pure function of (spec, c_in): never of any adjacency.
std::size_t stc_param_count(const StcLayerSpec& spec, int c_in);

// Tape handles for one layer's parameters. Running stats stay owned by the
// caller (the model) and are mutated in train mode.
struct BnBinding {
  Value gamma, beta;
  BatchNormState* state = nullptr;
};

struct StcBinding {
  Value w_int, b_int;    // t x c_out x c_in, c_out
  Value w_comb, b_comb;  // rule B: t2 x c_out x (2 c_out), c_out
  BnBinding bn_g1;       // rule B with use_g1: channels 2 c_out
  BnBinding bn_main;     // rule A: before g; rule B: before g2
};

inline constexpr double kBatchNormEpsilon = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

// h_prev: T x p x c_in; reach must be built from the sample's adjacency with
// this layer's k. Output: T x p x c_out (same padding preserves T).
Value stc_forward(Tape& tape, Value h_prev, const Reachability& reach,
                  const StcLayerSpec& spec, const StcBinding& params, Mode mode);

// Windows of 2, stride 2, trailing singleton kept: 599 -> 300, 75 -> 38.
Value temporal_pool(Tape& tape, Value h, ReduceKind kind);

// Scalar head: mean over the spatial axis (any surviving p), flatten, hidden
// dense layers with ReLU and train-mode dropout, final dense to one logit.
struct DenseBinding {
  Value w, b;
};

struct HeadBinding {
  std::vector<DenseBinding> hidden;
  DenseBinding out;
};

struct HeadOutput {
  Value logit;
  Value probability;
};

HeadOutput prediction_head(Tape& tape, Value h_final, const HeadBinding& params,
                           double dropout_p, Mode mode, Rng* rng);

}  // namespace tgcn
