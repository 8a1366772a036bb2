// Shared fixtures for layer/model tests: randomized STC parameters with
// pristine running statistics, and node-permutation helpers.
#pragma once

#include <numeric>
#include <vector>

#include "oracles.hpp"
#include "tgcn/layers.hpp"
#include "tgcn/model.hpp"

namespace support {

using namespace tgcn;

// Small architecture in the shape of the named configs: blocks of equal-size
// STC layers with max pooling and a dense head.
inline ArchitectureConfig micro_config(StcRule rule, int frames, int bins,
                                       std::vector<int> channels = {4, 8},
                                       int layers_per_block = 2,
                                       std::vector<int> head = {8},
                                       ReduceKind aggregate = ReduceKind::Max) {
  ArchitectureConfig config;
  config.input_frames = frames;
  config.input_bins = bins;
  config.head_hidden = std::move(head);
  config.dropout_p = 0.2;
  for (int c : channels) {
    BlockConfig block;
    for (int l = 0; l < layers_per_block; ++l) {
      StcLayerSpec spec;
      spec.k = 1;
      spec.t = 3;
      spec.c_out = c;
      spec.rule = rule;
      spec.aggregate = aggregate;
      spec.t2 = 1;
      block.layers.push_back(spec);
    }
    config.blocks.push_back(std::move(block));
  }
  return config;
}

struct LayerFixture {
  StcLayerSpec spec;
  int c_in = 0;
  Tensor w_int, b_int, w_comb, b_comb;
  Tensor gamma_g1, beta_g1, gamma, beta;
  Tensor rm_g1, rv_g1, rm, rv;  // pristine running stats
  BatchNormState live_g1, live_main;

  // Leafs the parameters onto the tape and points batch norm at fresh copies
  // of the pristine running stats, so every bind starts from the same state.
  StcBinding bind(Tape& tape) {
    live_main = BatchNormState{rm, rv};
    StcBinding b;
    b.w_int = tape.leaf(w_int);
    b.b_int = tape.leaf(b_int);
    if (spec.rule == StcRule::B) {
      b.w_comb = tape.leaf(w_comb);
      b.b_comb = tape.leaf(b_comb);
      if (spec.use_g1) {
        live_g1 = BatchNormState{rm_g1, rv_g1};
        b.bn_g1 = BnBinding{tape.leaf(gamma_g1), tape.leaf(beta_g1), &live_g1};
      }
    }
    b.bn_main = BnBinding{tape.leaf(gamma), tape.leaf(beta), &live_main};
    return b;
  }

  oracle::StcOracleParams oracle_params() const {
    oracle::StcOracleParams p;
    p.w_int = w_int;
    p.b_int = b_int;
    p.w_comb = w_comb;
    p.b_comb = b_comb;
    p.gamma_g1 = gamma_g1;
    p.beta_g1 = beta_g1;
    p.rm_g1 = rm_g1;
    p.rv_g1 = rv_g1;
    p.gamma = gamma;
    p.beta = beta;
    p.rm = rm;
    p.rv = rv;
    return p;
  }
};

inline LayerFixture make_layer(const StcLayerSpec& spec, int c_in, Rng& rng) {
  LayerFixture f;
  f.spec = spec;
  f.c_in = c_in;
  const int c = spec.c_out;
  f.w_int = oracle::random_tensor({spec.t, c, c_in}, rng, -0.7, 0.7);
  f.b_int = oracle::random_tensor({c}, rng, -0.2, 0.2);
  f.gamma = oracle::random_tensor({c}, rng, 0.5, 1.5);
  f.beta = oracle::random_tensor({c}, rng, -0.3, 0.3);
  f.rm = oracle::random_tensor({c}, rng, -0.5, 0.5);
  f.rv = oracle::random_tensor({c}, rng, 0.5, 2.0);
  if (spec.rule == StcRule::B) {
    f.w_comb = oracle::random_tensor({spec.t2, c, 2 * c}, rng, -0.7, 0.7);
    f.b_comb = oracle::random_tensor({c}, rng, -0.2, 0.2);
    if (spec.use_g1) {
      f.gamma_g1 = oracle::random_tensor({2 * c}, rng, 0.5, 1.5);
      f.beta_g1 = oracle::random_tensor({2 * c}, rng, -0.3, 0.3);
      f.rm_g1 = oracle::random_tensor({2 * c}, rng, -0.5, 0.5);
      f.rv_g1 = oracle::random_tensor({2 * c}, rng, 0.5, 2.0);
    }
  }
  return f;
}

inline std::vector<int> random_permutation(int p, Rng& rng) {
  std::vector<int> perm(static_cast<std::size_t>(p));
  std::iota(perm.begin(), perm.end(), 0);
  for (std::size_t i = perm.size(); i > 1; --i)
    std::swap(perm[i - 1], perm[rng.uniform_index(i)]);
  return perm;
}

// perm[i] is the new index of old node i.
inline Tensor permute_nodes(const Tensor& x, const std::vector<int>& perm) {
  Tensor out(x.shape());
  const int t = x.extent(0);
  const int p = x.extent(1);
  const int c = x.rank() == 3 ? x.extent(2) : 1;
  for (int tt = 0; tt < t; ++tt)
    for (int n = 0; n < p; ++n)
      for (int ch = 0; ch < c; ++ch)
        out[(static_cast<std::size_t>(tt) * p + perm[static_cast<std::size_t>(n)]) * c + ch] =
            x[(static_cast<std::size_t>(tt) * p + n) * c + ch];
  return out;
}

inline Adjacency permute_adjacency(const Adjacency& a, const std::vector<int>& perm) {
  const int p = a.node_count();
  std::vector<int> bits(static_cast<std::size_t>(p) * p, 0);
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < p; ++j)
      if (a.edge(i, j))
        bits[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)]) * p +
             perm[static_cast<std::size_t>(j)]] = 1;
  return Adjacency::validate(p, bits);
}

}  // namespace support
