#include <doctest.h>

#include <cmath>

#include "test_support.hpp"

using namespace tgcn;
using support::LayerFixture;
using support::make_layer;

namespace {

Tensor run_stc(LayerFixture& fx, const Tensor& h, const Adjacency& a, Mode mode) {
  Tape tape;
  StcBinding binding = fx.bind(tape);
  const Reachability reach = reachability(a, fx.spec.k);
  return tape.value(stc_forward(tape, tape.leaf(h), reach, fx.spec, binding, mode));
}

}  // namespace

TEST_CASE("k = 0 rule A treats every sequence separately") {
  Rng rng(1);
  StcLayerSpec spec;
  spec.k = 0;
  spec.t = 3;
  spec.c_out = 4;
  spec.rule = StcRule::A;
  spec.aggregate = ReduceKind::Max;
  LayerFixture fx = make_layer(spec, 3, rng);

  const int p = 5;
  const Tensor h = oracle::random_tensor({7, p, 3}, rng);
  const Adjacency dense_graph = Adjacency::complete(p);  // reach ignores it at k=0
  const Tensor out = run_stc(fx, h, dense_graph, Mode::Eval);
  REQUIRE(out.shape() == std::vector<int>{7, p, 4});

  // per node: conv1d + batch norm (running stats) + relu on that sequence only
  for (int n = 0; n < p; ++n) {
    Tensor seq({7, 3});
    for (int t = 0; t < 7; ++t)
      for (int c = 0; c < 3; ++c) seq.at({t, c}) = h.at({t, n, c});
    Tensor conv = oracle::naive_conv1d(seq, fx.w_int, fx.b_int, true);
    Tensor want = oracle::naive_relu(
        oracle::naive_batch_norm(conv, fx.gamma, fx.beta, fx.rm, fx.rv, Mode::Eval));
    for (int t = 0; t < 7; ++t)
      for (int c = 0; c < 4; ++c)
        CHECK(out.at({t, n, c}) == doctest::Approx(want.at({t, c})).epsilon(1e-12));
  }
}

TEST_CASE("complete graph with mean aggregation makes all nodes identical") {
  Rng rng(2);
  StcLayerSpec spec;
  spec.k = 1;
  spec.t = 3;
  spec.c_out = 3;
  spec.rule = StcRule::A;
  spec.aggregate = ReduceKind::Mean;
  LayerFixture fx = make_layer(spec, 2, rng);
  const int p = 4;
  const Tensor h = oracle::random_tensor({6, p, 2}, rng);
  const Tensor out = run_stc(fx, h, Adjacency::complete(p), Mode::Eval);
  for (int t = 0; t < 6; ++t)
    for (int c = 0; c < 3; ++c)
      for (int n = 1; n < p; ++n)
        CHECK(out.at({t, n, c}) == doctest::Approx(out.at({t, 0, c})).epsilon(1e-12));
}

TEST_CASE("both rules match the per-node loop oracle on tiny instances") {
  Rng rng(3);
  int checked = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const int p = 2 + static_cast<int>(rng.uniform_index(4));   // <= 5
    const int c_in = 1 + static_cast<int>(rng.uniform_index(3));  // <= 3
    StcLayerSpec spec;
    spec.k = static_cast<int>(rng.uniform_index(3));
    spec.t = 3;
    spec.c_out = 1 + static_cast<int>(rng.uniform_index(3));
    spec.rule = rng.bernoulli(0.5) ? StcRule::A : StcRule::B;
    spec.aggregate = rng.bernoulli(0.5) ? ReduceKind::Max : ReduceKind::Mean;
    spec.t2 = rng.bernoulli(0.5) ? 1 : spec.t;
    spec.use_g1 = spec.rule == StcRule::B && rng.bernoulli(0.5);
    const Mode mode = rng.bernoulli(0.5) ? Mode::Train : Mode::Eval;

    LayerFixture fx = make_layer(spec, c_in, rng);
    const Adjacency a = oracle::random_digraph(p, rng.uniform(0.2, 0.7), rng);
    const Tensor h = oracle::random_tensor({6, p, c_in}, rng);

    const Tensor got = run_stc(fx, h, a, mode);
    const Tensor want = oracle::stc_oracle(h, a, spec, fx.oracle_params(), mode);
    REQUIRE(got.shape() == want.shape());
    for (std::size_t i = 0; i < got.numel(); ++i)
      CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-9));
    ++checked;
  }
  CHECK(checked == 50);
}

TEST_CASE("rule A on a single-node graph is conv + batch norm + relu") {
  Rng rng(4);
  StcLayerSpec spec;
  spec.k = 1;
  spec.t = 5;
  spec.c_out = 2;
  spec.rule = StcRule::A;
  LayerFixture fx = make_layer(spec, 2, rng);
  const Tensor h = oracle::random_tensor({9, 1, 2}, rng);
  const Tensor out = run_stc(fx, h, Adjacency::identity(1), Mode::Train);

  Tensor seq({9, 2});
  for (int t = 0; t < 9; ++t)
    for (int c = 0; c < 2; ++c) seq.at({t, c}) = h.at({t, 0, c});
  Tensor conv3 = oracle::naive_conv1d(seq, fx.w_int, fx.b_int, true);
  Tensor conv({9, 1, 2});
  for (int t = 0; t < 9; ++t)
    for (int c = 0; c < 2; ++c) conv.at({t, 0, c}) = conv3.at({t, c});
  const Tensor want = oracle::naive_relu(
      oracle::naive_batch_norm(conv, fx.gamma, fx.beta, fx.rm, fx.rv, Mode::Train));
  for (std::size_t i = 0; i < out.numel(); ++i)
    CHECK(out[i] == doctest::Approx(want[i]).epsilon(1e-12));
}

TEST_CASE("stc_forward validates reachability and channel shapes") {
  Rng rng(5);
  StcLayerSpec spec;
  spec.k = 1;
  spec.c_out = 2;
  spec.rule = StcRule::A;
  LayerFixture fx = make_layer(spec, 2, rng);
  Tape tape;
  StcBinding binding = fx.bind(tape);
  const Tensor h = oracle::random_tensor({4, 3, 2}, rng);
  // wrong node count
  CHECK_THROWS_AS(stc_forward(tape, tape.leaf(h), reachability(Adjacency::identity(2), 1),
                              spec, binding, Mode::Eval),
                  ShapeError);
  // wrong k
  CHECK_THROWS_AS(stc_forward(tape, tape.leaf(h), reachability(Adjacency::identity(3), 2),
                              spec, binding, Mode::Eval),
                  ValueError);
  // wrong channel count
  const Tensor bad = oracle::random_tensor({4, 3, 5}, rng);
  CHECK_THROWS_AS(stc_forward(tape, tape.leaf(bad), reachability(Adjacency::identity(3), 1),
                              spec, binding, Mode::Eval),
                  ShapeError);
}

TEST_CASE("parameter shapes and counts are functions of the spec only") {
  StcLayerSpec spec;
  spec.t = 3;
  spec.c_out = 8;
  spec.rule = StcRule::B;
  spec.t2 = 1;
  // w_int + b_int + w_comb + b_comb + bn gamma/beta
  const std::size_t want = 3 * 8 * 5 + 8 + 1 * 8 * 16 + 8 + 2 * 8;
  CHECK(stc_param_count(spec, 5) == want);
  spec.use_g1 = true;
  CHECK(stc_param_count(spec, 5) == want + 2 * 16);
  spec.rule = StcRule::A;
  CHECK(stc_param_count(spec, 5) == 3 * 8 * 5 + 8 + 2 * 8);
}

TEST_CASE("temporal pooling") {
  SUBCASE("599 pools to 300 then 150, 75, 38 across four blocks") {
    Rng rng(6);
    Tensor h = oracle::random_tensor({599, 2, 1}, rng);
    const int want[4] = {300, 150, 75, 38};
    Tape tape;
    Value v = tape.leaf(h);
    for (int b = 0; b < 4; ++b) {
      v = tape.temporal_pool(v, ReduceKind::Max);
      CHECK(tape.value(v).extent(0) == want[b]);
    }
  }
  SUBCASE("constant input is unchanged under both kinds") {
    const Tensor h = Tensor::full({9, 2, 3}, 1.5);
    for (ReduceKind kind : {ReduceKind::Max, ReduceKind::Mean}) {
      Tape tape;
      const Tensor& out = tape.value(tape.temporal_pool(tape.leaf(h), kind));
      CHECK(out.shape() == std::vector<int>{5, 2, 3});
      for (std::size_t i = 0; i < out.numel(); ++i) CHECK(out[i] == 1.5);
    }
  }
  SUBCASE("hand-evaluated windows (1,9)(2,2)(7)") {
    Tape tape;
    const Tensor h({5, 1, 1}, {1, 9, 2, 2, 7});
    const Tensor& out = tape.value(tape.temporal_pool(tape.leaf(h), ReduceKind::Max));
    REQUIRE(out.shape() == std::vector<int>{3, 1, 1});
    CHECK(out[0] == 9);
    CHECK(out[1] == 2);
    CHECK(out[2] == 7);
  }
}

TEST_CASE("prediction head") {
  Rng rng(7);
  const int t = 4, p = 3, c = 5;

  auto make_head = [&](Tape& tape, int flat, std::vector<int> hidden) {
    HeadBinding head;
    int in = flat;
    for (int hsize : hidden) {
      head.hidden.push_back(
          DenseBinding{tape.leaf(oracle::random_tensor({hsize, in}, rng, -0.4, 0.4)),
                       tape.leaf(oracle::random_tensor({hsize}, rng, -0.1, 0.1))});
      in = hsize;
    }
    head.out = DenseBinding{tape.leaf(oracle::random_tensor({1, in}, rng, -0.4, 0.4)),
                            tape.leaf(oracle::random_tensor({1}, rng))};
    return head;
  };

  SUBCASE("probability sits in (0, 1) and logit maps through sigmoid") {
    Tape tape;
    HeadBinding head = make_head(tape, t * c, {6, 6});
    const Tensor h = oracle::random_tensor({t, p, c}, rng, -2.0, 2.0);
    HeadOutput out = prediction_head(tape, tape.leaf(h), head, 0.2, Mode::Eval, nullptr);
    const double prob = tape.value(out.probability)[0];
    const double logit = tape.value(out.logit)[0];
    CHECK(prob > 0.0);
    CHECK(prob < 1.0);
    CHECK(prob == doctest::Approx(1.0 / (1.0 + std::exp(-logit))));
  }

  SUBCASE("node-constant features make the logit invariant to node removal") {
    Tape tape;
    HeadBinding head = make_head(tape, t * c, {6});
    Tensor h({t, p, c});
    Rng r2(9);
    for (int tt = 0; tt < t; ++tt)
      for (int ch = 0; ch < c; ++ch) {
        const double v = r2.uniform(-1.0, 1.0);
        for (int n = 0; n < p; ++n) h.at({tt, n, ch}) = v;
      }
    HeadOutput full = prediction_head(tape, tape.leaf(h), head, 0.0, Mode::Eval, nullptr);
    // drop the last node: spatial mean of identical features is unchanged
    Tensor dropped({t, p - 1, c});
    for (int tt = 0; tt < t; ++tt)
      for (int n = 0; n < p - 1; ++n)
        for (int ch = 0; ch < c; ++ch) dropped.at({tt, n, ch}) = h.at({tt, n, ch});
    HeadOutput less = prediction_head(tape, tape.leaf(dropped), head, 0.0, Mode::Eval, nullptr);
    CHECK(tape.value(full.logit)[0] ==
          doctest::Approx(tape.value(less.logit)[0]).epsilon(1e-12));
  }

  SUBCASE("flattened size mismatch is rejected") {
    Tape tape;
    HeadBinding head = make_head(tape, t * c + 1, {4});
    const Tensor h = oracle::random_tensor({t, p, c}, rng);
    CHECK_THROWS_AS(prediction_head(tape, tape.leaf(h), head, 0.0, Mode::Eval, nullptr),
                    ShapeError);
  }
}

TEST_CASE("stc output is permutation-equivariant") {
  Rng rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    StcLayerSpec spec;
    spec.k = 1 + static_cast<int>(rng.uniform_index(2));
    spec.t = 3;
    spec.c_out = 3;
    spec.rule = trial % 2 == 0 ? StcRule::A : StcRule::B;
    spec.aggregate = trial % 3 == 0 ? ReduceKind::Mean : ReduceKind::Max;
    const int p = 6;
    LayerFixture fx = make_layer(spec, 2, rng);
    const Adjacency a = oracle::random_digraph(p, 0.4, rng);
    const Tensor h = oracle::random_tensor({5, p, 2}, rng);
    const std::vector<int> perm = support::random_permutation(p, rng);

    const Tensor base = run_stc(fx, h, a, Mode::Eval);
    const Tensor permuted =
        run_stc(fx, support::permute_nodes(h, perm), support::permute_adjacency(a, perm),
                Mode::Eval);
    const Tensor expect = support::permute_nodes(base, perm);
    for (std::size_t i = 0; i < expect.numel(); ++i)
      CHECK(permuted[i] == doctest::Approx(expect[i]).epsilon(1e-9));
  }
}

TEST_CASE("receptive field grows monotonically with k") {
  Rng rng(9);
  const int p = 7;
  const Adjacency a = Adjacency::from_edges(
      p, {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 5}, {5, 6}});  // a path
  const Tensor base = Tensor::full({4, p, 2}, 0.5);
  Tensor poked = base;
  poked.at({2, 0, 1}) = 2.0;  // perturb node 0 only

  std::vector<int> affected_prev;
  for (int k = 0; k <= 3; ++k) {
    StcLayerSpec spec;
    spec.k = k;
    spec.t = 1;
    spec.c_out = 2;
    spec.rule = StcRule::A;
    spec.aggregate = ReduceKind::Mean;
    LayerFixture fx = make_layer(spec, 2, rng);
    // keep the perturbation visible: non-negative weights, neutral batch norm
    for (std::size_t i = 0; i < fx.w_int.numel(); ++i)
      fx.w_int[i] = std::abs(fx.w_int[i]) + 0.05;
    fx.gamma = Tensor::full({2}, 1.0);
    fx.beta = Tensor({2});
    fx.rm = Tensor({2});
    fx.rv = Tensor::full({2}, 1.0);
    const Tensor out_base = run_stc(fx, base, a, Mode::Eval);
    const Tensor out_poked = run_stc(fx, poked, a, Mode::Eval);
    std::vector<int> affected;
    for (int n = 0; n < p; ++n) {
      bool diff = false;
      for (int t = 0; t < 4; ++t)
        for (int c = 0; c < 2; ++c)
          if (std::abs(out_base.at({t, n, c}) - out_poked.at({t, n, c})) > 1e-12)
            diff = true;
      if (diff) affected.push_back(n);
    }
    // the affected set is exactly the k-ball around node 0 on a path
    std::vector<int> want;
    for (int n = 0; n <= std::min(k, p - 1); ++n) want.push_back(n);
    CHECK(affected == want);
    for (int n : affected_prev)
      CHECK(std::find(affected.begin(), affected.end(), n) != affected.end());
    affected_prev = affected;
  }
}

TEST_CASE("stc gradients match finite differences for both rules") {
  Rng rng(10);
  for (StcRule rule : {StcRule::A, StcRule::B}) {
    StcLayerSpec spec;
    spec.k = 1;
    spec.t = 3;
    spec.c_out = 2;
    spec.rule = rule;
    spec.aggregate = ReduceKind::Max;
    spec.use_g1 = rule == StcRule::B;
    LayerFixture fx = make_layer(spec, 2, rng);
    const Adjacency a = oracle::random_digraph(3, 0.5, rng);
    const Reachability reach = reachability(a, 1);
    const Tensor h = oracle::random_tensor({6, 3, 2}, rng, 0.1, 1.2);
    Tensor w(std::vector<int>{6, 3, 2});
    Rng wr(55);
    for (std::size_t i = 0; i < w.numel(); ++i) w[i] = wr.uniform(-1.0, 1.0);

    auto build = [&](Tape& tape, Value in) {
      StcBinding binding = fx.bind(tape);
      Value out = stc_forward(tape, in, reach, spec, binding, Mode::Train);
      Value prod = tape.mul(out, tape.leaf(w));
      return tape.reduce(tape.reshape(prod, {36}), 0, ReduceKind::Mean);
    };
    Tape tape;
    Value in = tape.leaf(h);
    tape.backward(build(tape, in));
    auto f = [&](const Tensor& v) {
      Tape t;
      return t.value(build(t, t.leaf(v)))[0];
    };
    CHECK(oracle::max_grad_rel_error(tape.grad(in), h, f) < 1e-4);
  }
}
