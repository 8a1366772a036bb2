#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "tgcn/tape.hpp"

using namespace tgcn;

namespace {

Value weighted_scalar(Tape& tape, Value out, Rng& rng) {
  const Tensor& v = tape.value(out);
  Tensor w(v.shape());
  for (std::size_t i = 0; i < w.numel(); ++i) w[i] = rng.uniform(-1.0, 1.0);
  Value prod = tape.mul(out, tape.leaf(w));
  Value flat = tape.reshape(prod, {static_cast<int>(v.numel())});
  return tape.reduce(flat, 0, ReduceKind::Mean);
}

}  // namespace

TEST_CASE("conv1d identity kernel passes the signal through") {
  Tape tape;
  Value in = tape.leaf(Tensor({5, 1}, {1, 2, 3, 4, 5}));
  Value k = tape.leaf(Tensor({1, 1, 1}, {1.0}));
  Value b = tape.leaf(Tensor({1}, {0.0}));
  Value out = tape.conv1d(in, k, b, Padding::Same);
  const Tensor& o = tape.value(out);
  REQUIRE(o.shape() == std::vector<int>{5, 1});
  for (int i = 0; i < 5; ++i) CHECK(o[static_cast<std::size_t>(i)] == doctest::Approx(i + 1));
}

TEST_CASE("conv1d same padding keeps a 19200-long sequence at 19200") {
  Rng rng(11);
  Tape tape;
  Value in = tape.leaf(oracle::random_tensor({19200, 1}, rng));
  Value k = tape.leaf(oracle::random_tensor({3, 1, 1}, rng));
  Value b = tape.leaf(Tensor({1}));
  CHECK(tape.value(tape.conv1d(in, k, b, Padding::Same)).extent(0) == 19200);
}

TEST_CASE("conv1d same padding preserves length for odd t") {
  Rng rng(7);
  for (int t : {1, 3, 5, 7}) {
    Tape tape;
    Value in = tape.leaf(oracle::random_tensor({11, 2}, rng));
    Value k = tape.leaf(oracle::random_tensor({t, 3, 2}, rng));
    Value b = tape.leaf(oracle::random_tensor({3}, rng));
    const Tensor& o = tape.value(tape.conv1d(in, k, b, Padding::Same));
    CHECK(o.shape() == std::vector<int>{11, 3});
  }
}

TEST_CASE("conv1d valid matches the direct triple-loop oracle") {
  Rng rng(42);
  const Tensor in = oracle::random_tensor({4, 2}, rng);
  const Tensor k = oracle::random_tensor({3, 2, 2}, rng);
  const Tensor b = oracle::random_tensor({2}, rng);
  Tape tape;
  const Tensor& got =
      tape.value(tape.conv1d(tape.leaf(in), tape.leaf(k), tape.leaf(b), Padding::Valid));
  const Tensor want = oracle::naive_conv1d(in, k, b, false);
  REQUIRE(got.shape() == want.shape());
  for (std::size_t i = 0; i < got.numel(); ++i)
    CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
}

TEST_CASE("conv1d rejects mismatched channel counts and bad padding") {
  Tape tape;
  Value in = tape.leaf(Tensor({4, 2}));
  Value k3 = tape.leaf(Tensor({3, 1, 3}));  // expects c_in = 3
  Value b = tape.leaf(Tensor({1}));
  CHECK_THROWS_AS(tape.conv1d(in, k3, b, Padding::Valid), ShapeError);
  Value k_even = tape.leaf(Tensor({2, 1, 2}));
  CHECK_THROWS_AS(tape.conv1d(in, k_even, b, Padding::Same), ShapeError);
  Value k_long = tape.leaf(Tensor({5, 1, 2}));
  CHECK_THROWS_AS(tape.conv1d(in, k_long, b, Padding::Valid), ShapeError);
}

TEST_CASE("dense identity and zero-weight cases") {
  Tape tape;
  Value in = tape.leaf(Tensor({3}, {1, 2, 3}));
  Value eye = tape.leaf(Tensor({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1}));
  Value zero_b = tape.leaf(Tensor({3}));
  const Tensor& same = tape.value(tape.dense(in, eye, zero_b));
  for (int i = 0; i < 3; ++i) CHECK(same[static_cast<std::size_t>(i)] == doctest::Approx(i + 1));

  Value zeros = tape.leaf(Tensor({2, 3}));
  Value bias = tape.leaf(Tensor({2}, {5, -4}));
  const Tensor& only_bias = tape.value(tape.dense(in, zeros, bias));
  CHECK(only_bias[0] == doctest::Approx(5));
  CHECK(only_bias[1] == doctest::Approx(-4));
}

TEST_CASE("dense 3x2 matches hand-expanded dot products") {
  // w = [[1,2],[3,4],[5,6]], x = [10, -1], b = [0.5, -0.5, 1]
  Tape tape;
  Value x = tape.leaf(Tensor({2}, {10, -1}));
  Value w = tape.leaf(Tensor({3, 2}, {1, 2, 3, 4, 5, 6}));
  Value b = tape.leaf(Tensor({3}, {0.5, -0.5, 1}));
  const Tensor& out = tape.value(tape.dense(x, w, b));
  CHECK(out[0] == doctest::Approx(1 * 10 + 2 * -1 + 0.5));
  CHECK(out[1] == doctest::Approx(3 * 10 + 4 * -1 - 0.5));
  CHECK(out[2] == doctest::Approx(5 * 10 + 6 * -1 + 1));
}

TEST_CASE("dense rejects mismatched shapes") {
  Tape tape;
  Value x = tape.leaf(Tensor({2}));
  Value w = tape.leaf(Tensor({3, 4}));
  Value b = tape.leaf(Tensor({3}));
  CHECK_THROWS_AS(tape.dense(x, w, b), ShapeError);
}

TEST_CASE("activation examples") {
  Tape tape;
  const Tensor& r = tape.value(tape.relu(tape.leaf(Tensor({3}, {-1, 0, 2}))));
  CHECK(r[0] == 0.0);
  CHECK(r[1] == 0.0);
  CHECK(r[2] == 2.0);
  const Tensor& s = tape.value(tape.sigmoid(tape.leaf(Tensor::scalar(0.0))));
  CHECK(s[0] == doctest::Approx(0.5));
}

TEST_CASE("sigmoid is monotone on a sorted vector") {
  Rng rng(3);
  Tensor x = oracle::random_tensor({64}, rng, -6.0, 6.0);
  std::sort(x.data(), x.data() + x.numel());
  Tape tape;
  const Tensor& out = tape.value(tape.sigmoid(tape.leaf(x)));
  for (std::size_t i = 1; i < out.numel(); ++i) CHECK(out[i] >= out[i - 1]);
}

TEST_CASE("reduce mean and singleton max examples") {
  Tape tape;
  // mean over rows of [[1,3],[5,7]] -> [2, 6]
  Value m = tape.reduce(tape.leaf(Tensor({2, 2}, {1, 3, 5, 7})), 1, ReduceKind::Mean);
  CHECK(tape.value(m)[0] == doctest::Approx(2));
  CHECK(tape.value(m)[1] == doctest::Approx(6));

  Value x = tape.leaf(Tensor({1, 3}, {4, -2, 9}));
  const Tensor& mx = tape.value(tape.reduce(x, 0, ReduceKind::Max));
  CHECK(mx.shape() == std::vector<int>{3});
  CHECK(mx[0] == 4.0);
  CHECK(mx[1] == -2.0);
  CHECK(mx[2] == 9.0);

  CHECK_THROWS_AS(tape.reduce(x, 2, ReduceKind::Max), ShapeError);
}

TEST_CASE("max-reduce gradient is one-hot at the argmax") {
  const Tensor x({4}, {0.3, 1.7, -0.2, 0.9});
  Tape tape;
  Value in = tape.leaf(x);
  Value out = tape.reduce(in, 0, ReduceKind::Max);
  tape.backward(out);
  const Tensor& g = tape.grad(in);
  CHECK(g[0] == 0.0);
  CHECK(g[1] == 1.0);
  CHECK(g[2] == 0.0);
  CHECK(g[3] == 0.0);

  auto f = [](const Tensor& v) {
    Tape t;
    return t.value(t.reduce(t.leaf(v), 0, ReduceKind::Max))[0];
  };
  CHECK(oracle::max_grad_rel_error(g, x, f) < 1e-4);
}

TEST_CASE("max-reduce ties break to the lowest index, bit-identically") {
  const Tensor x({4}, {2.0, 2.0, 1.0, 2.0});
  Tape tape;
  Value in = tape.leaf(x);
  Value out = tape.reduce(in, 0, ReduceKind::Max);
  tape.backward(out);
  Tensor first = tape.grad(in);
  CHECK(first[0] == 1.0);
  CHECK(first[1] == 0.0);
  CHECK(first[3] == 0.0);
  tape.backward(out);  // gradients reset and recomputed
  const Tensor& second = tape.grad(in);
  for (std::size_t i = 0; i < 4; ++i) CHECK(first[i] == second[i]);
}

TEST_CASE("concat doubles the channel extent and round-trips") {
  Rng rng(5);
  const Tensor a = oracle::random_tensor({6, 2}, rng);
  const Tensor b = oracle::random_tensor({6, 2}, rng);
  Tape tape;
  Value va = tape.leaf(a), vb = tape.leaf(b);
  Value cat = tape.concat(va, vb, 1);
  const Tensor& c = tape.value(cat);
  REQUIRE(c.shape() == std::vector<int>{6, 4});  // 2*c, the W_comb input extent
  // splitting at the join recovers both parts
  for (int t = 0; t < 6; ++t)
    for (int ch = 0; ch < 2; ++ch) {
      CHECK(c.at({t, ch}) == a.at({t, ch}));
      CHECK(c.at({t, 2 + ch}) == b.at({t, ch}));
    }
  CHECK_THROWS_AS(tape.concat(va, tape.leaf(Tensor({5, 2})), 1), ShapeError);
}

TEST_CASE("batch norm examples") {
  Rng rng(17);
  const int c = 3;
  Tensor gamma = Tensor::full({c}, 1.0);
  Tensor beta({c});
  BatchNormState state{Tensor({c}), Tensor::full({c}, 1.0)};

  SUBCASE("already normalized input is unchanged") {
    // one channel, zero mean, unit (biased) variance
    Tensor x({4, 1}, {-1, 1, -1, 1});
    BatchNormState st{Tensor({1}), Tensor::full({1}, 1.0)};
    Tape tape;
    Value out = tape.batch_norm(tape.leaf(x), tape.leaf(Tensor::full({1}, 1.0)),
                                tape.leaf(Tensor({1})), &st, Mode::Train, 1e-5, 0.1);
    for (std::size_t i = 0; i < 4; ++i)
      CHECK(tape.value(out)[i] == doctest::Approx(x[i]).epsilon(1e-4));
  }

  SUBCASE("constant channel maps to beta") {
    Tensor x = Tensor::full({8, 1}, 3.25);
    BatchNormState st{Tensor({1}), Tensor::full({1}, 1.0)};
    Tape tape;
    Value out = tape.batch_norm(tape.leaf(x), tape.leaf(Tensor::full({1}, 2.0)),
                                tape.leaf(Tensor({1}, {0.7})), &st, Mode::Train,
                                1e-5, 0.1);
    for (std::size_t i = 0; i < 8; ++i)
      CHECK(tape.value(out)[i] == doctest::Approx(0.7));
  }

  SUBCASE("train output moments match gamma/beta") {
    Tensor x = oracle::random_tensor({32, 4, c}, rng, -3.0, 5.0);
    Tensor g({c}, {2.0, 0.5, 1.5});
    Tensor b({c}, {-1.0, 0.25, 3.0});
    Tape tape;
    Value out = tape.batch_norm(tape.leaf(x), tape.leaf(g), tape.leaf(b), &state,
                                Mode::Train, 1e-5, 0.1);
    const Tensor& y = tape.value(out);
    const std::size_t m = y.numel() / c;
    for (int ch = 0; ch < c; ++ch) {
      double mean = 0.0, var = 0.0;
      for (std::size_t i = 0; i < y.numel(); ++i)
        if (static_cast<int>(i % c) == ch) mean += y[i];
      mean /= static_cast<double>(m);
      for (std::size_t i = 0; i < y.numel(); ++i)
        if (static_cast<int>(i % c) == ch) var += (y[i] - mean) * (y[i] - mean);
      var /= static_cast<double>(m);
      CHECK(mean == doctest::Approx(b[static_cast<std::size_t>(ch)]).epsilon(1e-9));
      CHECK(std::sqrt(var) ==
            doctest::Approx(g[static_cast<std::size_t>(ch)]).epsilon(1e-3));
    }
  }
}

TEST_CASE("dropout examples") {
  Rng rng(23);
  const Tensor x = oracle::random_tensor({50}, rng);

  SUBCASE("p = 0 is the identity in both modes") {
    Tape tape;
    Value in = tape.leaf(x);
    CHECK(tape.dropout(in, 0.0, Mode::Train, rng).node == in.node);
    CHECK(tape.dropout(in, 0.0, Mode::Eval, rng).node == in.node);
  }
  SUBCASE("eval mode is the identity for any p") {
    Tape tape;
    Value in = tape.leaf(x);
    CHECK(tape.dropout(in, 0.7, Mode::Eval, rng).node == in.node);
  }
  SUBCASE("empirical zero fraction at p = 0.2") {
    Tape tape;
    Value in = tape.leaf(Tensor::full({100000}, 1.0));
    const Tensor& out = tape.value(tape.dropout(in, 0.2, Mode::Train, rng));
    std::size_t zeros = 0;
    for (std::size_t i = 0; i < out.numel(); ++i)
      if (out[i] == 0.0) ++zeros;
    const double frac = static_cast<double>(zeros) / static_cast<double>(out.numel());
    CHECK(frac == doctest::Approx(0.2).epsilon(0.05));  // within +-0.01
    for (std::size_t i = 0; i < out.numel(); ++i)
      if (out[i] != 0.0) CHECK(out[i] == doctest::Approx(1.25));
  }
  SUBCASE("p out of range is rejected") {
    Tape tape;
    Value in = tape.leaf(x);
    CHECK_THROWS_AS(tape.dropout(in, 1.0, Mode::Train, rng), ValueError);
  }
}

TEST_CASE("backward basics") {
  SUBCASE("d/dx of x is 1") {
    Tape tape;
    Value x = tape.leaf(Tensor::scalar(3.7));
    tape.backward(x);
    CHECK(tape.grad(x)[0] == 1.0);
  }
  SUBCASE("sigmoid gradient at 0 is 0.25") {
    Tape tape;
    Value x = tape.leaf(Tensor::scalar(0.0));
    Value s = tape.sigmoid(x);
    tape.backward(s);
    CHECK(tape.grad(x)[0] == doctest::Approx(0.25));
  }
  SUBCASE("non-scalar loss is rejected") {
    Tape tape;
    Value x = tape.leaf(Tensor({2}));
    CHECK_THROWS_AS(tape.backward(x), ShapeError);
  }
  SUBCASE("foreign values are rejected") {
    Tape tape;
    CHECK_THROWS_AS(tape.grad(Value{5}), Error);
  }
}

TEST_CASE("composed conv1d/relu/reduce gradient matches finite differences") {
  Rng rng(31);
  const Tensor x = oracle::random_tensor({6, 2}, rng);
  const Tensor k = oracle::random_tensor({3, 3, 2}, rng);
  const Tensor b = oracle::random_tensor({3}, rng);

  auto build = [&](Tape& tape, Value in) {
    Value v = tape.conv1d(in, tape.leaf(k), tape.leaf(b), Padding::Same);
    v = tape.relu(v);
    v = tape.reduce(v, 0, ReduceKind::Max);
    return tape.reduce(v, 0, ReduceKind::Mean);
  };
  Tape tape;
  Value in_leaf = tape.leaf(x);
  tape.backward(build(tape, in_leaf));
  auto f = [&](const Tensor& v) {
    Tape t;
    return t.value(build(t, t.leaf(v)))[0];
  };
  CHECK(oracle::max_grad_rel_error(tape.grad(in_leaf), x, f) < 1e-4);
}

TEST_CASE("every differentiable op matches finite differences over seeds") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(1000 + seed);
    // keep inputs away from relu/max kinks
    const Tensor x = oracle::random_tensor({5, 2, 3}, rng, 0.2, 1.7);
    const Tensor k = oracle::random_tensor({3, 4, 3}, rng);
    const Tensor kb = oracle::random_tensor({4}, rng);
    const Tensor w = oracle::random_tensor({4, 16}, rng);
    const Tensor wb = oracle::random_tensor({4}, rng);
    const Tensor gamma = oracle::random_tensor({3}, rng, 0.5, 2.0);
    const Tensor beta = oracle::random_tensor({3}, rng);

    auto graph = [&](Tape& tape, const Tensor& in, Rng& weights) -> Value {
      BatchNormState state{Tensor({3}), Tensor::full({3}, 1.0)};
      Value v = tape.leaf(in);
      Value bn = tape.batch_norm(v, tape.leaf(gamma), tape.leaf(beta), &state,
                                 Mode::Train, 1e-5, 0.1);
      Value conv = tape.seq_conv1d(bn, tape.leaf(k), tape.leaf(kb), Padding::Same);
      Value pooled = tape.temporal_pool(conv, ReduceKind::Mean);
      Value pooled2 = tape.temporal_pool(pooled, ReduceKind::Max);
      Value cat = tape.concat(tape.select(pooled2, 1, 0), tape.select(pooled2, 1, 1), 0);
      Value stacked = tape.stack({cat, cat}, 0);
      Value red = tape.reduce(stacked, 0, ReduceKind::Mean);
      Value flat = tape.reshape(red, {16});
      Value densed = tape.dense(flat, tape.leaf(w), tape.leaf(wb));
      Value sig = tape.sigmoid(densed);
      Value both = tape.add(sig, tape.scale(tape.mul(sig, sig), 0.5));
      return weighted_scalar(tape, both, weights);
    };

    Tape tape;
    Rng wr_main(7777 + seed);
    // build twice with the same weight stream: once for analytic, once per probe
    Value loss = graph(tape, x, wr_main);
    tape.backward(loss);
    // locate the input leaf: it is node 0 (first leaf recorded)
    const Tensor analytic = tape.grad(Value{0});
    auto f = [&](const Tensor& v) {
      Tape t;
      Rng wr_probe(7777 + seed);
      return t.value(graph(t, v, wr_probe))[0];
    };
    CHECK(oracle::max_grad_rel_error(analytic, x, f) < 1e-4);
  }
}

TEST_CASE("backward is linear in the loss") {
  Rng rng(77);
  const Tensor x = oracle::random_tensor({8}, rng);
  Tape tape;
  Value in = tape.leaf(x);
  Value s = tape.sigmoid(in);
  Value l1 = tape.reduce(s, 0, ReduceKind::Mean);
  Value l2 = tape.reduce(tape.mul(s, s), 0, ReduceKind::Max);
  const double a = 1.7, b = -0.45;
  Value combined = tape.add(tape.scale(l1, a), tape.scale(l2, b));

  tape.backward(l1);
  const Tensor g1 = tape.grad(in);
  tape.backward(l2);
  const Tensor g2 = tape.grad(in);
  tape.backward(combined);
  const Tensor g = tape.grad(in);
  for (std::size_t i = 0; i < g.numel(); ++i)
    CHECK(g[i] == doctest::Approx(a * g1[i] + b * g2[i]).epsilon(1e-10));
}

TEST_CASE("forward ops preserve finiteness") {
  Rng rng(13);
  Tape tape;
  Value v = tape.leaf(oracle::random_tensor({7, 3, 2}, rng, -100.0, 100.0));
  Value conv = tape.seq_conv1d(v, tape.leaf(oracle::random_tensor({3, 5, 2}, rng)),
                               tape.leaf(oracle::random_tensor({5}, rng)),
                               Padding::Same);
  BatchNormState st{Tensor({5}), Tensor::full({5}, 1.0)};
  Value bn = tape.batch_norm(conv, tape.leaf(Tensor::full({5}, 1.0)),
                             tape.leaf(Tensor({5})), &st, Mode::Train, 1e-5, 0.1);
  Value act = tape.sigmoid(tape.relu(bn));
  Value pool = tape.temporal_pool(act, ReduceKind::Max);
  CHECK(tape.value(pool).all_finite());
}

TEST_CASE("bce loss op") {
  Tape tape;
  Value p = tape.leaf(Tensor::scalar(0.5));
  CHECK(tape.value(tape.bce_loss(p, 1.0))[0] == doctest::Approx(std::log(2.0)));
  CHECK(tape.value(tape.bce_loss(p, 0.0))[0] == doctest::Approx(std::log(2.0)));
  Value close = tape.leaf(Tensor::scalar(1.0 - 1e-9));
  CHECK(tape.value(tape.bce_loss(close, 1.0))[0] == doctest::Approx(0.0).epsilon(1e-6));
}
