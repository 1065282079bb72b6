#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "dplan/tensor.hpp"

using namespace dplan;

namespace {

Tensor randn_t(Rng& rng, std::vector<int> shape, bool req = true) {
  return Tensor::randn(rng, std::move(shape), 1.0, req);
}

// Central differences computed directly, independent of grad_check.
std::vector<double> central_diff(const std::function<double()>& f, Tensor& p, double eps) {
  std::vector<double> out(p.numel());
  auto d = p.mutable_data();
  for (size_t i = 0; i < d.size(); ++i) {
    double saved = d[i];
    d[i] = saved + eps;
    double up = f();
    d[i] = saved - eps;
    double down = f();
    d[i] = saved;
    out[i] = (up - down) / (2 * eps);
  }
  return out;
}

double max_rel_err(std::span<const double> a, std::span<const double> b) {
  double m = 0;
  for (size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::fabs(a[i] - b[i]) / std::max({1.0, std::fabs(a[i]), std::fabs(b[i])}));
  return m;
}

}  // namespace

TEST_CASE("matmul identity and hand arithmetic") {
  Tensor eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
  Tensor x = Tensor::from_data({2, 2}, {3, -1, 2, 7});
  Tensor y = matmul(nullptr, eye, x);
  for (size_t i = 0; i < 4; ++i) CHECK(y.data()[i] == x.data()[i]);

  Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  Tensor b = Tensor::from_data({2, 1}, {1, 1});
  Tensor c = matmul(nullptr, a, b);
  CHECK(c.data()[0] == 3.0);
  CHECK(c.data()[1] == 7.0);

  CHECK_THROWS_AS(matmul(nullptr, a, Tensor::from_data({3, 1}, {1, 1, 1})), Error);
}

TEST_CASE("log_softmax rows") {
  Tensor x = Tensor::from_data({1, 2}, {0, 0});
  Tensor y = log_softmax(nullptr, x);
  CHECK(y.data()[0] == Catch::Approx(-std::log(2.0)).epsilon(1e-15));
  CHECK(y.data()[1] == Catch::Approx(-std::log(2.0)).epsilon(1e-15));

  // forced stabilization: no overflow
  Tensor big = Tensor::from_data({1, 2}, {1000, 0});
  Tensor yb = log_softmax(nullptr, big);
  CHECK(yb.data()[0] == Catch::Approx(0.0).margin(1e-12));
  CHECK(yb.data()[1] == Catch::Approx(-1000.0).margin(1e-9));

  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor r = randn_t(rng, {3, 17}, false);
    Tensor lr = log_softmax(nullptr, r);
    for (int i = 0; i < 3; ++i) {
      double s = 0;
      for (int j = 0; j < 17; ++j) s += std::exp(lr.data()[i * 17 + j]);
      CHECK(std::fabs(s - 1.0) < 1e-12);
    }
  }

  Tensor bad = Tensor::from_data({1, 2}, {std::numeric_limits<double>::infinity(), 0});
  CHECK_THROWS_AS(log_softmax(nullptr, bad), Error);
}

TEST_CASE("backward basics") {
  SECTION("sum gradient is ones") {
    Tensor x = Tensor::from_data({3}, {1, 2, 3}, true);
    Tape t;
    Tensor loss = sum(&t, x);
    GradMap gm = t.backward(loss);
    Tensor g = gm.grad_for(x);
    for (int i = 0; i < 3; ++i) CHECK(g.data()[i] == 1.0);
  }
  SECTION("sum of squares") {
    Tensor x = Tensor::from_data({2}, {1, 2}, true);
    Tape t;
    Tensor loss = sum(&t, mul(&t, x, x));
    GradMap gm = t.backward(loss);
    Tensor g = gm.grad_for(x);
    CHECK(g.data()[0] == 2.0);
    CHECK(g.data()[1] == 4.0);
  }
  SECTION("loss must be scalar") {
    Tensor x = Tensor::from_data({2}, {1, 2}, true);
    Tape t;
    Tensor y = mul(&t, x, x);
    CHECK_THROWS_AS(t.backward(y), Error);
  }
  SECTION("unused parameter gets exactly zero") {
    Tensor x = Tensor::from_data({2}, {1, 2}, true);
    Tensor unused = Tensor::from_data({2}, {5, 5}, true);
    Tape t;
    Tensor y = mul(&t, x, x);
    mul(&t, unused, unused);  // on the tape, but not feeding the loss
    Tensor loss = sum(&t, y);
    GradMap gm = t.backward(loss);
    Tensor g = gm.grad_for(unused);
    CHECK(g.data()[0] == 0.0);
    CHECK(g.data()[1] == 0.0);
  }
  SECTION("fan-out accumulates") {
    Tensor x = Tensor::from_data({2}, {3, 4}, true);
    Tape t;
    Tensor loss = sum(&t, add(&t, x, x));
    GradMap gm = t.backward(loss);
    Tensor g = gm.grad_for(x);
    CHECK(g.data()[0] == 2.0);
    CHECK(g.data()[1] == 2.0);
  }
}

TEST_CASE("ops are pure and deterministic") {
  Rng rng(11);
  Tensor a = randn_t(rng, {4, 5}, false);
  Tensor b = randn_t(rng, {5, 3}, false);
  Tensor c1 = matmul(nullptr, a, b);
  Tensor c2 = matmul(nullptr, a, b);
  for (size_t i = 0; i < c1.numel(); ++i) CHECK(c1.data()[i] == c2.data()[i]);
  Tensor g1 = gelu(nullptr, a);
  Tensor g2 = gelu(nullptr, a);
  for (size_t i = 0; i < g1.numel(); ++i) CHECK(g1.data()[i] == g2.data()[i]);
}

TEST_CASE("per-op gradients match central differences over 100 seeds") {
  const double eps = 1e-5;
  for (uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    CAPTURE(seed);

    // matmul (3x4 * 4x2) through a weighted sum so the loss is scalar
    {
      Tensor a = randn_t(rng, {3, 4});
      Tensor b = randn_t(rng, {4, 2});
      Tensor w = randn_t(rng, {3, 2}, false);
      auto loss_of = [&](Tape* t) { return sum(t, mul(t, matmul(t, a, b), w)); };
      Tape t;
      GradMap gm = t.backward(loss_of(&t));
      auto scalar = [&] { return loss_of(nullptr).item(); };
      CHECK(max_rel_err(gm.grad_for(a).data(), central_diff(scalar, a, eps)) < 1e-6);
      CHECK(max_rel_err(gm.grad_for(b).data(), central_diff(scalar, b, eps)) < 1e-6);
    }

    // add / mul / scale / gelu / log_softmax / softmax / layer_norm chain
    {
      Tensor x = randn_t(rng, {2, 6});
      Tensor y = randn_t(rng, {2, 6});
      Tensor gain = Tensor::randn(rng, {6}, 0.3, true);
      for (size_t i = 0; i < 6; ++i) gain.mutable_data()[i] += 1.0;
      Tensor off = Tensor::randn(rng, {6}, 0.3, true);
      Tensor w = randn_t(rng, {2, 6}, false);
      auto loss_of = [&](Tape* t) {
        Tensor h = add(t, gelu(t, x), scale(t, mul(t, x, y), 0.5));
        h = layer_norm(t, h, gain, off);
        Tensor ls = log_softmax(t, h);
        Tensor sm = softmax(t, sub(t, h, ls));
        return sum(t, mul(t, add(t, ls, sm), w));
      };
      Tape t;
      GradMap gm = t.backward(loss_of(&t));
      auto scalar = [&] { return loss_of(nullptr).item(); };
      CHECK(max_rel_err(gm.grad_for(x).data(), central_diff(scalar, x, eps)) < 1e-6);
      CHECK(max_rel_err(gm.grad_for(y).data(), central_diff(scalar, y, eps)) < 1e-6);
      CHECK(max_rel_err(gm.grad_for(gain).data(), central_diff(scalar, gain, eps)) < 1e-6);
      CHECK(max_rel_err(gm.grad_for(off).data(), central_diff(scalar, off, eps)) < 1e-6);
    }

    // embedding_gather + slice/concat + add_bias + transpose
    {
      Tensor table = randn_t(rng, {7, 6});
      Tensor bias = randn_t(rng, {3});
      std::vector<int> ids = {2, 5, 2, 0};  // repeated id exercises accumulation
      Tensor w = randn_t(rng, {3, 4}, false);
      auto loss_of = [&](Tape* t) {
        Tensor e = embedding_gather(t, table, ids);
        Tensor left = slice_cols(t, e, 0, 3);
        Tensor right = slice_cols(t, e, 3, 3);
        Tensor both = concat_cols(t, {left, right});
        Tensor sr = slice_rows(t, both, 0, 4);
        Tensor tr = transpose(t, sr);            // [6,4]
        Tensor top = slice_rows(t, tr, 1, 3);    // [3,4]
        Tensor biased = add_bias(t, transpose(t, top), bias);  // [4,3]
        return sum(t, mul(t, transpose(t, biased), w));
      };
      Tape t;
      GradMap gm = t.backward(loss_of(&t));
      auto scalar = [&] { return loss_of(nullptr).item(); };
      CHECK(max_rel_err(gm.grad_for(table).data(), central_diff(scalar, table, eps)) < 1e-6);
      CHECK(max_rel_err(gm.grad_for(bias).data(), central_diff(scalar, bias, eps)) < 1e-6);
    }

    // fused losses: cross_entropy, weighted_nll, jsd_rows
    {
      Tensor logits = randn_t(rng, {4, 9});
      Tensor teacher = randn_t(rng, {4, 9}, false);
      std::vector<int> targets = {1, 8, 0, 4};
      std::vector<double> weights = {0.5, -1.25, 2.0, 0.0};
      auto ce = [&](Tape* t) { return cross_entropy(t, logits, targets); };
      auto wn = [&](Tape* t) { return weighted_nll(t, logits, targets, weights); };
      auto js = [&](Tape* t) { return jsd_rows(t, logits, teacher, 0.37); };
      for (auto& loss_of : {std::function<Tensor(Tape*)>(ce), std::function<Tensor(Tape*)>(wn),
                            std::function<Tensor(Tape*)>(js)}) {
        Tape t;
        GradMap gm = t.backward(loss_of(&t));
        auto scalar = [&] { return loss_of(nullptr).item(); };
        CHECK(max_rel_err(gm.grad_for(logits).data(), central_diff(scalar, logits, eps)) < 1e-6);
      }
    }
  }
}

TEST_CASE("grad_check harness") {
  SECTION("quadratic form") {
    Rng rng(3);
    Tensor x = randn_t(rng, {5});
    auto f = [&](Tape* t) { return sum(t, mul(t, x, x)); };
    std::vector<Tensor> params = {x};
    CHECK(grad_check(f, params, 1e-5) < 1e-8);
  }
  SECTION("softmax cross-entropy layer matches closed form softmax(z) - onehot") {
    Rng rng(4);
    Tensor z = randn_t(rng, {1, 7});
    std::vector<int> target = {3};
    auto f = [&](Tape* t) { return cross_entropy(t, z, target); };
    std::vector<Tensor> params = {z};
    CHECK(grad_check(f, params, 1e-5) < 1e-6);

    Tape t;
    GradMap gm = t.backward(f(&t));
    Tensor sm = softmax(nullptr, z);
    Tensor g = gm.grad_for(z);
    for (int j = 0; j < 7; ++j) {
      double closed = sm.data()[j] - (j == 3 ? 1.0 : 0.0);
      CHECK(g.data()[j] == Catch::Approx(closed).margin(1e-12));
    }
  }
  SECTION("eps bounds enforced") {
    Tensor x = Tensor::from_data({1}, {1.0}, true);
    auto f = [&](Tape* t) { return sum(t, x); };
    std::vector<Tensor> params = {x};
    CHECK_THROWS_AS(grad_check(f, params, 1e-2), Error);
  }
  SECTION("non-deterministic f rejected") {
    Tensor x = Tensor::from_data({1}, {1.0}, true);
    int calls = 0;
    auto f = [&](Tape* t) {
      ++calls;
      return scale(t, sum(t, x), 1.0 + 0.1 * calls);
    };
    std::vector<Tensor> params = {x};
    CHECK_THROWS_AS(grad_check(f, params, 1e-5), Error);
  }
}

TEST_CASE("2-layer MLP with cross-entropy matches finite differences") {
  Rng rng(99);
  Tensor w1 = Tensor::randn(rng, {6, 16}, 0.5, true);
  Tensor b1 = Tensor::randn(rng, {16}, 0.1, true);
  Tensor w2 = Tensor::randn(rng, {16, 5}, 0.5, true);
  Tensor b2 = Tensor::randn(rng, {5}, 0.1, true);
  Tensor x = randn_t(rng, {3, 6}, false);
  std::vector<int> targets = {4, 0, 2};
  auto f = [&](Tape* t) {
    Tensor h = gelu(t, add_bias(t, matmul(t, x, w1), b1));
    Tensor logits = add_bias(t, matmul(t, h, w2), b2);
    return cross_entropy(t, logits, targets);
  };
  std::vector<Tensor> params = {w1, b1, w2, b2};
  CHECK(grad_check(f, params, 1e-5) < 1e-6);
}
