#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <random>

#include "cpg/tensor.hpp"

using namespace cpg;

namespace {

Tensor rand_t(Shape shape, std::uint64_t seed, double std = 1.0, bool rg = true) {
  std::mt19937_64 rng(seed);
  return Tensor::randn(shape, rng, std, rg);
}

// Max relative backward-vs-finite-difference error over all given params.
double fd_max_err(const std::function<Tensor(Graph&)>& build,
                  std::vector<Tensor> params, int probes = 6) {
  auto f = [&]() {
    Graph g(false);
    return build(g).item();
  };
  Graph g;
  Tensor loss = build(g);
  for (auto& p : params) p.zero_grad();
  g.backward(loss);
  std::mt19937_64 rng(12345);
  double worst = 0;
  for (auto& p : params)
    worst = std::max(worst, fd_check_param(f, p, p.grad_vec(), probes, rng));
  return worst;
}

Tensor weigh(Graph& g, const Tensor& x, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Tensor w = Tensor::randn(x.shape(), rng, 1.0);
  Tensor p = g.mul(x, w);
  return x.rank() == 2 ? g.reduce_sum(p, -1) : g.reduce_sum(g.reshape(p, {1, (int)x.size()}), -1);
}

}  // namespace

TEST_CASE("forward basics") {
  Graph g;
  Tensor x = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  Tensor y = Tensor::from_data({2, 2}, {5, 6, 7, 8});
  CHECK(g.add(x, y).at({1, 1}) == 12);
  CHECK(g.sub(x, y).at({0, 0}) == -4);
  CHECK(g.mul(x, y).at({0, 1}) == 12);
  CHECK(g.div(y, x).at({1, 0}) == doctest::Approx(7.0 / 3.0));
  Tensor mm = g.matmul(x, y);
  CHECK(mm.at({0, 0}) == 19);  // 1*5+2*7
  CHECK(mm.at({1, 1}) == 50);
  CHECK(g.transpose(x).at({0, 1}) == 3);
  CHECK(g.reduce_sum(x, -1).item() == 10);
  CHECK(g.reduce_mean(x, -1).item() == 2.5);
  CHECK(g.reduce_max(x, -1).item() == 4);
  CHECK(g.reduce_sum(x, 1).at({1}) == 7);
}

TEST_CASE("gelu matches the exact erf form") {
  Graph g;
  Tensor x = Tensor::from_data({1, 3}, {0.0, 1.0, -2.0});
  Tensor y = g.gelu(x);
  for (int i = 0; i < 3; ++i) {
    double v = x.at({0, i});
    double expect = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
    CHECK(y.at({0, i}) == doctest::Approx(expect).epsilon(1e-14));
  }
}

TEST_CASE("softmax rows sum to 1 within 1e-12") {
  Graph g;
  Tensor x = rand_t({5, 7}, 3, 2.0, false);
  Tensor s = g.softmax(x, 1);
  for (int i = 0; i < 5; ++i) {
    double acc = 0;
    for (int j = 0; j < 7; ++j) acc += s.at({i, j});
    CHECK(std::abs(acc - 1.0) < 1e-12);
  }
  Tensor s0 = g.softmax(x, 0);
  for (int j = 0; j < 7; ++j) {
    double acc = 0;
    for (int i = 0; i < 5; ++i) acc += s0.at({i, j});
    CHECK(std::abs(acc - 1.0) < 1e-12);
  }
}

TEST_CASE("d(x^2)/dx at x=3 is 6; fan-out accumulates") {
  Graph g;
  Tensor x = Tensor::from_data({1, 1}, {3.0}, true);
  Tensor y = g.reduce_sum(g.mul(x, x), -1);
  g.backward(y);
  CHECK(x.grad_vec()[0] == doctest::Approx(6.0));

  Graph g2;
  Tensor z = Tensor::from_data({1, 1}, {1.5}, true);
  Tensor w = g2.reduce_sum(g2.add(z, z), -1);
  z.zero_grad();
  g2.backward(w);
  CHECK(z.grad_vec()[0] == doctest::Approx(2.0));
}

TEST_CASE("loss independent of a parameter leaves its grad zero") {
  Graph g;
  Tensor a = rand_t({2, 2}, 1);
  Tensor b = rand_t({2, 2}, 2);
  Tensor loss = g.reduce_sum(g.mul(a, a), -1);
  a.zero_grad();
  b.zero_grad();
  g.backward(loss);
  for (double v : b.grad_vec()) CHECK(v == 0.0);
}

TEST_CASE("finite differences: elementwise and scalar ops") {
  struct Case {
    const char* name;
    std::function<Tensor(Graph&, const Tensor&, const Tensor&)> op;
  };
  Tensor a = rand_t({3, 4}, 11);
  Tensor b = rand_t({3, 4}, 22);
  // shift b away from a to keep max/min off their kinks
  for (std::int64_t i = 0; i < b.size(); ++i) b.data()[i] += 0.37;
  std::vector<Case> cases = {
      {"add", [](Graph& g, const Tensor& x, const Tensor& y) { return g.add(x, y); }},
      {"sub", [](Graph& g, const Tensor& x, const Tensor& y) { return g.sub(x, y); }},
      {"mul", [](Graph& g, const Tensor& x, const Tensor& y) { return g.mul(x, y); }},
      {"maximum", [](Graph& g, const Tensor& x, const Tensor& y) { return g.maximum(x, y); }},
      {"minimum", [](Graph& g, const Tensor& x, const Tensor& y) { return g.minimum(x, y); }},
  };
  for (auto& c : cases) {
    CAPTURE(c.name);
    double err = fd_max_err(
        [&](Graph& g) { return weigh(g, c.op(g, a, b), 5); }, {a, b});
    CHECK(err < 1e-6);
  }
  Tensor pos = rand_t({3, 4}, 33);
  for (std::int64_t i = 0; i < pos.size(); ++i)
    pos.data()[i] = 0.5 + std::abs(pos.data()[i]);
  CHECK(fd_max_err([&](Graph& g) { return weigh(g, g.div(a, pos), 6); }, {a, pos}) < 1e-6);
  CHECK(fd_max_err([&](Graph& g) { return weigh(g, g.log(pos), 7); }, {pos}) < 1e-6);
  CHECK(fd_max_err([&](Graph& g) { return weigh(g, g.exp(a), 8); }, {a}) < 1e-6);
  CHECK(fd_max_err([&](Graph& g) { return weigh(g, g.sigmoid(a), 9); }, {a}) < 1e-6);
  CHECK(fd_max_err([&](Graph& g) { return weigh(g, g.gelu(a), 10); }, {a}) < 1e-6);
  CHECK(fd_max_err([&](Graph& g) { return weigh(g, g.relu(a), 11); }, {a}) < 1e-6);
  CHECK(fd_max_err([&](Graph& g) { return weigh(g, g.abs(a), 12); }, {a}) < 1e-6);
  CHECK(fd_max_err([&](Graph& g) { return weigh(g, g.add_scalar(a, 0.7), 13); }, {a}) < 1e-6);
  CHECK(fd_max_err([&](Graph& g) { return weigh(g, g.mul_scalar(a, -2.5), 14); }, {a}) < 1e-6);
  CHECK(fd_max_err([&](Graph& g) { return weigh(g, g.clamp_min(a, -0.4), 15); }, {a}) < 1e-6);
  CHECK(fd_max_err([&](Graph& g) { return weigh(g, g.clamp_max(a, 0.4), 16); }, {a}) < 1e-6);
}

TEST_CASE("finite differences: structural and nn ops") {
  Tensor a = rand_t({3, 4}, 41);
  Tensor b = rand_t({4, 5}, 42);
  CHECK(fd_max_err([&](Graph& g) { return weigh(g, g.matmul(a, b), 1); }, {a, b}) < 1e-6);
  CHECK(fd_max_err([&](Graph& g) { return weigh(g, g.transpose(a), 2); }, {a}) < 1e-6);

  Tensor bias = rand_t({4}, 43);
  CHECK(fd_max_err([&](Graph& g) { return weigh(g, g.add_bias(a, bias), 3); },
                   {a, bias}) < 1e-6);

  Tensor c = rand_t({2, 4}, 44);
  CHECK(fd_max_err([&](Graph& g) { return weigh(g, g.concat(a, c, 0), 4); }, {a, c}) < 1e-6);
  Tensor d = rand_t({3, 2}, 45);
  CHECK(fd_max_err([&](Graph& g) { return weigh(g, g.concat(a, d, 1), 5); }, {a, d}) < 1e-6);
  CHECK(fd_max_err([&](Graph& g) { return weigh(g, g.slice(a, 1, 3, 0, 3), 6); }, {a}) < 1e-6);
  CHECK(fd_max_err([&](Graph& g) { return weigh(g, g.reshape(a, {4, 3}), 7); }, {a}) < 1e-6);

  CHECK(fd_max_err([&](Graph& g) { return weigh(g, g.reduce_sum(a, 0), 8); }, {a}) < 1e-6);
  CHECK(fd_max_err([&](Graph& g) { return weigh(g, g.reduce_sum(a, 1), 9); }, {a}) < 1e-6);
  CHECK(fd_max_err([&](Graph& g) { return weigh(g, g.reduce_mean(a, 1), 10); }, {a}) < 1e-6);
  CHECK(fd_max_err([&](Graph& g) { return weigh(g, g.reduce_max(a, 1), 11); }, {a}) < 1e-6);

  CHECK(fd_max_err([&](Graph& g) { return weigh(g, g.softmax(a, 1), 12); }, {a}) < 1e-6);
  CHECK(fd_max_err([&](Graph& g) { return weigh(g, g.softmax(a, 0), 13); }, {a}) < 1e-6);

  Tensor gamma = rand_t({4}, 46, 0.5);
  Tensor beta = rand_t({4}, 47, 0.5);
  for (std::int64_t i = 0; i < gamma.size(); ++i) gamma.data()[i] += 1.0;
  CHECK(fd_max_err([&](Graph& g) { return weigh(g, g.layer_norm(a, gamma, beta), 14); },
                   {a, gamma, beta}) < 1e-6);

  Tensor table = rand_t({6, 4}, 48);
  std::vector<int> ids = {4, 0, 4, 2};
  CHECK(fd_max_err([&](Graph& g) { return weigh(g, g.embedding_lookup(table, ids), 15); },
                   {table}) < 1e-6);

  std::vector<std::uint8_t> mask = {0, 1, 0, 0, 1, 0, 1, 0, 0, 0, 0, 1};
  CHECK(fd_max_err([&](Graph& g) { return weigh(g, g.masked_fill(a, mask, -3.0), 16); },
                   {a}) < 1e-6);

  Tensor img = rand_t({2, 6, 6}, 49);
  CHECK(fd_max_err([&](Graph& g) { return weigh(g, g.im2col(img, 3, 2, 1), 17); },
                   {img}) < 1e-6);
}

TEST_CASE("20-op random DAG gradient matches finite differences") {
  Tensor x = rand_t({3, 3}, 77);
  Tensor y = rand_t({3, 3}, 78);
  auto build = [&](Graph& g) {
    Tensor h = g.add(g.mul(x, y), g.sigmoid(x));
    h = g.matmul(h, g.transpose(y));
    h = g.layer_norm(h, Tensor::full({3}, 1.0), Tensor::zeros({3}));
    h = g.gelu(g.add(h, x));
    h = g.softmax(h, 1);
    h = g.mul(h, g.exp(g.mul_scalar(y, 0.3)));
    return g.reduce_sum(h, -1);
  };
  CHECK(fd_max_err(build, {x, y}, 10) < 1e-6);
}

TEST_CASE("checked errors name shapes and domains") {
  Graph g;
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({3, 2});
  CHECK_THROWS_AS(g.add(a, b), ShapeError);
  try {
    g.add(a, b);
  } catch (const ShapeError& e) {
    std::string msg = e.what();
    CHECK(msg.find("(2,3)") != std::string::npos);
    CHECK(msg.find("(3,2)") != std::string::npos);
  }
  CHECK_THROWS_AS(g.log(Tensor::from_data({1, 1}, {-1.0})), ValueError);
  CHECK_THROWS_AS(g.div(a, Tensor::zeros({2, 3})), ValueError);
  CHECK_THROWS_AS(g.backward(Tensor::zeros({2, 2}, true)), ValueError);
}

TEST_CASE("deterministic forward/backward") {
  auto run = [] {
    Tensor x = rand_t({4, 4}, 5);
    Graph g;
    Tensor loss = g.reduce_sum(g.gelu(g.matmul(x, x)), -1);
    x.zero_grad();
    g.backward(loss);
    std::vector<double> out = x.grad_vec();
    out.push_back(loss.item());
    return out;
  };
  CHECK(run() == run());
}

TEST_CASE("AdamW: fixpoint, descent, convergence") {
  Tensor w = Tensor::from_data({1, 1}, {1.0}, true);
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  cfg.lr = 0.1;
  AdamW opt({w}, cfg);

  w.zero_grad();
  opt.step();  // zero grad, zero decay -> unchanged
  CHECK(w.item() == 1.0);

  Graph g;
  Tensor loss = g.reduce_sum(g.mul(w, w), -1);
  opt.zero_grad();
  g.backward(loss);
  opt.step();
  CHECK(w.item() < 1.0);

  for (int i = 0; i < 200; ++i) {
    Graph gi;
    Tensor l = gi.reduce_sum(gi.mul(w, w), -1);
    opt.zero_grad();
    gi.backward(l);
    opt.step();
  }
  Graph gf;
  CHECK(gf.reduce_sum(gf.mul(w, w), -1).item() < 1e-4);
}

TEST_CASE("AdamW decay is decoupled from the gradient") {
  Tensor w = Tensor::from_data({1, 1}, {2.0}, true);
  AdamWConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.5;
  AdamW opt({w}, cfg);
  w.zero_grad();  // zero gradient: only the decay term moves w
  opt.step();
  CHECK(w.item() == doctest::Approx(2.0 * (1.0 - 0.1 * 0.5)));
}

TEST_CASE("AdamW requires grads") {
  // a parameter that never allocated a grad buffer is a usage error
  Tensor w = Tensor::from_data({1, 1}, {1.0}, false);
  AdamW opt({w}, {});
  CHECK_THROWS_AS(opt.step(), ValueError);
}

TEST_CASE("checkpoint round trip is bit exact") {
  Tensor a = rand_t({3, 5}, 9, 1.7, false);
  Tensor b = Tensor::from_data({2}, {1e-300, -0.0});
  std::string path = "ckpt_test.bin";
  save_checkpoint(path, {{"a", a}, {"b", b}}, "{\"note\":42}");
  Checkpoint ck = load_checkpoint(path);
  CHECK(ck.extras_json == "{\"note\":42}");
  Tensor a2 = ck.find("a");
  Tensor b2 = ck.find("b");
  REQUIRE(a2.shape() == a.shape());
  for (std::int64_t i = 0; i < a.size(); ++i) CHECK(a.data()[i] == a2.data()[i]);
  CHECK(std::signbit(b2.data()[1]));
  CHECK(b2.data()[0] == 1e-300);
  CHECK_THROWS_AS(ck.find("missing"), ValueError);
  std::remove(path.c_str());
}

TEST_CASE("tape hygiene: graphs release their buffers") {
  Tensor w = rand_t({4, 4}, 50);
  long before = TensorImpl::live_count();
  for (int i = 0; i < 1000; ++i) {
    Graph g;
    Tensor loss = g.reduce_sum(g.gelu(g.matmul(w, w)), -1);
    w.zero_grad();
    g.backward(loss);
  }
  CHECK(TensorImpl::live_count() == before);
}

TEST_CASE("im2col geometry") {
  Graph g;
  // 1x2x2 image, k=2 s=2 p=1 -> 2x2 output cells of 1*2*2 columns
  Tensor img = Tensor::from_data({1, 2, 2}, {1, 2, 3, 4});
  Tensor cols = g.im2col(img, 2, 2, 1);
  CHECK(cols.shape() == Shape{4, 4});
  CHECK(cols.at({0, 3}) == 1);  // top-left cell sees pixel (0,0) at its bottom-right
  CHECK(cols.at({3, 0}) == 4);
}
