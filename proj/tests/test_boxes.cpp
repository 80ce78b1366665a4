#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "cpg/boxes.hpp"
#include "cpg/tensor.hpp"

using namespace cpg;

namespace {

BoxXyxy rand_box(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double x0 = u(rng), y0 = u(rng);
  return {x0, y0, x0 + u(rng), y0 + u(rng)};
}

// Monte-Carlo GIoU: sample the enclosing hull, estimate the three areas.
double giou_monte_carlo(const BoxXyxy& a, const BoxXyxy& b, int samples,
                        std::mt19937_64& rng) {
  double ex0 = std::min(a.x0, b.x0), ey0 = std::min(a.y0, b.y0);
  double ex1 = std::max(a.x1, b.x1), ey1 = std::max(a.y1, b.y1);
  std::uniform_real_distribution<double> ux(ex0, ex1), uy(ey0, ey1);
  long in_a = 0, in_b = 0, in_both = 0;
  for (int i = 0; i < samples; ++i) {
    double x = ux(rng), y = uy(rng);
    bool ia = x >= a.x0 && x <= a.x1 && y >= a.y0 && y <= a.y1;
    bool ib = x >= b.x0 && x <= b.x1 && y >= b.y0 && y <= b.y1;
    in_a += ia;
    in_b += ib;
    in_both += ia && ib;
  }
  double hull = (ex1 - ex0) * (ey1 - ey0);
  double A = hull * in_a / samples, B = hull * in_b / samples;
  double I = hull * in_both / samples;
  double U = A + B - I;
  return I / U - (hull - U) / hull;
}

}  // namespace

TEST_CASE("cxcywh conversion: full-image box, round trip, degenerate width") {
  BoxXyxy full = cxcywh_to_xyxy({0.5, 0.5, 1, 1});
  CHECK(full.x0 == doctest::Approx(0.0));
  CHECK(full.y0 == doctest::Approx(0.0));
  CHECK(full.x1 == doctest::Approx(1.0));
  CHECK(full.y1 == doctest::Approx(1.0));

  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.01, 0.99);
  for (int i = 0; i < 1000; ++i) {
    BoxCxcywh b{u(rng), u(rng), u(rng), u(rng)};
    BoxCxcywh back = xyxy_to_cxcywh(cxcywh_to_xyxy(b));
    CHECK(std::abs(back.cx - b.cx) < 1e-12);
    CHECK(std::abs(back.cy - b.cy) < 1e-12);
    CHECK(std::abs(back.w - b.w) < 1e-12);
    CHECK(std::abs(back.h - b.h) < 1e-12);
  }

  BoxXyxy degen = cxcywh_to_xyxy({0.3, 0.3, 0.0, 0.2});
  CHECK(degen.x0 == degen.x1);
  CHECK_THROWS_AS(cxcywh_to_xyxy({0.5, 0.5, -0.1, 0.1}), ValueError);
}

TEST_CASE("giou: identical boxes 1, corner-touching -0.5") {
  BoxXyxy a{0.1, 0.2, 0.5, 0.9};
  CHECK(std::abs(box_giou(a, a) - 1.0) < 1e-12);

  BoxXyxy p{0, 0, 1, 1}, q{1, 1, 2, 2};
  CHECK(std::abs(box_giou(p, q) - (-0.5)) < 1e-9);

  std::mt19937_64 rng(99);
  double mc = giou_monte_carlo(p, q, 1000000, rng);
  CHECK(std::abs(box_giou(p, q) - mc) < 3e-3);
}

TEST_CASE("giou in [-1,1] and symmetric on 1e5 random pairs") {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 100000; ++i) {
    BoxXyxy a = rand_box(rng), b = rand_box(rng);
    double g1 = box_giou(a, b), g2 = box_giou(b, a);
    CHECK(g1 >= -1.0 - 1e-12);
    CHECK(g1 <= 1.0 + 1e-12);
    CHECK(g1 == doctest::Approx(g2).epsilon(1e-12));
  }
}

TEST_CASE("giou vs monte-carlo oracle on random pairs") {
  std::mt19937_64 rng(17);
  for (int i = 0; i < 5; ++i) {
    BoxXyxy a = rand_box(rng), b = rand_box(rng);
    double mc = giou_monte_carlo(a, b, 1000000, rng);
    CHECK(std::abs(box_giou(a, b) - mc) < 3e-3);
  }
}

TEST_CASE("differentiable giou matches the plain-double route and its finite differences") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.2, 0.8);
  for (int trial = 0; trial < 20; ++trial) {
    BoxCxcywh pc{u(rng), u(rng), 0.1 + 0.3 * u(rng), 0.1 + 0.3 * u(rng)};
    BoxCxcywh tc{u(rng), u(rng), 0.1 + 0.3 * u(rng), 0.1 + 0.3 * u(rng)};
    Tensor pred = Tensor::from_data({1, 4}, {pc.cx, pc.cy, pc.w, pc.h}, true);
    auto build = [&](Graph& g) { return giou_tensor(g, pred, tc); };
    Graph g;
    Tensor gt = build(g);
    CHECK(gt.item() ==
          doctest::Approx(box_giou(cxcywh_to_xyxy(pc), cxcywh_to_xyxy(tc)))
              .epsilon(1e-9));
    pred.zero_grad();
    g.backward(gt);
    auto f = [&]() {
      Graph gg(false);
      return build(gg).item();
    };
    std::mt19937_64 probe_rng(trial);
    CHECK(fd_check_param(f, pred, pred.grad_vec(), 4, probe_rng) < 1e-6);
  }
}

TEST_CASE("l1 distance: tensor route matches plain doubles") {
  Tensor pred = Tensor::from_data({1, 4}, {0.4, 0.5, 0.2, 0.3}, true);
  BoxCxcywh target{0.1, 0.9, 0.25, 0.3};
  Graph g;
  double expect = box_l1({0.4, 0.5, 0.2, 0.3}, target);
  CHECK(l1_tensor(g, pred, target).item() == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("iou basics") {
  CHECK(box_iou({0, 0, 1, 1}, {0, 0, 1, 1}) == doctest::Approx(1.0));
  CHECK(box_iou({0, 0, 1, 1}, {2, 2, 3, 3}) == doctest::Approx(0.0));
  CHECK(box_iou({0, 0, 2, 2}, {1, 1, 2, 2}) == doctest::Approx(0.25));
}
