#include "cpg/boxes.hpp"

#include <algorithm>
#include <cmath>

namespace cpg {

namespace {
constexpr double kEps = 1e-9;
}

BoxXyxy cxcywh_to_xyxy(const BoxCxcywh& b) {
  if (b.w < 0 || b.h < 0)
    throw ValueError("cxcywh_to_xyxy: negative extent w=" + std::to_string(b.w) +
                     " h=" + std::to_string(b.h));
  return {b.cx - b.w / 2, b.cy - b.h / 2, b.cx + b.w / 2, b.cy + b.h / 2};
}

BoxCxcywh xyxy_to_cxcywh(const BoxXyxy& b) {
  return {(b.x0 + b.x1) / 2, (b.y0 + b.y1) / 2, b.x1 - b.x0, b.y1 - b.y0};
}

double box_area(const BoxXyxy& b) {
  return std::max(0.0, b.x1 - b.x0) * std::max(0.0, b.y1 - b.y0);
}

double box_iou(const BoxXyxy& a, const BoxXyxy& b) {
  double ix = std::max(0.0, std::min(a.x1, b.x1) - std::max(a.x0, b.x0));
  double iy = std::max(0.0, std::min(a.y1, b.y1) - std::max(a.y0, b.y0));
  double inter = ix * iy;
  double uni = box_area(a) + box_area(b) - inter;
  return inter / std::max(uni, kEps);
}

double box_giou(const BoxXyxy& a, const BoxXyxy& b) {
  double ix = std::max(0.0, std::min(a.x1, b.x1) - std::max(a.x0, b.x0));
  double iy = std::max(0.0, std::min(a.y1, b.y1) - std::max(a.y0, b.y0));
  double inter = ix * iy;
  double uni = box_area(a) + box_area(b) - inter;
  double ex = std::max(a.x1, b.x1) - std::min(a.x0, b.x0);
  double ey = std::max(a.y1, b.y1) - std::min(a.y0, b.y0);
  double enc = ex * ey;
  return inter / std::max(uni, kEps) - (enc - uni) / std::max(enc, kEps);
}

double box_l1(const BoxCxcywh& a, const BoxCxcywh& b) {
  return std::fabs(a.cx - b.cx) + std::fabs(a.cy - b.cy) + std::fabs(a.w - b.w) +
         std::fabs(a.h - b.h);
}

namespace {
// pulls one coordinate of a (1,4) row as a (1,1) tensor
Tensor coord(Graph& g, const Tensor& row, int j) { return g.slice(row, 0, 1, j, j + 1); }
}  // namespace

Tensor giou_tensor(Graph& g, const Tensor& pred_cxcywh, const BoxCxcywh& target) {
  if (pred_cxcywh.rank() != 2 || pred_cxcywh.dim(0) != 1 || pred_cxcywh.dim(1) != 4)
    throw ShapeError("giou_tensor: pred must be (1,4)");
  BoxXyxy t = cxcywh_to_xyxy(target);
  Tensor cx = coord(g, pred_cxcywh, 0), cy = coord(g, pred_cxcywh, 1);
  Tensor w = coord(g, pred_cxcywh, 2), h = coord(g, pred_cxcywh, 3);
  Tensor half_w = g.mul_scalar(w, 0.5), half_h = g.mul_scalar(h, 0.5);
  Tensor x0 = g.sub(cx, half_w), x1 = g.add(cx, half_w);
  Tensor y0 = g.sub(cy, half_h), y1 = g.add(cy, half_h);

  auto c = [&](double v) { return Tensor::from_data({1, 1}, {v}); };
  Tensor ix = g.clamp_min(g.sub(g.minimum(x1, c(t.x1)), g.maximum(x0, c(t.x0))), 0.0);
  Tensor iy = g.clamp_min(g.sub(g.minimum(y1, c(t.y1)), g.maximum(y0, c(t.y0))), 0.0);
  Tensor inter = g.mul(ix, iy);
  Tensor area_p = g.mul(g.sub(x1, x0), g.sub(y1, y0));
  double area_t = box_area(t);
  Tensor uni = g.sub(g.add_scalar(area_p, area_t), inter);
  Tensor ex = g.sub(g.maximum(x1, c(t.x1)), g.minimum(x0, c(t.x0)));
  Tensor ey = g.sub(g.maximum(y1, c(t.y1)), g.minimum(y0, c(t.y0)));
  Tensor enc = g.mul(ex, ey);
  Tensor iou = g.div(inter, g.clamp_min(uni, kEps));
  Tensor waste = g.div(g.sub(enc, uni), g.clamp_min(enc, kEps));
  return g.sub(iou, waste);
}

Tensor l1_tensor(Graph& g, const Tensor& pred_cxcywh, const BoxCxcywh& target) {
  if (pred_cxcywh.rank() != 2 || pred_cxcywh.dim(0) != 1 || pred_cxcywh.dim(1) != 4)
    throw ShapeError("l1_tensor: pred must be (1,4)");
  Tensor t = Tensor::from_data({1, 4}, {target.cx, target.cy, target.w, target.h});
  return g.reduce_sum(g.abs(g.sub(pred_cxcywh, t)));
}

}  // namespace cpg
