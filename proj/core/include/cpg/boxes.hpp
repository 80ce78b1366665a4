#pragma once

#include <array>

#include "cpg/tensor.hpp"

namespace cpg {

// Normalized boxes. BoxCxcywh is the storage/prediction format; BoxXyxy the
// geometry format.
struct BoxCxcywh {
  double cx = 0, cy = 0, w = 0, h = 0;
};
struct BoxXyxy {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
};

BoxXyxy cxcywh_to_xyxy(const BoxCxcywh& b);  // throws ValueError on w<0 or h<0
BoxCxcywh xyxy_to_cxcywh(const BoxXyxy& b);

double box_area(const BoxXyxy& b);
double box_iou(const BoxXyxy& a, const BoxXyxy& b);
// IoU - (enclosure - union) / enclosure, in [-1, 1]; eps guards zero areas.
double box_giou(const BoxXyxy& a, const BoxXyxy& b);
double box_l1(const BoxCxcywh& a, const BoxCxcywh& b);

// Differentiable GIoU between a predicted box row tensor (1,4) in cxcywh and a
// constant target; composed from engine primitives (a.e. differentiable).
Tensor giou_tensor(Graph& g, const Tensor& pred_cxcywh, const BoxCxcywh& target);
// Differentiable L1 over the 4 cxcywh coordinates.
Tensor l1_tensor(Graph& g, const Tensor& pred_cxcywh, const BoxCxcywh& target);

}  // namespace cpg
