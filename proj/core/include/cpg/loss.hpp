#pragma once

#include <utility>
#include <vector>

#include "cpg/boxes.hpp"
#include "cpg/model.hpp"
#include "cpg/teacher.hpp"
#include "cpg/tensor.hpp"

namespace cpg {

struct Assignment {
  std::vector<std::pair<int, int>> pairs;  // (query index, annotation index)
  std::vector<int> unmatched_queries;
};

struct LossWeights {
  double lambda_l1 = 5.0;
  double lambda_giou = 2.0;
  double lambda_noobj = 0.1;  // down-weighted like DETR's no-object class
  double tau = 0.07;
};

struct LossBreakdown {
  double l_o = 0, l_t = 0, align = 0, loc_l1 = 0, loc_giou = 0, noobj = 0,
         total = 0;
  Tensor total_tensor;  // differentiable; undefined when there were no targets
};

// Minimum-cost one-to-one assignment of min(n,m) pairs; O(n^3) shortest
// augmenting path. Throws ValueError on NaN costs.
Assignment hungarian(const std::vector<std::vector<double>>& cost);

// -(mean alignment probability over the annotation's span) + l1/giou terms.
// Probabilities soft-max over real tokens only. K=0 -> empty matrix.
std::vector<std::vector<double>> matching_cost(
    const CpgOutput& output, const std::vector<GroundingAnnotation>& annotations,
    const LossWeights& w);

Assignment match_queries(const CpgOutput& output,
                         const std::vector<GroundingAnnotation>& annotations,
                         const LossWeights& w);

// Fine-grained contrastive alignment: the object-side and token-side losses.
// `token_features` are the (M,d) shared-latent token states, `object_reps` the
// projected query states; logits are dot products scaled by 1/tau, soft-maxed
// over the n_real real tokens (objects). Sums run over matched objects and
// over tokens with a nonempty positive set.
std::pair<Tensor, Tensor> contrastive_align_loss(
    Graph& g, const Tensor& token_features, const Tensor& object_reps,
    const Assignment& assignment, const std::vector<TokenSpan>& spans,
    int n_real_tokens, double tau);

// (l_o + l_t)/2 + lambda_l1 * L1 + lambda_giou * (1 - GIoU) + lambda_noobj *
// mean over unmatched queries of -log P(no-object). Loc terms meaned over
// matched boxes. Zero annotations -> total 0 with no tensor.
LossBreakdown total_loss(Graph& g, const CpgOutput& output,
                         const std::vector<GroundingAnnotation>& annotations,
                         const LossWeights& w);

}  // namespace cpg
