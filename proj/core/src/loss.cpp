#include "cpg/loss.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace cpg {

Assignment hungarian(const std::vector<std::vector<double>>& cost) {
  const int n = static_cast<int>(cost.size());
  const int m = n == 0 ? 0 : static_cast<int>(cost[0].size());
  Assignment result;
  if (n == 0 || m == 0) return result;
  for (const auto& row : cost)
    for (double c : row)
      if (std::isnan(c)) throw ValueError("hungarian: NaN in cost matrix");

  const bool transposed = n > m;
  const int R = transposed ? m : n;  // R <= C
  const int C = transposed ? n : m;
  auto at = [&](int i, int j) { return transposed ? cost[j][i] : cost[i][j]; };

  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(R + 1, 0.0), v(C + 1, 0.0);
  std::vector<int> p(C + 1, 0), way(C + 1, 0);
  for (int i = 1; i <= R; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(C + 1, inf);
    std::vector<char> used(C + 1, 0);
    do {
      used[j0] = 1;
      int i0 = p[j0], j1 = 0;
      double delta = inf;
      for (int j = 1; j <= C; ++j) {
        if (used[j]) continue;
        double cur = at(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= C; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }

  std::vector<int> matched_query(n, 0);
  for (int j = 1; j <= C; ++j) {
    if (p[j] == 0) continue;
    int row = p[j] - 1, col = j - 1;
    int q = transposed ? col : row;
    int a = transposed ? row : col;
    result.pairs.emplace_back(q, a);
    matched_query[q] = 1;
  }
  std::sort(result.pairs.begin(), result.pairs.end());
  for (int q = 0; q < n; ++q)
    if (!matched_query[q]) result.unmatched_queries.push_back(q);
  return result;
}

namespace {

// softmax over the real-token columns of one alignment row
std::vector<double> row_token_probs(const CpgOutput& out, int q) {
  const int cols = out.alignment_logits.dim(1);
  const int m = out.n_real_tokens;
  const double* row = out.alignment_logits.data() + std::size_t(q) * cols;
  double mx = -std::numeric_limits<double>::infinity();
  for (int j = 0; j < m; ++j) mx = std::max(mx, row[j]);
  std::vector<double> p(m);
  double z = 0.0;
  for (int j = 0; j < m; ++j) z += p[j] = std::exp(row[j] - mx);
  for (int j = 0; j < m; ++j) p[j] /= z;
  return p;
}

BoxCxcywh box_row(const Tensor& boxes, int q) {
  const double* b = boxes.data() + std::size_t(q) * 4;
  return {b[0], b[1], b[2], b[3]};
}

}  // namespace

std::vector<std::vector<double>> matching_cost(
    const CpgOutput& output, const std::vector<GroundingAnnotation>& annotations,
    const LossWeights& w) {
  const int n = output.boxes.dim(0);
  const int k = static_cast<int>(annotations.size());
  if (k == 0) return {};
  std::vector<std::vector<double>> cost(n, std::vector<double>(k, 0.0));
  const int m = output.n_real_tokens;
  for (int q = 0; q < n; ++q) {
    std::vector<double> probs = row_token_probs(output, q);
    BoxCxcywh pred = box_row(output.boxes, q);
    BoxXyxy pred_xy = cxcywh_to_xyxy(pred);
    for (int a = 0; a < k; ++a) {
      const auto& ann = annotations[a];
      int s = std::min(ann.span.first, m);
      int e = std::min(ann.span.second, m);
      double mean_p = 0.0;
      if (e > s) {
        for (int j = s; j < e; ++j) mean_p += probs[j];
        mean_p /= (e - s);
      }
      double l1 = box_l1(pred, ann.box);
      double giou = box_giou(pred_xy, cxcywh_to_xyxy(ann.box));
      cost[q][a] = -mean_p + w.lambda_l1 * l1 + w.lambda_giou * (1.0 - giou);
    }
  }
  return cost;
}

Assignment match_queries(const CpgOutput& output,
                         const std::vector<GroundingAnnotation>& annotations,
                         const LossWeights& w) {
  Assignment asg = hungarian(matching_cost(output, annotations, w));
  if (annotations.empty()) {
    for (int q = 0; q < output.boxes.dim(0); ++q) asg.unmatched_queries.push_back(q);
  }
  return asg;
}

namespace {

// logsumexp over a (1,k) or (k,1) tensor; max subtracted as a constant so the
// gradient path stays exact
Tensor logsumexp(Graph& g, const Tensor& t) {
  double c = -std::numeric_limits<double>::infinity();
  for (double x : t.vec()) c = std::max(c, x);
  Tensor shifted = g.add_scalar(t, -c);
  return g.add_scalar(g.log(g.reduce_sum(g.exp(shifted))), c);
}

}  // namespace

std::pair<Tensor, Tensor> contrastive_align_loss(
    Graph& g, const Tensor& token_features, const Tensor& object_reps,
    const Assignment& assignment, const std::vector<TokenSpan>& spans,
    int n_real_tokens, double tau) {
  if (tau <= 0.0) throw ValueError("contrastive_align_loss: tau must be positive");
  const int n_obj = object_reps.dim(0);
  const int d = object_reps.dim(1);
  if (n_real_tokens < 1 || n_real_tokens > token_features.dim(0))
    throw ValueError("contrastive_align_loss: bad n_real_tokens");

  Tensor tok_real = token_features.dim(0) == n_real_tokens
                        ? token_features
                        : g.slice(token_features, 0, n_real_tokens, 0, d);
  Tensor logits =
      g.mul_scalar(g.matmul(object_reps, g.transpose(tok_real)), 1.0 / tau);

  // positive token sets per matched object, positive object sets per token
  std::vector<std::pair<int, TokenSpan>> matched;
  std::vector<std::vector<int>> obj_of_token(n_real_tokens);
  for (const auto& [q, a] : assignment.pairs) {
    int s = std::clamp(spans[a].first, 0, n_real_tokens);
    int e = std::clamp(spans[a].second, 0, n_real_tokens);
    if (e <= s) continue;
    matched.emplace_back(q, TokenSpan{s, e});
    for (int j = s; j < e; ++j) obj_of_token[j].push_back(q);
  }

  Tensor l_o = Tensor::scalar(0.0);
  for (const auto& [q, span] : matched) {
    Tensor row = g.slice(logits, q, q + 1, 0, n_real_tokens);
    Tensor lse = logsumexp(g, row);
    Tensor mean_pos = g.reduce_mean(g.slice(row, 0, 1, span.first, span.second));
    l_o = g.add(l_o, g.sub(lse, mean_pos));
  }

  Tensor l_t = Tensor::scalar(0.0);
  for (int j = 0; j < n_real_tokens; ++j) {
    if (obj_of_token[j].empty()) continue;
    Tensor col = g.slice(logits, 0, n_obj, j, j + 1);
    Tensor lse = logsumexp(g, col);
    Tensor mean_pos = g.reduce_mean(g.embedding_lookup(col, obj_of_token[j]));
    l_t = g.add(l_t, g.sub(lse, mean_pos));
  }
  return {l_o, l_t};
}

LossBreakdown total_loss(Graph& g, const CpgOutput& output,
                         const std::vector<GroundingAnnotation>& annotations,
                         const LossWeights& w) {
  LossBreakdown out;
  if (annotations.empty()) return out;  // zero loss by convention

  Assignment asg = match_queries(output, annotations, w);
  std::vector<TokenSpan> spans;
  spans.reserve(annotations.size());
  for (const auto& a : annotations) spans.push_back(a.span);

  auto [l_o, l_t] = contrastive_align_loss(g, output.token_features, output.proj_reps,
                                           asg, spans, output.n_real_tokens, w.tau);
  Tensor align = g.mul_scalar(g.add(l_o, l_t), 0.5);

  Tensor l1_sum = Tensor::scalar(0.0);
  Tensor giou_loss_sum = Tensor::scalar(0.0);
  for (const auto& [q, a] : asg.pairs) {
    Tensor pred = g.slice(output.boxes, q, q + 1, 0, 4);
    l1_sum = g.add(l1_sum, l1_tensor(g, pred, annotations[a].box));
    Tensor giou = giou_tensor(g, pred, annotations[a].box);
    giou_loss_sum =
        g.add(giou_loss_sum, g.add_scalar(g.mul_scalar(g.reshape(giou, {1}), -1.0), 1.0));
  }
  const double inv_pairs = asg.pairs.empty() ? 0.0 : 1.0 / asg.pairs.size();
  Tensor loc_l1 = g.mul_scalar(l1_sum, w.lambda_l1 * inv_pairs);
  Tensor loc_giou = g.mul_scalar(giou_loss_sum, w.lambda_giou * inv_pairs);

  // Binary objectness on the no-object column: unmatched queries are pushed
  // toward P(noobj) = 1, matched queries toward P(noobj) = 0. With objectness
  // logit x = lse(real logits) - noobj logit this is softplus(x) for
  // unmatched and softplus(-x) for matched queries.
  Tensor noobj = Tensor::scalar(0.0);
  if (w.lambda_noobj > 0.0 &&
      (!asg.unmatched_queries.empty() || !asg.pairs.empty())) {
    const int d = output.proj_reps.dim(1);
    Tensor tok_real =
        output.token_features.dim(0) == output.n_real_tokens
            ? output.token_features
            : g.slice(output.token_features, 0, output.n_real_tokens, 0, d);
    Tensor logits = g.mul_scalar(
        g.matmul(output.proj_reps, g.transpose(tok_real)), 1.0 / w.tau);
    const int cols = output.alignment_logits.dim(1);
    const double c = output.alignment_logits.data()[cols - 1];
    auto softplus = [&](const Tensor& x) {
      return g.add(
          g.relu(x),
          g.log(g.add_scalar(g.exp(g.mul_scalar(g.abs(x), -1.0)), 1.0)));
    };
    auto objectness = [&](int q, double sign) {
      Tensor row = g.slice(logits, q, q + 1, 0, output.n_real_tokens);
      Tensor x = g.add_scalar(logsumexp(g, row), -c);
      return softplus(g.mul_scalar(x, sign));
    };
    Tensor sum = Tensor::scalar(0.0);
    int terms = 0;
    for (int q : asg.unmatched_queries) {
      sum = g.add(sum, objectness(q, 1.0));
      ++terms;
    }
    for (const auto& [q, a] : asg.pairs) {
      (void)a;
      sum = g.add(sum, objectness(q, -1.0));
      ++terms;
    }
    noobj = g.mul_scalar(sum, w.lambda_noobj / static_cast<double>(terms));
  }

  Tensor total = g.add(g.add(align, noobj), g.add(loc_l1, loc_giou));

  out.l_o = l_o.item();
  out.l_t = l_t.item();
  out.align = align.item();
  out.loc_l1 = loc_l1.item();
  out.loc_giou = loc_giou.item();
  out.noobj = noobj.item();
  out.total = total.item();
  if (!std::isfinite(out.total))
    throw ValueError("total_loss: non-finite loss");
  out.total_tensor = total;
  return out;
}

}  // namespace cpg
