#include "cpg/features.hpp"

#include <algorithm>
#include <cmath>

namespace cpg {

std::vector<double> pairwise_distances(const std::vector<ObjectRep>& a,
                                       const std::vector<ObjectRep>& b,
                                       DistanceMetric metric) {
  std::vector<double> out;
  out.reserve(a.size() * b.size());
  for (const auto& x : a) {
    for (const auto& y : b) {
      if (x.vec.size() != y.vec.size())
        throw ShapeError("pairwise_distances: mismatched rep widths (" +
                         std::to_string(x.vec.size()) + " vs " +
                         std::to_string(y.vec.size()) + ")");
      if (metric == DistanceMetric::Euclidean) {
        double sq = 0;
        for (std::size_t i = 0; i < x.vec.size(); ++i) {
          double d = x.vec[i] - y.vec[i];
          sq += d * d;
        }
        out.push_back(std::sqrt(sq));
      } else {
        double dot = 0, nx = 0, ny = 0;
        for (std::size_t i = 0; i < x.vec.size(); ++i) {
          dot += x.vec[i] * y.vec[i];
          nx += x.vec[i] * x.vec[i];
          ny += y.vec[i] * y.vec[i];
        }
        if (nx == 0.0 || ny == 0.0)
          out.push_back(1.0);
        else
          out.push_back(1.0 - dot / (std::sqrt(nx) * std::sqrt(ny)));
      }
    }
  }
  return out;
}

SummaryStats summarize(std::vector<double> values) {
  SummaryStats s;
  if (values.empty()) return s;
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  s.min = values.front();
  s.max = values.back();
  s.median = (n % 2) ? values[n / 2]
                     : 0.5 * (values[n / 2 - 1] + values[n / 2]);
  double mean = 0;
  for (double v : values) mean += v;
  mean /= double(n);
  for (double v : values) s.variance += (v - mean) * (v - mean);
  s.variance /= double(n);
  return s;
}

std::vector<double> CpgFeatureRow::to_vector() const {
  std::vector<double> v = euclidean.to_vector();
  auto c = cosine.to_vector();
  v.insert(v.end(), c.begin(), c.end());
  v.push_back(product_empty ? 1.0 : 0.0);
  v.push_back(brand_empty ? 1.0 : 0.0);
  return v;
}

std::vector<std::string> CpgFeatureRow::column_names() {
  return {"eu_min",  "eu_max",  "eu_median",  "eu_var",
          "cos_min", "cos_max", "cos_median", "cos_var",
          "product_empty", "brand_empty"};
}

std::vector<ObjectRep> extract_reps(const CpgModel& model,
                                    const CatalogRecord& record,
                                    const Lexicon& lexicon, double threshold) {
  Caption cap = craft_caption(record.brand_name, record.title_tokens, lexicon);
  Graph g(false);
  auto out = model.forward(g, model.vocab().encode(cap), image_to_tensor(record));
  auto conf = CpgModel::query_confidence(out);
  const int d = out.object_reps.dim(1);
  std::vector<ObjectRep> reps;
  for (int q = 0; q < out.object_reps.dim(0); ++q) {
    if (conf[q] <= threshold) continue;
    ObjectRep r;
    r.vec.assign(out.object_reps.data() + q * d,
                 out.object_reps.data() + (q + 1) * d);
    r.confidence = conf[q];
    const double* b = out.boxes.data() + q * 4;
    r.box = {b[0], b[1], b[2], b[3]};
    r.record_id = record.record_id;
    reps.push_back(std::move(r));
  }
  return reps;
}

CpgFeatureRow build_cpg_features(const std::vector<ObjectRep>& product_reps,
                                 const std::vector<std::vector<ObjectRep>>& brand_reps,
                                 RepPooling pooling) {
  CpgFeatureRow row;
  row.product_empty = product_reps.empty();
  row.brand_empty = true;
  for (const auto& r : brand_reps)
    if (!r.empty()) row.brand_empty = false;
  if (row.product_empty || row.brand_empty) return row;  // zero sentinel stats

  if (pooling == RepPooling::PoolAll) {
    std::vector<ObjectRep> pooled;
    for (const auto& r : brand_reps) pooled.insert(pooled.end(), r.begin(), r.end());
    row.euclidean =
        summarize(pairwise_distances(product_reps, pooled, DistanceMetric::Euclidean));
    row.cosine =
        summarize(pairwise_distances(product_reps, pooled, DistanceMetric::Cosine));
    return row;
  }

  // Per-representative: summarize against each nonempty representative's
  // objects separately, then average the four statistics.
  auto mean_of = [&](DistanceMetric metric) {
    SummaryStats acc;
    int n = 0;
    for (const auto& r : brand_reps) {
      if (r.empty()) continue;
      SummaryStats s = summarize(pairwise_distances(product_reps, r, metric));
      acc.min += s.min;
      acc.max += s.max;
      acc.median += s.median;
      acc.variance += s.variance;
      ++n;
    }
    acc.min /= n;
    acc.max /= n;
    acc.median /= n;
    acc.variance /= n;
    return acc;
  };
  row.euclidean = mean_of(DistanceMetric::Euclidean);
  row.cosine = mean_of(DistanceMetric::Cosine);
  return row;
}

}  // namespace cpg
