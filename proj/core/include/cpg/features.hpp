#pragma once

#include <string>
#include <vector>

#include "cpg/model.hpp"

namespace cpg {

struct ObjectRep {
  std::vector<double> vec;       // decoder representation, length d_model
  double confidence = 0.0;       // 1 - P(no-object), always > threshold
  BoxCxcywh box;
  int record_id = 0;
};

enum class DistanceMetric { Euclidean, Cosine };

// Distances between every (a, b) pair; cosine distance of a zero vector
// against anything is defined as 1 (no direction, no similarity).
std::vector<double> pairwise_distances(const std::vector<ObjectRep>& a,
                                       const std::vector<ObjectRep>& b,
                                       DistanceMetric metric);

struct SummaryStats {
  double min = 0, max = 0, median = 0, variance = 0;  // population variance

  std::vector<double> to_vector() const { return {min, max, median, variance}; }
};

// Empty input -> all-zero sentinel (callers carry an emptiness flag besides).
SummaryStats summarize(std::vector<double> values);

struct BrandEntity {
  int brand_id = -1;
  std::string name;
  std::vector<int> representative_records;  // indices into the source catalog
};

struct CpgFeatureRow {
  SummaryStats euclidean;
  SummaryStats cosine;
  bool product_empty = false;  // no confident objects on the product side
  bool brand_empty = false;

  std::vector<double> to_vector() const;  // 10 columns
  static std::vector<std::string> column_names();
};

// Confident (> threshold) object representations for one record.
std::vector<ObjectRep> extract_reps(const CpgModel& model,
                                    const CatalogRecord& record,
                                    const Lexicon& lexicon,
                                    double threshold = 0.5);

enum class RepPooling {
  PoolAll,                // stats over the pooled pairwise distance multiset
  PerRepresentativeMean,  // stats per brand representative, then averaged
};

CpgFeatureRow build_cpg_features(const std::vector<ObjectRep>& product_reps,
                                 const std::vector<std::vector<ObjectRep>>& brand_reps,
                                 RepPooling pooling = RepPooling::PoolAll);

}  // namespace cpg
