#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "cpg/features.hpp"
#include "cpg/teacher.hpp"

namespace cpg {

enum class NegativeKind { None, Homonym, Random };

struct MatchPair {
  int record_idx = -1;  // into the catalog passed to build_pairs
  int brand_id = -1;
  bool positive = false;
  NegativeKind kind = NegativeKind::None;
};

struct PairConfig {
  int n_positives = 200;        // clamped to what the catalog can supply
  int negatives_per_positive = 1;
  double homonym_neg_fraction = 0.5;
  double train_frac = 0.7;
  int reps_per_brand = 5;
  std::uint64_t seed = 0;
};

struct PairSplit {
  std::vector<MatchPair> train;  // trivial (zero-token-overlap) negatives excluded
  std::vector<MatchPair> test;   // negatives sampled without the overlap filter
  std::vector<BrandEntity> entities;  // indexed by brand_id
};

// `country` empty -> all records eligible.
PairSplit build_pairs(const std::vector<CatalogRecord>& records,
                      const std::vector<BrandSpec>& brands, const PairConfig& cfg,
                      const std::string& country = "");

// Name-similarity block: normalized edit distance, token Jaccard vs the title,
// exact-name-match flag, name-in-title flag, title length.
std::vector<double> text_features(const CatalogRecord& product,
                                  const std::string& brand_name);
double edit_distance_norm(const std::string& a, const std::string& b);
double token_jaccard(const std::vector<std::string>& a,
                     const std::vector<std::string>& b);

// Grayscale 8x8 resample of the teacher-detected logo crop; empty when the
// teacher finds no logo on the record.
std::vector<double> logo_embedding(const CatalogRecord& record,
                                   const TeacherConfig& cfg,
                                   const Lexicon& lexicon);

class ImageEmbedder {
 public:
  virtual ~ImageEmbedder() = default;
  virtual std::vector<double> embed(const CatalogRecord& record) const = 0;
};

// Fixed random projection of a 16x16 grayscale average-pool. Deterministic
// under seed, needs no training.
class RandomProjEmbedder : public ImageEmbedder {
 public:
  explicit RandomProjEmbedder(std::uint64_t seed, int out_dim = 16);
  std::vector<double> embed(const CatalogRecord& record) const override;

 private:
  int out_dim_;
  std::vector<double> proj_;  // (out_dim, 256)
};

// Mean-pooled grid features from a trained grounding model's image encoder.
class EncoderPoolEmbedder : public ImageEmbedder {
 public:
  explicit EncoderPoolEmbedder(const CpgModel& model) : model_(&model) {}
  std::vector<double> embed(const CatalogRecord& record) const override;

 private:
  const CpgModel* model_;
};

enum class FeatureSetTag { Text, TextLogo, TextImage, TextCpg };
std::string feature_set_name(FeatureSetTag tag);

struct FeaturizeContext {
  const std::vector<CatalogRecord>* records = nullptr;
  const std::vector<BrandSpec>* brands = nullptr;
  const std::vector<BrandEntity>* entities = nullptr;
  const CpgModel* model = nullptr;        // required for TextCpg
  const ImageEmbedder* embedder = nullptr;  // required for TextImage
  TeacherConfig logo_teacher_cfg;
  Lexicon lexicon = Lexicon::default_lexicon();
  RepPooling pooling = RepPooling::PoolAll;

  // per-record caches, filled on demand
  std::map<int, std::vector<ObjectRep>> rep_cache;
  std::map<int, std::vector<double>> logo_cache;
  std::map<int, std::vector<double>> image_cache;
};

std::vector<double> featurize_pair(const MatchPair& pair, FeatureSetTag tag,
                                   FeaturizeContext& ctx);

// --- matcher ---
struct LogisticModel {
  std::vector<double> mean, stdev, weights;
  double bias = 0;
  double score(const std::vector<double>& row) const;
};

// Differentiable objective used by train_matcher; exposed for gradient checks.
// x is (n,f) constant, labels in {0,1}; mean BCE + l2 * sum w^2.
Tensor logistic_loss(Graph& g, const Tensor& x, const Tensor& w, const Tensor& b,
                     const std::vector<double>& labels, double l2);

LogisticModel train_matcher(const std::vector<std::vector<double>>& rows,
                            const std::vector<int>& labels,
                            std::uint64_t seed = 0, double l2 = 1e-3,
                            int steps = 400, double lr = 0.05);

// Max recall over tie-grouped score thresholds with precision >= p.
double recall_at_precision(const std::vector<double>& scores,
                           const std::vector<int>& labels, double p);

// (recall, precision) at each tie-grouped threshold, descending score order.
std::vector<std::pair<double, double>> pr_curve(const std::vector<double>& scores,
                                                const std::vector<int>& labels);

struct FeatureSetResult {
  std::string set;
  double r_at_p90 = 0, r_at_p95 = 0;
  std::vector<std::pair<double, double>> pr;
};

struct TagReport {
  std::string country;
  int n_train = 0, n_test = 0;
  std::vector<FeatureSetResult> sets;
  std::map<std::string, double> delta_p90, delta_p95;  // vs the text baseline
};

struct EvalReport {
  std::vector<TagReport> tags;
  std::string to_json() const;
};

struct CompareConfig {
  PairConfig pairs;
  TeacherConfig logo_teacher;
  RepPooling pooling = RepPooling::PoolAll;
  std::vector<FeatureSetTag> sets = {FeatureSetTag::Text, FeatureSetTag::TextLogo,
                                     FeatureSetTag::TextImage, FeatureSetTag::TextCpg};
};

// One matcher per feature set per country tag found in the catalog.
EvalReport compare_feature_sets(const std::vector<CatalogRecord>& records,
                                const std::vector<BrandSpec>& brands,
                                const CpgModel* model, const ImageEmbedder* embedder,
                                const Lexicon& lexicon, const CompareConfig& cfg);

}  // namespace cpg
