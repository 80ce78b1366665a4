#pragma once

#include <string>
#include <vector>

#include "cpg/loss.hpp"
#include "cpg/model.hpp"
#include "cpg/teacher.hpp"

namespace cpg {

struct TrainConfig {
  int batch_size = 16;
  int epochs = 10;
  double lr = 3e-4;
  double warmup_frac = 0.05;  // 0 -> constant schedule
  double weight_decay = 0.01;
  double grad_clip = 1.0;  // global-norm clip; 0 disables
  LossWeights weights;
  std::uint64_t seed = 0;
  int checkpoint_interval = 0;  // epochs; 0 -> best/final only
  double eval_frac = 0.1;
};

struct GroundingMetrics {
  double box_ap50 = 0;
  double alignment_accuracy = 0;
  double phrase_ap50 = 0;
  double logo_ap50 = 0;
  double phrase_alignment_accuracy = 0;
  double logo_alignment_accuracy = 0;
  int n_records = 0;
};

struct StepLog {
  int step = 0;
  double lr = 0;
  LossBreakdown loss;
};

struct TrainResult {
  std::string checkpoint_path;  // best-eval checkpoint (final when no eval split)
  std::vector<StepLog> curve;
  GroundingMetrics best_metrics;
  double final_smoothed_loss = 0;
  double initial_loss = 0;
};

// The gt span a region should align to: product regions map to their title
// noun phrase in order, logos to the brand span.
std::vector<TokenSpan> gt_spans(const CatalogRecord& record, const Caption& caption);

GroundingMetrics evaluate_grounding(const CpgModel& model,
                                    const std::vector<CatalogRecord>& records,
                                    const Lexicon& lexicon);

TrainResult train(CpgModel& model, const std::vector<CatalogRecord>& records,
                  const AnnotatedDataset& dataset, const TrainConfig& cfg,
                  const std::string& out_dir);

}  // namespace cpg
