#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cpg/catalog.hpp"
#include "cpg/text.hpp"

namespace cpg {

enum class TeacherSource { PhraseTeacher, LogoTeacher };

struct GroundingAnnotation {
  int record_id = 0;
  BoxCxcywh box;
  TokenSpan span{0, 0};  // token interval into the record's Caption
  double confidence = 0.0;  // always > 0.5 once stored
  TeacherSource source = TeacherSource::PhraseTeacher;
};

struct TeacherConfig {
  double box_jitter_sigma = 0.02;  // normalized units
  double miss_rate = 0.05;
  double false_positive_rate = 0.02;
  // confidence for correct detections ~ N(mean, std) clamped to [0,1];
  // spurious detections draw from a low band. Only the >0.5 filter is fixed.
  double correct_conf_mean = 0.85;
  double correct_conf_std = 0.12;
  std::uint64_t seed = 0;

  bool noiseless() const {
    return box_jitter_sigma == 0.0 && miss_rate == 0.0 &&
           false_positive_rate == 0.0 && correct_conf_std == 0.0 &&
           correct_conf_mean >= 1.0;
  }
  static TeacherConfig noiseless_config(std::uint64_t seed = 0) {
    TeacherConfig c;
    c.box_jitter_sigma = 0.0;
    c.miss_rate = 0.0;
    c.false_positive_rate = 0.0;
    c.correct_conf_mean = 1.0;
    c.correct_conf_std = 0.0;
    c.seed = seed;
    return c;
  }
};

struct DatasetStats {
  std::int64_t n_records = 0;
  std::int64_t unique_phrases = 0;
  std::int64_t phrase_boxes = 0;
  std::int64_t logo_labels = 0;
};

struct AnnotatedRecord {
  Caption caption;
  std::vector<GroundingAnnotation> annotations;  // may be empty
};

struct AnnotatedDataset {
  std::vector<AnnotatedRecord> items;  // parallel to the input records
  DatasetStats stats;
};

std::vector<GroundingAnnotation> phrase_teacher(const CatalogRecord& record,
                                                const Caption& caption,
                                                const TeacherConfig& cfg);

std::optional<GroundingAnnotation> logo_teacher(const CatalogRecord& record,
                                                const Caption& caption,
                                                const TeacherConfig& cfg);

AnnotatedDataset build_training_set(const std::vector<CatalogRecord>& records,
                                    const TeacherConfig& cfg,
                                    const Lexicon& lexicon);

void export_annotations(const AnnotatedDataset& ds, const std::string& path);
std::vector<std::vector<GroundingAnnotation>> load_annotations(const std::string& path);

}  // namespace cpg
