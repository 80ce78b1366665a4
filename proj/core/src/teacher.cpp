#include "cpg/teacher.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include <json.hpp>

#include "cpg/io.hpp"

namespace cpg {

namespace {

double sample_correct_confidence(const TeacherConfig& cfg, std::mt19937_64& rng) {
  if (cfg.correct_conf_std == 0.0) return std::min(1.0, cfg.correct_conf_mean);
  std::normal_distribution<double> dist(cfg.correct_conf_mean, cfg.correct_conf_std);
  return std::clamp(dist(rng), 0.0, 1.0);
}

double sample_spurious_confidence(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  return 0.2 + 0.4 * u(rng);  // (0.2, 0.6], mostly rejected by the >0.5 filter
}

BoxCxcywh jitter_box(const BoxCxcywh& box, double sigma, std::mt19937_64& rng) {
  if (sigma == 0.0) return box;
  // centers move by sigma; sizes by sigma/2 since a size delta shifts both edges
  std::normal_distribution<double> noise(0.0, sigma);
  std::normal_distribution<double> size_noise(0.0, sigma / 2);
  BoxCxcywh b{box.cx + noise(rng), box.cy + noise(rng),
              std::max(0.005, box.w + size_noise(rng)),
              std::max(0.005, box.h + size_noise(rng))};
  // clamp corners back into the unit square, keep the box valid
  BoxXyxy c = cxcywh_to_xyxy(b);
  c.x0 = std::clamp(c.x0, 0.0, 1.0);
  c.y0 = std::clamp(c.y0, 0.0, 1.0);
  c.x1 = std::clamp(c.x1, c.x0, 1.0);
  c.y1 = std::clamp(c.y1, c.y0, 1.0);
  return xyxy_to_cxcywh(c);
}

std::mt19937_64 teacher_rng(const TeacherConfig& cfg, int record_id, int tag) {
  return derive_rng(cfg.seed ^ (0x7e4cull << tag), std::uint64_t(record_id));
}

}  // namespace

std::vector<GroundingAnnotation> phrase_teacher(const CatalogRecord& record,
                                                const Caption& caption,
                                                const TeacherConfig& cfg) {
  std::mt19937_64 rng = teacher_rng(cfg, record.record_id, 1);
  std::bernoulli_distribution miss(cfg.miss_rate);
  std::bernoulli_distribution fp(cfg.false_positive_rate);
  std::uniform_real_distribution<double> u(0.0, 1.0);

  std::vector<const GtRegion*> product_regions;
  for (const auto& r : record.gt_regions)
    if (r.role == RegionRole::ProductObject) product_regions.push_back(&r);

  std::vector<GroundingAnnotation> out;
  const std::size_t n = std::min(caption.noun_phrases.size(), product_regions.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (miss(rng)) continue;
    GroundingAnnotation a;
    a.record_id = record.record_id;
    a.box = jitter_box(product_regions[i]->box, cfg.box_jitter_sigma, rng);
    a.span = caption.noun_phrases[i];
    a.confidence = sample_correct_confidence(cfg, rng);
    a.source = TeacherSource::PhraseTeacher;
    if (a.confidence > 0.5) out.push_back(a);
  }
  if (!caption.noun_phrases.empty() && fp(rng)) {
    GroundingAnnotation a;
    a.record_id = record.record_id;
    double w = 0.1 + 0.3 * u(rng), h = 0.1 + 0.3 * u(rng);
    a.box = {w / 2 + (1 - w) * u(rng), h / 2 + (1 - h) * u(rng), w, h};
    std::uniform_int_distribution<int> pick(
        0, static_cast<int>(caption.noun_phrases.size()) - 1);
    a.span = caption.noun_phrases[pick(rng)];
    a.confidence = sample_spurious_confidence(rng);
    a.source = TeacherSource::PhraseTeacher;
    if (a.confidence > 0.5) out.push_back(a);
  }
  return out;
}

std::optional<GroundingAnnotation> logo_teacher(const CatalogRecord& record,
                                                const Caption& caption,
                                                const TeacherConfig& cfg) {
  const GtRegion* logo = nullptr;
  for (const auto& r : record.gt_regions)
    if (r.role == RegionRole::Logo) logo = &r;
  if (!logo || !caption.brand_span) return std::nullopt;

  std::mt19937_64 rng = teacher_rng(cfg, record.record_id, 2);
  std::bernoulli_distribution miss(cfg.miss_rate);
  if (miss(rng)) return std::nullopt;
  GroundingAnnotation a;
  a.record_id = record.record_id;
  a.box = jitter_box(logo->box, cfg.box_jitter_sigma, rng);
  a.span = *caption.brand_span;
  a.confidence = sample_correct_confidence(cfg, rng);
  a.source = TeacherSource::LogoTeacher;
  if (a.confidence <= 0.5) return std::nullopt;
  return a;
}

AnnotatedDataset build_training_set(const std::vector<CatalogRecord>& records,
                                    const TeacherConfig& cfg,
                                    const Lexicon& lexicon) {
  AnnotatedDataset ds;
  ds.items.reserve(records.size());
  std::set<std::string> phrases;
  for (const auto& rec : records) {
    AnnotatedRecord item;
    item.caption = craft_caption(rec.brand_name, rec.title_tokens, lexicon);
    for (auto& a : phrase_teacher(rec, item.caption, cfg)) {
      phrases.insert(item.caption.span_surface(a.span));
      ++ds.stats.phrase_boxes;
      item.annotations.push_back(a);
    }
    if (auto logo = logo_teacher(rec, item.caption, cfg)) {
      ++ds.stats.logo_labels;
      item.annotations.push_back(*logo);
    }
    ds.items.push_back(std::move(item));
  }
  ds.stats.n_records = static_cast<std::int64_t>(records.size());
  ds.stats.unique_phrases = static_cast<std::int64_t>(phrases.size());
  return ds;
}

void export_annotations(const AnnotatedDataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("export_annotations: cannot open " + path);
  for (std::size_t i = 0; i < ds.items.size(); ++i) {
    for (const auto& a : ds.items[i].annotations) {
      nlohmann::json j;
      j["record_id"] = a.record_id;
      j["box"] = {a.box.cx, a.box.cy, a.box.w, a.box.h};
      j["span"] = {a.span.first, a.span.second};
      j["confidence"] = a.confidence;
      j["source"] = a.source == TeacherSource::LogoTeacher ? "logo-teacher"
                                                           : "phrase-teacher";
      out << j.dump() << "\n";
    }
  }
}

std::vector<std::vector<GroundingAnnotation>> load_annotations(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_annotations: cannot open " + path);
  std::vector<std::vector<GroundingAnnotation>> per_record;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      nlohmann::json j = nlohmann::json::parse(line);
      GroundingAnnotation a;
      a.record_id = j.at("record_id").get<int>();
      a.box = {j.at("box")[0].get<double>(), j.at("box")[1].get<double>(),
               j.at("box")[2].get<double>(), j.at("box")[3].get<double>()};
      a.span = {j.at("span")[0].get<int>(), j.at("span")[1].get<int>()};
      a.confidence = j.at("confidence").get<double>();
      a.source = j.at("source").get<std::string>() == "logo-teacher"
                     ? TeacherSource::LogoTeacher
                     : TeacherSource::PhraseTeacher;
      if (a.record_id >= static_cast<int>(per_record.size()))
        per_record.resize(a.record_id + 1);
      per_record[a.record_id].push_back(a);
    } catch (const std::exception& e) {
      throw std::runtime_error("load_annotations: parse error at line " +
                               std::to_string(line_no) + ": " + e.what());
    }
  }
  return per_record;
}

}  // namespace cpg
