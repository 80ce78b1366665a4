#include "cpg/matching_eval.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <set>

#include "cpg/io.hpp"
#include "cpg/text.hpp"
#include "json.hpp"

namespace cpg {

namespace {

std::string lower(const std::string& s) {
  std::string out = s;
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::vector<std::string> name_tokens(const std::string& name) {
  std::vector<std::string> out;
  for (const auto& t : tokenize(name)) out.push_back(lower(t.surface));
  return out;
}

// Tokens the pair-sampling overlap scan considers on the product side: the
// title plus the brand attribute, so same-name homonym negatives count as
// overlapping (they are hard, not trivial).
std::set<std::string> product_token_set(const CatalogRecord& rec) {
  std::set<std::string> out;
  for (const auto& t : rec.title_tokens) out.insert(lower(t));
  for (const auto& t : name_tokens(rec.brand_name)) out.insert(t);
  return out;
}

bool overlaps(const CatalogRecord& rec, const BrandSpec& brand) {
  auto prod = product_token_set(rec);
  for (const auto& t : name_tokens(brand.name))
    if (prod.count(t)) return true;
  return false;
}

}  // namespace

PairSplit build_pairs(const std::vector<CatalogRecord>& records,
                      const std::vector<BrandSpec>& brands, const PairConfig& cfg,
                      const std::string& country) {
  if (cfg.negatives_per_positive < 0 || cfg.homonym_neg_fraction < 0 ||
      cfg.homonym_neg_fraction > 1)
    throw ValueError("build_pairs: invalid pair composition");

  std::map<int, const BrandSpec*> by_id;
  std::map<int, std::vector<int>> group_members;  // homonym_group -> brand ids
  for (const auto& b : brands) {
    by_id[b.brand_id] = &b;
    group_members[b.homonym_group].push_back(b.brand_id);
  }
  auto homonym_partners = [&](int brand_id) {
    std::vector<int> out;
    auto it = by_id.find(brand_id);
    if (it == by_id.end()) return out;
    for (int other : group_members[it->second->homonym_group])
      if (other != brand_id) out.push_back(other);
    return out;
  };

  std::vector<int> eligible;
  for (int i = 0; i < static_cast<int>(records.size()); ++i) {
    const auto& r = records[i];
    if (r.true_brand_id < 0 || r.brand_name.empty()) continue;
    if (!country.empty() && r.country != country) continue;
    eligible.push_back(i);
  }
  if (eligible.empty())
    throw ValueError("build_pairs: no eligible records" +
                     (country.empty() ? "" : " for country " + country));

  std::mt19937_64 rng(derive_rng(cfg.seed, fnv1a_str("pairs:" + country))());
  std::shuffle(eligible.begin(), eligible.end(), rng);

  PairSplit split;
  split.entities.resize(brands.size());
  std::map<int, std::vector<int>> brand_records;
  for (int i : eligible) brand_records[records[i].true_brand_id].push_back(i);
  for (const auto& b : brands) {
    BrandEntity e;
    e.brand_id = b.brand_id;
    e.name = b.name;
    auto recs = brand_records[b.brand_id];
    std::shuffle(recs.begin(), recs.end(), rng);
    if (static_cast<int>(recs.size()) > cfg.reps_per_brand)
      recs.resize(cfg.reps_per_brand);
    e.representative_records = recs;
    if (b.brand_id >= 0 && b.brand_id < static_cast<int>(split.entities.size()))
      split.entities[b.brand_id] = e;
    else
      throw ValueError("build_pairs: brand_id out of range");
  }

  int n_pos = std::min<int>(cfg.n_positives, static_cast<int>(eligible.size()));
  if (n_pos == 0) throw ValueError("build_pairs: no positives available");
  std::vector<int> positives(eligible.begin(), eligible.begin() + n_pos);

  int n_train_pos = static_cast<int>(std::lround(cfg.train_frac * n_pos));
  n_train_pos = std::clamp(n_train_pos, 0, n_pos);

  auto sample_split = [&](const std::vector<int>& pos_idx, bool train_rules,
                          std::vector<MatchPair>& out) {
    for (int i : pos_idx)
      out.push_back({i, records[i].true_brand_id, true, NegativeKind::None});

    const int n_neg = static_cast<int>(pos_idx.size()) * cfg.negatives_per_positive;
    if (n_neg == 0) return;
    const int hom_target =
        static_cast<int>(std::lround(cfg.homonym_neg_fraction * n_neg));

    struct Slot {
      int rec;
      bool homonym = false;
      int neg_brand = -1;
    };
    std::vector<Slot> slots;
    for (int k = 0; k < n_neg; ++k)
      slots.push_back({pos_idx[k % pos_idx.size()]});

    // positives whose true brand has same-name partners carry the homonym slots
    std::vector<int> capable;
    for (int i : pos_idx)
      if (!homonym_partners(records[i].true_brand_id).empty()) capable.push_back(i);
    int hom_goal = hom_target;
    if (capable.empty() && hom_goal > 0) {
      // a fractional target degrades to random negatives on homonym-free
      // catalogs; an all-homonym request cannot
      if (cfg.homonym_neg_fraction >= 1.0)
        throw ValueError("build_pairs: homonym negatives requested but no "
                         "record has a same-name partner brand");
      hom_goal = 0;
    }

    // random-negative candidates per record; train pairs must share a token
    auto random_candidates = [&](int rec_idx) {
      const auto& rec = records[rec_idx];
      std::vector<int> out;
      for (const auto& cand : brands) {
        if (cand.brand_id == rec.true_brand_id) continue;
        if (lower(cand.name) == lower(rec.brand_name)) continue;  // homonym kind
        if (train_rules && !overlaps(rec, cand)) continue;
        out.push_back(cand.brand_id);
      }
      return out;
    };
    std::vector<int> randomable;
    for (int i : pos_idx)
      if (!random_candidates(i).empty()) randomable.push_back(i);

    int assigned = 0;
    for (auto& s : slots) {
      if (assigned >= hom_goal) break;
      if (homonym_partners(records[s.rec].true_brand_id).empty())
        s.rec = capable[rng() % capable.size()];
      auto partners = homonym_partners(records[s.rec].true_brand_id);
      s.homonym = true;
      s.neg_brand = static_cast<int>(partners[rng() % partners.size()]);
      ++assigned;
    }

    for (auto& s : slots) {
      if (!s.homonym) {
        if (random_candidates(s.rec).empty()) {
          if (randomable.empty())
            throw ValueError(
                "build_pairs: cannot sample a non-trivial random negative");
          s.rec = randomable[rng() % randomable.size()];
        }
        auto cands = random_candidates(s.rec);
        s.neg_brand = cands[rng() % cands.size()];
      }
      out.push_back({s.rec, s.neg_brand, false,
                     s.homonym ? NegativeKind::Homonym : NegativeKind::Random});
    }
  };

  std::vector<int> train_pos(positives.begin(), positives.begin() + n_train_pos);
  std::vector<int> test_pos(positives.begin() + n_train_pos, positives.end());
  if (!train_pos.empty()) sample_split(train_pos, true, split.train);
  if (!test_pos.empty()) sample_split(test_pos, false, split.test);
  return split;
}

double edit_distance_norm(const std::string& a_in, const std::string& b_in) {
  std::string a = lower(a_in), b = lower(b_in);
  if (a.empty() && b.empty()) return 0.0;
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  std::iota(prev.begin(), prev.end(), std::size_t{0});
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return double(prev[b.size()]) / double(std::max(a.size(), b.size()));
}

double token_jaccard(const std::vector<std::string>& a,
                     const std::vector<std::string>& b) {
  std::set<std::string> sa, sb;
  for (const auto& t : a) sa.insert(lower(t));
  for (const auto& t : b) sb.insert(lower(t));
  if (sa.empty() && sb.empty()) return 0.0;
  std::size_t inter = 0;
  for (const auto& t : sa) inter += sb.count(t);
  return double(inter) / double(sa.size() + sb.size() - inter);
}

std::vector<double> text_features(const CatalogRecord& product,
                                  const std::string& brand_name) {
  auto brand_toks = name_tokens(brand_name);
  std::vector<std::string> title_low;
  for (const auto& t : product.title_tokens) title_low.push_back(lower(t));

  bool in_title = false;
  if (!brand_toks.empty() && title_low.size() >= brand_toks.size()) {
    for (std::size_t i = 0; i + brand_toks.size() <= title_low.size(); ++i) {
      bool all = true;
      for (std::size_t j = 0; j < brand_toks.size(); ++j)
        if (title_low[i + j] != brand_toks[j]) {
          all = false;
          break;
        }
      if (all) {
        in_title = true;
        break;
      }
    }
  }
  double exact = lower(brand_name) == lower(product.brand_name) &&
                         !brand_name.empty()
                     ? 1.0
                     : 0.0;
  return {edit_distance_norm(brand_name, product.brand_name),
          token_jaccard(brand_toks, title_low), exact, in_title ? 1.0 : 0.0,
          double(product.title_tokens.size())};
}

std::vector<double> logo_embedding(const CatalogRecord& record,
                                   const TeacherConfig& cfg,
                                   const Lexicon& lexicon) {
  Caption cap = craft_caption(record.brand_name, record.title_tokens, lexicon);
  auto ann = logo_teacher(record, cap, cfg);
  if (!ann) return {};
  BoxXyxy b = cxcywh_to_xyxy(ann->box);
  const int S = record.image_size;
  double x0 = std::clamp(b.x0, 0.0, 1.0) * S, x1 = std::clamp(b.x1, 0.0, 1.0) * S;
  double y0 = std::clamp(b.y0, 0.0, 1.0) * S, y1 = std::clamp(b.y1, 0.0, 1.0) * S;
  if (x1 - x0 < 1) x1 = std::min<double>(S, x0 + 1);
  if (y1 - y0 < 1) y1 = std::min<double>(S, y0 + 1);
  std::vector<double> emb(64);
  for (int gy = 0; gy < 8; ++gy) {
    for (int gx = 0; gx < 8; ++gx) {
      int px = std::min(S - 1, int(x0 + (gx + 0.5) / 8.0 * (x1 - x0)));
      int py = std::min(S - 1, int(y0 + (gy + 0.5) / 8.0 * (y1 - y0)));
      const std::uint8_t* p = record.image.data() + (py * S + px) * 3;
      emb[gy * 8 + gx] = (p[0] + p[1] + p[2]) / (3.0 * 255.0);
    }
  }
  return emb;
}

RandomProjEmbedder::RandomProjEmbedder(std::uint64_t seed, int out_dim)
    : out_dim_(out_dim) {
  auto rng = derive_rng(seed, 0xba5e);
  std::normal_distribution<double> nd(0.0, 1.0 / 16.0);  // 1/sqrt(256)
  proj_.resize(std::size_t(out_dim_) * 256);
  for (double& v : proj_) v = nd(rng);
}

std::vector<double> RandomProjEmbedder::embed(const CatalogRecord& record) const {
  const int S = record.image_size;
  std::vector<double> pooled(256, 0.0);
  std::vector<int> counts(256, 0);
  for (int y = 0; y < S; ++y) {
    for (int x = 0; x < S; ++x) {
      int cell = std::min(15, y * 16 / S) * 16 + std::min(15, x * 16 / S);
      const std::uint8_t* p = record.image.data() + (y * S + x) * 3;
      pooled[cell] += (p[0] + p[1] + p[2]) / (3.0 * 255.0);
      ++counts[cell];
    }
  }
  for (int i = 0; i < 256; ++i)
    if (counts[i]) pooled[i] /= counts[i];
  std::vector<double> out(out_dim_, 0.0);
  for (int i = 0; i < out_dim_; ++i)
    for (int j = 0; j < 256; ++j) out[i] += proj_[i * 256 + j] * pooled[j];
  return out;
}

std::vector<double> EncoderPoolEmbedder::embed(const CatalogRecord& record) const {
  Graph g(false);
  Tensor grid = model_->encode_image(g, image_to_tensor(record));  // (G, d)
  const int G = grid.dim(0), d = grid.dim(1);
  std::vector<double> out(d, 0.0);
  for (int i = 0; i < G; ++i)
    for (int j = 0; j < d; ++j) out[j] += grid.at({i, j});
  for (double& v : out) v /= G;
  return out;
}

std::string feature_set_name(FeatureSetTag tag) {
  switch (tag) {
    case FeatureSetTag::Text: return "text";
    case FeatureSetTag::TextLogo: return "text+logo";
    case FeatureSetTag::TextImage: return "text+image";
    case FeatureSetTag::TextCpg: return "text+cpg";
  }
  return "?";
}

namespace {

std::vector<ObjectRep> wrap_vecs(const std::vector<std::vector<double>>& vecs) {
  std::vector<ObjectRep> out;
  for (const auto& v : vecs) {
    ObjectRep r;
    r.vec = v;
    out.push_back(std::move(r));
  }
  return out;
}

const std::vector<ObjectRep>& cached_reps(FeaturizeContext& ctx, int rec_idx) {
  const auto& rec = (*ctx.records)[rec_idx];
  auto it = ctx.rep_cache.find(rec.record_id);
  if (it == ctx.rep_cache.end()) {
    if (!ctx.model) throw ValueError("featurize: cpg features need a model");
    it = ctx.rep_cache.emplace(rec.record_id, extract_reps(*ctx.model, rec, ctx.lexicon))
             .first;
  }
  return it->second;
}

const std::vector<double>& cached_logo(FeaturizeContext& ctx, int rec_idx) {
  const auto& rec = (*ctx.records)[rec_idx];
  auto it = ctx.logo_cache.find(rec.record_id);
  if (it == ctx.logo_cache.end())
    it = ctx.logo_cache
             .emplace(rec.record_id,
                      logo_embedding(rec, ctx.logo_teacher_cfg, ctx.lexicon))
             .first;
  return it->second;
}

const std::vector<double>& cached_image(FeaturizeContext& ctx, int rec_idx) {
  const auto& rec = (*ctx.records)[rec_idx];
  auto it = ctx.image_cache.find(rec.record_id);
  if (it == ctx.image_cache.end()) {
    if (!ctx.embedder) throw ValueError("featurize: image features need an embedder");
    it = ctx.image_cache.emplace(rec.record_id, ctx.embedder->embed(rec)).first;
  }
  return it->second;
}

}  // namespace

std::vector<double> featurize_pair(const MatchPair& pair, FeatureSetTag tag,
                                   FeaturizeContext& ctx) {
  const auto& rec = (*ctx.records)[pair.record_idx];
  const auto& brand = (*ctx.brands)[pair.brand_id];
  const auto& entity = (*ctx.entities)[pair.brand_id];
  std::vector<double> row = text_features(rec, brand.name);
  if (tag == FeatureSetTag::Text) return row;

  std::vector<ObjectRep> product_side;
  std::vector<std::vector<ObjectRep>> brand_side;
  if (tag == FeatureSetTag::TextCpg) {
    product_side = cached_reps(ctx, pair.record_idx);
    for (int ri : entity.representative_records) {
      if ((*ctx.records)[ri].record_id == rec.record_id) continue;
      brand_side.push_back(cached_reps(ctx, ri));
    }
  } else if (tag == FeatureSetTag::TextLogo) {
    const auto& e = cached_logo(ctx, pair.record_idx);
    if (!e.empty()) product_side = wrap_vecs({e});
    for (int ri : entity.representative_records) {
      if ((*ctx.records)[ri].record_id == rec.record_id) continue;
      const auto& b = cached_logo(ctx, ri);
      brand_side.push_back(b.empty() ? std::vector<ObjectRep>{} : wrap_vecs({b}));
    }
  } else {  // TextImage
    product_side = wrap_vecs({cached_image(ctx, pair.record_idx)});
    for (int ri : entity.representative_records) {
      if ((*ctx.records)[ri].record_id == rec.record_id) continue;
      brand_side.push_back(wrap_vecs({cached_image(ctx, ri)}));
    }
  }
  CpgFeatureRow stats = build_cpg_features(product_side, brand_side, ctx.pooling);
  auto sv = stats.to_vector();
  row.insert(row.end(), sv.begin(), sv.end());
  return row;
}

Tensor logistic_loss(Graph& g, const Tensor& x, const Tensor& w, const Tensor& b,
                     const std::vector<double>& labels, double l2) {
  const int n = x.dim(0);
  if (static_cast<int>(labels.size()) != n)
    throw ShapeError("logistic_loss: labels/rows mismatch");
  Tensor z = g.add_bias(g.matmul(x, w), b);  // (n,1)
  Tensor y = Tensor::from_data({n, 1}, labels);
  // stable BCE: mean(relu(z) + log1p(exp(-|z|)) - y*z)
  Tensor soft = g.add(g.relu(z),
                      g.log(g.add_scalar(g.exp(g.mul_scalar(g.abs(z), -1.0)), 1.0)));
  Tensor bce = g.reduce_mean(g.sub(soft, g.mul(y, z)), -1);
  Tensor reg = g.mul_scalar(g.reduce_sum(g.mul(w, w), -1), l2);
  return g.add(bce, reg);
}

double LogisticModel::score(const std::vector<double>& row) const {
  if (row.size() != weights.size())
    throw ShapeError("score: row width " + std::to_string(row.size()) +
                     " vs model " + std::to_string(weights.size()));
  double z = bias;
  for (std::size_t i = 0; i < row.size(); ++i)
    z += weights[i] * (row[i] - mean[i]) / stdev[i];
  return 1.0 / (1.0 + std::exp(-z));
}

LogisticModel train_matcher(const std::vector<std::vector<double>>& rows,
                            const std::vector<int>& labels, std::uint64_t seed,
                            double l2, int steps, double lr) {
  if (rows.empty() || rows.size() != labels.size())
    throw ValueError("train_matcher: empty or mismatched inputs");
  bool has0 = false, has1 = false;
  for (int l : labels) (l ? has1 : has0) = true;
  if (!has0 || !has1)
    throw ValueError("train_matcher: need both classes present");

  const int n = static_cast<int>(rows.size());
  const int f = static_cast<int>(rows[0].size());
  LogisticModel m;
  m.mean.assign(f, 0.0);
  m.stdev.assign(f, 0.0);
  for (const auto& r : rows) {
    if (static_cast<int>(r.size()) != f)
      throw ShapeError("train_matcher: ragged feature rows");
    for (int j = 0; j < f; ++j) m.mean[j] += r[j];
  }
  for (int j = 0; j < f; ++j) m.mean[j] /= n;
  for (const auto& r : rows)
    for (int j = 0; j < f; ++j) {
      double d = r[j] - m.mean[j];
      m.stdev[j] += d * d;
    }
  for (int j = 0; j < f; ++j) {
    m.stdev[j] = std::sqrt(m.stdev[j] / n);
    if (m.stdev[j] < 1e-12) m.stdev[j] = 1.0;
  }

  std::vector<double> xdata(std::size_t(n) * f);
  std::vector<double> ydata(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < f; ++j)
      xdata[std::size_t(i) * f + j] = (rows[i][j] - m.mean[j]) / m.stdev[j];
    ydata[i] = labels[i] ? 1.0 : 0.0;
  }
  Tensor x = Tensor::from_data({n, f}, std::move(xdata));
  auto rng = derive_rng(seed, 0x10615);
  Tensor w = Tensor::randn({f, 1}, rng, 0.01, true);
  Tensor b = Tensor::zeros({1}, true);

  AdamWConfig ocfg;
  ocfg.lr = lr;
  ocfg.weight_decay = 0.0;
  AdamW opt({w, b}, ocfg);
  for (int s = 0; s < steps; ++s) {
    Graph g;
    Tensor loss = logistic_loss(g, x, w, b, ydata, l2);
    opt.zero_grad();
    g.backward(loss);
    opt.step();
  }
  m.weights.assign(w.data(), w.data() + f);
  m.bias = b.item();
  return m;
}

namespace {

// Tie-grouped descending sweep; calls f(recall, precision) per threshold.
template <typename F>
void sweep_thresholds(const std::vector<double>& scores,
                      const std::vector<int>& labels, F&& f) {
  if (scores.size() != labels.size())
    throw ShapeError("recall_at_precision: scores/labels mismatch");
  long n_pos = std::count_if(labels.begin(), labels.end(), [](int l) { return l != 0; });
  if (n_pos == 0) throw ValueError("recall_at_precision: no positive labels");
  std::vector<int> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](int a, int b) { return scores[a] > scores[b]; });
  long tp = 0, fp = 0;
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
      if (labels[idx[j]]) ++tp; else ++fp;
      ++j;
    }
    f(double(tp) / double(n_pos), double(tp) / double(tp + fp));
    i = j;
  }
}

}  // namespace

double recall_at_precision(const std::vector<double>& scores,
                           const std::vector<int>& labels, double p) {
  if (!(p > 0.0 && p <= 1.0))
    throw ValueError("recall_at_precision: p must be in (0,1]");
  double best = 0.0;
  sweep_thresholds(scores, labels, [&](double recall, double precision) {
    if (precision >= p) best = std::max(best, recall);
  });
  return best;
}

std::vector<std::pair<double, double>> pr_curve(const std::vector<double>& scores,
                                                const std::vector<int>& labels) {
  std::vector<std::pair<double, double>> out;
  sweep_thresholds(scores, labels,
                   [&](double r, double p) { out.push_back({r, p}); });
  return out;
}

std::string EvalReport::to_json() const {
  nlohmann::json j;
  j["tags"] = nlohmann::json::array();
  for (const auto& t : tags) {
    nlohmann::json tj;
    tj["country"] = t.country;
    tj["n_train"] = t.n_train;
    tj["n_test"] = t.n_test;
    tj["sets"] = nlohmann::json::array();
    for (const auto& s : t.sets) {
      nlohmann::json sj;
      sj["set"] = s.set;
      sj["r_at_p90"] = s.r_at_p90;
      sj["r_at_p95"] = s.r_at_p95;
      nlohmann::json pr = nlohmann::json::array();
      for (const auto& [r, p] : s.pr) pr.push_back({{"recall", r}, {"precision", p}});
      sj["pr_curve"] = pr;
      tj["sets"].push_back(sj);
    }
    tj["delta_r_at_p90_vs_text"] = t.delta_p90;
    tj["delta_r_at_p95_vs_text"] = t.delta_p95;
    j["tags"].push_back(tj);
  }
  return j.dump(2);
}

EvalReport compare_feature_sets(const std::vector<CatalogRecord>& records,
                                const std::vector<BrandSpec>& brands,
                                const CpgModel* model, const ImageEmbedder* embedder,
                                const Lexicon& lexicon, const CompareConfig& cfg) {
  std::vector<std::string> countries;
  for (const auto& r : records)
    if (std::find(countries.begin(), countries.end(), r.country) == countries.end())
      countries.push_back(r.country);

  EvalReport report;
  for (const auto& country : countries) {
    PairSplit split = build_pairs(records, brands, cfg.pairs, country);
    FeaturizeContext ctx;
    ctx.records = &records;
    ctx.brands = &brands;
    ctx.entities = &split.entities;
    ctx.model = model;
    ctx.embedder = embedder;
    ctx.logo_teacher_cfg = cfg.logo_teacher;
    ctx.lexicon = lexicon;
    ctx.pooling = cfg.pooling;

    TagReport tr;
    tr.country = country;
    tr.n_train = static_cast<int>(split.train.size());
    tr.n_test = static_cast<int>(split.test.size());

    for (auto tag : cfg.sets) {
      std::vector<std::vector<double>> train_rows;
      std::vector<int> train_labels;
      for (const auto& p : split.train) {
        train_rows.push_back(featurize_pair(p, tag, ctx));
        train_labels.push_back(p.positive ? 1 : 0);
      }
      LogisticModel matcher = train_matcher(
          train_rows, train_labels,
          cfg.pairs.seed ^ fnv1a_str(country + "/" + feature_set_name(tag)));
      std::vector<double> scores;
      std::vector<int> labels;
      for (const auto& p : split.test) {
        scores.push_back(matcher.score(featurize_pair(p, tag, ctx)));
        labels.push_back(p.positive ? 1 : 0);
      }
      FeatureSetResult res;
      res.set = feature_set_name(tag);
      res.r_at_p90 = recall_at_precision(scores, labels, 0.90);
      res.r_at_p95 = recall_at_precision(scores, labels, 0.95);
      res.pr = pr_curve(scores, labels);
      tr.sets.push_back(std::move(res));
    }

    const FeatureSetResult* text = nullptr;
    for (const auto& s : tr.sets)
      if (s.set == "text") text = &s;
    if (text) {
      for (const auto& s : tr.sets) {
        if (s.set == "text") continue;
        tr.delta_p90[s.set] = s.r_at_p90 - text->r_at_p90;
        tr.delta_p95[s.set] = s.r_at_p95 - text->r_at_p95;
      }
    }
    report.tags.push_back(std::move(tr));
  }
  return report;
}

}  // namespace cpg
