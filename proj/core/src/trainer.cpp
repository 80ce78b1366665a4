#include "cpg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "cpg/io.hpp"
#include "json.hpp"

namespace cpg {

namespace fs = std::filesystem;

std::vector<TokenSpan> gt_spans(const CatalogRecord& record, const Caption& caption) {
  std::vector<TokenSpan> out;
  std::size_t next_phrase = 0;
  for (const auto& region : record.gt_regions) {
    if (region.role == RegionRole::Logo) {
      if (caption.brand_span)
        out.push_back(*caption.brand_span);
      else
        out.push_back({-1, -1});
    } else if (next_phrase < caption.noun_phrases.size()) {
      out.push_back(caption.noun_phrases[next_phrase++]);
    } else {
      out.push_back({-1, -1});
    }
  }
  return out;
}

namespace {

// Softmax over the real-token columns of one logits row; mean over a span.
std::vector<double> span_mean_probs(const CpgOutput& out, int query,
                                    const std::vector<TokenSpan>& candidates) {
  const int m1 = out.alignment_logits.dim(1);
  const double* row = out.alignment_logits.data() + query * m1;
  const int n = out.n_real_tokens;
  double mx = row[0];
  for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
  double z = 0;
  std::vector<double> p(n);
  for (int j = 0; j < n; ++j) {
    p[j] = std::exp(row[j] - mx);
    z += p[j];
  }
  for (int j = 0; j < n; ++j) p[j] /= z;
  std::vector<double> means;
  means.reserve(candidates.size());
  for (const auto& s : candidates) {
    double acc = 0;
    int cnt = 0;
    for (int j = s.first; j < s.second && j < n; ++j) {
      acc += p[j];
      ++cnt;
    }
    means.push_back(cnt ? acc / cnt : 0.0);
  }
  return means;
}

struct RankedPred {
  double conf;
  int record;
  BoxXyxy box;
  bool logo_like;  // best candidate span is the brand span
};

struct GtBox {
  int record;
  BoxXyxy box;
  bool logo;
};

// All-point interpolated average precision at IoU >= 0.5.
double average_precision(std::vector<RankedPred> preds, const std::vector<GtBox>& gts) {
  if (gts.empty()) return 0.0;
  std::stable_sort(preds.begin(), preds.end(),
                   [](const RankedPred& a, const RankedPred& b) { return a.conf > b.conf; });
  std::vector<char> used(gts.size(), 0);
  std::vector<double> prec, rec;
  int tp = 0, fp = 0;
  for (const auto& p : preds) {
    int best = -1;
    double best_iou = 0.5;
    for (std::size_t gi = 0; gi < gts.size(); ++gi) {
      if (used[gi] || gts[gi].record != p.record) continue;
      double iou = box_iou(p.box, gts[gi].box);
      if (iou >= best_iou) {
        best_iou = iou;
        best = static_cast<int>(gi);
      }
    }
    if (best >= 0) {
      used[best] = 1;
      ++tp;
    } else {
      ++fp;
    }
    prec.push_back(double(tp) / double(tp + fp));
    rec.push_back(double(tp) / double(gts.size()));
  }
  double ap = 0, prev_r = 0;
  for (std::size_t i = 0; i < prec.size(); ++i) {
    double pmax = 0;
    for (std::size_t j = i; j < prec.size(); ++j) pmax = std::max(pmax, prec[j]);
    ap += (rec[i] - prev_r) * pmax;
    prev_r = rec[i];
  }
  return ap;
}

GroundingMetrics evaluate_with_captions(const CpgModel& model,
                                        const std::vector<const CatalogRecord*>& records,
                                        const std::vector<const Caption*>& captions) {
  GroundingMetrics m;
  m.n_records = static_cast<int>(records.size());
  std::vector<RankedPred> preds;
  std::vector<GtBox> gts, gts_phrase, gts_logo;
  long align_hits = 0, align_total = 0;
  long phrase_hits = 0, phrase_total = 0, logo_hits = 0, logo_total = 0;

  for (int r = 0; r < static_cast<int>(records.size()); ++r) {
    const CatalogRecord& rec = *records[r];
    const Caption& cap = *captions[r];
    Graph g(false);
    auto ids = model.vocab().encode(cap);
    auto out = model.forward(g, ids, image_to_tensor(rec));
    auto conf = CpgModel::query_confidence(out);

    std::vector<TokenSpan> candidates = cap.noun_phrases;
    int brand_candidate = -1;
    if (cap.brand_span) {
      brand_candidate = static_cast<int>(candidates.size());
      candidates.push_back(*cap.brand_span);
    }

    const int n_q = out.boxes.dim(0);
    for (int q = 0; q < n_q; ++q) {
      const double* b = out.boxes.data() + q * 4;
      BoxXyxy xy = cxcywh_to_xyxy({b[0], b[1], b[2], b[3]});
      bool logo_like = false;
      if (!candidates.empty()) {
        auto means = span_mean_probs(out, q, candidates);
        int best = static_cast<int>(
            std::max_element(means.begin(), means.end()) - means.begin());
        logo_like = (best == brand_candidate);
      }
      preds.push_back({conf[q], r, xy, logo_like});
    }

    auto spans = gt_spans(rec, cap);
    for (std::size_t gi = 0; gi < rec.gt_regions.size(); ++gi) {
      const auto& region = rec.gt_regions[gi];
      bool is_logo = region.role == RegionRole::Logo;
      BoxXyxy gxy = cxcywh_to_xyxy(region.box);
      gts.push_back({r, gxy, is_logo});
      (is_logo ? gts_logo : gts_phrase).push_back({r, gxy, is_logo});

      if (spans[gi].first < 0 || candidates.empty()) continue;
      int target = -1;
      for (std::size_t c = 0; c < candidates.size(); ++c)
        if (candidates[c] == spans[gi]) target = static_cast<int>(c);
      if (target < 0) continue;
      int best_q = 0;
      double best_iou = -1;
      for (int q = 0; q < n_q; ++q) {
        const double* b = out.boxes.data() + q * 4;
        double iou = box_iou(cxcywh_to_xyxy({b[0], b[1], b[2], b[3]}), gxy);
        if (iou > best_iou) {
          best_iou = iou;
          best_q = q;
        }
      }
      auto means = span_mean_probs(out, best_q, candidates);
      int picked = static_cast<int>(
          std::max_element(means.begin(), means.end()) - means.begin());
      bool hit = picked == target;
      ++align_total;
      align_hits += hit;
      if (is_logo) {
        ++logo_total;
        logo_hits += hit;
      } else {
        ++phrase_total;
        phrase_hits += hit;
      }
    }
  }

  m.box_ap50 = average_precision(preds, gts);
  std::vector<RankedPred> phrase_preds, logo_preds;
  for (const auto& p : preds) (p.logo_like ? logo_preds : phrase_preds).push_back(p);
  m.phrase_ap50 = average_precision(phrase_preds, gts_phrase);
  m.logo_ap50 = average_precision(logo_preds, gts_logo);
  m.alignment_accuracy = align_total ? double(align_hits) / align_total : 0.0;
  m.phrase_alignment_accuracy =
      phrase_total ? double(phrase_hits) / phrase_total : 0.0;
  m.logo_alignment_accuracy = logo_total ? double(logo_hits) / logo_total : 0.0;
  return m;
}

}  // namespace

GroundingMetrics evaluate_grounding(const CpgModel& model,
                                    const std::vector<CatalogRecord>& records,
                                    const Lexicon& lexicon) {
  std::vector<Caption> caps;
  caps.reserve(records.size());
  for (const auto& r : records)
    caps.push_back(craft_caption(r.brand_name, r.title_tokens, lexicon));
  std::vector<const CatalogRecord*> rp;
  std::vector<const Caption*> cp;
  for (std::size_t i = 0; i < records.size(); ++i) {
    rp.push_back(&records[i]);
    cp.push_back(&caps[i]);
  }
  return evaluate_with_captions(model, rp, cp);
}

TrainResult train(CpgModel& model, const std::vector<CatalogRecord>& records,
                  const AnnotatedDataset& dataset, const TrainConfig& cfg,
                  const std::string& out_dir) {
  if (records.size() != dataset.items.size())
    throw ValueError("train: records and annotated dataset are not parallel (" +
                     std::to_string(records.size()) + " vs " +
                     std::to_string(dataset.items.size()) + ")");
  if (records.empty()) throw ValueError("train: empty dataset");
  fs::create_directories(out_dir);

  const int n = static_cast<int>(records.size());
  int n_eval = static_cast<int>(std::lround(cfg.eval_frac * n));
  if (n_eval >= n) n_eval = n - 1;

  std::mt19937_64 rng(derive_rng(cfg.seed, 0xf17e)());
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<int> train_idx(order.begin(), order.end() - n_eval);
  std::vector<int> eval_idx(order.end() - n_eval, order.end());

  std::vector<std::vector<int>> ids(n);
  for (int i = 0; i < n; ++i) ids[i] = model.vocab().encode(dataset.items[i].caption);

  auto params = model.parameters();
  AdamWConfig ocfg;
  ocfg.lr = cfg.lr;
  ocfg.weight_decay = cfg.weight_decay;
  AdamW opt(params, ocfg);

  const int steps_per_epoch =
      (static_cast<int>(train_idx.size()) + cfg.batch_size - 1) / cfg.batch_size;
  const long total_steps = static_cast<long>(steps_per_epoch) * cfg.epochs;
  const long warmup = std::max<long>(
      1, std::lround(cfg.warmup_frac * static_cast<double>(total_steps)));

  std::ofstream curve_csv(fs::path(out_dir) / "loss_curve.csv");
  curve_csv << "step,lr,l_o,l_t,align,loc_l1,loc_giou,noobj,total\n";
  std::ofstream run_log(fs::path(out_dir) / "run.log");

  TrainResult result;
  double best_score = -1;
  long step = 0;

  auto run_eval = [&](const std::vector<int>& idx) {
    std::vector<const CatalogRecord*> rp;
    std::vector<const Caption*> cp;
    for (int i : idx) {
      rp.push_back(&records[i]);
      cp.push_back(&dataset.items[i].caption);
    }
    return evaluate_with_captions(model, rp, cp);
  };

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(train_idx.begin(), train_idx.end(), rng);
    for (int b0 = 0; b0 < static_cast<int>(train_idx.size()); b0 += cfg.batch_size) {
      int b1 = std::min<int>(b0 + cfg.batch_size,
                             static_cast<int>(train_idx.size()));
      Graph g;
      Tensor batch_total;
      LossBreakdown agg;
      int contributing = 0;
      std::vector<int> batch_ids;
      for (int k = b0; k < b1; ++k) {
        int i = train_idx[k];
        batch_ids.push_back(records[i].record_id);
        if (dataset.items[i].annotations.empty()) continue;
        auto out = model.forward(g, ids[i], image_to_tensor(records[i]));
        auto lb = total_loss(g, out, dataset.items[i].annotations, cfg.weights);
        if (!lb.total_tensor.defined()) continue;
        batch_total = batch_total.defined() ? g.add(batch_total, lb.total_tensor)
                                            : lb.total_tensor;
        agg.l_o += lb.l_o;
        agg.l_t += lb.l_t;
        agg.align += lb.align;
        agg.loc_l1 += lb.loc_l1;
        agg.loc_giou += lb.loc_giou;
        agg.noobj += lb.noobj;
        agg.total += lb.total;
        ++contributing;
      }
      if (!contributing) continue;
      double inv = 1.0 / contributing;
      agg.l_o *= inv;
      agg.l_t *= inv;
      agg.align *= inv;
      agg.loc_l1 *= inv;
      agg.loc_giou *= inv;
      agg.noobj *= inv;
      agg.total *= inv;

      if (!std::isfinite(agg.total)) {
        nlohmann::json dump{{"step", step},
                            {"epoch", epoch},
                            {"record_ids", batch_ids},
                            {"l_o", agg.l_o},
                            {"l_t", agg.l_t},
                            {"loc_l1", agg.loc_l1},
                            {"loc_giou", agg.loc_giou}};
        write_text_file((fs::path(out_dir) / "nan_dump.json").string(), dump.dump(2));
        throw ValueError("train: non-finite loss at step " + std::to_string(step) +
                         "; diagnostics in " + out_dir + "/nan_dump.json");
      }

      Tensor mean_total = g.mul_scalar(batch_total, inv);
      for (auto& p : params) p.zero_grad();
      g.backward(mean_total);

      if (cfg.grad_clip > 0) {
        double sq = 0;
        for (auto& p : params) {
          const auto& gr = p.grad_vec();
          for (double v : gr) sq += v * v;
        }
        double norm = std::sqrt(sq);
        if (norm > cfg.grad_clip) {
          double scale = cfg.grad_clip / norm;
          for (auto& p : params) {
            double* gr = p.grad();
            for (std::int64_t j = 0; j < p.size(); ++j) gr[j] *= scale;
          }
        }
      }

      double lr = cfg.lr;
      if (cfg.warmup_frac > 0 && step < warmup)
        lr = cfg.lr * double(step + 1) / double(warmup);
      opt.set_lr(lr);
      opt.step();

      curve_csv << step << ',' << lr << ',' << agg.l_o << ',' << agg.l_t << ','
                << agg.align << ',' << agg.loc_l1 << ',' << agg.loc_giou << ','
                << agg.noobj << ',' << agg.total << '\n';
      result.curve.push_back({static_cast<int>(step), lr, agg});
      if (step == 0) result.initial_loss = agg.total;
      ++step;
    }

    if (!eval_idx.empty()) {
      auto m = run_eval(eval_idx);
      double score = 0.5 * (m.box_ap50 + m.alignment_accuracy);
      run_log << "epoch " << epoch << " eval ap50=" << m.box_ap50
              << " align=" << m.alignment_accuracy << " score=" << score << "\n";
      if (score > best_score) {
        best_score = score;
        result.best_metrics = m;
        result.checkpoint_path = (fs::path(out_dir) / "model_best.ckpt").string();
        model.save(result.checkpoint_path);
      }
    }
    if (cfg.checkpoint_interval > 0 && (epoch + 1) % cfg.checkpoint_interval == 0) {
      model.save((fs::path(out_dir) / ("model_epoch_" + std::to_string(epoch + 1) +
                                       ".ckpt"))
                     .string());
    }
    run_log.flush();
    curve_csv.flush();
  }

  if (eval_idx.empty()) {
    result.checkpoint_path = (fs::path(out_dir) / "model_final.ckpt").string();
    model.save(result.checkpoint_path);
    std::vector<int> probe(train_idx.begin(),
                           train_idx.begin() +
                               std::min<std::size_t>(train_idx.size(), 64));
    result.best_metrics = run_eval(probe);
  }

  int tail = std::min<int>(20, static_cast<int>(result.curve.size()));
  double acc = 0;
  for (int i = 0; i < tail; ++i)
    acc += result.curve[result.curve.size() - 1 - i].loss.total;
  result.final_smoothed_loss = tail ? acc / tail : 0.0;
  if (model.truncation_count() > 0)
    run_log << "warning: " << model.truncation_count()
            << " captions truncated to max_tokens\n";
  return result;
}

}  // namespace cpg
