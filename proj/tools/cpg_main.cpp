// cpg: synthetic catalog grounding pipeline driver.
// Subcommands: synth, annotate, train, extract, featurize, eval, report.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"

#include "cpg/catalog.hpp"
#include "cpg/io.hpp"
#include "cpg/matching_eval.hpp"
#include "cpg/teacher.hpp"
#include "cpg/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "cpg 0.1.0";
constexpr int kExitUsage = 2;
constexpr int kExitMissingInput = 3;

// Relative paths resolve against CPG_DATA_DIR when it is set.
std::string resolve(const std::string& path) {
  if (path.empty() || fs::path(path).is_absolute()) return path;
  const char* base = std::getenv("CPG_DATA_DIR");
  if (!base || !*base) return path;
  return (fs::path(base) / path).string();
}

std::string require_input(const std::string& path, const std::string& what) {
  std::string p = resolve(path);
  if (!fs::exists(p)) {
    std::cerr << "error: missing-input: " << what << " not found: " << p << "\n";
    std::exit(kExitMissingInput);
  }
  return p;
}

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::string p = require_input(path, "config file");
  try {
    return json::parse(cpg::read_text_file(p));
  } catch (const std::exception& e) {
    std::cerr << "error: bad-config: " << e.what() << "\n";
    std::exit(kExitUsage);
  }
}

// Flags win over the config file; config wins over built-in defaults.
template <typename T>
void merge(const CLI::Option* opt, const json& cfg, const char* key, T& value) {
  if (opt->count() > 0) return;
  if (cfg.contains(key)) value = cfg[key].get<T>();
}

void write_manifest(const std::string& out_dir, const std::string& subcommand,
                    const json& effective_config,
                    const std::vector<std::string>& inputs) {
  json m;
  m["tool"] = kVersion;
  m["subcommand"] = subcommand;
  m["config"] = effective_config;
  m["config_hash"] = cpg::hex64(cpg::fnv1a_str(effective_config.dump()));
  json digests = json::object();
  for (const auto& in : inputs) digests[in] = cpg::hex64(cpg::file_digest(in));
  m["input_digests"] = digests;
  cpg::write_text_file((fs::path(out_dir) / "manifest.json").string(), m.dump(2));
}

cpg::CpgModel load_model(const std::string& path) {
  return cpg::CpgModel::load(require_input(path, "checkpoint"));
}

struct CatalogBundle {
  std::vector<cpg::CatalogRecord> records;
  std::vector<cpg::BrandSpec> brands;
};

CatalogBundle load_bundle(const std::string& catalog_path,
                          const std::string& brands_path) {
  CatalogBundle b;
  b.records = cpg::load_catalog(require_input(catalog_path, "catalog"));
  b.brands = cpg::load_brands(require_input(brands_path, "brand universe"));
  return b;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Catalog phrase grounding pipeline"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  app.fallthrough();  // lets --config appear after the subcommand name
  std::string config_path;
  app.add_option("--config", config_path, "JSON config file; flags override it");

  // ---- synth ----
  auto* synth = app.add_subcommand("synth", "Generate a synthetic catalog");
  int s_n = 1000, s_brands = 40, s_png = 0;
  double s_homonym = 0.3, s_logo = 0.40;
  std::uint64_t s_seed = 0;
  std::string s_out = "data/synth", s_country = "XX";
  auto* o_sn = synth->add_option("--n", s_n, "number of records");
  auto* o_sb = synth->add_option("--brands", s_brands, "number of brands");
  auto* o_sh = synth->add_option("--homonym-rate", s_homonym, "");
  auto* o_sl = synth->add_option("--logo-rate", s_logo, "");
  auto* o_ss = synth->add_option("--seed", s_seed, "");
  auto* o_sc = synth->add_option("--country", s_country, "country tag");
  auto* o_so = synth->add_option("--out", s_out, "output directory");
  synth->add_option("--png", s_png, "dump the first N records as PNGs");

  // ---- annotate ----
  auto* annotate = app.add_subcommand("annotate", "Run the teacher oracles");
  std::string a_catalog, a_out = "data/annotated";
  std::uint64_t a_seed = 0;
  bool a_noiseless = false;
  double a_jitter = 0.02, a_miss = 0.05, a_fp = 0.02;
  auto* o_ac = annotate->add_option("--catalog", a_catalog, "catalog JSONL");
  auto* o_ao = annotate->add_option("--out", a_out, "output directory");
  auto* o_as = annotate->add_option("--seed", a_seed, "");
  annotate->add_flag("--noiseless", a_noiseless, "exact ground-truth teachers");
  auto* o_aj = annotate->add_option("--jitter", a_jitter, "box jitter sigma");
  auto* o_am = annotate->add_option("--miss-rate", a_miss, "");
  auto* o_af = annotate->add_option("--fp-rate", a_fp, "");

  // ---- train ----
  auto* train_cmd = app.add_subcommand("train", "Train the grounding model");
  std::string t_catalog, t_annotations, t_out = "data/train";
  int t_epochs = 6, t_batch = 16;
  double t_lr = 3e-4, t_eval_frac = 0.1;
  std::uint64_t t_seed = 0;
  int t_dmodel = 32, t_queries = 8;
  auto* o_tc = train_cmd->add_option("--catalog", t_catalog, "");
  auto* o_ta = train_cmd->add_option("--annotations", t_annotations, "");
  auto* o_to = train_cmd->add_option("--out", t_out, "");
  auto* o_te = train_cmd->add_option("--epochs", t_epochs, "");
  auto* o_tb = train_cmd->add_option("--batch", t_batch, "");
  auto* o_tl = train_cmd->add_option("--lr", t_lr, "");
  auto* o_tf = train_cmd->add_option("--eval-frac", t_eval_frac, "");
  auto* o_ts = train_cmd->add_option("--seed", t_seed, "");
  auto* o_td = train_cmd->add_option("--d-model", t_dmodel, "");
  auto* o_tq = train_cmd->add_option("--queries", t_queries, "");

  // ---- extract ----
  auto* extract = app.add_subcommand("extract", "Dump confident object reps");
  std::string x_catalog, x_ckpt, x_out = "data/reps";
  auto* o_xc = extract->add_option("--catalog", x_catalog, "");
  auto* o_xk = extract->add_option("--checkpoint", x_ckpt, "");
  auto* o_xo = extract->add_option("--out", x_out, "");

  // ---- featurize ----
  auto* feat = app.add_subcommand("featurize", "Write the pair feature table");
  std::string f_catalog, f_brands, f_ckpt, f_out = "data/features";
  std::uint64_t f_seed = 0;
  int f_npos = 200;
  double f_hom_frac = 0.5;
  auto* o_fc = feat->add_option("--catalog", f_catalog, "");
  auto* o_fb = feat->add_option("--brands", f_brands, "");
  auto* o_fk = feat->add_option("--checkpoint", f_ckpt, "");
  auto* o_fo = feat->add_option("--out", f_out, "");
  auto* o_fs = feat->add_option("--seed", f_seed, "");
  auto* o_fn = feat->add_option("--n-positives", f_npos, "");
  auto* o_fh = feat->add_option("--homonym-frac", f_hom_frac, "");

  // ---- eval ----
  auto* eval_cmd = app.add_subcommand("eval", "Compare feature sets");
  std::string e_catalog, e_brands, e_ckpt, e_out = "data/eval";
  std::string e_features = "text,logo,image,cpg";
  std::string e_embedder = "random-proj";
  std::uint64_t e_seed = 0;
  int e_npos = 200;
  double e_hom_frac = 0.5;
  auto* o_ec = eval_cmd->add_option("--catalog", e_catalog, "");
  auto* o_eb = eval_cmd->add_option("--brands", e_brands, "");
  auto* o_ek = eval_cmd->add_option("--checkpoint", e_ckpt, "");
  auto* o_eo = eval_cmd->add_option("--out", e_out, "");
  auto* o_ef = eval_cmd->add_option("--features", e_features,
                                    "comma list of text,logo,image,cpg");
  auto* o_ee = eval_cmd->add_option("--embedder", e_embedder,
                                    "random-proj or cpg-pool");
  auto* o_es = eval_cmd->add_option("--seed", e_seed, "");
  auto* o_en = eval_cmd->add_option("--n-positives", e_npos, "");
  auto* o_eh = eval_cmd->add_option("--homonym-frac", e_hom_frac, "");

  // ---- report ----
  auto* report_cmd = app.add_subcommand("report", "Summarize an eval report");
  std::string r_in;
  report_cmd->add_option("--in", r_in, "report.json path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  json cfg = load_config(config_path);

  try {
    if (*synth) {
      merge(o_sn, cfg, "n", s_n);
      merge(o_sb, cfg, "brands", s_brands);
      merge(o_sh, cfg, "homonym_rate", s_homonym);
      merge(o_sl, cfg, "logo_rate", s_logo);
      merge(o_ss, cfg, "seed", s_seed);
      merge(o_sc, cfg, "country", s_country);
      merge(o_so, cfg, "out", s_out);
      cpg::GeneratorConfig gc;
      gc.n_records = s_n;
      gc.n_brands = s_brands;
      gc.homonym_rate = s_homonym;
      gc.logo_rate = s_logo;
      gc.seed = s_seed;
      gc.country = s_country;
      std::string out = resolve(s_out);
      fs::create_directories(out);
      auto brands = cpg::gen_brand_universe(gc);
      auto records = cpg::generate_catalog(gc, brands);
      cpg::export_catalog(records, (fs::path(out) / "catalog.jsonl").string());
      cpg::export_brands(brands, (fs::path(out) / "brands.json").string());
      for (int i = 0; i < std::min<int>(s_png, (int)records.size()); ++i)
        cpg::dump_record_png(records[i], (fs::path(out) / ("record_" +
                             std::to_string(i) + ".png")).string());
      json eff{{"n", s_n}, {"brands", s_brands}, {"homonym_rate", s_homonym},
               {"logo_rate", s_logo}, {"seed", s_seed}, {"country", s_country}};
      write_manifest(out, "synth", eff, {});
      std::cout << "wrote " << records.size() << " records to " << out << "\n";
    } else if (*annotate) {
      merge(o_ac, cfg, "catalog", a_catalog);
      merge(o_ao, cfg, "out", a_out);
      merge(o_as, cfg, "seed", a_seed);
      merge(o_aj, cfg, "jitter", a_jitter);
      merge(o_am, cfg, "miss_rate", a_miss);
      merge(o_af, cfg, "fp_rate", a_fp);
      std::string cat = require_input(a_catalog, "catalog");
      auto records = cpg::load_catalog(cat);
      cpg::TeacherConfig tc;
      if (a_noiseless) {
        tc = cpg::TeacherConfig::noiseless_config(a_seed);
      } else {
        tc.box_jitter_sigma = a_jitter;
        tc.miss_rate = a_miss;
        tc.false_positive_rate = a_fp;
        tc.seed = a_seed;
      }
      auto ds = cpg::build_training_set(records, tc, cpg::Lexicon::default_lexicon());
      std::string out = resolve(a_out);
      fs::create_directories(out);
      cpg::export_annotations(ds, (fs::path(out) / "annotations.jsonl").string());
      json stats{{"n_records", ds.stats.n_records},
                 {"unique_phrases", ds.stats.unique_phrases},
                 {"phrase_boxes", ds.stats.phrase_boxes},
                 {"logo_labels", ds.stats.logo_labels}};
      cpg::write_text_file((fs::path(out) / "stats.json").string(), stats.dump(2));
      json eff{{"catalog", cat}, {"seed", a_seed}, {"noiseless", a_noiseless},
               {"jitter", tc.box_jitter_sigma}, {"miss_rate", tc.miss_rate},
               {"fp_rate", tc.false_positive_rate}};
      write_manifest(out, "annotate", eff, {cat});
      std::cout << stats.dump(2) << "\n";
    } else if (*train_cmd) {
      merge(o_tc, cfg, "catalog", t_catalog);
      merge(o_ta, cfg, "annotations", t_annotations);
      merge(o_to, cfg, "out", t_out);
      merge(o_te, cfg, "epochs", t_epochs);
      merge(o_tb, cfg, "batch", t_batch);
      merge(o_tl, cfg, "lr", t_lr);
      merge(o_tf, cfg, "eval_frac", t_eval_frac);
      merge(o_ts, cfg, "seed", t_seed);
      merge(o_td, cfg, "d_model", t_dmodel);
      merge(o_tq, cfg, "queries", t_queries);
      std::string cat = require_input(t_catalog, "catalog");
      std::string ann = require_input(t_annotations, "annotations");
      auto records = cpg::load_catalog(cat);
      auto anns = cpg::load_annotations(ann);
      if (anns.size() != records.size())
        throw cpg::ValueError("annotations do not match the catalog");
      cpg::Lexicon lex = cpg::Lexicon::default_lexicon();
      cpg::AnnotatedDataset ds;
      ds.stats.n_records = (std::int64_t)records.size();
      std::vector<cpg::Caption> caps;
      for (std::size_t i = 0; i < records.size(); ++i) {
        cpg::AnnotatedRecord item;
        item.caption =
            cpg::craft_caption(records[i].brand_name, records[i].title_tokens, lex);
        item.annotations = anns[i];
        caps.push_back(item.caption);
        ds.items.push_back(std::move(item));
      }
      cpg::ModelConfig mc;
      mc.d_model = t_dmodel;
      mc.n_queries = t_queries;
      mc.seed = t_seed;
      cpg::CpgModel model(mc, cpg::Vocab::build(caps));
      cpg::TrainConfig trc;
      trc.epochs = t_epochs;
      trc.batch_size = t_batch;
      trc.lr = t_lr;
      trc.eval_frac = t_eval_frac;
      trc.seed = t_seed;
      std::string out = resolve(t_out);
      fs::create_directories(out);
      auto res = cpg::train(model, records, ds, trc, out);
      json metrics{{"checkpoint", res.checkpoint_path},
                   {"box_ap50", res.best_metrics.box_ap50},
                   {"alignment_accuracy", res.best_metrics.alignment_accuracy},
                   {"phrase_ap50", res.best_metrics.phrase_ap50},
                   {"logo_ap50", res.best_metrics.logo_ap50},
                   {"initial_loss", res.initial_loss},
                   {"final_smoothed_loss", res.final_smoothed_loss}};
      cpg::write_text_file((fs::path(out) / "metrics.json").string(), metrics.dump(2));
      json eff{{"catalog", cat}, {"annotations", ann}, {"epochs", t_epochs},
               {"batch", t_batch}, {"lr", t_lr}, {"eval_frac", t_eval_frac},
               {"seed", t_seed}, {"d_model", t_dmodel}, {"queries", t_queries}};
      write_manifest(out, "train", eff, {cat, ann});
      std::cout << metrics.dump(2) << "\n";
    } else if (*extract) {
      merge(o_xc, cfg, "catalog", x_catalog);
      merge(o_xk, cfg, "checkpoint", x_ckpt);
      merge(o_xo, cfg, "out", x_out);
      std::string cat = require_input(x_catalog, "catalog");
      auto records = cpg::load_catalog(cat);
      auto model = load_model(x_ckpt);
      cpg::Lexicon lex = cpg::Lexicon::default_lexicon();
      std::string out = resolve(x_out);
      fs::create_directories(out);
      std::ofstream f(fs::path(out) / "reps.jsonl");
      long total = 0;
      for (const auto& r : records) {
        for (const auto& rep : cpg::extract_reps(model, r, lex)) {
          json j{{"record_id", rep.record_id}, {"confidence", rep.confidence},
                 {"box", {rep.box.cx, rep.box.cy, rep.box.w, rep.box.h}},
                 {"vector", rep.vec}};
          f << j.dump() << "\n";
          ++total;
        }
      }
      json eff{{"catalog", cat}, {"checkpoint", resolve(x_ckpt)}};
      write_manifest(out, "extract", eff, {cat, resolve(x_ckpt)});
      std::cout << "wrote " << total << " representations\n";
    } else if (*feat) {
      merge(o_fc, cfg, "catalog", f_catalog);
      merge(o_fb, cfg, "brands", f_brands);
      merge(o_fk, cfg, "checkpoint", f_ckpt);
      merge(o_fo, cfg, "out", f_out);
      merge(o_fs, cfg, "seed", f_seed);
      merge(o_fn, cfg, "n_positives", f_npos);
      merge(o_fh, cfg, "homonym_frac", f_hom_frac);
      auto bundle = load_bundle(f_catalog, f_brands);
      auto model = load_model(f_ckpt);
      cpg::PairConfig pc;
      pc.seed = f_seed;
      pc.n_positives = f_npos;
      pc.homonym_neg_fraction = f_hom_frac;
      auto split = cpg::build_pairs(bundle.records, bundle.brands, pc);
      cpg::FeaturizeContext ctx;
      ctx.records = &bundle.records;
      ctx.brands = &bundle.brands;
      ctx.entities = &split.entities;
      ctx.model = &model;
      std::string out = resolve(f_out);
      fs::create_directories(out);
      std::ofstream f(fs::path(out) / "features.csv");
      // text block, then the cpg distance block
      f << "# split,record_id,brand_id,label,kind,edit_dist,jaccard,exact,"
           "in_title,title_len";
      for (const auto& c : cpg::CpgFeatureRow::column_names()) f << "," << c;
      f << "\n";
      auto dump = [&](const std::vector<cpg::MatchPair>& pairs, const char* split_name) {
        for (const auto& p : pairs) {
          auto row = cpg::featurize_pair(p, cpg::FeatureSetTag::TextCpg, ctx);
          f << split_name << "," << bundle.records[p.record_idx].record_id << ","
            << p.brand_id << "," << (p.positive ? 1 : 0) << ","
            << (p.kind == cpg::NegativeKind::Homonym
                    ? "homonym"
                    : p.kind == cpg::NegativeKind::Random ? "random" : "none");
          for (double v : row) f << "," << v;
          f << "\n";
        }
      };
      dump(split.train, "train");
      dump(split.test, "test");
      json eff{{"catalog", resolve(f_catalog)}, {"brands", resolve(f_brands)},
               {"checkpoint", resolve(f_ckpt)}, {"seed", f_seed},
               {"n_positives", f_npos}, {"homonym_frac", f_hom_frac}};
      write_manifest(out, "featurize", eff,
                     {resolve(f_catalog), resolve(f_brands), resolve(f_ckpt)});
      std::cout << "wrote " << split.train.size() + split.test.size()
                << " feature rows\n";
    } else if (*eval_cmd) {
      merge(o_ec, cfg, "catalog", e_catalog);
      merge(o_eb, cfg, "brands", e_brands);
      merge(o_ek, cfg, "checkpoint", e_ckpt);
      merge(o_eo, cfg, "out", e_out);
      merge(o_ef, cfg, "features", e_features);
      merge(o_ee, cfg, "embedder", e_embedder);
      merge(o_es, cfg, "seed", e_seed);
      merge(o_en, cfg, "n_positives", e_npos);
      merge(o_eh, cfg, "homonym_frac", e_hom_frac);
      auto bundle = load_bundle(e_catalog, e_brands);
      auto model = load_model(e_ckpt);
      cpg::CompareConfig cc;
      cc.pairs.seed = e_seed;
      cc.pairs.n_positives = e_npos;
      cc.pairs.homonym_neg_fraction = e_hom_frac;
      cc.sets.clear();
      std::string tok;
      for (char ch : e_features + ",") {
        if (ch == ',') {
          if (tok == "text") cc.sets.push_back(cpg::FeatureSetTag::Text);
          else if (tok == "logo") cc.sets.push_back(cpg::FeatureSetTag::TextLogo);
          else if (tok == "image") cc.sets.push_back(cpg::FeatureSetTag::TextImage);
          else if (tok == "cpg") cc.sets.push_back(cpg::FeatureSetTag::TextCpg);
          else if (!tok.empty()) throw CLI::ValidationError("--features", tok);
          tok.clear();
        } else {
          tok += ch;
        }
      }
      std::unique_ptr<cpg::ImageEmbedder> embedder;
      if (e_embedder == "random-proj")
        embedder = std::make_unique<cpg::RandomProjEmbedder>(e_seed);
      else if (e_embedder == "cpg-pool")
        embedder = std::make_unique<cpg::EncoderPoolEmbedder>(model);
      else
        throw CLI::ValidationError("--embedder", e_embedder);
      auto report = cpg::compare_feature_sets(bundle.records, bundle.brands,
                                              &model, embedder.get(),
                                              cpg::Lexicon::default_lexicon(), cc);
      std::string out = resolve(e_out);
      fs::create_directories(out);
      cpg::write_text_file((fs::path(out) / "report.json").string(),
                           report.to_json());
      for (const auto& tag : report.tags) {
        for (const auto& s : tag.sets) {
          std::ofstream pr(fs::path(out) /
                           ("pr_" + tag.country + "_" + s.set + ".csv"));
          pr << "recall,precision\n";
          for (auto [r, p] : s.pr) pr << r << "," << p << "\n";
        }
      }
      json eff{{"catalog", resolve(e_catalog)}, {"brands", resolve(e_brands)},
               {"checkpoint", resolve(e_ckpt)}, {"features", e_features},
               {"embedder", e_embedder}, {"seed", e_seed},
               {"n_positives", e_npos}, {"homonym_frac", e_hom_frac}};
      write_manifest(out, "eval", eff,
                     {resolve(e_catalog), resolve(e_brands), resolve(e_ckpt)});
      std::cout << "wrote " << (fs::path(out) / "report.json").string() << "\n";
    } else if (*report_cmd) {
      std::string in = require_input(r_in, "report");
      json j = json::parse(cpg::read_text_file(in));
      for (const auto& tag : j["tags"]) {
        std::cout << "country " << tag["country"].get<std::string>() << " ("
                  << tag["n_train"] << " train / " << tag["n_test"] << " test)\n";
        for (const auto& s : tag["sets"]) {
          std::printf("  %-11s R@P90 %.3f  R@P95 %.3f\n",
                      s["set"].get<std::string>().c_str(),
                      s["r_at_p90"].get<double>(), s["r_at_p95"].get<double>());
        }
        for (auto it = tag["delta_r_at_p95_vs_text"].begin();
             it != tag["delta_r_at_p95_vs_text"].end(); ++it) {
          std::printf("  delta R@P95 %s: %+.3f\n", it.key().c_str(),
                      it.value().get<double>());
        }
      }
    }
  } catch (const CLI::Error& e) {
    std::cerr << "error: usage: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
