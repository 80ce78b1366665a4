#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>

#include "cpg/trainer.hpp"

using namespace cpg;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.d_model = 16;
  cfg.n_heads = 4;
  cfg.text_layers = 1;
  cfg.cross_encoder_layers = 1;
  cfg.decoder_layers = 1;
  cfg.n_queries = 4;
  cfg.max_tokens = 16;
  cfg.conv_channels = {4, 8, 8};
  cfg.pos_dim = 4;
  cfg.seed = 3;
  return cfg;
}

struct TinySetup {
  std::vector<CatalogRecord> records;
  AnnotatedDataset dataset;
  Vocab vocab;
};

TinySetup tiny_corpus(int n, std::uint64_t seed) {
  GeneratorConfig gc;
  gc.n_records = n;
  gc.seed = seed;
  auto brands = gen_brand_universe(gc);
  TinySetup s;
  s.records = generate_catalog(gc, brands);
  s.dataset = build_training_set(s.records, TeacherConfig::noiseless_config(),
                                 gc.lexicon);
  std::vector<Caption> caps;
  for (const auto& item : s.dataset.items) caps.push_back(item.caption);
  s.vocab = Vocab::build(caps);
  return s;
}

}  // namespace

TEST_CASE("gt_spans maps product regions to noun phrases in order, logo to brand span") {
  auto s = tiny_corpus(30, 2);
  for (std::size_t i = 0; i < s.records.size(); ++i) {
    auto spans = gt_spans(s.records[i], s.dataset.items[i].caption);
    REQUIRE(spans.size() == s.records[i].gt_regions.size());
    std::size_t next = 0;
    for (std::size_t k = 0; k < spans.size(); ++k) {
      if (s.records[i].gt_regions[k].role == RegionRole::Logo) {
        REQUIRE(s.dataset.items[i].caption.brand_span.has_value());
        CHECK(spans[k] == *s.dataset.items[i].caption.brand_span);
      } else {
        CHECK(spans[k] == s.dataset.items[i].caption.noun_phrases[next++]);
      }
    }
  }
}

TEST_CASE("untrained model evaluates near chance") {
  auto s = tiny_corpus(40, 5);
  CpgModel model(tiny_config(), s.vocab);
  auto m = evaluate_grounding(model, s.records, Lexicon::default_lexicon());
  CHECK(m.box_ap50 < 0.1);
  CHECK(m.n_records == 40);
  CHECK(m.alignment_accuracy >= 0.0);
  CHECK(m.alignment_accuracy <= 1.0);
}

TEST_CASE("two short runs with the same seed produce identical loss curves") {
  auto s = tiny_corpus(12, 7);
  TrainConfig tc;
  tc.batch_size = 4;
  tc.epochs = 2;
  tc.eval_frac = 0.0;
  tc.seed = 9;
  auto run = [&](const std::string& dir) {
    CpgModel model(tiny_config(), s.vocab);
    return train(model, s.records, s.dataset, tc, dir);
  };
  auto r1 = run("trainer_t1");
  auto r2 = run("trainer_t2");
  REQUIRE(r1.curve.size() == r2.curve.size());
  CHECK(r1.curve.size() == 6);  // 12 records / batch 4 * 2 epochs
  for (std::size_t i = 0; i < r1.curve.size(); ++i) {
    CHECK(r1.curve[i].loss.total == r2.curve[i].loss.total);
    CHECK(r1.curve[i].loss.l_o == r2.curve[i].loss.l_o);
  }
  CHECK(std::filesystem::exists("trainer_t1/loss_curve.csv"));
  CHECK(std::filesystem::exists(r1.checkpoint_path));
  std::filesystem::remove_all("trainer_t1");
  std::filesystem::remove_all("trainer_t2");
}

TEST_CASE("training reduces the loss and keeps a best checkpoint that round-trips") {
  auto s = tiny_corpus(24, 11);
  TrainConfig tc;
  tc.batch_size = 8;
  tc.epochs = 12;
  tc.eval_frac = 0.25;
  tc.seed = 4;
  CpgModel model(tiny_config(), s.vocab);
  auto res = train(model, s.records, s.dataset, tc, "trainer_t3");
  CHECK(res.final_smoothed_loss < res.initial_loss);
  REQUIRE(std::filesystem::exists(res.checkpoint_path));

  CpgModel loaded = CpgModel::load(res.checkpoint_path);
  std::vector<CatalogRecord> eval_recs(s.records.begin(), s.records.begin() + 8);
  auto m1 = evaluate_grounding(loaded, eval_recs, Lexicon::default_lexicon());
  auto m2 = evaluate_grounding(loaded, eval_recs, Lexicon::default_lexicon());
  CHECK(m1.box_ap50 == m2.box_ap50);
  CHECK(m1.alignment_accuracy == m2.alignment_accuracy);
  std::filesystem::remove_all("trainer_t3");
}

TEST_CASE("initial l_o is near log M for the real caption length") {
  auto s = tiny_corpus(16, 13);
  TrainConfig tc;
  tc.batch_size = 16;
  tc.epochs = 1;
  tc.eval_frac = 0.0;
  tc.seed = 2;
  CpgModel model(tiny_config(), s.vocab);
  auto res = train(model, s.records, s.dataset, tc, "trainer_t4");
  REQUIRE(!res.curve.empty());
  // random-init logits are nearly uniform, so each matched object contributes
  // about log(n_real); captions here run ~8-14 tokens -> log in [1.9, 2.7]
  double per_region_lo = res.curve[0].loss.l_o / 2.5;  // ~2-3 regions per record
  CHECK(res.curve[0].loss.l_o > 0.5);
  CHECK(per_region_lo < 2.0 * std::log(16.0));
  std::filesystem::remove_all("trainer_t4");
}

TEST_CASE("mismatched records/annotations are rejected") {
  auto s = tiny_corpus(6, 17);
  s.dataset.items.pop_back();
  CpgModel model(tiny_config(), s.vocab);
  TrainConfig tc;
  CHECK_THROWS_AS(train(model, s.records, s.dataset, tc, "trainer_t5"),
                  ValueError);
}
