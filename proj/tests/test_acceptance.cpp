// End-to-end acceptance gate. Prints one PASS/FAIL line per criterion and
// exits nonzero if any criterion fails. Tolerances are pinned inline.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "cpg/boxes.hpp"
#include "cpg/catalog.hpp"
#include "cpg/features.hpp"
#include "cpg/io.hpp"
#include "cpg/loss.hpp"
#include "cpg/matching_eval.hpp"
#include "cpg/model.hpp"
#include "cpg/teacher.hpp"
#include "cpg/tensor.hpp"
#include "cpg/trainer.hpp"

namespace fs = std::filesystem;
using namespace cpg;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Check {
  bool ok = true;
  std::string detail;

  void require(bool cond, const std::string& msg) {
    if (!cond) {
      ok = false;
      if (!detail.empty()) detail += "; ";
      detail += msg;
    }
  }
  void note(const std::string& msg) {
    if (!detail.empty()) detail += "; ";
    detail += msg;
  }
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

// Shared artifacts across criteria: the catalogs and the model trained in
// criterion 5 feed criteria 6 and 8.
struct SharedState {
  std::vector<BrandSpec> train_brands;
  std::vector<CatalogRecord> train_records;   // 2000, defaults
  std::vector<BrandSpec> stress_brands;       // homonym-heavy tag
  std::vector<CatalogRecord> stress_records;
  std::vector<BrandSpec> clean_brands;        // zero-homonym tag
  std::vector<CatalogRecord> clean_records;
  std::unique_ptr<CpgModel> model;            // trained in criterion 5
  std::string out_dir;
};

void build_catalogs(SharedState& st) {
  GeneratorConfig gc;
  gc.n_records = 2000;
  gc.n_brands = 20;
  gc.seed = 11;
  gc.country = "XX";
  st.train_brands = gen_brand_universe(gc);
  st.train_records = generate_catalog(gc, st.train_brands);

  GeneratorConfig sc;
  sc.n_records = 1200;
  sc.n_brands = 24;
  sc.homonym_rate = 0.6;
  sc.seed = 12;
  sc.country = "S";
  st.stress_brands = gen_brand_universe(sc);
  st.stress_records = generate_catalog(sc, st.stress_brands);

  GeneratorConfig cc;
  cc.n_records = 1200;
  cc.n_brands = 24;
  cc.homonym_rate = 0.0;
  cc.seed = 13;
  cc.country = "C";
  st.clean_brands = gen_brand_universe(cc);
  st.clean_records = generate_catalog(cc, st.clean_brands);
}

// --- criterion 1: gradient correctness -------------------------------------

// Reduce an arbitrary op output to a scalar with fixed weights so every
// output element contributes to the objective.
Tensor weigh(Graph& g, const Tensor& t) {
  if (t.rank() == 0 || t.size() == 1) return g.reshape(t, {});
  Tensor flat = g.reshape(t, {1, static_cast<int>(t.size())});
  std::vector<double> w(t.size());
  for (std::size_t i = 0; i < w.size(); ++i)
    w[i] = 0.3 + 0.11 * static_cast<double>(i % 7);
  Tensor wt = Tensor::from_data({static_cast<int>(t.size()), 1}, w);
  return g.reshape(g.matmul(flat, wt), {});
}

double op_fd_error(const std::function<Tensor(Graph&, const std::vector<Tensor>&)>& op,
                   std::vector<Tensor> params, std::mt19937_64& rng) {
  auto eval = [&]() {
    Graph g(false);
    return weigh(g, op(g, params)).item();
  };
  Graph g;
  Tensor loss = weigh(g, op(g, params));
  g.backward(loss);
  double worst = 0.0;
  for (auto& p : params) {
    int probes = std::min<int>(4, static_cast<int>(p.size()));
    worst = std::max(worst, fd_check_param(eval, p, p.grad_vec(), probes, rng));
    p.zero_grad();
  }
  return worst;
}

Check criterion1() {
  Check c;
  auto t0 = Clock::now();
  std::mt19937_64 rng(4242);
  auto randp = [&](Shape s) {
    Tensor t = Tensor::randn(s, rng, 0.7, true);
    return t;
  };
  auto posp = [&](Shape s) {
    Tensor t = Tensor::randn(s, rng, 0.3, true);
    for (auto& v : t.vec()) v = 0.5 + std::abs(v);
    return t;
  };

  struct OpCase {
    const char* name;
    std::vector<Tensor> params;
    std::function<Tensor(Graph&, const std::vector<Tensor>&)> op;
  };
  std::vector<int> ids{2, 0, 1, 2};
  std::vector<std::uint8_t> mask{1, 0, 0, 1, 0, 1, 1, 0, 0, 1, 0, 1};
  std::vector<OpCase> cases;
  cases.push_back({"add", {randp({3, 4}), randp({3, 4})},
                   [](Graph& g, const std::vector<Tensor>& p) { return g.add(p[0], p[1]); }});
  cases.push_back({"sub", {randp({3, 4}), randp({3, 4})},
                   [](Graph& g, const std::vector<Tensor>& p) { return g.sub(p[0], p[1]); }});
  cases.push_back({"mul", {randp({3, 4}), randp({3, 4})},
                   [](Graph& g, const std::vector<Tensor>& p) { return g.mul(p[0], p[1]); }});
  cases.push_back({"div", {randp({3, 4}), posp({3, 4})},
                   [](Graph& g, const std::vector<Tensor>& p) { return g.div(p[0], p[1]); }});
  cases.push_back({"maximum", {randp({3, 4}), randp({3, 4})},
                   [](Graph& g, const std::vector<Tensor>& p) { return g.maximum(p[0], p[1]); }});
  cases.push_back({"minimum", {randp({3, 4}), randp({3, 4})},
                   [](Graph& g, const std::vector<Tensor>& p) { return g.minimum(p[0], p[1]); }});
  cases.push_back({"add_scalar", {randp({3, 4})},
                   [](Graph& g, const std::vector<Tensor>& p) { return g.add_scalar(p[0], 1.7); }});
  cases.push_back({"mul_scalar", {randp({3, 4})},
                   [](Graph& g, const std::vector<Tensor>& p) { return g.mul_scalar(p[0], -2.1); }});
  cases.push_back({"clamp_min", {randp({3, 4})},
                   [](Graph& g, const std::vector<Tensor>& p) { return g.clamp_min(p[0], 0.37); }});
  cases.push_back({"clamp_max", {randp({3, 4})},
                   [](Graph& g, const std::vector<Tensor>& p) { return g.clamp_max(p[0], 0.37); }});
  cases.push_back({"exp", {randp({3, 4})},
                   [](Graph& g, const std::vector<Tensor>& p) { return g.exp(p[0]); }});
  cases.push_back({"log", {posp({3, 4})},
                   [](Graph& g, const std::vector<Tensor>& p) { return g.log(p[0]); }});
  cases.push_back({"sigmoid", {randp({3, 4})},
                   [](Graph& g, const std::vector<Tensor>& p) { return g.sigmoid(p[0]); }});
  cases.push_back({"gelu", {randp({3, 4})},
                   [](Graph& g, const std::vector<Tensor>& p) { return g.gelu(p[0]); }});
  cases.push_back({"relu", {randp({3, 4})},
                   [](Graph& g, const std::vector<Tensor>& p) { return g.relu(p[0]); }});
  cases.push_back({"abs", {randp({3, 4})},
                   [](Graph& g, const std::vector<Tensor>& p) { return g.abs(p[0]); }});
  cases.push_back({"matmul", {randp({3, 4}), randp({4, 2})},
                   [](Graph& g, const std::vector<Tensor>& p) { return g.matmul(p[0], p[1]); }});
  cases.push_back({"transpose", {randp({3, 4})},
                   [](Graph& g, const std::vector<Tensor>& p) { return g.transpose(p[0]); }});
  cases.push_back({"add_bias", {randp({3, 4}), randp({4})},
                   [](Graph& g, const std::vector<Tensor>& p) { return g.add_bias(p[0], p[1]); }});
  cases.push_back({"concat0", {randp({2, 4}), randp({3, 4})},
                   [](Graph& g, const std::vector<Tensor>& p) { return g.concat(p[0], p[1], 0); }});
  cases.push_back({"concat1", {randp({3, 2}), randp({3, 4})},
                   [](Graph& g, const std::vector<Tensor>& p) { return g.concat(p[0], p[1], 1); }});
  cases.push_back({"slice", {randp({4, 5})},
                   [](Graph& g, const std::vector<Tensor>& p) { return g.slice(p[0], 1, 3, 0, 4); }});
  cases.push_back({"reshape", {randp({3, 4})},
                   [](Graph& g, const std::vector<Tensor>& p) { return g.reshape(p[0], {4, 3}); }});
  cases.push_back({"reduce_sum0", {randp({3, 4})},
                   [](Graph& g, const std::vector<Tensor>& p) { return g.reduce_sum(p[0], 0); }});
  cases.push_back({"reduce_sum1", {randp({3, 4})},
                   [](Graph& g, const std::vector<Tensor>& p) { return g.reduce_sum(p[0], 1); }});
  cases.push_back({"reduce_mean", {randp({3, 4})},
                   [](Graph& g, const std::vector<Tensor>& p) { return g.reduce_mean(p[0], -1); }});
  cases.push_back({"reduce_max", {randp({3, 4})},
                   [](Graph& g, const std::vector<Tensor>& p) { return g.reduce_max(p[0], 1); }});
  cases.push_back({"softmax0", {randp({3, 4})},
                   [](Graph& g, const std::vector<Tensor>& p) { return g.softmax(p[0], 0); }});
  cases.push_back({"softmax1", {randp({3, 4})},
                   [](Graph& g, const std::vector<Tensor>& p) { return g.softmax(p[0], 1); }});
  cases.push_back({"layer_norm", {randp({3, 4}), randp({4}), randp({4})},
                   [](Graph& g, const std::vector<Tensor>& p) {
                     return g.layer_norm(p[0], p[1], p[2]);
                   }});
  cases.push_back({"embedding_lookup", {randp({3, 4})},
                   [ids](Graph& g, const std::vector<Tensor>& p) {
                     return g.embedding_lookup(p[0], ids);
                   }});
  cases.push_back({"masked_fill", {randp({3, 4})},
                   [mask](Graph& g, const std::vector<Tensor>& p) {
                     return g.masked_fill(p[0], mask, -3.0);
                   }});
  cases.push_back({"im2col", {randp({2, 4, 4})},
                   [](Graph& g, const std::vector<Tensor>& p) {
                     return g.im2col(p[0], 3, 2, 1);
                   }});

  double worst_op = 0.0;
  for (auto& oc : cases) {
    double err = op_fd_error(oc.op, oc.params, rng);
    worst_op = std::max(worst_op, err);
    c.require(err < 1e-6, std::string(oc.name) + " fd err " + fmt(err));
  }

  // end-to-end: total grounding loss vs 10 sampled model parameters
  GeneratorConfig gc;
  gc.n_records = 1;
  gc.n_brands = 4;
  gc.seed = 5;
  auto brands = gen_brand_universe(gc);
  auto recs = generate_catalog(gc, brands);
  Lexicon lex = gc.lexicon;
  Caption cap = craft_caption(recs[0].brand_name, recs[0].title_tokens, lex);
  auto ds_cfg = TeacherConfig::noiseless_config(3);
  auto anns = phrase_teacher(recs[0], cap, ds_cfg);
  if (auto logo = logo_teacher(recs[0], cap, ds_cfg)) anns.push_back(*logo);
  ModelConfig mc;
  mc.d_model = 16;
  mc.text_layers = 1;
  mc.cross_encoder_layers = 1;
  mc.decoder_layers = 1;
  mc.n_queries = 4;
  mc.max_tokens = 24;
  mc.conv_channels = {4, 8, 8};
  mc.pos_dim = 4;
  mc.seed = 21;
  CpgModel model(mc, Vocab::build({cap}));
  auto ids2 = model.vocab().encode(cap);
  Tensor image = image_to_tensor(recs[0]);
  LossWeights lw;
  auto eval_loss = [&]() {
    Graph g(false);
    return total_loss(g, model.forward(g, ids2, image), anns, lw).total;
  };
  Graph g;
  auto lb = total_loss(g, model.forward(g, ids2, image), anns, lw);
  g.backward(lb.total_tensor);
  std::vector<Tensor> params;
  for (auto& p : model.parameters())
    if (p.requires_grad()) params.push_back(p);
  std::shuffle(params.begin(), params.end(), rng);
  double worst_e2e = 0.0;
  for (int i = 0; i < 10 && i < static_cast<int>(params.size()); ++i) {
    double err = fd_check_param(eval_loss, params[i],
                                params[i].has_grad()
                                    ? params[i].grad_vec()
                                    : std::vector<double>(params[i].size(), 0.0),
                                2, rng);
    worst_e2e = std::max(worst_e2e, err);
  }
  c.require(worst_e2e < 1e-4, "end-to-end fd err " + fmt(worst_e2e));
  double secs = seconds_since(t0);
  c.require(secs < 120.0, "runtime " + fmt(secs) + "s >= 120s");
  c.note("op err " + fmt(worst_op) + ", e2e err " + fmt(worst_e2e) + ", " +
         fmt(secs) + "s");
  return c;
}

// --- criterion 2: hungarian exactness --------------------------------------

double brute_force_min_cost(const std::vector<std::vector<double>>& cost) {
  int n = static_cast<int>(cost.size());
  int m = n ? static_cast<int>(cost[0].size()) : 0;
  if (n == 0 || m == 0) return 0.0;
  if (n > m) {
    std::vector<std::vector<double>> t(m, std::vector<double>(n));
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j) t[j][i] = cost[i][j];
    return brute_force_min_cost(t);
  }
  std::vector<int> cols(m);
  std::iota(cols.begin(), cols.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += cost[i][cols[i]];
    best = std::min(best, s);
  } while (std::next_permutation(cols.begin(), cols.end()));
  return best;
}

Check criterion2() {
  Check c;
  auto t0 = Clock::now();
  std::mt19937_64 rng(777);
  std::uniform_int_distribution<int> size_dist(1, 6);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  int mismatches = 0;
  for (int t = 0; t < 1000; ++t) {
    int n = size_dist(rng), m = size_dist(rng);
    std::vector<std::vector<double>> cost(n, std::vector<double>(m));
    for (auto& row : cost)
      for (auto& v : row) v = u(rng);
    Assignment a = hungarian(cost);
    double got = 0.0;
    for (auto [i, j] : a.pairs) got += cost[i][j];
    double want = brute_force_min_cost(cost);
    bool valid = static_cast<int>(a.pairs.size()) == std::min(n, m);
    if (!valid || std::abs(got - want) > 1e-9) ++mismatches;
  }
  c.require(mismatches == 0, std::to_string(mismatches) + " mismatches");
  double secs = seconds_since(t0);
  c.require(secs < 30.0, "runtime " + fmt(secs) + "s >= 30s");
  c.note("1000 matrices, " + fmt(secs) + "s");
  return c;
}

// --- criterion 3: loss oracle equivalence ----------------------------------

double lse_of(const std::vector<double>& v) {
  double mx = *std::max_element(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

struct AlignPair {
  double l_o = 0, l_t = 0;
};

// Drives the production loss from a raw logits matrix: token basis = identity,
// object vectors pre-scaled by tau so the dot products reproduce the logits.
AlignPair run_align(const std::vector<std::vector<double>>& logits,
                    const std::vector<TokenSpan>& spans,
                    const std::vector<std::pair<int, int>>& pairs, double tau) {
  int n_obj = static_cast<int>(logits.size());
  int n_tok = static_cast<int>(logits[0].size());
  std::vector<double> tok(n_tok * n_tok, 0.0);
  for (int i = 0; i < n_tok; ++i) tok[i * n_tok + i] = 1.0;
  std::vector<double> obj(n_obj * n_tok);
  for (int i = 0; i < n_obj; ++i)
    for (int j = 0; j < n_tok; ++j) obj[i * n_tok + j] = logits[i][j] * tau;
  Graph g(false);
  Assignment asg;
  asg.pairs = pairs;
  auto [lo, lt] = contrastive_align_loss(
      g, Tensor::from_data({n_tok, n_tok}, tok),
      Tensor::from_data({n_obj, n_tok}, obj), asg, spans, n_tok, tau);
  return {lo.item(), lt.item()};
}

AlignPair oracle_align(const std::vector<std::vector<double>>& logits,
                       const std::vector<TokenSpan>& spans,
                       const std::vector<std::pair<int, int>>& pairs) {
  int n_obj = static_cast<int>(logits.size());
  int n_tok = static_cast<int>(logits[0].size());
  AlignPair out;
  std::vector<std::vector<int>> pos_obj(n_tok);
  for (auto [q, a] : pairs) {
    auto [s, e] = spans[a];
    if (e <= s) continue;
    std::vector<double> row = logits[q];
    double mean_pos = 0.0;
    for (int j = s; j < e; ++j) {
      mean_pos += logits[q][j];
      pos_obj[j].push_back(q);
    }
    mean_pos /= (e - s);
    out.l_o += lse_of(row) - mean_pos;
  }
  for (int j = 0; j < n_tok; ++j) {
    if (pos_obj[j].empty()) continue;
    std::vector<double> col(n_obj);
    for (int i = 0; i < n_obj; ++i) col[i] = logits[i][j];
    double mean_pos = 0.0;
    for (int q : pos_obj[j]) mean_pos += logits[q][j];
    mean_pos /= pos_obj[j].size();
    out.l_t += lse_of(col) - mean_pos;
  }
  return out;
}

Check criterion3() {
  Check c;
  std::mt19937_64 rng(31337);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    int n_obj = 1 + static_cast<int>(rng() % 4);
    int n_tok = 2 + static_cast<int>(rng() % 5);
    std::vector<std::vector<double>> logits(n_obj, std::vector<double>(n_tok));
    for (auto& row : logits)
      for (auto& v : row) v = u(rng);
    std::vector<TokenSpan> spans;
    std::vector<std::pair<int, int>> pairs;
    for (int q = 0; q < n_obj; ++q) {
      int s = static_cast<int>(rng() % n_tok);
      int e = s + static_cast<int>(rng() % (n_tok - s + 1));
      spans.push_back({s, e});
      pairs.push_back({q, q});
    }
    AlignPair got = run_align(logits, spans, pairs, 0.07);
    AlignPair want = oracle_align(logits, spans, pairs);
    worst = std::max({worst, std::abs(got.l_o - want.l_o),
                      std::abs(got.l_t - want.l_t)});
  }
  c.require(worst < 1e-9, "oracle gap " + fmt(worst));

  // uniform logits, one object over one token of M: l_o = log M
  for (int M : {2, 5, 12}) {
    std::vector<std::vector<double>> logits(1, std::vector<double>(M, 0.8));
    AlignPair r = run_align(logits, {{0, 1}}, {{0, 0}}, 0.07);
    c.require(std::abs(r.l_o - std::log((double)M)) < 1e-12,
              "uniform l_o != log " + std::to_string(M));
  }

  // square instance with singleton spans: transposing the logits swaps roles
  {
    std::mt19937_64 r2(99);
    std::uniform_real_distribution<double> u2(-2.0, 2.0);
    int k = 4;
    std::vector<std::vector<double>> logits(k, std::vector<double>(k));
    for (auto& row : logits)
      for (auto& v : row) v = u2(r2);
    std::vector<TokenSpan> spans;
    std::vector<std::pair<int, int>> pairs;
    for (int i = 0; i < k; ++i) {
      spans.push_back({i, i + 1});
      pairs.push_back({i, i});
    }
    std::vector<std::vector<double>> tlogits(k, std::vector<double>(k));
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < k; ++j) tlogits[j][i] = logits[i][j];
    AlignPair a = run_align(logits, spans, pairs, 0.07);
    AlignPair b = run_align(tlogits, spans, pairs, 0.07);
    c.require(a.l_o == b.l_t && a.l_t == b.l_o, "transposition symmetry broken");
  }
  c.note("max oracle gap " + fmt(worst));
  return c;
}

// --- criterion 4: GIoU properties ------------------------------------------

Check criterion4() {
  Check c;
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  auto rand_box = [&]() {
    double x0 = u(rng), y0 = u(rng), x1 = u(rng), y1 = u(rng);
    return BoxXyxy{std::min(x0, x1), std::min(y0, y1), std::max(x0, x1),
                   std::max(y0, y1)};
  };
  double lo = 1e30, hi = -1e30;
  for (int t = 0; t < 100000; ++t) {
    BoxXyxy a = rand_box(), b = rand_box();
    double v = box_giou(a, b);
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  c.require(lo >= -1.0 - 1e-12 && hi <= 1.0 + 1e-12,
            "range [" + fmt(lo) + ", " + fmt(hi) + "]");

  BoxXyxy same{0.2, 0.3, 0.7, 0.9};
  c.require(std::abs(box_giou(same, same) - 1.0) < 1e-12, "identical != 1");

  BoxXyxy a{0.0, 0.0, 1.0, 1.0}, b{1.0, 1.0, 2.0, 2.0};
  double corner = box_giou(a, b);
  c.require(std::abs(corner - (-0.5)) < 1e-9, "corner case " + fmt(corner));

  // Monte-Carlo area oracle over the enclosure of the corner case.
  std::mt19937_64 mc(555);
  std::uniform_real_distribution<double> s(0.0, 2.0);
  long inter = 0, uni = 0;
  const long N = 1000000;
  for (long t = 0; t < N; ++t) {
    double x = s(mc), y = s(mc);
    bool in_a = x <= 1.0 && y <= 1.0;
    bool in_b = x >= 1.0 && y >= 1.0;
    if (in_a && in_b) ++inter;
    if (in_a || in_b) ++uni;
  }
  double enclosure = 4.0;
  double mc_union = enclosure * uni / N;
  double mc_inter = enclosure * inter / N;
  double mc_giou = (uni ? mc_inter / mc_union : 0.0) -
                   (enclosure - mc_union) / enclosure;
  c.require(std::abs(mc_giou - corner) < 3e-3,
            "MC oracle gap " + fmt(std::abs(mc_giou - corner)));
  c.note("corner " + fmt(corner) + ", MC " + fmt(mc_giou));
  return c;
}

// --- criterion 5: training sanity ------------------------------------------

Check criterion5(SharedState& st) {
  Check c;
  auto t0 = Clock::now();
  Lexicon lex = Lexicon::default_lexicon();
  auto ds = build_training_set(st.train_records, TeacherConfig::noiseless_config(1), lex);

  ModelConfig mc;  // defaults
  mc.seed = 7;
  // vocab from the training captions; other catalogs' unseen brand tokens
  // map to UNK downstream, which the rep extractor tolerates
  std::vector<Caption> caps;
  for (const auto& it : ds.items) caps.push_back(it.caption);
  st.model = std::make_unique<CpgModel>(mc, Vocab::build(caps));

  TrainConfig tc;
  tc.epochs = 50;
  tc.lr = 1e-3;
  tc.grad_clip = 0.0;
  tc.seed = 7;
  auto res = train(*st.model, st.train_records, ds, tc, st.out_dir + "/c5");
  // continue from the best checkpoint for downstream criteria
  *st.model = CpgModel::load(res.checkpoint_path);
  double secs = seconds_since(t0);
  c.require(res.best_metrics.alignment_accuracy >= 0.7,
            "alignment " + fmt(res.best_metrics.alignment_accuracy) + " < 0.7");
  c.require(res.best_metrics.box_ap50 >= 0.5,
            "AP50 " + fmt(res.best_metrics.box_ap50) + " < 0.5");
  c.require(secs < 1800.0, "runtime " + fmt(secs) + "s >= 1800s");

  // single-record overfit with the default architecture; pick a record with
  // singleton spans only, since the span-mean alignment term has an inherent
  // floor of log(span length)
  {
    std::size_t pick = 0;
    for (std::size_t i = 0; i < ds.items.size(); ++i) {
      const auto& anns0 = ds.items[i].annotations;
      bool ok = !anns0.empty();
      for (const auto& a : anns0)
        ok = ok && (a.span.second - a.span.first == 1);
      if (ok) {
        pick = i;
        break;
      }
    }
    CpgModel small(mc, st.model->vocab());
    const auto& rec = st.train_records[pick];
    const auto& item = ds.items[pick];
    auto ids = small.vocab().encode(item.caption);
    Tensor image = image_to_tensor(rec);
    AdamWConfig ac;
    ac.lr = 1e-3;
    ac.weight_decay = 0.0;
    AdamW opt(small.parameters(), ac);
    LossWeights lw;
    double last = 1e30;
    for (int step = 0; step < 800 && last >= 0.045; ++step) {
      Graph g;
      auto lb = total_loss(g, small.forward(g, ids, image), item.annotations, lw);
      g.backward(lb.total_tensor);
      opt.step();
      opt.zero_grad();
      last = lb.total;
    }
    c.require(last < 0.05, "overfit loss " + fmt(last));
    c.note("overfit loss " + fmt(last));
  }
  c.note("align " + fmt(res.best_metrics.alignment_accuracy) + ", AP50 " +
         fmt(res.best_metrics.box_ap50) + ", " + fmt(secs) + "s");
  return c;
}

// --- criterion 6: pseudo-label filter soundness -----------------------------

Check criterion6(SharedState& st) {
  Check c;
  GeneratorConfig gc;
  gc.n_records = 5000;
  gc.seed = 31;
  auto brands = gen_brand_universe(gc);
  auto records = generate_catalog(gc, brands);
  TeacherConfig tc;  // noisy defaults: jitter 0.02, miss 0.05, fp 0.02
  tc.seed = 9;
  Lexicon lex = Lexicon::default_lexicon();
  auto ds = build_training_set(records, tc, lex);
  long total = 0, logo = 0, low_conf = 0;
  for (const auto& item : ds.items) {
    for (const auto& a : item.annotations) {
      ++total;
      if (a.confidence <= 0.5) ++low_conf;
      if (a.source == TeacherSource::LogoTeacher) ++logo;
    }
  }
  c.require(low_conf == 0, std::to_string(low_conf) + " annotations <= 0.5");
  double rate = static_cast<double>(logo) / records.size();
  double want = gc.logo_rate * (1.0 - tc.miss_rate);
  c.require(std::abs(rate - want) <= 0.03,
            "logo rate " + fmt(rate) + " vs " + fmt(want));

  // extracted object representations obey the same filter
  long reps = 0;
  double min_conf = 1e30;
  for (int i = 0; i < 50; ++i) {
    for (const auto& r : extract_reps(*st.model, st.train_records[i], lex)) {
      ++reps;
      min_conf = std::min(min_conf, r.confidence);
    }
  }
  c.require(reps > 0, "no representations extracted");
  c.require(reps == 0 || min_conf > 0.5, "extracted rep conf " + fmt(min_conf));
  c.note("logo rate " + fmt(rate) + ", " + std::to_string(reps) +
         " reps, min conf " + fmt(reps ? min_conf : 0.0));
  return c;
}

// --- criterion 7: feature-layer invariants ----------------------------------

Check criterion7() {
  Check c;
  std::mt19937_64 rng(808);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  std::vector<double> base(37);
  for (auto& v : base) v = u(rng);
  SummaryStats ref = summarize(base);
  bool shuffle_ok = true;
  std::vector<double> perm = base;
  for (int t = 0; t < 1000; ++t) {
    std::shuffle(perm.begin(), perm.end(), rng);
    SummaryStats s = summarize(perm);
    if (s.min != ref.min || s.max != ref.max || s.median != ref.median ||
        s.variance != ref.variance)
      shuffle_ok = false;
  }
  c.require(shuffle_ok, "summary stats not permutation invariant");

  auto mk = [&](int n, int d, std::uint64_t seed) {
    std::mt19937_64 r(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<ObjectRep> out(n);
    for (auto& o : out) {
      o.vec.resize(d);
      for (auto& v : o.vec) v = g(r);
      o.confidence = 0.9;
    }
    return out;
  };
  auto a = mk(4, 6, 1), b = mk(5, 6, 2);

  // naive-loop pairwise oracle
  double worst = 0.0;
  auto d_euc = pairwise_distances(a, b, DistanceMetric::Euclidean);
  auto d_cos = pairwise_distances(a, b, DistanceMetric::Cosine);
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 5; ++j) {
      double s2 = 0.0, dot = 0.0, na = 0.0, nb = 0.0;
      for (int k = 0; k < 6; ++k) {
        double d = a[i].vec[k] - b[j].vec[k];
        s2 += d * d;
        dot += a[i].vec[k] * b[j].vec[k];
        na += a[i].vec[k] * a[i].vec[k];
        nb += b[j].vec[k] * b[j].vec[k];
      }
      worst = std::max(worst, std::abs(d_euc[i * 5 + j] - std::sqrt(s2)));
      worst = std::max(worst, std::abs(d_cos[i * 5 + j] -
                                       (1.0 - dot / std::sqrt(na * nb))));
    }
  }
  c.require(worst < 1e-12, "pairwise oracle gap " + fmt(worst));

  // cosine stats invariant under positive rescaling of every vector
  CpgFeatureRow r1 = build_cpg_features(a, {b});
  auto a2 = a;
  auto b2 = b;
  for (auto& o : a2)
    for (auto& v : o.vec) v *= 3.7;
  for (auto& o : b2)
    for (auto& v : o.vec) v *= 0.21;
  CpgFeatureRow r2 = build_cpg_features(a2, {b2});
  double cgap = std::max(
      {std::abs(r1.cosine.min - r2.cosine.min), std::abs(r1.cosine.max - r2.cosine.max),
       std::abs(r1.cosine.median - r2.cosine.median),
       std::abs(r1.cosine.variance - r2.cosine.variance)});
  c.require(cgap < 1e-12, "cosine rescale gap " + fmt(cgap));

  // emptiness flags and zero sentinels
  CpgFeatureRow e1 = build_cpg_features({}, {b});
  CpgFeatureRow e2 = build_cpg_features(a, {});
  c.require(e1.product_empty && !e1.brand_empty, "product emptiness flag");
  c.require(!e2.product_empty && e2.brand_empty, "brand emptiness flag");
  c.require(e1.euclidean.min == 0.0 && e1.cosine.max == 0.0, "zero sentinel");
  c.note("oracle gap " + fmt(worst) + ", cosine gap " + fmt(cgap));
  return c;
}

// --- criterion 8: downstream directional reproduction -----------------------

Check criterion8(SharedState& st) {
  Check c;
  auto t0 = Clock::now();
  Lexicon lex = Lexicon::default_lexicon();
  RandomProjEmbedder embedder(3);

  CompareConfig cc;
  cc.pairs.n_positives = 200;
  cc.pairs.homonym_neg_fraction = 0.5;
  cc.pairs.seed = 17;
  cc.logo_teacher.seed = 17;

  auto stress = compare_feature_sets(st.stress_records, st.stress_brands,
                                     st.model.get(), &embedder, lex, cc);
  auto clean = compare_feature_sets(st.clean_records, st.clean_brands,
                                    st.model.get(), &embedder, lex, cc);
  const TagReport& s = stress.tags.at(0);
  const TagReport& k = clean.tags.at(0);

  double d_stress = s.delta_p95.at("text+cpg");
  double d_clean = k.delta_p95.at("text+cpg");
  double cpg95 = 0, logo95 = 0;
  for (const auto& fs : s.sets) {
    if (fs.set == "text+cpg") cpg95 = fs.r_at_p95;
    if (fs.set == "text+logo") logo95 = fs.r_at_p95;
  }
  c.require(d_stress >= 0.05,
            "stress delta R@P95 " + fmt(d_stress) + " < +0.05");
  c.require(std::abs(d_clean) <= 0.02,
            "clean |delta R@P95| " + fmt(std::abs(d_clean)) + " > 0.02");
  c.require(cpg95 >= logo95, "text+cpg " + fmt(cpg95) + " < text+logo " +
                                 fmt(logo95) + " despite 60% logo-free images");
  double secs = seconds_since(t0);
  c.require(secs < 600.0, "runtime " + fmt(secs) + "s >= 600s");
  c.note("stress delta " + fmt(d_stress) + ", clean delta " + fmt(d_clean) +
         ", cpg95 " + fmt(cpg95) + " vs logo95 " + fmt(logo95) + ", " +
         fmt(secs) + "s");
  return c;
}

// --- criterion 9: recall_at_precision unit truth -----------------------------

Check criterion9() {
  Check c;
  // perfectly separable scores recover every positive
  c.require(recall_at_precision({0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0}, 0.95) == 1.0,
            "separable case");
  // hand case: only the top-1 threshold reaches precision 0.9
  double r = recall_at_precision({0.9, 0.8, 0.7, 0.6}, {1, 0, 1, 1}, 0.9);
  c.require(std::abs(r - 1.0 / 3.0) < 1e-15, "hand case " + fmt(r));
  // unattainable precision
  c.require(recall_at_precision({0.9, 0.8}, {0, 1}, 0.95) == 0.0,
            "unattainable case");

  std::mt19937_64 rng(123);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  bool mono = true;
  for (int t = 0; t < 1000; ++t) {
    int n = 3 + static_cast<int>(rng() % 20);
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    bool has_pos = false;
    for (int i = 0; i < n; ++i) {
      scores[i] = std::round(u(rng) * 4.0) / 4.0;  // force ties
      labels[i] = rng() % 2;
      has_pos |= labels[i] == 1;
    }
    if (!has_pos) labels[0] = 1;
    double prev = 2.0;
    for (double p : {0.1, 0.3, 0.5, 0.7, 0.9, 1.0}) {
      double cur = recall_at_precision(scores, labels, p);
      if (cur > prev + 1e-15) mono = false;
      prev = cur;
    }
  }
  c.require(mono, "recall not monotone nonincreasing in p");
  return c;
}

// --- criterion 10: bit-identical reproducibility -----------------------------

std::string pipeline_report(const std::string& out_dir) {
  GeneratorConfig gc;
  gc.n_records = 240;
  gc.n_brands = 12;
  gc.homonym_rate = 0.5;
  gc.seed = 99;
  gc.country = "R";
  auto brands = gen_brand_universe(gc);
  auto records = generate_catalog(gc, brands);
  Lexicon lex = gc.lexicon;
  auto ds = build_training_set(records, TeacherConfig::noiseless_config(2), lex);

  ModelConfig mc;
  mc.d_model = 16;
  mc.text_layers = 1;
  mc.cross_encoder_layers = 1;
  mc.decoder_layers = 1;
  mc.conv_channels = {4, 8, 8};
  mc.pos_dim = 4;
  mc.seed = 4;
  std::vector<Caption> caps;
  for (const auto& item : ds.items) caps.push_back(item.caption);
  CpgModel model(mc, Vocab::build(caps));
  TrainConfig tc;
  tc.epochs = 2;
  tc.eval_frac = 0.0;
  tc.seed = 4;
  train(model, records, ds, tc, out_dir);

  RandomProjEmbedder embedder(5);
  CompareConfig cc;
  cc.pairs.n_positives = 80;
  cc.pairs.seed = 6;
  auto report = compare_feature_sets(records, brands, &model, &embedder, lex, cc);
  std::string json = report.to_json();
  write_text_file(out_dir + "/report.json", json);
  return json;
}

Check criterion10(SharedState& st) {
  Check c;
  auto t0 = Clock::now();
  std::string r1 = pipeline_report(st.out_dir + "/c10a");
  std::string r2 = pipeline_report(st.out_dir + "/c10b");
  c.require(!r1.empty(), "empty report");
  c.require(r1 == r2, "reports differ between runs");
  c.note(fmt(seconds_since(t0)) + "s");
  return c;
}

}  // namespace

int main() {
  SharedState st;
  st.out_dir = (fs::temp_directory_path() / "cpg_acceptance").string();
  fs::create_directories(st.out_dir);
  build_catalogs(st);

  struct Entry {
    const char* name;
    std::function<Check()> fn;
  };
  std::vector<Entry> entries = {
      {"gradient correctness", [&] { return criterion1(); }},
      {"hungarian exactness", [&] { return criterion2(); }},
      {"loss oracle equivalence", [&] { return criterion3(); }},
      {"giou properties", [&] { return criterion4(); }},
      {"training sanity", [&] { return criterion5(st); }},
      {"pseudo-label filter soundness", [&] { return criterion6(st); }},
      {"feature-layer invariants", [&] { return criterion7(); }},
      {"downstream directional reproduction", [&] { return criterion8(st); }},
      {"recall_at_precision unit truth", [&] { return criterion9(); }},
      {"reproducibility", [&] { return criterion10(st); }},
  };

  int failures = 0;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    Check c;
    try {
      c = entries[i].fn();
    } catch (const std::exception& e) {
      c.ok = false;
      c.detail = std::string("exception: ") + e.what();
    }
    std::printf("CRITERION %zu (%s): %s%s%s\n", i + 1, entries[i].name,
                c.ok ? "PASS" : "FAIL", c.detail.empty() ? "" : " - ",
                c.detail.c_str());
    std::fflush(stdout);
    if (!c.ok) ++failures;
  }
  return failures == 0 ? 0 : 1;
}
