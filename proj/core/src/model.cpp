#include "cpg/model.hpp"

#include <cmath>

#include <json.hpp>

#include "cpg/io.hpp"

namespace cpg {

// ---------------------------------------------------------------------------
// Vocab
// ---------------------------------------------------------------------------

Vocab::Vocab() : Vocab(std::vector<std::string>{"<pad>", "<unk>"}) {}

Vocab::Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.size() < 2 || tokens_[0] != "<pad>" || tokens_[1] != "<unk>")
    throw ValueError("Vocab: token list must start with <pad>, <unk>");
  for (std::size_t i = 0; i < tokens_.size(); ++i)
    index_[tokens_[i]] = static_cast<int>(i);
}

Vocab Vocab::build(const std::vector<Caption>& captions) {
  Vocab v;
  for (const auto& cap : captions)
    for (const auto& t : cap.tokens) v.add(t.surface);
  return v;
}

int Vocab::add(const std::string& token) {
  auto it = index_.find(token);
  if (it != index_.end()) return it->second;
  int id = static_cast<int>(tokens_.size());
  tokens_.push_back(token);
  index_[token] = id;
  return id;
}

int Vocab::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

std::vector<int> Vocab::encode(const Caption& caption) const {
  std::vector<int> ids;
  ids.reserve(caption.tokens.size());
  for (const auto& t : caption.tokens) ids.push_back(id(t.surface));
  return ids;
}

// ---------------------------------------------------------------------------
// CpgModel
// ---------------------------------------------------------------------------

CpgModel::CpgModel(ModelConfig cfg, Vocab vocab)
    : cfg_(std::move(cfg)), vocab_(std::move(vocab)) {
  if (cfg_.d_model % cfg_.n_heads != 0)
    throw ValueError("ModelConfig: d_model must be divisible by n_heads");
  init_params();
}

namespace {
void register_layer_stack(std::vector<std::string>& names, const std::string& stem,
                          int layers, bool with_cross) {
  for (int l = 0; l < layers; ++l) {
    std::string p = stem + std::to_string(l) + ".";
    for (const char* blk : {"self."}) {
      for (const char* w : {"wq", "wk", "wv", "wo"}) names.push_back(p + blk + w);
      for (const char* b : {"bq", "bk", "bv", "bo"}) names.push_back(p + blk + b);
    }
    names.push_back(p + "ln1.g");
    names.push_back(p + "ln1.b");
    if (with_cross) {
      for (const char* w : {"wq", "wk", "wv", "wo"}) names.push_back(p + "cross." + w);
      for (const char* b : {"bq", "bk", "bv", "bo"}) names.push_back(p + "cross." + b);
      names.push_back(p + "ln2.g");
      names.push_back(p + "ln2.b");
    }
    names.push_back(p + "ffn.w1");
    names.push_back(p + "ffn.b1");
    names.push_back(p + "ffn.w2");
    names.push_back(p + "ffn.b2");
    names.push_back(p + "ln3.g");
    names.push_back(p + "ln3.b");
  }
}
}  // namespace

void CpgModel::init_params() {
  std::mt19937_64 rng = derive_rng(cfg_.seed, 0x90de1ull);
  const int d = cfg_.d_model;
  const int ffn = d * cfg_.ffn_mult;

  auto add = [&](const std::string& name, Shape shape, double stddev) {
    Tensor t = stddev == 0.0 ? Tensor::zeros(shape, true)
                             : Tensor::randn(shape, rng, stddev, true);
    params_.emplace_back(name, t);
    by_name_[name] = t;
    return t;
  };
  auto add_ones = [&](const std::string& name, Shape shape) {
    Tensor t = Tensor::full(shape, 1.0, true);
    params_.emplace_back(name, t);
    by_name_[name] = t;
    return t;
  };

  const double ws = 0.08;  // weight init scale
  add("tok_emb", {vocab_.size(), d}, 0.02);
  add("text_pos", {cfg_.max_tokens, d}, 0.02);

  std::vector<std::string> names;
  register_layer_stack(names, "text.", cfg_.text_layers, false);
  register_layer_stack(names, "cross.", cfg_.cross_encoder_layers, false);
  register_layer_stack(names, "dec.", cfg_.decoder_layers, true);
  for (const auto& n : names) {
    bool is_bias = n.find(".b") != std::string::npos && n.find("ffn.w") == std::string::npos;
    bool is_gamma = n.size() > 2 && n.substr(n.size() - 2) == ".g";
    if (is_gamma) {
      add_ones(n, {d});
    } else if (n.find("ffn.w1") != std::string::npos) {
      add(n, {d, ffn}, ws);
    } else if (n.find("ffn.b1") != std::string::npos) {
      add(n, {ffn}, 0.0);
    } else if (n.find("ffn.w2") != std::string::npos) {
      add(n, {ffn, d}, ws);
    } else if (is_bias) {
      add(n, {d}, 0.0);
    } else {
      add(n, {d, d}, ws);
    }
  }

  // conv stages, kernel 3 stride 2 pad 1
  int c_in = 3;
  for (std::size_t s = 0; s < cfg_.conv_channels.size(); ++s) {
    int c_out = cfg_.conv_channels[s];
    add("conv" + std::to_string(s) + ".w", {c_in * 9, c_out}, 0.15);
    add("conv" + std::to_string(s) + ".b", {c_out}, 0.0);
    c_in = c_out;
  }
  add("row_emb", {cfg_.grid_side(), cfg_.pos_dim}, 0.02);
  add("col_emb", {cfg_.grid_side(), cfg_.pos_dim}, 0.02);
  add("img_proj.w", {c_in + 2 * cfg_.pos_dim, d}, ws);
  add("img_proj.b", {d}, 0.0);

  add("text_latent.w", {d, d}, ws);
  add("text_latent.b", {d}, 0.0);
  add("img_latent.w", {d, d}, ws);
  add("img_latent.b", {d}, 0.0);

  add("query_emb", {cfg_.n_queries, d}, 0.05);
  add("final_ln.g", {d}, 0.0);
  by_name_["final_ln.g"].vec().assign(d, 1.0);
  add("final_ln.b", {d}, 0.0);
  add("dec_ln.g", {d}, 0.0);
  by_name_["dec_ln.g"].vec().assign(d, 1.0);
  add("dec_ln.b", {d}, 0.0);

  add("align.w", {d, d}, ws);
  add("align.b", {d}, 0.0);
  Tensor noobj = add("noobj_bias", {1}, 0.0);
  noobj.data()[0] = cfg_.noobj_bias_init;

  add("box.w1", {d, d}, ws);
  add("box.b1", {d}, 0.0);
  add("box.w2", {d, 4}, ws);
  add("box.b2", {4}, 0.0);
}

Tensor CpgModel::param(const std::string& name) const {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) throw ValueError("CpgModel: unknown parameter " + name);
  return it->second;
}

std::vector<Tensor> CpgModel::parameters() const {
  std::vector<Tensor> out;
  for (const auto& [n, t] : params_) out.push_back(t);
  return out;
}

std::int64_t CpgModel::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& [name, t] : params_) n += t.size();
  return n;
}

Tensor CpgModel::attention(Graph& g, const Tensor& queries, const Tensor& keys,
                           const std::string& prefix, int mask_from) const {
  const int d = cfg_.d_model;
  const int dh = d / cfg_.n_heads;
  const int nq = queries.dim(0), nk = keys.dim(0);
  Tensor q = g.add_bias(g.matmul(queries, param(prefix + "wq")), param(prefix + "bq"));
  Tensor k = g.add_bias(g.matmul(keys, param(prefix + "wk")), param(prefix + "bk"));
  Tensor v = g.add_bias(g.matmul(keys, param(prefix + "wv")), param(prefix + "bv"));

  std::vector<std::uint8_t> mask;
  if (mask_from >= 0 && mask_from < nk) {
    mask.assign(std::size_t(nq) * nk, 0);
    for (int i = 0; i < nq; ++i)
      for (int j = mask_from; j < nk; ++j) mask[std::size_t(i) * nk + j] = 1;
  }

  Tensor merged;
  for (int h = 0; h < cfg_.n_heads; ++h) {
    Tensor qh = g.slice(q, 0, nq, h * dh, (h + 1) * dh);
    Tensor kh = g.slice(k, 0, nk, h * dh, (h + 1) * dh);
    Tensor vh = g.slice(v, 0, nk, h * dh, (h + 1) * dh);
    Tensor logits = g.mul_scalar(g.matmul(qh, g.transpose(kh)), 1.0 / std::sqrt(double(dh)));
    if (!mask.empty()) logits = g.masked_fill(logits, mask, -1e30);
    Tensor attn = g.softmax(logits, 1);
    Tensor oh = g.matmul(attn, vh);
    merged = h == 0 ? oh : g.concat(merged, oh, 1);
  }
  return g.add_bias(g.matmul(merged, param(prefix + "wo")), param(prefix + "bo"));
}

Tensor CpgModel::ffn_block(Graph& g, const Tensor& x, const std::string& prefix) const {
  Tensor h = g.gelu(g.add_bias(g.matmul(x, param(prefix + "ffn.w1")),
                               param(prefix + "ffn.b1")));
  return g.add_bias(g.matmul(h, param(prefix + "ffn.w2")), param(prefix + "ffn.b2"));
}

// pre-LN encoder block with optional key-padding mask
Tensor CpgModel::encoder_layer(Graph& g, const Tensor& x, const std::string& prefix,
                               int mask_from) const {
  Tensor n1 = g.layer_norm(x, param(prefix + "ln1.g"), param(prefix + "ln1.b"));
  Tensor x1 = g.add(x, attention(g, n1, n1, prefix + "self.", mask_from));
  Tensor n2 = g.layer_norm(x1, param(prefix + "ln3.g"), param(prefix + "ln3.b"));
  return g.add(x1, ffn_block(g, n2, prefix));
}

TextEncoding CpgModel::encode_text(Graph& g, const std::vector<int>& ids) const {
  TextEncoding enc;
  std::vector<int> padded = ids;
  while (!padded.empty() && padded.back() == Vocab::kPad) padded.pop_back();
  if (static_cast<int>(padded.size()) > cfg_.max_tokens) {
    padded.resize(cfg_.max_tokens);
    enc.truncated = true;
    ++truncations_;
  }
  enc.n_real = static_cast<int>(padded.size());
  padded.resize(cfg_.max_tokens, Vocab::kPad);

  Tensor x = g.add(g.embedding_lookup(param("tok_emb"), padded), param("text_pos"));
  for (int l = 0; l < cfg_.text_layers; ++l)
    x = encoder_layer(g, x, "text." + std::to_string(l) + ".", enc.n_real);
  enc.features = x;
  return enc;
}

Tensor CpgModel::encode_image(Graph& g, const Tensor& image) const {
  if (image.rank() != 3 || image.dim(1) != cfg_.image_size ||
      image.dim(2) != cfg_.image_size)
    throw ShapeError("encode_image: expected (3," + std::to_string(cfg_.image_size) +
                     "," + std::to_string(cfg_.image_size) + "), got " +
                     shape_str(image.shape()));
  Tensor x = image;
  int side = cfg_.image_size;
  for (std::size_t s = 0; s < cfg_.conv_channels.size(); ++s) {
    Tensor cols = g.im2col(x, 3, 2, 1);  // (side/2*side/2, c_in*9)
    Tensor y = g.add_bias(g.matmul(cols, param("conv" + std::to_string(s) + ".w")),
                          param("conv" + std::to_string(s) + ".b"));
    y = g.gelu(y);
    side /= 2;
    // back to (C,H,W) layout for the next im2col
    int c_out = cfg_.conv_channels[s];
    Tensor chw = g.transpose(y);  // (c_out, side*side)
    x = g.reshape(chw, {c_out, side, side});
  }
  const int gs = cfg_.grid_side();
  Tensor grid = g.transpose(g.reshape(x, {cfg_.conv_channels.back(), gs * gs}));
  std::vector<int> row_ids(gs * gs), col_ids(gs * gs);
  for (int r = 0; r < gs; ++r)
    for (int c = 0; c < gs; ++c) {
      row_ids[r * gs + c] = r;
      col_ids[r * gs + c] = c;
    }
  Tensor pos = g.concat(g.embedding_lookup(param("row_emb"), row_ids),
                        g.embedding_lookup(param("col_emb"), col_ids), 1);
  Tensor feats = g.concat(grid, pos, 1);
  return g.add_bias(g.matmul(feats, param("img_proj.w")), param("img_proj.b"));
}

CpgOutput CpgModel::forward(Graph& g, const std::vector<int>& ids,
                            const Tensor& image) const {
  const int d = cfg_.d_model;
  const int M = cfg_.max_tokens;
  const int N = cfg_.n_queries;

  TextEncoding text = encode_text(g, ids);
  Tensor img = encode_image(g, image);

  Tensor text_lat = g.add_bias(g.matmul(text.features, param("text_latent.w")),
                               param("text_latent.b"));
  Tensor img_lat =
      g.add_bias(g.matmul(img, param("img_latent.w")), param("img_latent.b"));

  // joint sequence: [text tokens (padded); image cells]; pads masked as keys
  Tensor joint = g.concat(text_lat, img_lat, 0);
  const int total = joint.dim(0);
  std::vector<std::uint8_t> pad_key_mask;
  if (text.n_real < M) {
    pad_key_mask.assign(std::size_t(total) * total, 0);
    for (int i = 0; i < total; ++i)
      for (int j = text.n_real; j < M; ++j) pad_key_mask[std::size_t(i) * total + j] = 1;
  }

  Tensor mem = joint;
  for (int l = 0; l < cfg_.cross_encoder_layers; ++l) {
    std::string p = "cross." + std::to_string(l) + ".";
    Tensor n1 = g.layer_norm(mem, param(p + "ln1.g"), param(p + "ln1.b"));
    // masked self attention over the joint sequence
    Tensor q = g.add_bias(g.matmul(n1, param(p + "self.wq")), param(p + "self.bq"));
    Tensor k = g.add_bias(g.matmul(n1, param(p + "self.wk")), param(p + "self.bk"));
    Tensor v = g.add_bias(g.matmul(n1, param(p + "self.wv")), param(p + "self.bv"));
    const int dh = d / cfg_.n_heads;
    Tensor merged;
    for (int h = 0; h < cfg_.n_heads; ++h) {
      Tensor qh = g.slice(q, 0, total, h * dh, (h + 1) * dh);
      Tensor kh = g.slice(k, 0, total, h * dh, (h + 1) * dh);
      Tensor vh = g.slice(v, 0, total, h * dh, (h + 1) * dh);
      Tensor logits =
          g.mul_scalar(g.matmul(qh, g.transpose(kh)), 1.0 / std::sqrt(double(dh)));
      if (!pad_key_mask.empty()) logits = g.masked_fill(logits, pad_key_mask, -1e30);
      merged = h == 0 ? g.matmul(g.softmax(logits, 1), vh)
                      : g.concat(merged, g.matmul(g.softmax(logits, 1), vh), 1);
    }
    Tensor attn_out =
        g.add_bias(g.matmul(merged, param(p + "self.wo")), param(p + "self.bo"));
    Tensor x1 = g.add(mem, attn_out);
    Tensor n2 = g.layer_norm(x1, param(p + "ln3.g"), param(p + "ln3.b"));
    mem = g.add(x1, ffn_block(g, n2, p));
  }
  mem = g.layer_norm(mem, param("final_ln.g"), param("final_ln.b"));

  // decoder over learned queries, cross attending to the joint memory
  std::vector<std::uint8_t> dec_key_mask;
  if (text.n_real < M) {
    dec_key_mask.assign(std::size_t(N) * total, 0);
    for (int i = 0; i < N; ++i)
      for (int j = text.n_real; j < M; ++j) dec_key_mask[std::size_t(i) * total + j] = 1;
  }
  Tensor x = param("query_emb");
  for (int l = 0; l < cfg_.decoder_layers; ++l) {
    std::string p = "dec." + std::to_string(l) + ".";
    Tensor n1 = g.layer_norm(x, param(p + "ln1.g"), param(p + "ln1.b"));
    x = g.add(x, attention(g, n1, n1, p + "self.", -1));
    Tensor n2 = g.layer_norm(x, param(p + "ln2.g"), param(p + "ln2.b"));
    {
      const int dh = d / cfg_.n_heads;
      Tensor q = g.add_bias(g.matmul(n2, param(p + "cross.wq")), param(p + "cross.bq"));
      Tensor k = g.add_bias(g.matmul(mem, param(p + "cross.wk")), param(p + "cross.bk"));
      Tensor v = g.add_bias(g.matmul(mem, param(p + "cross.wv")), param(p + "cross.bv"));
      Tensor merged;
      for (int h = 0; h < cfg_.n_heads; ++h) {
        Tensor qh = g.slice(q, 0, N, h * dh, (h + 1) * dh);
        Tensor kh = g.slice(k, 0, total, h * dh, (h + 1) * dh);
        Tensor vh = g.slice(v, 0, total, h * dh, (h + 1) * dh);
        Tensor logits =
            g.mul_scalar(g.matmul(qh, g.transpose(kh)), 1.0 / std::sqrt(double(dh)));
        if (!dec_key_mask.empty()) logits = g.masked_fill(logits, dec_key_mask, -1e30);
        Tensor oh = g.matmul(g.softmax(logits, 1), vh);
        merged = h == 0 ? oh : g.concat(merged, oh, 1);
      }
      x = g.add(x, g.add_bias(g.matmul(merged, param(p + "cross.wo")),
                              param(p + "cross.bo")));
    }
    Tensor n3 = g.layer_norm(x, param(p + "ln3.g"), param(p + "ln3.b"));
    x = g.add(x, ffn_block(g, n3, p));
  }
  Tensor reps = g.layer_norm(x, param("dec_ln.g"), param("dec_ln.b"));

  CpgOutput out;
  out.n_real_tokens = text.n_real;
  out.object_reps = reps;
  out.token_features = g.slice(mem, 0, M, 0, d);
  out.proj_reps = g.add_bias(g.matmul(reps, param("align.w")), param("align.b"));

  Tensor box_h = g.gelu(g.add_bias(g.matmul(reps, param("box.w1")), param("box.b1")));
  out.boxes = g.sigmoid(g.add_bias(g.matmul(box_h, param("box.w2")), param("box.b2")));

  Tensor logits = g.mul_scalar(g.matmul(out.proj_reps, g.transpose(out.token_features)),
                               1.0 / cfg_.tau);
  if (text.n_real < M) {
    std::vector<std::uint8_t> pad_cols(std::size_t(N) * M, 0);
    for (int i = 0; i < N; ++i)
      for (int j = text.n_real; j < M; ++j) pad_cols[std::size_t(i) * M + j] = 1;
    logits = g.masked_fill(logits, pad_cols, -1e4);
  }
  double noobj_logit = param("noobj_bias").data()[0] / cfg_.tau;
  Tensor noobj_col = Tensor::full({N, 1}, noobj_logit);
  out.alignment_logits = g.concat(logits, noobj_col, 1);
  return out;
}

std::vector<double> CpgModel::query_confidence(const CpgOutput& out) {
  const int N = out.alignment_logits.dim(0);
  const int cols = out.alignment_logits.dim(1);
  const int M = cols - 1;
  const int m = out.n_real_tokens;
  std::vector<double> conf(N);
  for (int i = 0; i < N; ++i) {
    const double* row = out.alignment_logits.data() + std::size_t(i) * cols;
    double mx = row[M];
    for (int j = 0; j < m; ++j) mx = std::max(mx, row[j]);
    double z = std::exp(row[M] - mx);
    double z_noobj = z;
    for (int j = 0; j < m; ++j) z += std::exp(row[j] - mx);
    conf[i] = 1.0 - z_noobj / z;
  }
  return conf;
}

// ---------------------------------------------------------------------------
// persistence
// ---------------------------------------------------------------------------

void CpgModel::save(const std::string& path) const {
  nlohmann::json extras;
  extras["config"] = {{"d_model", cfg_.d_model},
                      {"text_layers", cfg_.text_layers},
                      {"cross_encoder_layers", cfg_.cross_encoder_layers},
                      {"decoder_layers", cfg_.decoder_layers},
                      {"n_heads", cfg_.n_heads},
                      {"n_queries", cfg_.n_queries},
                      {"max_tokens", cfg_.max_tokens},
                      {"image_size", cfg_.image_size},
                      {"conv_channels", cfg_.conv_channels},
                      {"pos_dim", cfg_.pos_dim},
                      {"ffn_mult", cfg_.ffn_mult},
                      {"tau", cfg_.tau},
                      {"noobj_bias_init", cfg_.noobj_bias_init},
                      {"seed", cfg_.seed}};
  extras["vocab"] = vocab_.tokens();
  save_checkpoint(path, params_, extras.dump());
}

CpgModel CpgModel::load(const std::string& path) {
  Checkpoint ck = load_checkpoint(path);
  nlohmann::json extras = nlohmann::json::parse(ck.extras_json);
  const auto& jc = extras.at("config");
  ModelConfig cfg;
  cfg.d_model = jc.at("d_model").get<int>();
  cfg.text_layers = jc.at("text_layers").get<int>();
  cfg.cross_encoder_layers = jc.at("cross_encoder_layers").get<int>();
  cfg.decoder_layers = jc.at("decoder_layers").get<int>();
  cfg.n_heads = jc.at("n_heads").get<int>();
  cfg.n_queries = jc.at("n_queries").get<int>();
  cfg.max_tokens = jc.at("max_tokens").get<int>();
  cfg.image_size = jc.at("image_size").get<int>();
  cfg.conv_channels = jc.at("conv_channels").get<std::vector<int>>();
  cfg.pos_dim = jc.at("pos_dim").get<int>();
  cfg.ffn_mult = jc.at("ffn_mult").get<int>();
  cfg.tau = jc.at("tau").get<double>();
  cfg.noobj_bias_init = jc.at("noobj_bias_init").get<double>();
  cfg.seed = jc.at("seed").get<std::uint64_t>();
  CpgModel model(cfg, Vocab(extras.at("vocab").get<std::vector<std::string>>()));
  for (auto& [name, t] : model.params_) {
    Tensor loaded = ck.find(name);
    if (loaded.shape() != t.shape())
      throw ValueError("CpgModel::load: shape mismatch for " + name);
    t.vec() = loaded.vec();
  }
  return model;
}

Tensor image_to_tensor(const CatalogRecord& rec) {
  const int s = rec.image_size;
  std::vector<double> data(std::size_t(3) * s * s);
  for (int y = 0; y < s; ++y)
    for (int x = 0; x < s; ++x)
      for (int c = 0; c < 3; ++c)
        data[(std::size_t(c) * s + y) * s + x] =
            rec.image[(std::size_t(y) * s + x) * 3 + c] / 255.0;
  return Tensor::from_data({3, s, s}, std::move(data));
}

}  // namespace cpg
