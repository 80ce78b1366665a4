#pragma once

#include <map>
#include <string>
#include <vector>

#include "cpg/catalog.hpp"
#include "cpg/tensor.hpp"
#include "cpg/text.hpp"

namespace cpg {

// Closed token vocabulary; id 0 = PAD, id 1 = UNK.
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;

  Vocab();
  explicit Vocab(std::vector<std::string> tokens);  // must start with PAD, UNK
  static Vocab build(const std::vector<Caption>& captions);

  int id(const std::string& token) const;
  int add(const std::string& token);
  int size() const { return static_cast<int>(tokens_.size()); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  std::vector<int> encode(const Caption& caption) const;

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, int> index_;
};

struct ModelConfig {
  int d_model = 32;
  int text_layers = 2;
  int cross_encoder_layers = 2;
  int decoder_layers = 2;
  int n_heads = 4;
  int n_queries = 8;     // N; must cover the max gt regions per image
  int max_tokens = 32;   // M
  int image_size = 64;
  std::vector<int> conv_channels = {8, 16, 32};  // stride-2 stages
  int pos_dim = 8;       // per-axis learned 2D positional embedding width
  int ffn_mult = 4;
  double tau = 0.07;
  double noobj_bias_init = 0.35;  // pre-temperature no-object logit
  std::uint64_t seed = 0;

  int grid_side() const {
    int s = image_size;
    for (std::size_t i = 0; i < conv_channels.size(); ++i) s /= 2;
    return s;
  }
  int grid_cells() const { return grid_side() * grid_side(); }
};

struct TextEncoding {
  Tensor features;  // (M, d_model); pad rows meaningless, masked downstream
  int n_real = 0;
  bool truncated = false;
};

struct CpgOutput {
  Tensor token_features;     // (M, d) shared-latent contextual token features
  Tensor object_reps;        // (N, d) final decoder states, the CPG representations
  Tensor proj_reps;          // (N, d) alignment-head projection of object_reps
  Tensor boxes;              // (N, 4) cx,cy,w,h in (0,1)
  Tensor alignment_logits;   // (N, M+1); last column = no-object
  int n_real_tokens = 0;
};

class CpgModel {
 public:
  CpgModel(ModelConfig cfg, Vocab vocab);

  TextEncoding encode_text(Graph& g, const std::vector<int>& ids) const;
  Tensor encode_image(Graph& g, const Tensor& image) const;  // (G, d)
  CpgOutput forward(Graph& g, const std::vector<int>& ids, const Tensor& image) const;

  // 1 - P(no-object), softmax over real-token columns plus the no-object one.
  static std::vector<double> query_confidence(const CpgOutput& out);

  const ModelConfig& config() const { return cfg_; }
  const Vocab& vocab() const { return vocab_; }
  std::vector<Tensor> parameters() const;
  const std::vector<std::pair<std::string, Tensor>>& named_parameters() const {
    return params_;
  }
  std::int64_t parameter_count() const;
  long truncation_count() const { return truncations_; }

  void save(const std::string& path) const;
  static CpgModel load(const std::string& path);

 private:
  ModelConfig cfg_;
  Vocab vocab_;
  std::vector<std::pair<std::string, Tensor>> params_;
  std::map<std::string, Tensor> by_name_;
  mutable long truncations_ = 0;

  Tensor param(const std::string& name) const;
  void init_params();
  Tensor attention(Graph& g, const Tensor& queries, const Tensor& keys,
                   const std::string& prefix, int mask_from) const;
  Tensor encoder_layer(Graph& g, const Tensor& x, const std::string& prefix,
                       int mask_from) const;
  Tensor ffn_block(Graph& g, const Tensor& x, const std::string& prefix) const;
};

// HxWx3 bytes -> (3,S,S) float tensor in [0,1].
Tensor image_to_tensor(const CatalogRecord& rec);

}  // namespace cpg
