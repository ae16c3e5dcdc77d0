#pragma once

#include <numeric>
#include <string>
#include <type_traits>
#include <vector>

#include "afa/ops.hpp"

namespace afa {

// Architectural hyperparameters. `heads`/`d_ff` describe the inherited base
// width; `ext_heads`/`ext_ffn` the trainable width extension (both may be 0,
// in which case the model degenerates exactly to the base architecture).
struct ModelConfig {
  int n_layers = 2;
  int d_model = 64;
  int heads = 4;
  int ext_heads = 0;
  int d_k = 16;
  int d_v = 16;
  int d_ff = 128;
  int ext_ffn = 0;
  int vocab_size = 201;
  int max_seq_len = 64;
  double ln_eps = 1e-12;
  double dropout_p = 0.1;

  void validate() const {
    if (n_layers < 1 || d_model < 1 || heads < 1 || d_ff < 1 || vocab_size < 6 ||
        max_seq_len < 2)
      throw data_error("ModelConfig: core dimensions must be positive");
    if (ext_heads < 0 || ext_ffn < 0)
      throw data_error("ModelConfig: extension sizes must be non-negative");
    if (d_model % heads != 0)
      throw data_error(strf("ModelConfig: heads (%d) must divide d_model (%d)", heads, d_model));
    if (d_k != d_model / heads || d_v != d_model / heads)
      throw data_error("ModelConfig: d_k and d_v must equal d_model / heads");
    if (ln_eps <= 0) throw data_error("ModelConfig: ln_eps must be positive");
    if (dropout_p < 0 || dropout_p >= 1) throw data_error("ModelConfig: dropout_p outside [0,1)");
  }

  bool extended() const { return ext_heads > 0 || ext_ffn > 0; }

  static ModelConfig make(int layers, int d_model, int heads, int ext_heads, int d_ff,
                          int ext_ffn, int vocab, int max_seq) {
    ModelConfig c;
    c.n_layers = layers;
    c.d_model = d_model;
    c.heads = heads;
    c.ext_heads = ext_heads;
    c.d_k = d_model / heads;
    c.d_v = d_model / heads;
    c.d_ff = d_ff;
    c.ext_ffn = ext_ffn;
    c.vocab_size = vocab;
    c.max_seq_len = max_seq;
    return c;
  }
};

enum LoraTarget : uint32_t {
  kLoraQuery = 1u,
  kLoraKey = 2u,
  kLoraValue = 4u,
  kLoraOutput = 8u,
};

struct LoraSpec {
  int rank = 0;  // 0 means not attached
  double alpha = 0;
  uint32_t targets = kLoraQuery | kLoraValue;

  bool active() const { return rank > 0; }
  bool has(LoraTarget t) const { return (targets & t) != 0; }
};

struct TensorSpec {
  std::string name;
  Index rows = 0;
  Index cols = 0;
};

// Canonical tensor list for a configuration. Checkpoints store exactly these
// tensors in exactly this order; extension tensors exist only when the
// corresponding width is non-zero ("absent", not zero-sized).
inline std::vector<TensorSpec> model_schema(const ModelConfig& cfg, const LoraSpec& lora = {}) {
  cfg.validate();
  std::vector<TensorSpec> s;
  const Index d = cfg.d_model;
  s.push_back({"embeddings.token", cfg.vocab_size, d});
  s.push_back({"embeddings.position", cfg.max_seq_len, d});
  s.push_back({"embeddings.norm.gamma", 1, d});
  s.push_back({"embeddings.norm.beta", 1, d});
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string p = strf("layer%d.", l);
    const Index hk = Index(cfg.heads) * cfg.d_k;
    const Index hv = Index(cfg.heads) * cfg.d_v;
    const Index ik = Index(cfg.ext_heads) * cfg.d_k;
    const Index iv = Index(cfg.ext_heads) * cfg.d_v;
    s.push_back({p + "attn.q.weight", d, hk});
    s.push_back({p + "attn.q.bias", 1, hk});
    s.push_back({p + "attn.k.weight", d, hk});
    s.push_back({p + "attn.k.bias", 1, hk});
    s.push_back({p + "attn.v.weight", d, hv});
    s.push_back({p + "attn.v.bias", 1, hv});
    s.push_back({p + "attn.out.weight", hv, d});
    s.push_back({p + "attn.out.bias", 1, d});
    if (cfg.ext_heads > 0) {
      s.push_back({p + "attn.q.ext_weight", d, ik});
      s.push_back({p + "attn.q.ext_bias", 1, ik});
      s.push_back({p + "attn.k.ext_weight", d, ik});
      s.push_back({p + "attn.k.ext_bias", 1, ik});
      s.push_back({p + "attn.v.ext_weight", d, iv});
      s.push_back({p + "attn.v.ext_bias", 1, iv});
      s.push_back({p + "attn.out.ext_weight", iv, d});  // no extension output bias
    }
    if (lora.active()) {
      const Index r = lora.rank;
      if (lora.has(kLoraQuery)) {
        s.push_back({p + "attn.q.lora_a", d, r});
        s.push_back({p + "attn.q.lora_b", r, hk});
      }
      if (lora.has(kLoraKey)) {
        s.push_back({p + "attn.k.lora_a", d, r});
        s.push_back({p + "attn.k.lora_b", r, hk});
      }
      if (lora.has(kLoraValue)) {
        s.push_back({p + "attn.v.lora_a", d, r});
        s.push_back({p + "attn.v.lora_b", r, hv});
      }
      if (lora.has(kLoraOutput)) {
        s.push_back({p + "attn.out.lora_a", hv, r});
        s.push_back({p + "attn.out.lora_b", r, d});
      }
    }
    s.push_back({p + "attn.norm.gamma", 1, d});
    s.push_back({p + "attn.norm.beta", 1, d});
    s.push_back({p + "ffn.in.weight", d, cfg.d_ff});
    s.push_back({p + "ffn.in.bias", 1, cfg.d_ff});
    if (cfg.ext_ffn > 0) {
      s.push_back({p + "ffn.in.ext_weight", d, cfg.ext_ffn});
      s.push_back({p + "ffn.in.ext_bias", 1, cfg.ext_ffn});
    }
    s.push_back({p + "ffn.out.weight", cfg.d_ff, d});
    s.push_back({p + "ffn.out.bias", 1, d});
    if (cfg.ext_ffn > 0) {
      s.push_back({p + "ffn.out.ext_weight", cfg.ext_ffn, d});
      s.push_back({p + "ffn.out.ext_bias", 1, d});
    }
    s.push_back({p + "ffn.norm.gamma", 1, d});
    s.push_back({p + "ffn.norm.beta", 1, d});
  }
  s.push_back({"mlm.transform.weight", d, d});
  s.push_back({"mlm.transform.bias", 1, d});
  s.push_back({"mlm.norm.gamma", 1, d});
  s.push_back({"mlm.norm.beta", 1, d});
  s.push_back({"mlm.output_bias", 1, cfg.vocab_size});
  return s;
}

inline bool is_extension_param(const std::string& name) {
  return name.find(".ext_") != std::string::npos;
}

inline bool is_lora_param(const std::string& name) {
  return name.find(".lora_") != std::string::npos;
}

// Weight decay skips biases and normalization parameters.
inline bool is_decay_exempt(const std::string& name) {
  auto ends_with = [&](const char* suffix) {
    const std::string s(suffix);
    return name.size() >= s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0;
  };
  return ends_with("bias") || ends_with(".gamma") || ends_with(".beta");
}

// ---------------------------------------------------------------------------
// Forward passes. Weights enter as tape Vars so one code path serves both
// inference and gradient computation.

template <class S>
struct AttnWeights {
  Var<S> q_w, q_b, k_w, k_b, v_w, v_b, out_w, out_b;
  bool has_ext = false;
  Var<S> q_we, q_be, k_we, k_be, v_we, v_be, out_we;
};

template <class S>
struct FfnWeights {
  Var<S> in_w, in_b, out_w, out_b;
  bool has_ext = false;
  Var<S> in_we, in_be, out_we, out_be;
};

template <class S>
struct LayerNormWeights {
  Var<S> gamma, beta;
};

// Per-head softmax probabilities, exposed for inspection in tests.
template <class S>
struct AttnProbes {
  std::vector<Var<S>> head_probs;
};

// Extended multi-head attention: projects with the column-concatenated
// [W : W'] matrices, splits into base + extension heads, and projects the
// concatenated head outputs through the row-concatenated [W_O over W'_O].
template <class S>
Var<S> attention_forward(Var<S> x, const AttnWeights<S>& w,
                         std::type_identity_t<const Mat<S>*> key_bias, const ModelConfig& cfg,
                         Rng* dropout_rng = nullptr, bool train_mode = false,
                         AttnProbes<S>* probes = nullptr) {
  Var<S> q = add_row_bias(matmul(x, w.q_w), w.q_b);
  Var<S> k = add_row_bias(matmul(x, w.k_w), w.k_b);
  Var<S> v = add_row_bias(matmul(x, w.v_w), w.v_b);
  if (w.has_ext) {
    q = concat_cols(q, add_row_bias(matmul(x, w.q_we), w.q_be));
    k = concat_cols(k, add_row_bias(matmul(x, w.k_we), w.k_be));
    v = concat_cols(v, add_row_bias(matmul(x, w.v_we), w.v_be));
  }
  const int total_heads = cfg.heads + (w.has_ext ? cfg.ext_heads : 0);
  const double attn_drop = train_mode ? cfg.dropout_p : 0.0;
  std::vector<Var<S>> heads;
  heads.reserve(static_cast<size_t>(total_heads));
  for (int j = 0; j < total_heads; ++j) {
    Var<S> qj = slice_cols(q, Index(j) * cfg.d_k, cfg.d_k);
    Var<S> kj = slice_cols(k, Index(j) * cfg.d_k, cfg.d_k);
    Var<S> vj = slice_cols(v, Index(j) * cfg.d_v, cfg.d_v);
    Var<S> pj;
    heads.push_back(
        scaled_dot_attention(qj, kj, vj, key_bias, attn_drop, dropout_rng, probes ? &pj : nullptr));
    if (probes) probes->head_probs.push_back(pj);
  }
  Var<S> context = concat_cols_many(heads);
  Var<S> out_w = w.has_ext ? concat_rows(w.out_w, w.out_we) : w.out_w;
  return add_row_bias(matmul(context, out_w), w.out_b);
}

// Extended position-wise FFN: GeLU(x [W1 : W1'] + [b1 : b1']) [W2 over W2']
// + b2 + b2'.
template <class S>
Var<S> ffn_forward(Var<S> x, const FfnWeights<S>& w) {
  Var<S> hidden = add_row_bias(matmul(x, w.in_w), w.in_b);
  if (w.has_ext) hidden = concat_cols(hidden, add_row_bias(matmul(x, w.in_we), w.in_be));
  hidden = gelu(hidden);
  Var<S> out_w = w.has_ext ? concat_rows(w.out_w, w.out_we) : w.out_w;
  Var<S> y = add_row_bias(matmul(hidden, out_w), w.out_b);
  if (w.has_ext) y = add_row_bias(y, w.out_be);
  return y;
}

}  // namespace afa
