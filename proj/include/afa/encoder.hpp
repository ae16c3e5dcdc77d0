#pragma once

#include <map>
#include <numeric>
#include <type_traits>

#include "afa/checkpoint.hpp"

namespace afa {

// Checkpoint weights materialized as tape leaves for one forward/backward
// pass. Gradients are read back per parameter name after backward(). LoRA
// factors, when attached, are folded into effective projection weights here
// (W + alpha/r * A * B) so the rest of the forward code is unaware of them.
template <class S>
class BoundModel {
 public:
  BoundModel(GradTape<S>& tape, const Checkpoint<S>& ckpt) : cfg_(ckpt.config), tape_(&tape) {
    ckpt.config.validate();
    for (const auto& e : ckpt.tensors()) leaves_[e.name] = tape.leaf(e.data);
    const double lora_scale = ckpt.lora.active() ? ckpt.lora.alpha / ckpt.lora.rank : 0.0;
    for (int l = 0; l < cfg_.n_layers; ++l) {
      const std::string p = strf("layer%d.", l);
      AttnWeights<S> aw;
      aw.q_w = proj(p + "attn.q", lora_scale);
      aw.q_b = leaf(p + "attn.q.bias");
      aw.k_w = proj(p + "attn.k", lora_scale);
      aw.k_b = leaf(p + "attn.k.bias");
      aw.v_w = proj(p + "attn.v", lora_scale);
      aw.v_b = leaf(p + "attn.v.bias");
      aw.out_w = proj(p + "attn.out", lora_scale);
      aw.out_b = leaf(p + "attn.out.bias");
      aw.has_ext = cfg_.ext_heads > 0;
      if (aw.has_ext) {
        aw.q_we = leaf(p + "attn.q.ext_weight");
        aw.q_be = leaf(p + "attn.q.ext_bias");
        aw.k_we = leaf(p + "attn.k.ext_weight");
        aw.k_be = leaf(p + "attn.k.ext_bias");
        aw.v_we = leaf(p + "attn.v.ext_weight");
        aw.v_be = leaf(p + "attn.v.ext_bias");
        aw.out_we = leaf(p + "attn.out.ext_weight");
      }
      attn_.push_back(aw);
      attn_norm_.push_back({leaf(p + "attn.norm.gamma"), leaf(p + "attn.norm.beta")});
      FfnWeights<S> fw;
      fw.in_w = leaf(p + "ffn.in.weight");
      fw.in_b = leaf(p + "ffn.in.bias");
      fw.out_w = leaf(p + "ffn.out.weight");
      fw.out_b = leaf(p + "ffn.out.bias");
      fw.has_ext = cfg_.ext_ffn > 0;
      if (fw.has_ext) {
        fw.in_we = leaf(p + "ffn.in.ext_weight");
        fw.in_be = leaf(p + "ffn.in.ext_bias");
        fw.out_we = leaf(p + "ffn.out.ext_weight");
        fw.out_be = leaf(p + "ffn.out.ext_bias");
      }
      ffn_.push_back(fw);
      ffn_norm_.push_back({leaf(p + "ffn.norm.gamma"), leaf(p + "ffn.norm.beta")});
    }
  }

  const ModelConfig& config() const { return cfg_; }
  GradTape<S>& tape() const { return *tape_; }

  Var<S> leaf(const std::string& name) const {
    auto it = leaves_.find(name);
    if (it == leaves_.end()) throw error("BoundModel: unknown parameter " + name);
    return it->second;
  }
  const std::map<std::string, Var<S>>& leaves() const { return leaves_; }

  const AttnWeights<S>& attn(int layer) const { return attn_[static_cast<size_t>(layer)]; }
  const FfnWeights<S>& ffn(int layer) const { return ffn_[static_cast<size_t>(layer)]; }
  const LayerNormWeights<S>& attn_norm(int layer) const {
    return attn_norm_[static_cast<size_t>(layer)];
  }
  const LayerNormWeights<S>& ffn_norm(int layer) const {
    return ffn_norm_[static_cast<size_t>(layer)];
  }

 private:
  Var<S> proj(const std::string& stem, double lora_scale) const {
    Var<S> w = leaf(stem + ".weight");
    auto it = leaves_.find(stem + ".lora_a");
    if (it == leaves_.end()) return w;
    Var<S> delta = matmul(it->second, leaf(stem + ".lora_b"));
    return add(w, scale(delta, static_cast<S>(lora_scale)));
  }

  ModelConfig cfg_;
  GradTape<S>* tape_;
  std::map<std::string, Var<S>> leaves_;
  std::vector<AttnWeights<S>> attn_;
  std::vector<FfnWeights<S>> ffn_;
  std::vector<LayerNormWeights<S>> attn_norm_;
  std::vector<LayerNormWeights<S>> ffn_norm_;
};

// Token + position embeddings, embedding layer norm, then n_layers of
// post-LN blocks: x <- LN(x + Attn(x)); x <- LN(x + FFN(x)).
// attn_key_bias, when given, is a 1 x seq additive mask row (0 for visible
// keys, a large negative value for masked ones).
template <class S>
Var<S> encoder_forward(const BoundModel<S>& m, const std::vector<int>& token_ids,
                       std::type_identity_t<const Mat<S>*> attn_key_bias, bool train_mode,
                       Rng* dropout_rng = nullptr) {
  const ModelConfig& cfg = m.config();
  const int seq = static_cast<int>(token_ids.size());
  if (seq == 0) throw error("encoder_forward: empty sequence");
  if (seq > cfg.max_seq_len)
    throw error(strf("encoder_forward: sequence length %d exceeds max %d", seq, cfg.max_seq_len));
  for (int id : token_ids)
    if (id < 0 || id >= cfg.vocab_size)
      throw error(strf("encoder_forward: token id %d out of range [0, %d)", id, cfg.vocab_size));
  if (attn_key_bias != nullptr &&
      (attn_key_bias->rows() != 1 || attn_key_bias->cols() != seq))
    throw error("encoder_forward: mask/sequence shape mismatch");
  if (train_mode && cfg.dropout_p > 0 && dropout_rng == nullptr)
    throw error("encoder_forward: train mode with dropout requires an RNG");

  std::vector<int> positions(static_cast<size_t>(seq));
  std::iota(positions.begin(), positions.end(), 0);
  Var<S> x = add(gather_rows(m.leaf("embeddings.token"), token_ids),
                 gather_rows(m.leaf("embeddings.position"), positions));
  x = layer_norm(x, m.leaf("embeddings.norm.gamma"), m.leaf("embeddings.norm.beta"), cfg.ln_eps);
  if (train_mode) x = dropout(x, cfg.dropout_p, *dropout_rng, true);

  for (int l = 0; l < cfg.n_layers; ++l) {
    Var<S> a = attention_forward(x, m.attn(l), attn_key_bias, cfg, dropout_rng, train_mode);
    if (train_mode) a = dropout(a, cfg.dropout_p, *dropout_rng, true);
    x = layer_norm(add(x, a), m.attn_norm(l).gamma, m.attn_norm(l).beta, cfg.ln_eps);
    Var<S> f = ffn_forward(x, m.ffn(l));
    if (train_mode) f = dropout(f, cfg.dropout_p, *dropout_rng, true);
    x = layer_norm(add(x, f), m.ffn_norm(l).gamma, m.ffn_norm(l).beta, cfg.ln_eps);
  }
  return x;
}

// MLM head transform: linear + GeLU + layer norm. Kept separate so the
// projection below can run on a row subset.
template <class S>
Var<S> mlm_transform(const BoundModel<S>& m, Var<S> hidden) {
  Var<S> t = gelu(add_row_bias(matmul(hidden, m.leaf("mlm.transform.weight")),
                               m.leaf("mlm.transform.bias")));
  return layer_norm(t, m.leaf("mlm.norm.gamma"), m.leaf("mlm.norm.beta"), m.config().ln_eps);
}

// Tied-embedding projection plus free output bias; logits are seq x vocab.
template <class S>
Var<S> mlm_logits(const BoundModel<S>& m, Var<S> hidden) {
  Var<S> t = mlm_transform(m, hidden);
  return add_row_bias(matmul_nt(t, m.leaf("embeddings.token")), m.leaf("mlm.output_bias"));
}

// Logits restricted to the given positions; identical per-row result to
// mlm_logits, used to keep the loss/eval path proportional to the number of
// labeled positions.
template <class S>
Var<S> mlm_logits_rows(const BoundModel<S>& m, Var<S> hidden, const std::vector<int>& positions) {
  return mlm_logits(m, gather_rows(hidden, positions));
}

}  // namespace afa
