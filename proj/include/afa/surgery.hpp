#pragma once

#include <map>

#include "afa/checkpoint.hpp"

namespace afa {

enum class Technique { af_adapter, fine_tuning, lora };

inline const char* to_string(Technique t) {
  switch (t) {
    case Technique::af_adapter: return "af_adapter";
    case Technique::fine_tuning: return "fine_tuning";
    case Technique::lora: return "lora";
  }
  return "?";
}

inline Technique technique_from_string(const std::string& s) {
  if (s == "af_adapter") return Technique::af_adapter;
  if (s == "fine_tuning") return Technique::fine_tuning;
  if (s == "lora") return Technique::lora;
  throw usage_error("unknown technique: " + s);
}

enum class InitPolicy { zero_output, full_random };

inline InitPolicy init_policy_from_string(const std::string& s) {
  if (s == "zero_output") return InitPolicy::zero_output;
  if (s == "full_random") return InitPolicy::full_random;
  throw usage_error("unknown init policy: " + s);
}

// Per-parameter trainability under a technique. af_adapter trains exactly the
// extension tensors; fine_tuning trains everything (and only applies to the
// unextended base model, matching the baseline it stands for); lora trains
// only the low-rank factors.
inline std::map<std::string, bool> make_mask(const ModelConfig& cfg, const LoraSpec& lora,
                                             Technique technique) {
  switch (technique) {
    case Technique::fine_tuning:
      if (cfg.extended() || lora.active())
        throw usage_error("fine_tuning requires an unextended base checkpoint");
      break;
    case Technique::lora:
      if (!lora.active()) throw usage_error("lora mask requires an attached lora checkpoint");
      break;
    case Technique::af_adapter:
      if (lora.active()) throw usage_error("af_adapter mask incompatible with lora tensors");
      break;
  }
  std::map<std::string, bool> mask;
  for (const auto& spec : model_schema(cfg, lora)) {
    bool t = false;
    switch (technique) {
      case Technique::af_adapter: t = is_extension_param(spec.name); break;
      case Technique::fine_tuning: t = true; break;
      case Technique::lora: t = is_lora_param(spec.name); break;
    }
    mask[spec.name] = t;
  }
  return mask;
}

template <class S>
std::map<std::string, bool> make_mask(const Checkpoint<S>& ckpt, Technique technique) {
  return make_mask(ckpt.config, ckpt.lora, technique);
}

template <class S>
void apply_mask(Checkpoint<S>& ckpt, Technique technique) {
  const auto mask = make_mask(ckpt.config, ckpt.lora, technique);
  for (auto& e : ckpt.tensors()) e.trainable = mask.at(e.name);
}

struct ParamCount {
  long long total = 0;
  long long trainable = 0;
  double ratio = 0;
};

// Counts from the schema alone; never allocates weights, so it works for
// full-scale configurations in microseconds.
inline ParamCount count_params(const ModelConfig& cfg, const LoraSpec& lora,
                               Technique technique) {
  const auto mask = make_mask(cfg, lora, technique);
  ParamCount c;
  for (const auto& spec : model_schema(cfg, lora)) {
    const long long n = static_cast<long long>(spec.rows) * spec.cols;
    c.total += n;
    if (mask.at(spec.name)) c.trainable += n;
  }
  c.ratio = c.total > 0 ? static_cast<double>(c.trainable) / static_cast<double>(c.total) : 0;
  return c;
}

template <class S>
ParamCount count_params(const Checkpoint<S>& ckpt) {
  ParamCount c;
  for (const auto& e : ckpt.tensors()) {
    const long long n = static_cast<long long>(e.data.rows()) * e.data.cols();
    c.total += n;
    if (e.trainable) c.trainable += n;
  }
  c.ratio = c.total > 0 ? static_cast<double>(c.trainable) / static_cast<double>(c.total) : 0;
  return c;
}

// Grows a base checkpoint by add_heads attention heads and add_ffn FFN hidden
// units per layer. Base tensors are copied bit-exactly. zero_output zeroes
// the extension output projections (W'_O, W'_2, b'_2) so the extended model
// computes exactly the base function at the start of continual pretraining;
// the remaining extension tensors are drawn N(0, 0.02^2). full_random draws
// every extension weight normally and zeroes the extension biases.
template <class S>
Checkpoint<S> extend_checkpoint(const Checkpoint<S>& base, int add_heads, int add_ffn,
                                InitPolicy policy, uint64_t seed) {
  if (add_heads < 0 || add_ffn < 0)
    throw usage_error("extend_checkpoint: extension sizes must be non-negative");
  if (base.config.extended()) throw usage_error("extend_checkpoint: checkpoint already extended");
  if (base.lora.active())
    throw usage_error("extend_checkpoint: cannot extend a lora-attached checkpoint");
  base.validate_schema();

  ModelConfig cfg = base.config;
  cfg.ext_heads = add_heads;
  cfg.ext_ffn = add_ffn;
  cfg.validate();

  Checkpoint<S> out;
  out.config = cfg;
  out.provenance = "extended";
  Rng rng(seed);
  const auto mask = make_mask(cfg, LoraSpec{}, Technique::af_adapter);
  for (const auto& spec : model_schema(cfg)) {
    Mat<S> m;
    if (base.has(spec.name)) {
      m = base.at(spec.name);
    } else {
      const bool output_side = spec.name.find(".out.ext_") != std::string::npos;
      const bool bias = spec.name.find("ext_bias") != std::string::npos;
      const bool zero = policy == InitPolicy::zero_output ? output_side : bias;
      m = zero ? Mat<S>::Zero(spec.rows, spec.cols)
               : normal_matrix<S>(rng, spec.rows, spec.cols, 0.02);
    }
    out.add(spec.name, std::move(m), mask.at(spec.name));
  }
  return out;
}

// Attaches low-rank factors A (in x r, N(0, 0.02^2)) and B (r x out, zero) to
// the target projection matrices; B = 0 makes the attachment function
// preserving. The effective weight W + (alpha/r) A B is folded in when the
// model is bound to a tape.
template <class S>
Checkpoint<S> lora_attach(const Checkpoint<S>& base, int rank, double alpha,
                          uint32_t targets = kLoraQuery | kLoraValue, uint64_t seed = 0) {
  if (rank < 1) throw usage_error("lora_attach: rank must be at least 1");
  if (targets == 0) throw usage_error("lora_attach: no target matrices selected");
  if (base.lora.active()) throw usage_error("lora_attach: checkpoint already has lora tensors");
  if (base.config.extended())
    throw usage_error("lora_attach: baseline attaches to the unextended model");
  base.validate_schema();
  const Index min_dim =
      std::min<Index>(base.config.d_model,
                      std::min<Index>(Index(base.config.heads) * base.config.d_k,
                                      Index(base.config.heads) * base.config.d_v));
  if (rank > min_dim)
    throw usage_error(
        strf("lora_attach: rank %d exceeds the smallest target dimension %ld", rank,
             long(min_dim)));

  LoraSpec lora;
  lora.rank = rank;
  lora.alpha = alpha;
  lora.targets = targets;

  Checkpoint<S> out;
  out.config = base.config;
  out.lora = lora;
  out.provenance = "lora";
  Rng rng(seed);
  const auto mask = make_mask(out.config, lora, Technique::lora);
  for (const auto& spec : model_schema(out.config, lora)) {
    Mat<S> m;
    if (base.has(spec.name)) {
      m = base.at(spec.name);
    } else if (spec.name.find(".lora_a") != std::string::npos) {
      m = normal_matrix<S>(rng, spec.rows, spec.cols, 0.02);
    } else {
      m = Mat<S>::Zero(spec.rows, spec.cols);
    }
    out.add(spec.name, std::move(m), mask.at(spec.name));
  }
  return out;
}

}  // namespace afa
