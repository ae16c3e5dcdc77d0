#pragma once

#include <fstream>
#include <set>

#include "afa/harness.hpp"

#include <json.hpp>

namespace afa {

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& section, const char* name,
                                const std::set<std::string>& known) {
  for (auto it = section.begin(); it != section.end(); ++it)
    if (!known.count(it.key()))
      throw data_error(strf("config: unknown key '%s' in section '%s'", it.key().c_str(), name));
}

}  // namespace detail

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  detail::reject_unknown_keys(j, "model",
                              {"n_layers", "d_model", "heads", "ext_heads", "d_ff", "ext_ffn",
                               "vocab_size", "max_seq_len", "ln_eps", "dropout_p"});
  ModelConfig d;
  const int heads = j.value("heads", d.heads);
  const int d_model = j.value("d_model", d.d_model);
  if (d_model % heads != 0)
    throw data_error("config: heads must divide d_model");
  ModelConfig c = ModelConfig::make(
      j.value("n_layers", d.n_layers), d_model, heads, j.value("ext_heads", d.ext_heads),
      j.value("d_ff", d.d_ff), j.value("ext_ffn", d.ext_ffn), j.value("vocab_size", d.vocab_size),
      j.value("max_seq_len", d.max_seq_len));
  c.ln_eps = j.value("ln_eps", d.ln_eps);
  c.dropout_p = j.value("dropout_p", d.dropout_p);
  c.validate();
  return c;
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  detail::reject_unknown_keys(
      j, "train",
      {"peak_lr", "warmup_steps", "total_steps", "micro_batch_size", "grad_accum_steps",
       "weight_decay", "adam_beta1", "adam_beta2", "adam_eps", "seed", "mask_rate", "max_seq_len",
       "grad_clip"});
  TrainConfig c;
  c.peak_lr = j.value("peak_lr", c.peak_lr);
  c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
  c.total_steps = j.value("total_steps", c.total_steps);
  c.micro_batch_size = j.value("micro_batch_size", c.micro_batch_size);
  c.grad_accum_steps = j.value("grad_accum_steps", c.grad_accum_steps);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
  c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
  c.adam_eps = j.value("adam_eps", c.adam_eps);
  c.seed = j.value("seed", c.seed);
  c.mask_rate = j.value("mask_rate", c.mask_rate);
  c.max_seq_len = j.value("max_seq_len", c.max_seq_len);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
  c.validate();
  return c;
}

inline LoraSpec lora_spec_from_json(const nlohmann::json& j) {
  detail::reject_unknown_keys(j, "lora", {"rank", "alpha", "targets"});
  LoraSpec s;
  s.rank = j.value("rank", 8);
  s.alpha = j.value("alpha", 16.0);
  if (j.contains("targets")) {
    s.targets = 0;
    for (const auto& t : j.at("targets")) {
      const std::string name = t.get<std::string>();
      if (name == "query") s.targets |= kLoraQuery;
      else if (name == "key") s.targets |= kLoraKey;
      else if (name == "value") s.targets |= kLoraValue;
      else if (name == "output") s.targets |= kLoraOutput;
      else throw data_error("config: unknown lora target '" + name + "'");
    }
  }
  return s;
}

inline CompareConfig compare_config_from_json(const nlohmann::json& root) {
  CompareConfig c;
  if (root.contains("train")) c.train = train_config_from_json(root.at("train"));
  if (root.contains("lora")) {
    const LoraSpec s = lora_spec_from_json(root.at("lora"));
    c.lora_rank = s.rank;
    c.lora_alpha = s.alpha;
  }
  if (!root.contains("compare")) return c;
  const nlohmann::json& j = root.at("compare");
  detail::reject_unknown_keys(j, "compare",
                              {"techniques", "seeds", "ext_heads", "ext_ffn", "init",
                               "eval_mask_rate", "eval_seed", "eval_sequences",
                               "domain_eval_sequences", "parallel"});
  if (j.contains("techniques")) {
    c.techniques.clear();
    for (const auto& t : j.at("techniques"))
      c.techniques.push_back(technique_from_string(t.get<std::string>()));
  }
  if (j.contains("seeds")) {
    c.seeds.clear();
    for (const auto& s : j.at("seeds")) c.seeds.push_back(s.get<uint64_t>());
  }
  c.ext_heads = j.value("ext_heads", c.ext_heads);
  c.ext_ffn = j.value("ext_ffn", c.ext_ffn);
  if (j.contains("init")) c.init = init_policy_from_string(j.at("init").get<std::string>());
  c.eval.mask_rate = j.value("eval_mask_rate", c.eval.mask_rate);
  c.eval.seed = j.value("eval_seed", c.eval.seed);
  c.eval.max_sequences = j.value("eval_sequences", c.eval.max_sequences);
  c.domain_eval_sequences = j.value("domain_eval_sequences", c.domain_eval_sequences);
  c.parallel = j.value("parallel", c.parallel);
  return c;
}

inline nlohmann::json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw data_error("config: cannot open: " + path);
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw data_error("config: invalid JSON in " + path);
  return j;
}

}  // namespace afa
