#pragma once

#include <map>

#include "afa/data.hpp"
#include "afa/encoder.hpp"
#include "afa/metrics.hpp"
#include "afa/surgery.hpp"

namespace afa {

struct TrainConfig {
  double peak_lr = 4e-4;
  int warmup_steps = 1000;
  int total_steps = 0;
  int micro_batch_size = 8;
  int grad_accum_steps = 4;
  double weight_decay = 0.01;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  uint64_t seed = 42;
  double mask_rate = 0.15;
  int max_seq_len = 512;
  double grad_clip = 0;  // 0 disables clipping

  void validate() const {
    if (total_steps < 1) throw data_error("TrainConfig: total_steps must be positive");
    if (warmup_steps < 0 || warmup_steps > total_steps)
      throw data_error("TrainConfig: warmup_steps must lie in [0, total_steps]");
    if (micro_batch_size < 1 || grad_accum_steps < 1)
      throw data_error("TrainConfig: batch sizes must be positive");
    if (peak_lr <= 0) throw data_error("TrainConfig: peak_lr must be positive");
    if (mask_rate < 0 || mask_rate >= 1) throw data_error("TrainConfig: mask_rate outside [0,1)");
    if (max_seq_len < 3) throw data_error("TrainConfig: max_seq_len too small");
    if (adam_beta1 < 0 || adam_beta1 >= 1 || adam_beta2 < 0 || adam_beta2 >= 1 || adam_eps <= 0)
      throw data_error("TrainConfig: invalid Adam parameters");
    if (weight_decay < 0 || grad_clip < 0)
      throw data_error("TrainConfig: negative weight_decay or grad_clip");
  }
};

// Linear warmup from zero to peak_lr at warmup_steps, then linear decay to
// zero at total_steps. Both branches give peak_lr at the boundary.
inline double lr_at(long step, const TrainConfig& cfg) {
  if (step < 0 || step > cfg.total_steps)
    throw usage_error(strf("lr_at: step %ld outside [0, %d]", step, cfg.total_steps));
  if (step <= cfg.warmup_steps) {
    if (cfg.warmup_steps == 0) return cfg.peak_lr;
    return cfg.peak_lr * static_cast<double>(step) / cfg.warmup_steps;
  }
  return cfg.peak_lr * static_cast<double>(cfg.total_steps - step) /
         static_cast<double>(cfg.total_steps - cfg.warmup_steps);
}

template <class S>
using GradMap = std::map<std::string, Mat<S>>;

// First/second moment tensors for the trainable parameters only.
template <class S>
struct AdamwState {
  std::map<std::string, std::pair<Mat<S>, Mat<S>>> moments;
  long step = 0;
};

// Decoupled AdamW with bias correction. Weight decay applies only to
// trainable, non-bias, non-layernorm tensors. Parameters whose trainable
// flag is false are never touched.
template <class S>
void adamw_step(Checkpoint<S>& model, const GradMap<S>& grads, AdamwState<S>& state, double lr,
                const TrainConfig& cfg) {
  ++state.step;
  const double b1 = cfg.adam_beta1;
  const double b2 = cfg.adam_beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (auto& e : model.tensors()) {
    if (!e.trainable) continue;
    auto git = grads.find(e.name);
    if (git == grads.end()) throw error("adamw_step: missing gradient for " + e.name);
    const Mat<S>& g = git->second;
    if (!g.allFinite())
      throw numeric_error("adamw_step: non-finite gradient for " + e.name);
    auto [mit, inserted] = state.moments.try_emplace(
        e.name, Mat<S>::Zero(g.rows(), g.cols()), Mat<S>::Zero(g.rows(), g.cols()));
    Mat<S>& m = mit->second.first;
    Mat<S>& v = mit->second.second;
    m = static_cast<S>(b1) * m + static_cast<S>(1 - b1) * g;
    v = static_cast<S>(b2) * v + static_cast<S>(1 - b2) * g.cwiseProduct(g);
    Mat<S> update = ((m / static_cast<S>(bc1)).array() /
                     ((v / static_cast<S>(bc2)).array().sqrt() + static_cast<S>(cfg.adam_eps)))
                        .matrix();
    if (cfg.weight_decay > 0 && !is_decay_exempt(e.name))
      update += static_cast<S>(cfg.weight_decay) * e.data;
    e.data -= static_cast<S>(lr) * update;
  }
}

// MLM loss for one collated batch on an already-bound model: mean negative
// log-likelihood over every labeled position in the batch. Padded positions
// are stripped rather than masked (equivalent for post-LN encoders because
// padding sits at the tail and nothing attends to it).
template <class S>
struct BatchLoss {
  Var<S> mean_loss;
  long labeled = 0;
};

template <class S>
BatchLoss<S> build_mlm_loss(const BoundModel<S>& model, const CollatedBatch& batch,
                            bool train_mode, Rng* dropout_rng) {
  GradTape<S>& tape = model.tape();
  Var<S> total;
  long labeled = 0;
  for (Index r = 0; r < batch.rows(); ++r) {
    const int len = batch.true_length(r);
    if (len == 0) continue;
    std::vector<int> ids(static_cast<size_t>(len));
    for (int j = 0; j < len; ++j) ids[static_cast<size_t>(j)] = batch.input_ids(r, j);
    std::vector<int> positions;
    std::vector<int> labels;
    for (int j = 0; j < len; ++j) {
      if (batch.labels(r, j) != kIgnoreIndex) {
        positions.push_back(j);
        labels.push_back(batch.labels(r, j));
      }
    }
    if (positions.empty()) continue;
    Var<S> hidden = encoder_forward(model, ids, nullptr, train_mode, dropout_rng);
    Var<S> logits = mlm_logits_rows(model, hidden, positions);
    Var<S> nll = cross_entropy_masked_sum(logits, labels, kIgnoreIndex);
    total = labeled == 0 ? nll : add(total, nll);
    labeled += static_cast<long>(labels.size());
  }
  if (labeled == 0) throw error("build_mlm_loss: batch has no labeled positions");
  return BatchLoss<S>{scale(total, static_cast<S>(1.0 / static_cast<double>(labeled))), labeled};
}

// One optimizer update from grad_accum_steps micro-batches: per-micro-batch
// gradients are averaged before the update; the returned loss is the mean of
// the micro-batch losses.
template <class S>
double train_step(Checkpoint<S>& model, const std::vector<CollatedBatch>& micro_batches,
                  AdamwState<S>& state, const TrainConfig& cfg, long step_index,
                  Rng* dropout_rng) {
  if (micro_batches.empty()) throw usage_error("train_step: empty batch group");
  GradMap<S> grads;
  double loss_sum = 0;
  for (const auto& mb : micro_batches) {
    GradTape<S> tape;
    BoundModel<S> bound(tape, model);
    BatchLoss<S> loss = build_mlm_loss(bound, mb, true, dropout_rng);
    const double loss_value = static_cast<double>(loss.mean_loss.value()(0, 0));
    if (!std::isfinite(loss_value))
      throw numeric_error(strf("train_step: non-finite loss at step %ld", step_index));
    loss_sum += loss_value;
    tape.backward(loss.mean_loss);
    for (const auto& e : model.tensors()) {
      if (!e.trainable) continue;
      Mat<S> g = tape.grad_of(bound.leaf(e.name));
      auto it = grads.find(e.name);
      if (it == grads.end())
        grads.emplace(e.name, std::move(g));
      else
        it->second += g;
    }
  }
  const S inv = static_cast<S>(1.0 / static_cast<double>(micro_batches.size()));
  for (auto& [name, g] : grads) g *= inv;
  if (cfg.grad_clip > 0) {
    double sq = 0;
    for (const auto& [name, g] : grads) sq += static_cast<double>(g.squaredNorm());
    const double norm = std::sqrt(sq);
    if (norm > cfg.grad_clip) {
      const S f = static_cast<S>(cfg.grad_clip / norm);
      for (auto& [name, g] : grads) g *= f;
    }
  }
  adamw_step(model, grads, state, lr_at(step_index, cfg), cfg);
  return loss_sum / static_cast<double>(micro_batches.size());
}

namespace detail {

inline std::string train_config_hash(const TrainConfig& cfg) {
  const std::string repr = strf(
      "lr=%.17g;warmup=%d;total=%d;micro=%d;accum=%d;wd=%.17g;b1=%.17g;b2=%.17g;eps=%.17g;"
      "seed=%llu;mask=%.17g;len=%d;clip=%.17g",
      cfg.peak_lr, cfg.warmup_steps, cfg.total_steps, cfg.micro_batch_size, cfg.grad_accum_steps,
      cfg.weight_decay, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps,
      static_cast<unsigned long long>(cfg.seed), cfg.mask_rate, cfg.max_seq_len, cfg.grad_clip);
  return Sha256::hex(repr.data(), repr.size()).substr(0, 16);
}

}  // namespace detail

// Full MLM pretraining run. Sentences are packed to the effective max length,
// the pack order is reshuffled every epoch, and each micro-batch is collated
// with a seed derived from (cfg.seed, micro-batch counter), so the run is a
// pure function of (checkpoint, corpus, config).
template <class S>
std::pair<Checkpoint<S>, MetricsLog> run_pretraining(const Checkpoint<S>& start,
                                                     Technique technique,
                                                     const std::vector<AnnotatedSequence>& corpus,
                                                     const TrainConfig& cfg, const Vocab& vocab) {
  cfg.validate();
  start.validate_schema();
  const auto mask = make_mask(start.config, start.lora, technique);
  long trainable = 0;
  for (const auto& e : start.tensors()) {
    if (e.trainable != mask.at(e.name))
      throw usage_error(strf("run_pretraining: trainability of %s inconsistent with %s",
                             e.name.c_str(), to_string(technique)));
    if (e.trainable) ++trainable;
  }
  if (trainable == 0)
    throw usage_error(strf("run_pretraining: nothing to train under %s", to_string(technique)));
  if (corpus.empty()) throw usage_error("run_pretraining: empty corpus");

  const int max_len = std::min(cfg.max_seq_len, start.config.max_seq_len);
  const std::vector<AnnotatedSequence> packs = group_sentences(corpus, max_len, vocab);
  const size_t n_packs = packs.size();

  Checkpoint<S> model = start;
  AdamwState<S> state;
  MetricsLog log;
  log.technique = to_string(technique);
  log.config_hash = detail::train_config_hash(cfg);
  log.seed = cfg.seed;

  std::vector<size_t> order(n_packs);
  size_t cursor = n_packs;  // forces a shuffle before the first batch
  long epoch = 0;
  uint64_t micro_counter = 0;

  auto next_micro_batch = [&]() {
    std::vector<AnnotatedSequence> chosen;
    chosen.reserve(static_cast<size_t>(cfg.micro_batch_size));
    for (int i = 0; i < cfg.micro_batch_size; ++i) {
      if (cursor >= n_packs) {
        for (size_t j = 0; j < n_packs; ++j) order[j] = j;
        Rng shuffle_rng(mix_seed(cfg.seed, 0xE60C, static_cast<uint64_t>(epoch)));
        for (size_t j = n_packs; j > 1; --j)
          std::swap(order[j - 1], order[static_cast<size_t>(shuffle_rng.uniform_int(
                                      static_cast<int>(j)))]);
        cursor = 0;
        ++epoch;
      }
      chosen.push_back(packs[order[cursor++]]);
    }
    return wwm_collate(chosen, cfg.mask_rate, mix_seed(cfg.seed, 0xC011, micro_counter++), vocab);
  };

  for (long step = 1; step <= cfg.total_steps; ++step) {
    std::vector<CollatedBatch> group;
    group.reserve(static_cast<size_t>(cfg.grad_accum_steps));
    for (int a = 0; a < cfg.grad_accum_steps; ++a) group.push_back(next_micro_batch());
    Rng dropout_rng(mix_seed(cfg.seed, 0xD409, static_cast<uint64_t>(step)));
    const double loss = train_step(model, group, state, cfg, step, &dropout_rng);
    log.append(step, lr_at(step, cfg), loss);
  }
  model.provenance = to_string(technique);
  return {std::move(model), std::move(log)};
}

}  // namespace afa
