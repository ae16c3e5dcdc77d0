#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <functional>
#include <mutex>
#include <thread>

#include "afa/train.hpp"

namespace afa {

struct EvalConfig {
  double mask_rate = 0.15;
  uint64_t seed = 2024;
  int max_sequences = 0;  // 0 = use every packed sequence
};

// Groups held-out sentences, optionally limits the pack count, and collates
// once with the evaluation seed. Every model scored against the returned
// batch sees byte-identical inputs.
inline CollatedBatch collate_for_eval(const std::vector<AnnotatedSequence>& sentences,
                                      const Vocab& vocab, int max_len, const EvalConfig& cfg) {
  if (sentences.empty()) throw usage_error("collate_for_eval: empty held-out set");
  std::vector<AnnotatedSequence> packs = group_sentences(sentences, max_len, vocab);
  if (cfg.max_sequences > 0 && static_cast<int>(packs.size()) > cfg.max_sequences)
    packs.resize(static_cast<size_t>(cfg.max_sequences));
  return wwm_collate(packs, cfg.mask_rate, cfg.seed, vocab);
}

// Produces logits rows for the requested positions of one sequence.
// Injectable so tests can score synthetic prediction rules on real batches.
template <class S>
using LogitsFn =
    std::function<Mat<S>(const std::vector<int>& ids, const std::vector<int>& positions)>;

template <class S>
LogitsFn<S> model_logits_fn(const Checkpoint<S>& ckpt) {
  return [&ckpt](const std::vector<int>& ids, const std::vector<int>& positions) {
    GradTape<S> tape;
    BoundModel<S> model(tape, ckpt);
    Var<S> hidden = encoder_forward(model, ids, nullptr, false, nullptr);
    return mlm_logits_rows(model, hidden, positions).value();
  };
}

namespace detail {

struct EvalRow {
  std::vector<int> ids;
  std::vector<int> positions;
  std::vector<int> labels;
};

inline std::vector<EvalRow> eval_rows(const CollatedBatch& batch) {
  std::vector<EvalRow> rows;
  for (Index r = 0; r < batch.rows(); ++r) {
    EvalRow row;
    const int len = batch.true_length(r);
    if (len == 0) continue;
    row.ids.resize(static_cast<size_t>(len));
    for (int j = 0; j < len; ++j) row.ids[static_cast<size_t>(j)] = batch.input_ids(r, j);
    for (int j = 0; j < len; ++j) {
      if (batch.labels(r, j) != kIgnoreIndex) {
        row.positions.push_back(j);
        row.labels.push_back(batch.labels(r, j));
      }
    }
    if (!row.positions.empty()) rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace detail

// Fraction of labeled positions whose argmax logit recovers the original
// token.
template <class S>
double masked_accuracy_on(const CollatedBatch& batch, const LogitsFn<S>& logits_fn) {
  long correct = 0;
  long total = 0;
  for (const auto& row : detail::eval_rows(batch)) {
    const Mat<S> logits = logits_fn(row.ids, row.positions);
    if (logits.rows() != static_cast<Index>(row.positions.size()))
      throw error("masked_accuracy: logits row count mismatch");
    for (size_t i = 0; i < row.labels.size(); ++i) {
      Index argmax = 0;
      logits.row(static_cast<Index>(i)).maxCoeff(&argmax);
      if (static_cast<int>(argmax) == row.labels[i]) ++correct;
      ++total;
    }
  }
  if (total == 0) throw error("masked_accuracy: no labeled positions in batch");
  return static_cast<double>(correct) / static_cast<double>(total);
}

template <class S>
double masked_accuracy(const Checkpoint<S>& ckpt, const std::vector<AnnotatedSequence>& heldout,
                       const Vocab& vocab, const EvalConfig& cfg) {
  const CollatedBatch batch =
      collate_for_eval(heldout, vocab, ckpt.config.max_seq_len, cfg);
  return masked_accuracy_on(batch, model_logits_fn(ckpt));
}

// Mean MLM cross-entropy over all labeled positions of the batch.
template <class S>
double eval_mlm_loss(const Checkpoint<S>& ckpt, const CollatedBatch& batch) {
  GradTape<S> tape;
  BoundModel<S> model(tape, ckpt);
  const BatchLoss<S> loss = build_mlm_loss(model, batch, false, nullptr);
  return static_cast<double>(loss.mean_loss.value()(0, 0));
}

// ---------------------------------------------------------------------------
// Forgetting report (general-domain accuracy per model, diff vs base).

struct ForgettingRow {
  std::string tag;
  double accuracy = 0;
  double diff = 0;
};

struct ForgettingReport {
  EvalConfig eval;
  std::string input_digest;  // identical collated inputs across all rows
  std::vector<ForgettingRow> rows;
};

template <class S>
ForgettingReport forgetting_report(
    const Checkpoint<S>& base,
    const std::vector<std::pair<std::string, const Checkpoint<S>*>>& tuned,
    const std::vector<AnnotatedSequence>& heldout, const Vocab& vocab, const EvalConfig& cfg) {
  for (const auto& [tag, ckpt] : tuned) {
    if (ckpt->config.vocab_size != base.config.vocab_size)
      throw data_error("forgetting_report: vocab mismatch for " + tag);
    if (ckpt->config.d_model != base.config.d_model ||
        ckpt->config.n_layers != base.config.n_layers ||
        ckpt->config.heads != base.config.heads ||
        ckpt->config.max_seq_len != base.config.max_seq_len)
      throw data_error("forgetting_report: core dimensions mismatch for " + tag);
  }
  const CollatedBatch batch = collate_for_eval(heldout, vocab, base.config.max_seq_len, cfg);
  ForgettingReport report;
  report.eval = cfg;
  report.input_digest = batch.digest();
  const double base_acc = masked_accuracy_on(batch, model_logits_fn(base));
  report.rows.push_back({"base", base_acc, 0.0});
  for (const auto& [tag, ckpt] : tuned) {
    const double acc = masked_accuracy_on(batch, model_logits_fn(*ckpt));
    report.rows.push_back({tag, acc, acc - base_acc});
  }
  return report;
}

void save_forgetting_csv(const ForgettingReport& report, const std::string& path);
std::string format_forgetting_table(const ForgettingReport& report);

// ---------------------------------------------------------------------------
// Technique comparison (desk-scale analog of the pretraining-technique
// ablation): identical domain corpus and step budget per technique.

struct CompareConfig {
  std::vector<Technique> techniques{Technique::af_adapter, Technique::fine_tuning,
                                    Technique::lora};
  std::vector<uint64_t> seeds{1};
  TrainConfig train;
  int ext_heads = 1;
  int ext_ffn = 32;
  InitPolicy init = InitPolicy::zero_output;
  int lora_rank = 8;
  double lora_alpha = 16.0;
  EvalConfig eval;                 // general-domain held-out evaluation
  int domain_eval_sequences = 256; // sentences reserved from the corpus head
  bool parallel = true;
};

struct CompareRunResult {
  std::string technique;
  uint64_t seed = 0;
  long long trainable = 0;
  double trainable_ratio = 0;
  double domain_loss_before = 0;
  double domain_loss_after = 0;
  double general_acc_before = 0;
  double general_acc_after = 0;
  double wall_seconds = 0;
  bool flagged = false;  // domain-loss reduction diverges >10% from the seed median
  MetricsLog metrics;

  double domain_reduction() const {
    return domain_loss_before > 0 ? (domain_loss_before - domain_loss_after) / domain_loss_before
                                  : 0;
  }
  double accuracy_drop_vs(double base_acc) const { return base_acc - general_acc_after; }
};

struct TechniqueSummary {
  std::string technique;
  double median_accuracy_drop = 0;      // vs the base model
  double median_domain_reduction = 0;   // relative loss reduction
};

struct ComparisonReport {
  double base_general_accuracy = 0;
  std::string general_digest;
  std::string domain_digest;
  std::vector<CompareRunResult> rows;      // canonical (technique, seed) order
  std::vector<TechniqueSummary> summary;
};

void save_comparison_csv(const ComparisonReport& report, const std::string& path);
void save_timings_csv(const ComparisonReport& report, const std::string& path);
std::string format_comparison_table(const ComparisonReport& report);

namespace detail {

inline double median(std::vector<double> v) {
  if (v.empty()) return 0;
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace detail

template <class S>
ComparisonReport compare_techniques(const Checkpoint<S>& base,
                                    const std::vector<AnnotatedSequence>& general_heldout,
                                    const std::vector<AnnotatedSequence>& domain_corpus,
                                    const Vocab& vocab, const CompareConfig& cfg) {
  cfg.train.validate();
  if (cfg.techniques.empty()) throw usage_error("compare: no techniques selected");
  if (cfg.seeds.empty()) throw usage_error("compare: no seeds given");
  if (static_cast<int>(domain_corpus.size()) <= cfg.domain_eval_sequences)
    throw usage_error("compare: domain corpus smaller than the evaluation reserve");

  const int max_len = std::min(cfg.train.max_seq_len, base.config.max_seq_len);
  const std::vector<AnnotatedSequence> domain_eval(
      domain_corpus.begin(), domain_corpus.begin() + cfg.domain_eval_sequences);
  const std::vector<AnnotatedSequence> domain_train(
      domain_corpus.begin() + cfg.domain_eval_sequences, domain_corpus.end());

  const CollatedBatch general_batch = collate_for_eval(general_heldout, vocab, max_len, cfg.eval);
  EvalConfig domain_eval_cfg = cfg.eval;
  domain_eval_cfg.seed = mix_seed(cfg.eval.seed, 0xD0E0);
  const CollatedBatch domain_batch = collate_for_eval(domain_eval, vocab, max_len, domain_eval_cfg);

  ComparisonReport report;
  report.general_digest = general_batch.digest();
  report.domain_digest = domain_batch.digest();
  report.base_general_accuracy = masked_accuracy_on(general_batch, model_logits_fn(base));

  struct Job {
    Technique technique;
    uint64_t seed;
  };
  std::vector<Job> jobs;
  for (Technique t : cfg.techniques)
    for (uint64_t s : cfg.seeds) jobs.push_back({t, s});
  report.rows.resize(jobs.size());

  auto run_job = [&](size_t idx) {
    const Job& job = jobs[idx];
    CompareRunResult& row = report.rows[idx];
    row.technique = to_string(job.technique);
    row.seed = job.seed;
    const auto started = std::chrono::steady_clock::now();

    Checkpoint<S> prepared;
    switch (job.technique) {
      case Technique::af_adapter:
        prepared = extend_checkpoint(base, cfg.ext_heads, cfg.ext_ffn, cfg.init,
                                     mix_seed(job.seed, 0xEA7));
        break;
      case Technique::fine_tuning:
        prepared = base;
        apply_mask(prepared, Technique::fine_tuning);
        break;
      case Technique::lora:
        prepared = lora_attach(base, cfg.lora_rank, cfg.lora_alpha, kLoraQuery | kLoraValue,
                               mix_seed(job.seed, 0x10A));
        break;
    }
    const ParamCount count = count_params(prepared);
    row.trainable = count.trainable;
    row.trainable_ratio = count.ratio;
    row.domain_loss_before = eval_mlm_loss(prepared, domain_batch);
    row.general_acc_before = masked_accuracy_on(general_batch, model_logits_fn(prepared));

    TrainConfig run_cfg = cfg.train;
    run_cfg.seed = mix_seed(cfg.train.seed, job.seed);
    auto [tuned, metrics] = run_pretraining(prepared, job.technique, domain_train, run_cfg, vocab);
    row.metrics = std::move(metrics);
    row.domain_loss_after = eval_mlm_loss(tuned, domain_batch);
    row.general_acc_after = masked_accuracy_on(general_batch, model_logits_fn(tuned));
    row.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  };

  if (cfg.parallel && jobs.size() > 1) {
    std::atomic<size_t> next{0};
    const unsigned workers =
        std::min<unsigned>(std::max(1u, std::thread::hardware_concurrency()),
                           static_cast<unsigned>(jobs.size()));
    std::vector<std::thread> pool;
    std::exception_ptr failure;
    std::mutex failure_mutex;
    for (unsigned w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (;;) {
          const size_t idx = next.fetch_add(1);
          if (idx >= jobs.size()) return;
          try {
            run_job(idx);
          } catch (...) {
            std::lock_guard<std::mutex> lock(failure_mutex);
            if (!failure) failure = std::current_exception();
            return;
          }
        }
      });
    }
    for (auto& th : pool) th.join();
    if (failure) std::rethrow_exception(failure);
  } else {
    for (size_t i = 0; i < jobs.size(); ++i) run_job(i);
  }

  // Flag runs whose domain fit diverges from the same-seed median; forgetting
  // comparisons are only meaningful between comparably-trained models.
  for (uint64_t s : cfg.seeds) {
    std::vector<double> reductions;
    for (const auto& row : report.rows)
      if (row.seed == s) reductions.push_back(row.domain_reduction());
    const double med = detail::median(reductions);
    if (med <= 0) continue;
    for (auto& row : report.rows)
      if (row.seed == s && std::abs(row.domain_reduction() - med) > 0.10 * med)
        row.flagged = true;
  }

  for (Technique t : cfg.techniques) {
    std::vector<double> drops;
    std::vector<double> reductions;
    for (const auto& row : report.rows) {
      if (row.technique != to_string(t)) continue;
      drops.push_back(row.accuracy_drop_vs(report.base_general_accuracy));
      reductions.push_back(row.domain_reduction());
    }
    report.summary.push_back(
        {to_string(t), detail::median(drops), detail::median(reductions)});
  }
  return report;
}

// Per-run CSV of (step, raw, smoothed) loss plus an optional self-contained
// SVG line chart (raw light, smoothed dark).
void emit_plots(const std::vector<std::pair<std::string, MetricsLog>>& runs, double alpha,
                const std::string& out_dir, bool svg = false);

}  // namespace afa
