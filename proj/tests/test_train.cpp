#include <doctest.h>

#include "afa/harness.hpp"
#include "test_util.hpp"

using namespace afa;
using testutil::max_abs_diff;

namespace {

const Vocab& vocab() { return Vocab::default_synthetic(); }

ModelConfig train_cfg_model() { return ModelConfig::make(1, 16, 2, 0, 32, 0, 201, 48); }

TrainConfig quick_train(int steps) {
  TrainConfig cfg;
  cfg.total_steps = steps;
  cfg.warmup_steps = std::min(20, steps);
  cfg.peak_lr = 1e-3;
  cfg.micro_batch_size = 4;
  cfg.grad_accum_steps = 1;
  cfg.max_seq_len = 48;
  cfg.seed = 99;
  return cfg;
}

std::map<std::string, std::string> digests(const Checkpoint<float>& ckpt) {
  std::map<std::string, std::string> out;
  for (const auto& e : ckpt.tensors()) out[e.name] = ckpt.tensor_digest(e.name);
  return out;
}

}  // namespace

TEST_SUITE_BEGIN("train");

TEST_CASE("learning-rate schedule hits the documented anchor points") {
  TrainConfig cfg;
  cfg.total_steps = 100000;
  cfg.warmup_steps = 1000;
  cfg.peak_lr = 4e-4;
  CHECK(lr_at(0, cfg) == 0.0);
  CHECK(lr_at(1000, cfg) == 4e-4);
  CHECK(lr_at(cfg.total_steps, cfg) == 0.0);
  // midpoint of the decay ramp
  const long mid = (1000 + 100000) / 2;
  CHECK(lr_at(mid, cfg) == doctest::Approx(2e-4).epsilon(1e-12));
  // continuity at the warmup boundary
  CHECK(lr_at(999, cfg) < lr_at(1000, cfg));
  CHECK(lr_at(1001, cfg) < lr_at(1000, cfg));
  CHECK(lr_at(1000, cfg) - lr_at(999, cfg) == doctest::Approx(4e-7).epsilon(1e-6));
  CHECK_THROWS_AS(lr_at(-1, cfg), usage_error);
  CHECK_THROWS_AS(lr_at(cfg.total_steps + 1, cfg), usage_error);
}

TEST_CASE("adamw leaves parameters untouched for zero gradients and no decay") {
  auto model = Checkpoint<double>::random_init(ModelConfig::make(1, 8, 2, 0, 16, 0, 23, 12), 7);
  apply_mask(model, Technique::fine_tuning);
  const auto before = model.save_bytes();
  GradMap<double> grads;
  for (const auto& e : model.tensors())
    grads[e.name] = Mat<double>::Zero(e.data.rows(), e.data.cols());
  AdamwState<double> state;
  TrainConfig cfg = quick_train(10);
  cfg.weight_decay = 0;
  adamw_step(model, grads, state, 1e-3, cfg);
  CHECK(model.save_bytes() == before);
  CHECK(state.step == 1);
}

TEST_CASE("adamw single-element update matches the closed form") {
  auto model = Checkpoint<double>::random_init(ModelConfig::make(1, 8, 2, 0, 16, 0, 23, 12), 8);
  apply_mask(model, Technique::fine_tuning);
  TrainConfig cfg = quick_train(10);
  cfg.weight_decay = 0.01;
  const double lr = 2e-3, g = 0.3;
  const std::string target = "layer0.attn.q.weight";  // decay applies
  const std::string bias = "layer0.attn.q.bias";      // decay exempt
  const Mat<double> p0 = model.at(target);
  const Mat<double> b0 = model.at(bias);
  GradMap<double> grads;
  for (const auto& e : model.tensors())
    grads[e.name] = Mat<double>::Zero(e.data.rows(), e.data.cols());
  grads[target].setConstant(g);
  grads[bias].setConstant(g);
  AdamwState<double> state;
  adamw_step(model, grads, state, lr, cfg);
  // bias-corrected first step: mhat = g, vhat = g^2
  const double step_term = g / (std::sqrt(g * g) + cfg.adam_eps);
  for (Index r = 0; r < p0.rows(); ++r)
    for (Index c = 0; c < p0.cols(); ++c) {
      const double expected = p0(r, c) - lr * (step_term + cfg.weight_decay * p0(r, c));
      CHECK(model.at(target)(r, c) == doctest::Approx(expected).epsilon(1e-12));
    }
  for (Index c = 0; c < b0.cols(); ++c) {
    const double expected = b0(0, c) - lr * step_term;  // no decay on biases
    CHECK(model.at(bias)(0, c) == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("adamw aborts on non-finite gradients") {
  auto model = Checkpoint<double>::random_init(ModelConfig::make(1, 8, 2, 0, 16, 0, 23, 12), 9);
  apply_mask(model, Technique::fine_tuning);
  GradMap<double> grads;
  for (const auto& e : model.tensors())
    grads[e.name] = Mat<double>::Zero(e.data.rows(), e.data.cols());
  grads["mlm.output_bias"](0, 3) = std::numeric_limits<double>::quiet_NaN();
  AdamwState<double> state;
  CHECK_THROWS_AS(adamw_step(model, grads, state, 1e-3, quick_train(10)), numeric_error);
}

TEST_CASE("frozen parameters stay bit-identical through real update steps") {
  auto base = Checkpoint<float>::random_init(train_cfg_model(), 10);
  auto model = extend_checkpoint(base, 1, 8, InitPolicy::zero_output, 11);
  const auto corpus = gen_domain_corpus(Domain::general, 40, 12, vocab());
  const auto packs = group_sentences(corpus, 48, vocab());
  const auto frozen_before = digests(model);

  AdamwState<float> state;
  TrainConfig cfg = quick_train(5);
  Rng drop(5);
  for (long step = 1; step <= 5; ++step) {
    const CollatedBatch mb = wwm_collate({packs.begin(), packs.begin() + 4}, 0.15,
                                         mix_seed(3, uint64_t(step)), vocab());
    train_step(model, {mb}, state, cfg, step, &drop);
  }
  bool any_trainable_changed = false;
  for (const auto& e : model.tensors()) {
    if (e.trainable) {
      if (model.tensor_digest(e.name) != frozen_before.at(e.name)) any_trainable_changed = true;
    } else {
      CHECK(model.tensor_digest(e.name) == frozen_before.at(e.name));
    }
  }
  CHECK(any_trainable_changed);
}

TEST_CASE("gradient accumulation over duplicated micro-batches equals a single step") {
  ModelConfig mcfg = ModelConfig::make(1, 8, 2, 0, 16, 0, 201, 32);
  mcfg.dropout_p = 0.0;  // numeric-equality test
  auto model_a = Checkpoint<double>::random_init(mcfg, 13);
  apply_mask(model_a, Technique::fine_tuning);
  auto model_b = model_a;
  const auto corpus = gen_domain_corpus(Domain::general, 8, 14, vocab());
  const auto packs = group_sentences(corpus, 32, vocab());
  const CollatedBatch mb = wwm_collate(packs, 0.15, 15, vocab());

  TrainConfig cfg = quick_train(10);
  AdamwState<double> state_a, state_b;
  const double loss_one = train_step(model_a, {mb}, state_a, cfg, 1, nullptr);
  const double loss_two = train_step(model_b, {mb, mb}, state_b, cfg, 1, nullptr);
  CHECK(loss_one == doctest::Approx(loss_two).epsilon(1e-12));
  for (const auto& e : model_a.tensors())
    CHECK(max_abs_diff(e.data, model_b.at(e.name)) < 1e-10);
}

TEST_CASE("train_step rejects an empty batch group") {
  auto model = Checkpoint<float>::random_init(train_cfg_model(), 16);
  apply_mask(model, Technique::fine_tuning);
  AdamwState<float> state;
  CHECK_THROWS_AS(train_step(model, {}, state, quick_train(5), 1, nullptr), usage_error);
}

TEST_CASE("loss halves when overfitting a 50-sentence corpus for 200 steps") {
  auto model = Checkpoint<float>::random_init(train_cfg_model(), 17);
  apply_mask(model, Technique::fine_tuning);
  const auto corpus = gen_domain_corpus(Domain::general, 50, 18, vocab());
  TrainConfig cfg = quick_train(200);
  cfg.micro_batch_size = 8;
  auto [tuned, metrics] = run_pretraining(model, Technique::fine_tuning, corpus, cfg, vocab());
  REQUIRE(metrics.records.size() == 200);
  const double initial = metrics.records.front().raw_loss;
  const double final_loss = metrics.records.back().raw_loss;
  INFO("initial ", initial, " final ", final_loss);
  CHECK(final_loss < 0.5 * initial);
}

TEST_CASE("run_pretraining validates technique/mask consistency and trainability") {
  auto base = Checkpoint<float>::random_init(train_cfg_model(), 19);
  apply_mask(base, Technique::af_adapter);  // nothing trainable on a base model
  const auto corpus = gen_domain_corpus(Domain::general, 10, 20, vocab());
  CHECK_THROWS_WITH_AS(
      run_pretraining(base, Technique::af_adapter, corpus, quick_train(2), vocab()),
      doctest::Contains("nothing to train"), usage_error);

  apply_mask(base, Technique::fine_tuning);
  CHECK_THROWS_AS(run_pretraining(base, Technique::af_adapter, corpus, quick_train(2), vocab()),
                  usage_error);
}

TEST_CASE("pretraining runs are deterministic in their seeds") {
  auto base = Checkpoint<float>::random_init(train_cfg_model(), 21);
  auto model = extend_checkpoint(base, 1, 8, InitPolicy::zero_output, 22);
  const auto corpus = gen_domain_corpus(Domain::general, 30, 23, vocab());
  TrainConfig cfg = quick_train(8);
  auto [ckpt_a, log_a] = run_pretraining(model, Technique::af_adapter, corpus, cfg, vocab());
  auto [ckpt_b, log_b] = run_pretraining(model, Technique::af_adapter, corpus, cfg, vocab());
  CHECK(ckpt_a.save_bytes() == ckpt_b.save_bytes());
  REQUIRE(log_a.records.size() == log_b.records.size());
  for (size_t i = 0; i < log_a.records.size(); ++i) {
    CHECK(log_a.records[i].step == log_b.records[i].step);
    CHECK(log_a.records[i].lr == log_b.records[i].lr);
    CHECK(log_a.records[i].raw_loss == log_b.records[i].raw_loss);
  }
  CHECK(ckpt_a.provenance == "af_adapter");

  TrainConfig other = cfg;
  other.seed = cfg.seed + 1;
  auto [ckpt_c, log_c] = run_pretraining(model, Technique::af_adapter, corpus, other, vocab());
  CHECK(log_c.records.front().raw_loss != log_a.records.front().raw_loss);
}

TEST_CASE("frozen-tensor digests survive a full af_adapter run") {
  auto base = Checkpoint<float>::random_init(train_cfg_model(), 24);
  auto model = extend_checkpoint(base, 1, 8, InitPolicy::zero_output, 25);
  const auto before = digests(model);
  const auto corpus = gen_domain_corpus(Domain::specific, 40, 26, vocab());
  auto [tuned, log] = run_pretraining(model, Technique::af_adapter, corpus, quick_train(30),
                                      vocab());
  for (const auto& e : tuned.tensors())
    if (!e.trainable) CHECK(tuned.tensor_digest(e.name) == before.at(e.name));
}

TEST_CASE("smoothing recurrence") {
  CHECK(smooth({0.0, 1.0}, 0.6) == std::vector<double>{0.0, 0.4});
  const std::vector<double> constant(5, 2.5);
  CHECK(smooth(constant, 0.6) == constant);
  const std::vector<double> series = {3.0, 1.0, 4.0, 1.0, 5.0};
  CHECK(smooth(series, 0.0) == series);
  CHECK_THROWS_AS(smooth({}, 0.6), usage_error);
  CHECK_THROWS_AS(smooth({1.0}, 1.0), usage_error);
  CHECK_THROWS_AS(smooth({1.0}, -0.1), usage_error);
}

TEST_SUITE_END();
