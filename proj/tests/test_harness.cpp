#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "afa/harness.hpp"
#include "test_util.hpp"

using namespace afa;

namespace {

const Vocab& vocab() { return Vocab::default_synthetic(); }

ModelConfig harness_model() { return ModelConfig::make(1, 16, 2, 0, 32, 0, 201, 48); }

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

long labeled_count(const CollatedBatch& batch) {
  long n = 0;
  for (Index r = 0; r < batch.rows(); ++r)
    for (Index c = 0; c < batch.cols(); ++c)
      if (batch.labels(r, c) != kIgnoreIndex) ++n;
  return n;
}

}  // namespace

TEST_SUITE_BEGIN("harness");

TEST_CASE("masked accuracy is deterministic for a fixed checkpoint") {
  auto ckpt = Checkpoint<float>::random_init(harness_model(), 301);
  const auto heldout = gen_domain_corpus(Domain::general, 80, 302, vocab());
  EvalConfig cfg;
  const double a = masked_accuracy(ckpt, heldout, vocab(), cfg);
  const double b = masked_accuracy(ckpt, heldout, vocab(), cfg);
  CHECK(a == b);
}

TEST_CASE("a random-logit predictor scores at chance level") {
  const auto heldout = gen_domain_corpus(Domain::general, 1500, 303, vocab());
  EvalConfig cfg;
  const CollatedBatch batch = collate_for_eval(heldout, vocab(), 64, cfg);
  // iid random logits, deterministic per sequence: argmax is uniform over the
  // vocab, so expected accuracy is 1/vocab_size
  LogitsFn<float> random_logits = [](const std::vector<int>& ids,
                                     const std::vector<int>& positions) {
    uint64_t h = 0x517cc1b727220a95ull;
    for (int id : ids) h = mix_seed(h, static_cast<uint64_t>(id));
    Rng rng(h);
    return uniform_matrix<float>(rng, static_cast<Index>(positions.size()),
                                 vocab().size(), 0.0, 1.0);
  };
  const double acc = masked_accuracy_on(batch, random_logits);
  const double p = 1.0 / vocab().size();
  const long n = labeled_count(batch);
  REQUIRE(n > 1000);
  const double sigma = std::sqrt(p * (1 - p) / static_cast<double>(n));
  INFO("accuracy ", acc, " expected ", p, " n ", n);
  CHECK(std::abs(acc - p) <= 3 * sigma);
}

TEST_CASE("a model overfitted on one sentence recovers its masked word") {
  // one sentence consisting of a single three-token word
  AnnotatedSequence sentence;
  sentence.ids = {vocab().general_begin() + 7, vocab().general_begin() + 20,
                  vocab().general_begin() + 3};
  sentence.word_spans = {{0, 3}};
  const std::vector<AnnotatedSequence> corpus = {sentence};

  ModelConfig mcfg = ModelConfig::make(1, 16, 2, 0, 32, 0, 201, 16);
  auto model = Checkpoint<float>::random_init(mcfg, 304);
  apply_mask(model, Technique::fine_tuning);
  TrainConfig tcfg;
  tcfg.total_steps = 400;
  tcfg.warmup_steps = 40;
  tcfg.peak_lr = 2e-3;
  tcfg.micro_batch_size = 1;
  tcfg.grad_accum_steps = 1;
  tcfg.max_seq_len = 16;
  tcfg.seed = 305;
  auto [tuned, log] = run_pretraining(model, Technique::fine_tuning, corpus, tcfg, vocab());
  INFO("final loss ", log.records.back().raw_loss);

  EvalConfig ecfg;
  ecfg.seed = 306;
  const double acc = masked_accuracy(tuned, corpus, vocab(), ecfg);
  CHECK(acc == 1.0);
}

TEST_CASE("forgetting report: self-comparison and function-preserving extension") {
  auto base = Checkpoint<float>::random_init(harness_model(), 310);
  auto self = base;
  auto extended = extend_checkpoint(base, 1, 8, InitPolicy::zero_output, 311);
  const auto heldout = gen_domain_corpus(Domain::general, 150, 312, vocab());
  EvalConfig cfg;
  const auto report = forgetting_report<float>(
      base, {{"self", &self}, {"extended_untrained", &extended}}, heldout, vocab(), cfg);
  REQUIRE(report.rows.size() == 3);
  CHECK(report.rows[0].tag == "base");
  CHECK(report.rows[0].diff == 0.0);
  CHECK(report.rows[1].diff == 0.0);  // identical checkpoint, identical inputs
  // zero_output extension computes the same function; allow only collation
  // noise at single precision
  CHECK(std::abs(report.rows[2].diff) <= 0.002);
  CHECK(report.input_digest.size() == 64);
}

TEST_CASE("forgetting report rejects incompatible checkpoints") {
  auto base = Checkpoint<float>::random_init(harness_model(), 313);
  auto other = Checkpoint<float>::random_init(ModelConfig::make(1, 16, 2, 0, 32, 0, 101, 48), 314);
  const auto heldout = gen_domain_corpus(Domain::general, 20, 315, vocab());
  CHECK_THROWS_WITH_AS(
      forgetting_report<float>(base, {{"bad", &other}}, heldout, vocab(), EvalConfig{}),
      doctest::Contains("vocab mismatch"), data_error);
}

TEST_CASE("forgetting report CSV is byte-deterministic") {
  auto base = Checkpoint<float>::random_init(harness_model(), 316);
  auto tuned = Checkpoint<float>::random_init(harness_model(), 317);
  const auto heldout = gen_domain_corpus(Domain::general, 60, 318, vocab());
  const auto report_a = forgetting_report<float>(base, {{"t", &tuned}}, heldout, vocab(), {});
  const auto report_b = forgetting_report<float>(base, {{"t", &tuned}}, heldout, vocab(), {});
  CHECK(report_a.input_digest == report_b.input_digest);
  save_forgetting_csv(report_a, "forgetting_a.csv");
  save_forgetting_csv(report_b, "forgetting_b.csv");
  CHECK(slurp("forgetting_a.csv") == slurp("forgetting_b.csv"));
  std::remove("forgetting_a.csv");
  std::remove("forgetting_b.csv");
}

TEST_CASE("emit_plots writes one smoothed CSV per run") {
  MetricsLog varying;
  varying.technique = "af_adapter";
  for (long s = 1; s <= 5; ++s) varying.append(s, 1e-4 * s, 5.0 / s);
  MetricsLog constant;
  constant.technique = "lora";
  for (long s = 1; s <= 5; ++s) constant.append(s, 1e-4, 2.0);

  const std::string dir = "plots_test_out";
  emit_plots({{"runA", varying}, {"runB", constant}}, 0.6, dir, true);
  CHECK(std::filesystem::exists(dir + "/plot_runA.csv"));
  CHECK(std::filesystem::exists(dir + "/plot_runB.csv"));
  CHECK(std::filesystem::exists(dir + "/plot_runA.svg"));

  // smoothed column delegates to smooth()
  std::vector<double> raw;
  for (const auto& r : varying.records) raw.push_back(r.raw_loss);
  const auto expected = smooth(raw, 0.6);
  std::ifstream in(dir + "/plot_runA.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "step,raw,smoothed");
  for (size_t i = 0; i < raw.size(); ++i) {
    REQUIRE(std::getline(in, line));
    long step;
    double r, s;
    REQUIRE(std::sscanf(line.c_str(), "%ld,%lf,%lf", &step, &r, &s) == 3);
    CHECK(r == doctest::Approx(raw[i]).epsilon(1e-9));
    CHECK(s == doctest::Approx(expected[i]).epsilon(1e-9));
  }
  // constant series is a fixed point of the smoother
  std::ifstream cin(dir + "/plot_runB.csv");
  std::getline(cin, line);
  while (std::getline(cin, line)) {
    long step;
    double r, s;
    REQUIRE(std::sscanf(line.c_str(), "%ld,%lf,%lf", &step, &r, &s) == 3);
    CHECK(r == s);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("compare_techniques runs every technique on identical budgets") {
  auto base = Checkpoint<float>::random_init(harness_model(), 320);
  const auto general = gen_domain_corpus(Domain::general, 80, 321, vocab());
  const auto domain = gen_domain_corpus(Domain::specific, 200, 322, vocab());

  CompareConfig cfg;
  cfg.train.total_steps = 12;
  cfg.train.warmup_steps = 4;
  cfg.train.micro_batch_size = 4;
  cfg.train.grad_accum_steps = 1;
  cfg.train.max_seq_len = 48;
  cfg.ext_heads = 1;
  cfg.ext_ffn = 8;
  cfg.lora_rank = 2;
  cfg.lora_alpha = 4;
  cfg.domain_eval_sequences = 40;
  cfg.eval.max_sequences = 20;
  cfg.seeds = {1};

  const auto report = compare_techniques(base, general, domain, vocab(), cfg);
  REQUIRE(report.rows.size() == 3);
  CHECK(report.rows[0].technique == "af_adapter");
  CHECK(report.rows[1].technique == "fine_tuning");
  CHECK(report.rows[2].technique == "lora");
  CHECK(report.general_digest.size() == 64);
  CHECK(report.domain_digest.size() == 64);
  CHECK(report.summary.size() == 3);

  // trainable accounting matches count_params for each prepared model
  auto extended = extend_checkpoint(base, cfg.ext_heads, cfg.ext_ffn, cfg.init,
                                    mix_seed(1, 0xEA7));
  const auto af_count = count_params(extended);
  CHECK(report.rows[0].trainable == af_count.trainable);
  CHECK(report.rows[0].trainable_ratio == doctest::Approx(af_count.ratio).epsilon(1e-12));
  const auto ft_count = count_params(base.config, LoraSpec{}, Technique::fine_tuning);
  CHECK(report.rows[1].trainable == ft_count.total);
  auto lora = lora_attach(base, cfg.lora_rank, cfg.lora_alpha, kLoraQuery | kLoraValue,
                          mix_seed(1, 0x10A));
  CHECK(report.rows[2].trainable == count_params(lora).trainable);

  for (const auto& row : report.rows) {
    CHECK(row.metrics.records.size() == 12);
    CHECK(row.wall_seconds > 0);
    CHECK(row.domain_loss_before > 0);
    CHECK(row.general_acc_before >= 0);
  }

  // deterministic report CSV across a rerun (timings excluded by design)
  const auto rerun = compare_techniques(base, general, domain, vocab(), cfg);
  save_comparison_csv(report, "cmp_a.csv");
  save_comparison_csv(rerun, "cmp_b.csv");
  CHECK(slurp("cmp_a.csv") == slurp("cmp_b.csv"));
  std::remove("cmp_a.csv");
  std::remove("cmp_b.csv");
}

TEST_SUITE_END();
