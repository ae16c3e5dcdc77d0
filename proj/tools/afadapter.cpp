// Command-line front end: synthetic corpora, base pretraining, checkpoint
// surgery, continual training, and the forgetting/comparison reports.
// Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numerical
// failure.

#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "afa/json_io.hpp"

namespace {

using Scalar = float;  // CLI runs in the default single-precision mode

afa::TrainConfig train_section(const nlohmann::json& root) {
  if (!root.contains("train")) throw afa::data_error("config: missing 'train' section");
  return afa::train_config_from_json(root.at("train"));
}

int run(int argc, char** argv) {
  CLI::App app{"AF-Adapter continual pretraining workbench"};
  app.require_subcommand(1);

  // ---- synth-data -----------------------------------------------------
  auto* synth = app.add_subcommand("synth-data", "Generate a synthetic domain corpus");
  std::string synth_domain = "general";
  int synth_sentences = 20000;
  uint64_t synth_seed = 1;
  std::string synth_out;
  std::string synth_vocab_out;
  double synth_overlap = 0.5;
  synth->add_option("--domain", synth_domain, "general|specific")->required();
  synth->add_option("--sentences", synth_sentences, "number of sentences")->required();
  synth->add_option("--seed", synth_seed, "sampling seed")->required();
  synth->add_option("--out", synth_out, "output corpus file")->required();
  synth->add_option("--overlap", synth_overlap, "shared content-word fraction (default 0.5)");
  synth->add_option("--vocab-out", synth_vocab_out, "also write the vocabulary file");

  // ---- pretrain-base --------------------------------------------------
  auto* preb = app.add_subcommand(
      "pretrain-base", "Train a base model from random init on the general corpus");
  std::string preb_config, preb_data, preb_out, preb_metrics;
  preb->add_option("--config", preb_config, "JSON config with model+train sections")->required();
  preb->add_option("--data", preb_data, "training corpus file")->required();
  preb->add_option("--out", preb_out, "output checkpoint")->required();
  preb->add_option("--metrics", preb_metrics, "optional metrics CSV");

  // ---- extend ----------------------------------------------------------
  auto* ext = app.add_subcommand("extend", "Grow a base checkpoint by heads/FFN units");
  std::string ext_in, ext_out, ext_init = "zero_output";
  int ext_heads = 1, ext_ffn = 0;
  uint64_t ext_seed = 7;
  ext->add_option("--in", ext_in, "base checkpoint")->required();
  ext->add_option("--heads", ext_heads, "extension attention heads per layer")->required();
  ext->add_option("--ffn", ext_ffn, "extension FFN hidden units per layer")->required();
  ext->add_option("--init", ext_init, "zero_output|full_random");
  ext->add_option("--seed", ext_seed, "initialization seed");
  ext->add_option("--out", ext_out, "output checkpoint")->required();

  // ---- train -----------------------------------------------------------
  auto* tr = app.add_subcommand("train", "Continual pretraining with a technique");
  std::string tr_in, tr_technique, tr_data, tr_config, tr_out, tr_metrics;
  tr->add_option("--in", tr_in, "input checkpoint")->required();
  tr->add_option("--technique", tr_technique, "af_adapter|fine_tuning|lora")->required();
  tr->add_option("--data", tr_data, "training corpus file")->required();
  tr->add_option("--config", tr_config, "JSON config with a train section")->required();
  tr->add_option("--out", tr_out, "output checkpoint")->required();
  tr->add_option("--metrics", tr_metrics, "metrics CSV")->required();

  // ---- params ----------------------------------------------------------
  auto* par = app.add_subcommand("params", "Report total/trainable parameter counts");
  std::string par_in;
  par->add_option("--in", par_in, "checkpoint")->required();

  // ---- eval-forgetting ---------------------------------------------------
  auto* evf = app.add_subcommand("eval-forgetting", "Masked-accuracy forgetting report");
  std::string evf_base, evf_data, evf_out;
  std::vector<std::string> evf_tuned;
  double evf_rate = 0.15;
  uint64_t evf_seed = 2024;
  int evf_limit = 0;
  evf->add_option("--base", evf_base, "reference checkpoint")->required();
  evf->add_option("--tuned", evf_tuned, "tuned checkpoints")->required()->expected(-1);
  evf->add_option("--data", evf_data, "held-out general corpus")->required();
  evf->add_option("--out", evf_out, "report CSV")->required();
  evf->add_option("--mask-rate", evf_rate, "evaluation mask rate (default 0.15)");
  evf->add_option("--seed", evf_seed, "evaluation collation seed");
  evf->add_option("--limit", evf_limit, "max packed sequences (0 = all)");

  // ---- compare -----------------------------------------------------------
  auto* cmp = app.add_subcommand("compare", "Train and compare techniques on one corpus");
  std::string cmp_base, cmp_general, cmp_domain, cmp_config, cmp_out;
  cmp->add_option("--base", cmp_base, "base checkpoint")->required();
  cmp->add_option("--general", cmp_general, "held-out general corpus")->required();
  cmp->add_option("--domain", cmp_domain, "domain corpus")->required();
  cmp->add_option("--config", cmp_config, "JSON config with train+compare sections")->required();
  cmp->add_option("--out", cmp_out, "output directory")->required();

  // ---- plot ----------------------------------------------------------------
  auto* plt = app.add_subcommand("plot", "Smooth metrics CSVs and emit plot files");
  std::vector<std::string> plt_metrics;
  double plt_alpha = 0.6;
  std::string plt_out;
  bool plt_svg = false;
  plt->add_option("--metrics", plt_metrics, "metrics CSV files")->required()->expected(-1);
  plt->add_option("--alpha", plt_alpha, "smoothing weight (default 0.6)");
  plt->add_option("--out", plt_out, "output directory")->required();
  plt->add_flag("--svg", plt_svg, "also write SVG charts");

  CLI11_PARSE(app, argc, argv);

  const afa::Vocab& vocab = afa::Vocab::default_synthetic();

  if (*synth) {
    afa::CorpusSpec spec;
    spec.overlap = synth_overlap;
    const auto corpus = afa::gen_domain_corpus(afa::domain_from_string(synth_domain),
                                               synth_sentences, synth_seed, vocab, spec);
    afa::save_corpus(synth_out, corpus, vocab);
    if (!synth_vocab_out.empty()) vocab.save(synth_vocab_out);
    std::cout << "wrote " << corpus.size() << " sentences to " << synth_out << "\n";
  } else if (*preb) {
    const nlohmann::json cfg_json = afa::load_json_file(preb_config);
    if (!cfg_json.contains("model")) throw afa::data_error("config: missing 'model' section");
    const afa::ModelConfig mcfg = afa::model_config_from_json(cfg_json.at("model"));
    const afa::TrainConfig tcfg = train_section(cfg_json);
    if (mcfg.vocab_size != vocab.size())
      throw afa::data_error(afa::strf("config: vocab_size %d does not match the synthetic "
                                      "vocabulary (%d tokens)",
                                      mcfg.vocab_size, vocab.size()));
    const auto corpus = afa::load_corpus(preb_data, vocab);
    auto base = afa::Checkpoint<Scalar>::random_init(mcfg, tcfg.seed);
    afa::apply_mask(base, afa::Technique::fine_tuning);
    auto [trained, metrics] =
        afa::run_pretraining(base, afa::Technique::fine_tuning, corpus, tcfg, vocab);
    trained.provenance = "base";
    trained.save(preb_out);
    if (!preb_metrics.empty()) afa::save_metrics_csv(metrics, preb_metrics);
    std::cout << "wrote base checkpoint to " << preb_out << "\n";
  } else if (*ext) {
    const auto base = afa::Checkpoint<Scalar>::load(ext_in);
    const auto extended = afa::extend_checkpoint(
        base, ext_heads, ext_ffn, afa::init_policy_from_string(ext_init), ext_seed);
    extended.save(ext_out);
    const auto count = afa::count_params(extended);
    std::cout << afa::strf("extended checkpoint: %lld params, %lld trainable (%.2f%%)\n",
                           count.total, count.trainable, 100.0 * count.ratio);
  } else if (*tr) {
    const afa::Technique technique = afa::technique_from_string(tr_technique);
    const nlohmann::json cfg_json = afa::load_json_file(tr_config);
    const afa::TrainConfig tcfg = train_section(cfg_json);
    auto ckpt = afa::Checkpoint<Scalar>::load(tr_in);
    if (technique == afa::Technique::af_adapter && !ckpt.config.extended())
      throw afa::usage_error("train: af_adapter needs an extended checkpoint (run `extend`)");
    if (technique == afa::Technique::lora && !ckpt.lora.active()) {
      const afa::LoraSpec spec = cfg_json.contains("lora")
                                     ? afa::lora_spec_from_json(cfg_json.at("lora"))
                                     : afa::LoraSpec{.rank = 8, .alpha = 16.0};
      ckpt = afa::lora_attach(ckpt, spec.rank, spec.alpha, spec.targets,
                              afa::mix_seed(tcfg.seed, 0x10A));
    }
    afa::apply_mask(ckpt, technique);
    const auto corpus = afa::load_corpus(tr_data, vocab);
    auto [tuned, metrics] = afa::run_pretraining(ckpt, technique, corpus, tcfg, vocab);
    tuned.save(tr_out);
    afa::save_metrics_csv(metrics, tr_metrics);
    std::cout << afa::strf("trained %s for %d steps; final loss %.4f\n", tr_technique.c_str(),
                           tcfg.total_steps, metrics.records.back().raw_loss);
  } else if (*par) {
    const auto ckpt = afa::Checkpoint<Scalar>::load(par_in);
    const auto count = afa::count_params(ckpt);
    std::cout << afa::strf("total      %lld\ntrainable  %lld\nratio      %.4f%%\n", count.total,
                           count.trainable, 100.0 * count.ratio);
  } else if (*evf) {
    const auto base = afa::Checkpoint<Scalar>::load(evf_base);
    std::vector<afa::Checkpoint<Scalar>> tuned;
    tuned.reserve(evf_tuned.size());
    for (const auto& path : evf_tuned) tuned.push_back(afa::Checkpoint<Scalar>::load(path));
    std::vector<std::pair<std::string, const afa::Checkpoint<Scalar>*>> rows;
    for (size_t i = 0; i < tuned.size(); ++i) {
      const std::string tag =
          tuned[i].provenance.empty()
              ? std::filesystem::path(evf_tuned[i]).stem().string()
              : tuned[i].provenance + "_" + std::filesystem::path(evf_tuned[i]).stem().string();
      rows.emplace_back(tag, &tuned[i]);
    }
    const auto heldout = afa::load_corpus(evf_data, vocab);
    afa::EvalConfig ecfg;
    ecfg.mask_rate = evf_rate;
    ecfg.seed = evf_seed;
    ecfg.max_sequences = evf_limit;
    const auto report = afa::forgetting_report(base, rows, heldout, vocab, ecfg);
    afa::save_forgetting_csv(report, evf_out);
    std::cout << afa::format_forgetting_table(report);
  } else if (*cmp) {
    const auto base = afa::Checkpoint<Scalar>::load(cmp_base);
    const auto general = afa::load_corpus(cmp_general, vocab);
    const auto domain = afa::load_corpus(cmp_domain, vocab);
    const afa::CompareConfig ccfg = afa::compare_config_from_json(afa::load_json_file(cmp_config));
    const auto report = afa::compare_techniques(base, general, domain, vocab, ccfg);
    std::filesystem::create_directories(cmp_out);
    afa::save_comparison_csv(report, cmp_out + "/comparison.csv");
    afa::save_timings_csv(report, cmp_out + "/timings.csv");
    std::vector<std::pair<std::string, afa::MetricsLog>> runs;
    for (const auto& row : report.rows) {
      const std::string tag = afa::strf("%s_seed%llu", row.technique.c_str(),
                                        static_cast<unsigned long long>(row.seed));
      afa::save_metrics_csv(row.metrics, cmp_out + "/metrics_" + tag + ".csv");
      runs.emplace_back(tag, row.metrics);
    }
    afa::emit_plots(runs, 0.6, cmp_out);
    const std::string table = afa::format_comparison_table(report);
    std::ofstream txt(cmp_out + "/comparison.txt");
    txt << table;
    std::cout << table;
  } else if (*plt) {
    std::vector<std::pair<std::string, afa::MetricsLog>> runs;
    for (const auto& path : plt_metrics)
      runs.emplace_back(std::filesystem::path(path).stem().string(),
                        afa::load_metrics_csv(path));
    afa::emit_plots(runs, plt_alpha, plt_out, plt_svg);
    std::cout << "wrote " << runs.size() << " plot file(s) to " << plt_out << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const afa::usage_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const afa::numeric_error& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const afa::data_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
