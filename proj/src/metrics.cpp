#include "afa/metrics.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace afa {

void MetricsLog::append(long step, double lr, double raw_loss) {
  if (!records.empty() && step <= records.back().step)
    throw error("metrics: steps must be strictly increasing");
  records.push_back(MetricsRecord{step, lr, raw_loss});
}

void save_metrics_csv(const MetricsLog& log, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw data_error("metrics: cannot open for writing: " + path);
  out << "step,lr,raw_loss\n";
  for (const auto& r : log.records)
    out << strf("%ld,%.10g,%.10g\n", r.step, r.lr, r.raw_loss);
  if (!out) throw data_error("metrics: write failed: " + path);

  nlohmann::json meta;
  meta["technique"] = log.technique;
  meta["config_hash"] = log.config_hash;
  meta["seed"] = log.seed;
  std::ofstream side(path + ".json");
  if (!side) throw data_error("metrics: cannot open sidecar for writing: " + path + ".json");
  side << meta.dump(2) << "\n";
}

MetricsLog load_metrics_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw data_error("metrics: cannot open: " + path);
  MetricsLog log;
  std::string line;
  if (!std::getline(in, line) || line != "step,lr,raw_loss")
    throw data_error("metrics: bad header in " + path);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    MetricsRecord r;
    if (std::sscanf(line.c_str(), "%ld,%lf,%lf", &r.step, &r.lr, &r.raw_loss) != 3)
      throw data_error("metrics: bad row in " + path + ": " + line);
    log.records.push_back(r);
  }
  std::ifstream side(path + ".json");
  if (side) {
    nlohmann::json meta = nlohmann::json::parse(side, nullptr, false);
    if (!meta.is_discarded()) {
      log.technique = meta.value("technique", "");
      log.config_hash = meta.value("config_hash", "");
      log.seed = meta.value("seed", uint64_t(0));
    }
  }
  return log;
}

std::vector<double> smooth(const std::vector<double>& values, double alpha) {
  if (values.empty()) throw usage_error("smooth: empty series");
  if (alpha < 0 || alpha >= 1) throw usage_error("smooth: alpha outside [0,1)");
  std::vector<double> out;
  out.reserve(values.size());
  out.push_back(values[0]);
  for (size_t i = 1; i < values.size(); ++i)
    out.push_back(alpha * out.back() + (1 - alpha) * values[i]);
  return out;
}

}  // namespace afa
