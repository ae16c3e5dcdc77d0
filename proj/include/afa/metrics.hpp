#pragma once

#include <string>
#include <vector>

#include "afa/common.hpp"

namespace afa {

struct MetricsRecord {
  long step = 0;
  double lr = 0;
  double raw_loss = 0;
};

// Append-only per-step training log plus run metadata.
struct MetricsLog {
  std::string technique;
  std::string config_hash;
  uint64_t seed = 0;
  std::vector<MetricsRecord> records;

  void append(long step, double lr, double raw_loss);
};

// CSV columns: step,lr,raw_loss. A JSON sidecar (<path>.json) carries the
// run metadata.
void save_metrics_csv(const MetricsLog& log, const std::string& path);
MetricsLog load_metrics_csv(const std::string& path);

// Exponential smoothing used for loss curves: s_0 = v_0,
// s_t = alpha * s_{t-1} + (1 - alpha) * v_t.
std::vector<double> smooth(const std::vector<double>& values, double alpha = 0.6);

}  // namespace afa
