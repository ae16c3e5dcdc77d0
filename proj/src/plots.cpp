#include "afa/harness.hpp"

#include <filesystem>
#include <fstream>

namespace afa {

void save_forgetting_csv(const ForgettingReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw data_error("report: cannot open for writing: " + path);
  out << "model,accuracy,diff\n";
  for (const auto& row : report.rows)
    out << strf("%s,%.6f,%.6f\n", row.tag.c_str(), row.accuracy, row.diff);
  if (!out) throw data_error("report: write failed: " + path);
}

std::string format_forgetting_table(const ForgettingReport& report) {
  std::string s;
  s += strf("%-24s %10s %10s\n", "Model", "Accuracy", "Diff");
  for (const auto& row : report.rows)
    s += strf("%-24s %10.3f %+10.3f\n", row.tag.c_str(), 100.0 * row.accuracy,
              100.0 * row.diff);
  s += strf("inputs sha256: %s\n", report.input_digest.c_str());
  return s;
}

void save_comparison_csv(const ComparisonReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw data_error("report: cannot open for writing: " + path);
  out << "technique,seed,trainable,trainable_ratio,domain_loss_before,domain_loss_after,"
         "domain_reduction,general_acc_before,general_acc_after,acc_drop_vs_base,flagged\n";
  for (const auto& r : report.rows) {
    out << strf("%s,%llu,%lld,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%d\n", r.technique.c_str(),
                static_cast<unsigned long long>(r.seed), r.trainable, r.trainable_ratio,
                r.domain_loss_before, r.domain_loss_after, r.domain_reduction(),
                r.general_acc_before, r.general_acc_after,
                r.accuracy_drop_vs(report.base_general_accuracy), r.flagged ? 1 : 0);
  }
  if (!out) throw data_error("report: write failed: " + path);
}

void save_timings_csv(const ComparisonReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw data_error("report: cannot open for writing: " + path);
  out << "technique,seed,wall_seconds\n";
  for (const auto& r : report.rows)
    out << strf("%s,%llu,%.3f\n", r.technique.c_str(),
                static_cast<unsigned long long>(r.seed), r.wall_seconds);
}

std::string format_comparison_table(const ComparisonReport& report) {
  std::string s;
  s += strf("base general accuracy: %.3f%%\n", 100.0 * report.base_general_accuracy);
  s += strf("general inputs sha256: %s\n", report.general_digest.c_str());
  s += strf("domain inputs sha256:  %s\n\n", report.domain_digest.c_str());
  s += strf("%-12s %6s %12s %8s %12s %12s %11s %11s %9s %5s\n", "Technique", "Seed", "Trainable",
            "Ratio", "DomLossPre", "DomLossPost", "GenAccPre", "GenAccPost", "Wall(s)", "Flag");
  for (const auto& r : report.rows) {
    s += strf("%-12s %6llu %12lld %7.2f%% %12.4f %12.4f %10.3f%% %10.3f%% %9.1f %5s\n",
              r.technique.c_str(), static_cast<unsigned long long>(r.seed), r.trainable,
              100.0 * r.trainable_ratio, r.domain_loss_before, r.domain_loss_after,
              100.0 * r.general_acc_before, 100.0 * r.general_acc_after, r.wall_seconds,
              r.flagged ? "yes" : "");
  }
  s += "\nmedians across seeds:\n";
  s += strf("%-12s %18s %18s\n", "Technique", "AccDropVsBase", "DomainReduction");
  for (const auto& t : report.summary)
    s += strf("%-12s %17.3f%% %17.1f%%\n", t.technique.c_str(), 100.0 * t.median_accuracy_drop,
              100.0 * t.median_domain_reduction);
  return s;
}

namespace {

std::string svg_polyline(const std::vector<double>& xs, const std::vector<double>& ys,
                         double x0, double x1, double y0, double y1, int w, int h, int margin,
                         const char* color, double width) {
  std::string pts;
  const double xspan = x1 > x0 ? x1 - x0 : 1;
  const double yspan = y1 > y0 ? y1 - y0 : 1;
  for (size_t i = 0; i < xs.size(); ++i) {
    const double px = margin + (xs[i] - x0) / xspan * (w - 2 * margin);
    const double py = h - margin - (ys[i] - y0) / yspan * (h - 2 * margin);
    pts += strf("%.1f,%.1f ", px, py);
  }
  return strf("<polyline fill=\"none\" stroke=\"%s\" stroke-width=\"%.1f\" points=\"%s\"/>\n",
              color, width, pts.c_str());
}

void write_plot_svg(const std::string& path, const MetricsLog& log,
                    const std::vector<double>& raw, const std::vector<double>& smoothed) {
  const int w = 800, h = 400, margin = 45;
  std::vector<double> xs;
  xs.reserve(log.records.size());
  for (const auto& r : log.records) xs.push_back(static_cast<double>(r.step));
  double y0 = raw[0], y1 = raw[0];
  for (double v : raw) {
    y0 = std::min(y0, v);
    y1 = std::max(y1, v);
  }
  std::ofstream out(path);
  if (!out) throw data_error("plot: cannot open for writing: " + path);
  out << strf("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%d\" height=\"%d\">\n", w, h);
  out << strf("<rect width=\"%d\" height=\"%d\" fill=\"white\"/>\n", w, h);
  out << strf("<line x1=\"%d\" y1=\"%d\" x2=\"%d\" y2=\"%d\" stroke=\"black\"/>\n", margin,
              h - margin, w - margin, h - margin);
  out << strf("<line x1=\"%d\" y1=\"%d\" x2=\"%d\" y2=\"%d\" stroke=\"black\"/>\n", margin,
              margin, margin, h - margin);
  out << strf("<text x=\"%d\" y=\"%d\" font-size=\"12\">step</text>\n", w / 2, h - 10);
  out << strf("<text x=\"%d\" y=\"%d\" font-size=\"12\" transform=\"rotate(-90 14 %d)\">"
              "loss</text>\n",
              14, h / 2, h / 2);
  out << strf("<text x=\"%d\" y=\"%d\" font-size=\"12\">%.4g</text>\n", 4, h - margin, y0);
  out << strf("<text x=\"%d\" y=\"%d\" font-size=\"12\">%.4g</text>\n", 4, margin + 4, y1);
  out << svg_polyline(xs, raw, xs.front(), xs.back(), y0, y1, w, h, margin, "#b8c4e8", 1.0);
  out << svg_polyline(xs, smoothed, xs.front(), xs.back(), y0, y1, w, h, margin, "#27356e", 2.0);
  out << "</svg>\n";
}

}  // namespace

void emit_plots(const std::vector<std::pair<std::string, MetricsLog>>& runs, double alpha,
                const std::string& out_dir, bool svg) {
  if (runs.empty()) throw usage_error("emit_plots: no metrics logs given");
  std::filesystem::create_directories(out_dir);
  for (const auto& [tag, log] : runs) {
    if (log.records.empty()) throw usage_error("emit_plots: empty metrics log: " + tag);
    std::vector<double> raw;
    raw.reserve(log.records.size());
    for (const auto& r : log.records) raw.push_back(r.raw_loss);
    const std::vector<double> smoothed = smooth(raw, alpha);
    const std::string csv_path = out_dir + "/plot_" + tag + ".csv";
    std::ofstream out(csv_path);
    if (!out) throw data_error("plot: cannot open for writing: " + csv_path);
    out << "step,raw,smoothed\n";
    for (size_t i = 0; i < raw.size(); ++i)
      out << strf("%ld,%.10g,%.10g\n", log.records[i].step, raw[i], smoothed[i]);
    if (svg) write_plot_svg(out_dir + "/plot_" + tag + ".svg", log, raw, smoothed);
  }
}

}  // namespace afa
