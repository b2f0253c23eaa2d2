#ifndef S2AP_REPORT_HPP
#define S2AP_REPORT_HPP

#include <string>
#include <vector>

#include "s2ap/runner.hpp"

namespace s2ap {

struct ReportError : std::runtime_error {
    explicit ReportError(const std::string& what) : std::runtime_error(what) {}
};

/// One plottable series. Values are (x, y) pairs.
struct Series {
    std::string name;
    std::vector<std::pair<double, double>> points;
};

std::string results_json(const ExperimentResult& result);
ExperimentResult results_from_json(const std::string& text);

/// Deterministic CSV: header line, then one row per entry formatted with
/// shortest round-trip doubles.
std::string csv_text(const std::string& header, const std::vector<std::vector<double>>& rows);

/// Self-contained SVG line plot. A single-point series renders a marker and
/// no line. Returns empty when every series is empty (caller writes no file).
std::string svg_line_plot(const std::string& title, const std::vector<Series>& series);

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

/// results.json + lambda_max.csv (+ SVG) for a single run.
void emit_run_artifacts(const ExperimentResult& result, const std::string& dir);

/// The paired Fig.-1-style report set: results_baseline.json,
/// results_s2ap.json, compare.json, lambda_max_{orig,s2ap}.csv,
/// hamming.csv (epoch,h_orig,h_s2ap,diff), sharpness.csv (rho,orig,s2ap) and
/// one SVG per series. Series missing on both sides produce a header-only
/// CSV and no SVG.
void emit_paired_artifacts(const PairedResult& paired, int warmup_epochs,
                           const std::string& dir);

void emit_gamma_sweep(const GammaSweepResult& sweep, const std::string& dir);

void emit_timings(const StageTimings& timings, const std::string& dir);

}  // namespace s2ap

#endif  // S2AP_REPORT_HPP
