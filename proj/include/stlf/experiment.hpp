#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "stlf/train.hpp"

namespace stlf {

// ---------------------------------------------------------------------------
// Sweep specification: every (variant, T, tau, seed) combination is one
// independently trained and evaluated cell.
// ---------------------------------------------------------------------------
struct ExperimentSpec {
    std::string dataset_id = "dataset";
    std::vector<ModelConfig> variants;
    std::vector<int> T_grid;
    std::vector<int> tau_grid;
    std::vector<std::uint64_t> seeds = {2021};
    bool best_T_mode = false;
    TrainConfig train;
    bool raw_scale_metrics = false;
    int jobs = 1;  // concurrent cells

    void validate() const;
};

struct CellResult {
    std::string variant;
    std::string dataset;
    int T = 0;
    int tau = 0;
    std::uint64_t seed = 0;
    double mse = std::numeric_limits<double>::quiet_NaN();
    double mae = std::numeric_limits<double>::quiet_NaN();
    bool failed = false;
    std::string note;
};

struct AggregateRow {
    std::string variant;
    std::string dataset;
    int T = 0;
    int tau = 0;
    int n_seeds = 0;
    double mse = std::numeric_limits<double>::quiet_NaN();
    double mae = std::numeric_limits<double>::quiet_NaN();
};

struct MetricsReport {
    std::vector<CellResult> rows;
    std::string dataset_id;
    std::uint64_t config_hash = 0;
    std::string version = kVersion;
    bool best_T_mode = false;

    // Mean over seeds per (variant, T, tau); failed cells are skipped.
    std::vector<AggregateRow> aggregate() const;
    // Per (variant, tau): the T with the smallest seed-mean MSE.
    std::vector<AggregateRow> best_t() const;
};

// Trains and evaluates every cell; a failing cell is recorded (failed +
// note) and the grid continues. Cell results do not depend on `jobs`.
MetricsReport run_grid(const ExperimentSpec& spec, std::shared_ptr<const PreparedData> data);

std::uint64_t spec_hash(const ExperimentSpec& spec);
std::string run_manifest(const ExperimentSpec& spec);

// CSV with stable columns: variant,dataset,T,tau,seed,mse,mae,failed,note.
// Doubles are written with 17 significant digits so a re-parse is exact.
void emit_report_csv(const MetricsReport& report, const std::string& path);
MetricsReport parse_report_csv(const std::string& path);

// Markdown table of seed-aggregated rows; the best MSE within each
// (dataset, T, tau) group is bold.
void emit_report_markdown(const MetricsReport& report, const std::string& path);

// Accuracy-vs-tau curves for one observation length: column "tau" plus one
// 1/MSE column per variant. A zero MSE is emitted as the sentinel "inf".
void emit_accuracy_curves(const MetricsReport& report, int T, const std::string& path);

// Per-variant prediction traces for one window and channel: ground truth
// spans T+tau rows, predictions fill the final tau rows.
struct TraceModel {
    std::string label;
    const Forecaster* model = nullptr;
};
void emit_traces(const std::vector<TraceModel>& models, const Window& window, int channel,
                 const std::string& path);

}  // namespace stlf
