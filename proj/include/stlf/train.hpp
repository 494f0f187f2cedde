#pragma once

#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "stlf/data.hpp"
#include "stlf/model.hpp"

namespace stlf {

struct TrainConfig {
    double lr = 2e-4;
    double decay = 1.0;  // multiplied into lr after each epoch
    int batch_size = 32;
    int epochs = 20;
    std::uint64_t seed = 2021;
    int patience = 5;  // early stop after this many epochs without val improvement
    bool eval_each_epoch = true;

    void validate() const;
    bool operator==(const TrainConfig&) const = default;
};

struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::int64_t step = 0;
    std::vector<std::vector<double>> m, v;

    void init(const ParamRefs& params);
};

// Mean of squared differences over all elements and channels.
Tensor mse_loss(const Context& ctx, const Tensor& pred, const Tensor& target);

// Standard bias-corrected Adam update, in place. grads align with params; a
// zero gradient (with zero moments) leaves the parameter bits untouched.
void adam_step(AdamState& state, const ParamRefs& params, const std::vector<Tensor>& grads,
               double lr);

struct EpochStats {
    int epoch = 0;
    double lr = 0.0;
    double train_mse = 0.0;
    double val_mse = std::numeric_limits<double>::quiet_NaN();
    double val_mae = std::numeric_limits<double>::quiet_NaN();
    double seconds = 0.0;
};

// One run-log line: "epoch, lr, train_mse, val_mse, val_mae, seconds".
std::string format_epoch_log(const EpochStats& stats);

struct TrainResult {
    std::vector<EpochStats> history;
    int best_epoch = -1;  // epoch whose weights the model carries (-1: final)
    double best_val_mse = std::numeric_limits<double>::quiet_NaN();
};

// Deterministic mini-batch training; the model ends up holding the
// best-validation weights (or the final ones when validation is off/empty).
TrainResult train(Forecaster& model, const WindowedDataset& data, const TrainConfig& cfg);

// Metrics on a frozen model over one split, averaged across windows. Set
// raw_scale to undo the standardization first (trajectory-style data).
struct Metrics {
    double mse = 0.0;
    double mae = 0.0;
};
Metrics evaluate(const Forecaster& model, const WindowedDataset& data, Split split,
                 bool raw_scale = false);

// Versioned binary checkpoint: config JSON, seed, named parameter tensors.
// Round trips are bit-exact.
void save_checkpoint(Forecaster& model, const std::string& path);
std::unique_ptr<Forecaster> load_checkpoint(const std::string& path);
// Throws ConfigError when the stored config differs from `expected`.
std::unique_ptr<Forecaster> load_checkpoint(const std::string& path, const ModelConfig& expected);

}  // namespace stlf
