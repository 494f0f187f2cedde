#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "stlf/layers.hpp"

namespace stlf {

enum class ModelVariant { kStl, kLinear, kDlinear, kNlinear };

const char* variant_name(ModelVariant v);
ModelVariant variant_from_name(const std::string& name);

struct ModelConfig {
    ModelVariant variant = ModelVariant::kStl;

    int T = 48;    // observation length
    int tau = 24;  // prediction length
    int C = 1;     // channels

    int hidden_size = 256;
    double dropout_p = 0.0;
    Activation activation = Activation::kSilu;
    double leaky_alpha = 0.01;

    // Temporal route gate: the route contributes only when T <= theta_T.
    int theta_T = 96;

    bool route_core = true;
    bool route_temporal = true;
    bool route_spatial = true;

    std::vector<Component> datetime_components;
    int minute_bins = 4;

    // Off by default: linear weights are shared across channels. On, every
    // channel row gets its own weights in all linear layers.
    bool per_channel_weights = false;

    int ma_kernel = 25;  // dlinear decomposition window (odd)
    AttnNorm attn_norm = AttnNorm::kRowwise;

    void validate() const;
    std::string label() const;
    bool operator==(const ModelConfig& o) const;
};

std::string config_to_json(const ModelConfig& config);
ModelConfig config_from_json(const std::string& text);

// ---------------------------------------------------------------------------
// Forecaster: one-shot map from a (T x C) observation to a (tau x C)
// prediction. Stamps may be null for models/routes that do not use them.
// ---------------------------------------------------------------------------
class Forecaster {
 public:
    virtual ~Forecaster() = default;
    virtual const ModelConfig& config() const = 0;
    virtual Tensor forward(const Context& ctx, const Tensor& obs,
                           const CalendarStamps* obs_stamps,
                           const CalendarStamps* target_stamps) const = 0;
    virtual ParamRefs params() = 0;

    std::size_t param_count();
    std::uint64_t seed() const { return seed_; }

 protected:
    std::uint64_t seed_ = 0;
};

// Deterministic construction: the same (config, seed) always produces the
// same parameters, and each route draws from its own derived stream so that
// disabling one route leaves the others' initialization untouched.
std::unique_ptr<Forecaster> make_model(const ModelConfig& config, std::uint64_t seed);

// The four ablation configurations, in order:
//   full STL; core+spatial; core-only; plain linear baseline.
std::vector<ModelConfig> ablation_variants(const ModelConfig& base);

// Centered moving average along the time axis (rows) with replicate padding
// at both ends. kernel must be odd and >= 1. Value-level helper for the
// dlinear decomposition; the input must not require grad.
Tensor moving_average_time(const Tensor& x, int kernel);

struct Decomposition {
    Tensor trend;
    Tensor remainder;  // x - trend
};
Decomposition dlinear_decompose(const Tensor& x, int kernel);

}  // namespace stlf
