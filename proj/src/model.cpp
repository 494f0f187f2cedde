#include "stlf/model.hpp"

#include <json.hpp>

namespace stlf {

const char* variant_name(ModelVariant v) {
    switch (v) {
        case ModelVariant::kStl: return "stl";
        case ModelVariant::kLinear: return "linear";
        case ModelVariant::kDlinear: return "dlinear";
        default: return "nlinear";
    }
}

ModelVariant variant_from_name(const std::string& name) {
    if (name == "stl") return ModelVariant::kStl;
    if (name == "linear") return ModelVariant::kLinear;
    if (name == "dlinear") return ModelVariant::kDlinear;
    if (name == "nlinear") return ModelVariant::kNlinear;
    throw ConfigError("unknown model variant '" + name + "'");
}

void ModelConfig::validate() const {
    if (T < 1 || tau < 1 || C < 1) throw ConfigError("T, tau and C must be >= 1");
    if (hidden_size < 1) throw ConfigError("hidden_size must be >= 1");
    if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw ConfigError("dropout must lie in [0,1)");
    if (theta_T < 0) throw ConfigError("theta_T must be >= 0");
    if (variant == ModelVariant::kStl && !route_core && !route_temporal && !route_spatial) {
        throw ConfigError("an STL model needs at least one route");
    }
    if (variant == ModelVariant::kStl && route_temporal && datetime_components.empty()) {
        throw ConfigError("the temporal route requires datetime_components");
    }
    if (variant == ModelVariant::kDlinear && (ma_kernel < 1 || ma_kernel % 2 == 0)) {
        throw ConfigError("dlinear ma_kernel must be odd and >= 1");
    }
}

std::string ModelConfig::label() const {
    switch (variant) {
        case ModelVariant::kLinear: return "Linear";
        case ModelVariant::kDlinear: return "DLinear";
        case ModelVariant::kNlinear: return "NLinear";
        case ModelVariant::kStl: break;
    }
    if (route_core && route_temporal && route_spatial) return "STL";
    std::string label = "STL";
    if (route_core) label += "-Core";
    if (route_temporal) label += "-Temporal";
    if (route_spatial) label += "-Spatial";
    return label;
}

bool ModelConfig::operator==(const ModelConfig& o) const {
    return variant == o.variant && T == o.T && tau == o.tau && C == o.C &&
           hidden_size == o.hidden_size && dropout_p == o.dropout_p &&
           activation == o.activation && leaky_alpha == o.leaky_alpha && theta_T == o.theta_T &&
           route_core == o.route_core && route_temporal == o.route_temporal &&
           route_spatial == o.route_spatial && datetime_components == o.datetime_components &&
           minute_bins == o.minute_bins && per_channel_weights == o.per_channel_weights &&
           ma_kernel == o.ma_kernel && attn_norm == o.attn_norm;
}

std::string config_to_json(const ModelConfig& c) {
    nlohmann::json j;
    j["variant"] = variant_name(c.variant);
    j["T"] = c.T;
    j["tau"] = c.tau;
    j["C"] = c.C;
    j["hidden_size"] = c.hidden_size;
    j["dropout"] = c.dropout_p;
    j["activation"] = activation_name(c.activation);
    j["leaky_alpha"] = c.leaky_alpha;
    j["theta_T"] = c.theta_T;
    std::vector<std::string> routes;
    if (c.route_core) routes.push_back("core");
    if (c.route_temporal) routes.push_back("temporal");
    if (c.route_spatial) routes.push_back("spatial");
    j["routes"] = routes;
    std::vector<std::string> comps;
    for (Component comp : c.datetime_components) comps.push_back(component_name(comp));
    j["datetime_components"] = comps;
    j["minute_bins"] = c.minute_bins;
    j["per_channel_weights"] = c.per_channel_weights;
    j["ma_kernel"] = c.ma_kernel;
    j["attn_norm"] = c.attn_norm == AttnNorm::kRowwise ? "row" : "col";
    return j.dump();
}

ModelConfig config_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("bad config json: ") + e.what());
    }
    ModelConfig c;
    c.variant = variant_from_name(j.at("variant").get<std::string>());
    c.T = j.at("T").get<int>();
    c.tau = j.at("tau").get<int>();
    c.C = j.at("C").get<int>();
    c.hidden_size = j.at("hidden_size").get<int>();
    c.dropout_p = j.at("dropout").get<double>();
    c.activation = activation_from_name(j.at("activation").get<std::string>());
    c.leaky_alpha = j.at("leaky_alpha").get<double>();
    c.theta_T = j.at("theta_T").get<int>();
    c.route_core = c.route_temporal = c.route_spatial = false;
    for (const auto& r : j.at("routes")) {
        const std::string name = r.get<std::string>();
        if (name == "core") c.route_core = true;
        else if (name == "temporal") c.route_temporal = true;
        else if (name == "spatial") c.route_spatial = true;
        else throw DataError("bad route '" + name + "' in config json");
    }
    c.datetime_components.clear();
    for (const auto& comp : j.at("datetime_components")) {
        c.datetime_components.push_back(component_from_name(comp.get<std::string>()));
    }
    c.minute_bins = j.at("minute_bins").get<int>();
    c.per_channel_weights = j.at("per_channel_weights").get<bool>();
    c.ma_kernel = j.at("ma_kernel").get<int>();
    c.attn_norm = j.at("attn_norm").get<std::string>() == "col" ? AttnNorm::kColwise
                                                                : AttnNorm::kRowwise;
    return c;
}

std::size_t Forecaster::param_count() {
    std::size_t n = 0;
    for (auto& [name, p] : params()) n += p->value.size();
    return n;
}

// ---------------------------------------------------------------------------
// STL model
// ---------------------------------------------------------------------------

namespace {

class StlModel final : public Forecaster {
 public:
    StlModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
        seed_ = seed;
        const int channels = cfg.per_channel_weights ? cfg.C : 1;
        const Context none;
        pe_t_ = transpose(none, positional_encoding(cfg.T, cfg.C));  // C x T

        if (cfg.route_core) {
            Rng rng = Rng::derive(seed, "route.core");
            core_ = make_res_l(cfg.T, cfg.tau, cfg.activation, cfg.dropout_p, rng, channels);
        }
        if (cfg.route_temporal) {
            Rng rng = Rng::derive(seed, "route.temporal");
            dt_embed_ = make_datetime_embedding(cfg.datetime_components, rng, 8, cfg.minute_bins);
            encoder_ = make_dynamic_coder(cfg.T, cfg.hidden_size, cfg.activation, cfg.dropout_p,
                                          &dt_embed_, rng, channels);
            mid1_ = make_res_l(cfg.hidden_size, cfg.hidden_size, cfg.activation, cfg.dropout_p,
                               rng, channels);
            mid2_ = make_res_l(cfg.hidden_size, cfg.tau, cfg.activation, cfg.dropout_p, rng,
                               channels);
            decoder_ = make_dynamic_coder(cfg.tau, cfg.tau, cfg.activation, cfg.dropout_p,
                                          &dt_embed_, rng, channels);
        }
        if (cfg.route_spatial) {
            Rng rng = Rng::derive(seed, "route.spatial");
            pre1_ = make_res_l(cfg.T, cfg.hidden_size, cfg.activation, cfg.dropout_p, rng,
                               channels);
            pre2_ = make_res_l(cfg.hidden_size, cfg.tau, cfg.activation, cfg.dropout_p, rng,
                               channels);
            post_ = make_res_l(cfg.tau, cfg.tau, cfg.activation, cfg.dropout_p, rng, channels);
        }
    }

    const ModelConfig& config() const override { return cfg_; }

    Tensor forward(const Context& ctx, const Tensor& obs, const CalendarStamps* obs_stamps,
                   const CalendarStamps* target_stamps) const override {
        if (obs.rank() != 2 || obs.rows() != cfg_.T || obs.cols() != cfg_.C) {
            throw DimensionError("stl forward: observation " + obs.shape().str() +
                                 " does not match config " + std::to_string(cfg_.T) + "x" +
                                 std::to_string(cfg_.C));
        }
        Tensor x = transpose(ctx, obs);  // C x T

        Tensor sum;
        auto accumulate = [&](const Tensor& route) {
            sum = sum.defined() ? add(ctx, sum, route) : route;
        };

        if (cfg_.route_core) accumulate(res_l_forward(ctx, core_, x));

        const bool temporal_active = cfg_.route_temporal && cfg_.T <= cfg_.theta_T;
        Tensor x_pe;
        if (temporal_active || cfg_.route_spatial) x_pe = add(ctx, x, pe_t_);

        if (temporal_active) {
            if (!obs_stamps || !target_stamps) {
                throw DataError("temporal route is active but calendar stamps are missing");
            }
            if (obs_stamps->size() != static_cast<std::size_t>(cfg_.T) ||
                target_stamps->size() != static_cast<std::size_t>(cfg_.tau)) {
                throw DimensionError("stamp lengths (" + std::to_string(obs_stamps->size()) +
                                     ", " + std::to_string(target_stamps->size()) +
                                     ") do not match (T, tau)");
            }
            Tensor enc = dynamic_coder_forward(ctx, encoder_, x_pe, *obs_stamps);
            Tensor mid = res_l_forward(ctx, mid2_, res_l_forward(ctx, mid1_, enc));
            accumulate(dynamic_coder_forward(ctx, decoder_, mid, *target_stamps));
        }

        if (cfg_.route_spatial) {
            Tensor prel = res_l_forward(ctx, pre2_, res_l_forward(ctx, pre1_, x_pe));
            Tensor attended = spatial_attention_forward(ctx, prel, cfg_.attn_norm);
            accumulate(res_l_forward(ctx, post_, attended));
        }

        if (!sum.defined()) sum = Tensor::zeros(Shape(cfg_.C, cfg_.tau));
        return transpose(ctx, sum);  // tau x C
    }

    ParamRefs params() override {
        ParamRefs refs;
        if (cfg_.route_core) collect_params(core_, "core", refs);
        if (cfg_.route_temporal) {
            collect_params(dt_embed_, "temporal.dt_embed", refs);
            collect_params(encoder_, "temporal.encoder", refs);
            collect_params(mid1_, "temporal.mid1", refs);
            collect_params(mid2_, "temporal.mid2", refs);
            collect_params(decoder_, "temporal.decoder", refs);
        }
        if (cfg_.route_spatial) {
            collect_params(pre1_, "spatial.pre1", refs);
            collect_params(pre2_, "spatial.pre2", refs);
            collect_params(post_, "spatial.post", refs);
        }
        return refs;
    }

 private:
    ModelConfig cfg_;
    Tensor pe_t_;
    ResLBlock core_;
    DateTimeEmbedding dt_embed_;
    DynamicCoder encoder_;
    ResLBlock mid1_, mid2_;
    DynamicCoder decoder_;
    ResLBlock pre1_, pre2_, post_;
};

// ---------------------------------------------------------------------------
// Linear baselines
// ---------------------------------------------------------------------------

class BaselineModel final : public Forecaster {
 public:
    BaselineModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
        seed_ = seed;
        Rng rng = Rng::derive(seed, "baseline");
        const int channels = cfg.per_channel_weights ? cfg.C : 1;
        if (cfg.variant == ModelVariant::kDlinear) {
            trend_ = make_linear(cfg.T, cfg.tau, rng, channels);
            remainder_ = make_linear(cfg.T, cfg.tau, rng, channels);
        } else {
            main_ = make_linear(cfg.T, cfg.tau, rng, channels);
        }
    }

    const ModelConfig& config() const override { return cfg_; }

    Tensor forward(const Context& ctx, const Tensor& obs, const CalendarStamps*,
                   const CalendarStamps*) const override {
        if (obs.rank() != 2 || obs.rows() != cfg_.T || obs.cols() != cfg_.C) {
            throw DimensionError("baseline forward: observation " + obs.shape().str() +
                                 " does not match config " + std::to_string(cfg_.T) + "x" +
                                 std::to_string(cfg_.C));
        }
        switch (cfg_.variant) {
            case ModelVariant::kLinear: {
                return transpose(ctx, linear_forward(ctx, main_, transpose(ctx, obs)));
            }
            case ModelVariant::kNlinear: {
                // Anchor on the final observation row, predict the offset.
                Tensor last = slice_rows(ctx, obs, cfg_.T - 1, cfg_.T);  // 1 x C
                Tensor centered = sub(ctx, obs, last);
                Tensor pred =
                    transpose(ctx, linear_forward(ctx, main_, transpose(ctx, centered)));
                return add(ctx, pred, last);
            }
            case ModelVariant::kDlinear: {
                Decomposition parts = dlinear_decompose(obs.detached(), cfg_.ma_kernel);
                Tensor yt = linear_forward(ctx, trend_, transpose(ctx, parts.trend));
                Tensor yr = linear_forward(ctx, remainder_, transpose(ctx, parts.remainder));
                return transpose(ctx, add(ctx, yt, yr));
            }
            default:
                throw UsageError("BaselineModel cannot run an stl config");
        }
    }

    ParamRefs params() override {
        ParamRefs refs;
        if (cfg_.variant == ModelVariant::kDlinear) {
            collect_params(trend_, "trend", refs);
            collect_params(remainder_, "remainder", refs);
        } else {
            collect_params(main_, "main", refs);
        }
        return refs;
    }

 private:
    ModelConfig cfg_;
    LinearLayer main_;
    LinearLayer trend_, remainder_;
};

}  // namespace

std::unique_ptr<Forecaster> make_model(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    if (config.variant == ModelVariant::kStl) {
        return std::make_unique<StlModel>(config, seed);
    }
    return std::make_unique<BaselineModel>(config, seed);
}

std::vector<ModelConfig> ablation_variants(const ModelConfig& base) {
    std::vector<ModelConfig> variants(4, base);
    variants[0].variant = ModelVariant::kStl;
    variants[0].route_core = variants[0].route_temporal = variants[0].route_spatial = true;

    variants[1] = variants[0];
    variants[1].route_temporal = false;

    variants[2] = variants[1];
    variants[2].route_spatial = false;

    variants[3] = base;
    variants[3].variant = ModelVariant::kLinear;
    return variants;
}

Tensor moving_average_time(const Tensor& x, int kernel) {
    if (x.rank() != 2) throw DimensionError("moving_average_time expects rank 2");
    if (kernel < 1 || kernel % 2 == 0) throw ConfigError("moving average kernel must be odd");
    if (x.requires_grad()) {
        throw UsageError("moving_average_time is a value-level decomposition; "
                         "input must not require grad");
    }
    const int T = x.rows(), C = x.cols();
    const int half = kernel / 2;
    std::vector<double> out(static_cast<std::size_t>(T) * C);
    for (int t = 0; t < T; ++t) {
        for (int c = 0; c < C; ++c) {
            double acc = 0.0;
            for (int k = -half; k <= half; ++k) {
                int idx = t + k;
                if (idx < 0) idx = 0;            // replicate front
                if (idx > T - 1) idx = T - 1;    // replicate back
                acc += x.at(idx, c);
            }
            out[static_cast<std::size_t>(t) * C + c] = acc / kernel;
        }
    }
    return Tensor::from_vector(std::move(out), x.shape());
}

Decomposition dlinear_decompose(const Tensor& x, int kernel) {
    Decomposition d;
    d.trend = moving_average_time(x, kernel);
    Context none;
    d.remainder = sub(none, x, d.trend);
    return d;
}

}  // namespace stlf
