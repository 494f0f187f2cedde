#include "stlf/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace stlf {

void TrainConfig::validate() const {
    if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
    if (!(decay > 0.0 && decay <= 1.0)) throw ConfigError("decay must lie in (0, 1]");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (epochs < 0) throw ConfigError("epochs must be >= 0");
    if (patience < 0) throw ConfigError("patience must be >= 0");
}

void AdamState::init(const ParamRefs& params) {
    step = 0;
    m.assign(params.size(), {});
    v.assign(params.size(), {});
    for (std::size_t i = 0; i < params.size(); ++i) {
        m[i].assign(params[i].second->value.size(), 0.0);
        v[i].assign(params[i].second->value.size(), 0.0);
    }
}

Tensor mse_loss(const Context& ctx, const Tensor& pred, const Tensor& target) {
    if (!(pred.shape() == target.shape())) {
        throw DimensionError("mse_loss: prediction " + pred.shape().str() +
                             " vs target " + target.shape().str());
    }
    Tensor diff = sub(ctx, pred, target);
    return reduce_mean(ctx, mul(ctx, diff, diff), -1);
}

void adam_step(AdamState& state, const ParamRefs& params, const std::vector<Tensor>& grads,
               double lr) {
    if (params.size() != grads.size() || params.size() != state.m.size()) {
        throw UsageError("adam_step: params, grads and state are misaligned");
    }
    state.step += 1;
    const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Param* p = params[i].second;
        const std::size_t n = p->value.size();
        if (grads[i].size() != n) {
            throw DimensionError("adam_step: grad for '" + params[i].first +
                                 "' has wrong size");
        }
        std::vector<double> next = p->value.to_vector();
        const double* g = grads[i].data();
        double* mi = state.m[i].data();
        double* vi = state.v[i].data();
        for (std::size_t k = 0; k < n; ++k) {
            mi[k] = state.beta1 * mi[k] + (1.0 - state.beta1) * g[k];
            vi[k] = state.beta2 * vi[k] + (1.0 - state.beta2) * g[k] * g[k];
            next[k] -= lr * (mi[k] / c1) / (std::sqrt(vi[k] / c2) + state.eps);
        }
        p->assign(Tensor::from_vector(std::move(next), p->value.shape()));
    }
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

Metrics evaluate(const Forecaster& model, const WindowedDataset& data, Split split,
                 bool raw_scale) {
    const int n = data.count(split);
    if (n == 0) throw DataError("evaluate: split holds no windows");
    Context ctx;  // inference: no tape, dropout off
    const Scaler& scaler = data.prepared().scaler;
    double mse_total = 0.0, mae_total = 0.0;
    for (int i = 0; i < n; ++i) {
        Window w = data.window(split, i);
        Tensor pred = model.forward(ctx, w.obs, w.has_stamps ? &w.obs_stamps : nullptr,
                                    w.has_stamps ? &w.target_stamps : nullptr);
        Tensor target = w.target;
        if (raw_scale) {
            pred = scaler.inverse(pred);
            target = scaler.inverse(target);
        }
        double se = 0.0, ae = 0.0;
        const double* pp = pred.data();
        const double* pt = target.data();
        for (std::size_t k = 0; k < pred.size(); ++k) {
            const double d = pp[k] - pt[k];
            se += d * d;
            ae += std::abs(d);
        }
        mse_total += se / static_cast<double>(pred.size());
        mae_total += ae / static_cast<double>(pred.size());
    }
    return {mse_total / n, mae_total / n};
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

namespace {

std::vector<Tensor> snapshot_values(const ParamRefs& params) {
    std::vector<Tensor> out;
    out.reserve(params.size());
    for (auto& [name, p] : params) out.push_back(p->value);
    return out;
}

void restore_values(const ParamRefs& params, const std::vector<Tensor>& values) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i].second->assign(values[i]);
}

}  // namespace

std::string format_epoch_log(const EpochStats& s) {
    char buf[192];
    std::snprintf(buf, sizeof(buf), "%d, %.8g, %.8g, %.8g, %.8g, %.3f", s.epoch, s.lr,
                  s.train_mse, s.val_mse, s.val_mae, s.seconds);
    return buf;
}

TrainResult train(Forecaster& model, const WindowedDataset& data, const TrainConfig& cfg) {
    cfg.validate();
    const ModelConfig& mc = model.config();
    if (data.T() != mc.T || data.tau() != mc.tau || data.prepared().C != mc.C) {
        throw ConfigError("dataset windows (" + std::to_string(data.T()) + "," +
                          std::to_string(data.tau()) + "," + std::to_string(data.prepared().C) +
                          ") do not match the model config (" + std::to_string(mc.T) + "," +
                          std::to_string(mc.tau) + "," + std::to_string(mc.C) + ")");
    }

    TrainResult result;
    if (cfg.epochs == 0) return result;

    ParamRefs params = model.params();
    AdamState adam;
    adam.init(params);

    Rng shuffle_rng = Rng::derive(cfg.seed, "train.shuffle");
    Rng dropout_rng = Rng::derive(cfg.seed, "train.dropout");

    const int n_train = data.count(Split::kTrain);
    if (n_train == 0) throw DataError("train: no training windows");
    const bool track_val = cfg.eval_each_epoch && data.count(Split::kVal) > 0;

    double lr = cfg.lr;
    double best_val = std::numeric_limits<double>::infinity();
    std::vector<Tensor> best_params;
    int epochs_since_best = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        const std::vector<std::size_t> order = shuffle_rng.permutation(n_train);

        double epoch_sq_sum = 0.0;
        for (int start = 0, batch_index = 0; start < n_train;
             start += cfg.batch_size, ++batch_index) {
            const int batch_n = std::min(cfg.batch_size, n_train - start);
            Tape tape;
            Context ctx;
            ctx.tape = &tape;
            ctx.rng = &dropout_rng;
            ctx.training = true;

            Tensor batch_sum;
            for (int b = 0; b < batch_n; ++b) {
                Window w = data.window(Split::kTrain, static_cast<int>(order[start + b]));
                Tensor pred = model.forward(ctx, w.obs, w.has_stamps ? &w.obs_stamps : nullptr,
                                            w.has_stamps ? &w.target_stamps : nullptr);
                Tensor loss = mse_loss(ctx, pred, w.target);
                batch_sum = batch_sum.defined() ? add(ctx, batch_sum, loss) : loss;
            }
            Tensor batch_loss = scale(ctx, batch_sum, 1.0 / batch_n);
            const double loss_value = batch_loss.item();
            if (!std::isfinite(loss_value)) {
                throw NumericError("non-finite training loss at epoch " + std::to_string(epoch) +
                                   ", batch " + std::to_string(batch_index) + ", lr " +
                                   std::to_string(lr));
            }
            epoch_sq_sum += loss_value * batch_n;

            tape.backward(batch_loss);
            std::vector<Tensor> grads;
            grads.reserve(params.size());
            for (auto& [name, p] : params) grads.push_back(param_grad(tape, *p));
            adam_step(adam, params, grads, lr);
        }

        EpochStats stats;
        stats.epoch = epoch;
        stats.lr = lr;
        stats.train_mse = epoch_sq_sum / n_train;
        if (track_val) {
            Metrics val = evaluate(model, data, Split::kVal);
            stats.val_mse = val.mse;
            stats.val_mae = val.mae;
            if (val.mse < best_val) {
                best_val = val.mse;
                best_params = snapshot_values(params);
                result.best_epoch = epoch;
                epochs_since_best = 0;
            } else {
                ++epochs_since_best;
            }
        }
        stats.seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.history.push_back(stats);

        lr *= cfg.decay;
        if (track_val && cfg.patience > 0 && epochs_since_best >= cfg.patience) break;
    }

    if (!best_params.empty()) {
        restore_values(params, best_params);
        result.best_val_mse = best_val;
    }
    return result;
}

// ---------------------------------------------------------------------------
// Checkpointing
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'S', 'T', 'L', 'F'};
constexpr std::uint32_t kCheckpointVersion = 1;

void write_u32(std::ofstream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void write_u64(std::ofstream& out, std::uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint32_t read_u32(std::ifstream& in, const std::string& path) {
    std::uint32_t v = 0;
    if (!in.read(reinterpret_cast<char*>(&v), sizeof(v))) {
        throw DataError(path + ": truncated checkpoint");
    }
    return v;
}
std::uint64_t read_u64(std::ifstream& in, const std::string& path) {
    std::uint64_t v = 0;
    if (!in.read(reinterpret_cast<char*>(&v), sizeof(v))) {
        throw DataError(path + ": truncated checkpoint");
    }
    return v;
}

}  // namespace

void save_checkpoint(Forecaster& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out.is_open()) throw DataError("cannot write checkpoint: " + path);
    out.write(kMagic, 4);
    write_u32(out, kCheckpointVersion);
    write_u64(out, model.seed());
    const std::string config = config_to_json(model.config());
    write_u32(out, static_cast<std::uint32_t>(config.size()));
    out.write(config.data(), static_cast<std::streamsize>(config.size()));

    ParamRefs params = model.params();
    write_u32(out, static_cast<std::uint32_t>(params.size()));
    for (auto& [name, p] : params) {
        write_u32(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        const Shape& shape = p->value.shape();
        write_u32(out, static_cast<std::uint32_t>(shape.rank()));
        for (int i = 0; i < shape.rank(); ++i) write_u32(out, static_cast<std::uint32_t>(shape.dim(i)));
        write_u64(out, p->value.size());
        out.write(reinterpret_cast<const char*>(p->value.data()),
                  static_cast<std::streamsize>(p->value.size() * sizeof(double)));
    }
    if (!out) throw DataError("failed while writing checkpoint: " + path);
}

std::unique_ptr<Forecaster> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in.is_open()) throw DataError("cannot open checkpoint: " + path);
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
        throw DataError(path + ": not a checkpoint file");
    }
    const std::uint32_t version = read_u32(in, path);
    if (version != kCheckpointVersion) {
        throw DataError(path + ": checkpoint version " + std::to_string(version) +
                        " unsupported (expected " + std::to_string(kCheckpointVersion) + ")");
    }
    const std::uint64_t seed = read_u64(in, path);
    const std::uint32_t config_len = read_u32(in, path);
    std::string config_text(config_len, '\0');
    if (!in.read(config_text.data(), config_len)) throw DataError(path + ": truncated checkpoint");
    const ModelConfig config = config_from_json(config_text);

    auto model = make_model(config, seed);
    ParamRefs params = model->params();
    const std::uint32_t count = read_u32(in, path);
    if (count != params.size()) {
        throw DataError(path + ": checkpoint holds " + std::to_string(count) +
                        " parameters, model expects " + std::to_string(params.size()));
    }
    for (auto& [name, p] : params) {
        const std::uint32_t name_len = read_u32(in, path);
        std::string stored_name(name_len, '\0');
        if (!in.read(stored_name.data(), name_len)) throw DataError(path + ": truncated checkpoint");
        if (stored_name != name) {
            throw DataError(path + ": parameter order mismatch ('" + stored_name +
                            "' vs expected '" + name + "')");
        }
        const std::uint32_t rank = read_u32(in, path);
        if (rank < 1 || rank > 3) throw DataError(path + ": bad tensor rank");
        int dims[3] = {1, 1, 1};
        for (std::uint32_t i = 0; i < rank; ++i) dims[i] = static_cast<int>(read_u32(in, path));
        Shape shape = rank == 1 ? Shape(dims[0])
                                : rank == 2 ? Shape(dims[0], dims[1])
                                            : Shape(dims[0], dims[1], dims[2]);
        if (!(shape == p->value.shape())) {
            throw DataError(path + ": shape mismatch for '" + name + "'");
        }
        const std::uint64_t n = read_u64(in, path);
        if (n != shape.size()) throw DataError(path + ": corrupt tensor header for '" + name + "'");
        std::vector<double> values(n);
        if (!in.read(reinterpret_cast<char*>(values.data()),
                     static_cast<std::streamsize>(n * sizeof(double)))) {
            throw DataError(path + ": truncated checkpoint");
        }
        p->assign(Tensor::from_vector(std::move(values), shape));
    }
    return model;
}

std::unique_ptr<Forecaster> load_checkpoint(const std::string& path, const ModelConfig& expected) {
    auto model = load_checkpoint(path);
    if (!(model->config() == expected)) {
        throw ConfigError(path + ": checkpoint config does not match the expected run config");
    }
    return model;
}

}  // namespace stlf
