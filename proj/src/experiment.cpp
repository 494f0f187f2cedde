#include "stlf/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <map>
#include <sstream>
#include <thread>

namespace stlf {

void ExperimentSpec::validate() const {
    if (variants.empty()) throw ConfigError("experiment needs at least one model variant");
    if (T_grid.empty() || tau_grid.empty()) throw ConfigError("experiment grids must be non-empty");
    if (seeds.empty()) throw ConfigError("experiment needs at least one seed");
    if (jobs < 1) throw ConfigError("jobs must be >= 1");
    train.validate();
}

// ---------------------------------------------------------------------------
// Grid runner
// ---------------------------------------------------------------------------

namespace {

CellResult run_cell(const ExperimentSpec& spec, std::shared_ptr<const PreparedData> data,
                    const ModelConfig& variant, int T, int tau, std::uint64_t seed) {
    CellResult cell;
    cell.variant = variant.label();
    cell.dataset = spec.dataset_id;
    cell.T = T;
    cell.tau = tau;
    cell.seed = seed;
    try {
        ModelConfig cfg = variant;
        cfg.T = T;
        cfg.tau = tau;
        cfg.C = data->C;
        if (cfg.variant == ModelVariant::kStl && cfg.route_temporal && !data->calendar) {
            throw ConfigError("temporal route requires calendar timestamps");
        }
        if (cfg.variant == ModelVariant::kStl && cfg.route_temporal) {
            for (Component c : cfg.datetime_components) {
                if (c == Component::kMinute && data->interval > 900) {
                    throw ConfigError("minute component unavailable at this interval");
                }
            }
        }
        WindowedDataset windows(data, T, tau, 1, false);
        auto model = make_model(cfg, seed);
        TrainConfig tc = spec.train;
        tc.seed = seed;
        train(*model, windows, tc);
        Metrics metrics = evaluate(*model, windows, Split::kTest, spec.raw_scale_metrics);
        cell.mse = metrics.mse;
        cell.mae = metrics.mae;
    } catch (const std::exception& e) {
        cell.failed = true;
        cell.note = e.what();
        for (auto& ch : cell.note) {
            if (ch == ',' || ch == '\n') ch = ';';
        }
    }
    return cell;
}

}  // namespace

MetricsReport run_grid(const ExperimentSpec& spec, std::shared_ptr<const PreparedData> data) {
    spec.validate();
    struct CellKey {
        const ModelConfig* variant;
        int T, tau;
        std::uint64_t seed;
    };
    std::vector<CellKey> keys;
    for (const ModelConfig& variant : spec.variants)
        for (int T : spec.T_grid)
            for (int tau : spec.tau_grid)
                for (std::uint64_t seed : spec.seeds) keys.push_back({&variant, T, tau, seed});

    MetricsReport report;
    report.dataset_id = spec.dataset_id;
    report.config_hash = spec_hash(spec);
    report.best_T_mode = spec.best_T_mode;
    report.rows.resize(keys.size());

    const int jobs = std::min<int>(spec.jobs, static_cast<int>(keys.size()));
    if (jobs <= 1) {
        for (std::size_t i = 0; i < keys.size(); ++i) {
            const CellKey& k = keys[i];
            report.rows[i] = run_cell(spec, data, *k.variant, k.T, k.tau, k.seed);
        }
    } else {
        std::atomic<std::size_t> next{0};
        auto worker = [&]() {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= keys.size()) return;
                const CellKey& k = keys[i];
                report.rows[i] = run_cell(spec, data, *k.variant, k.T, k.tau, k.seed);
            }
        };
        std::vector<std::thread> pool;
        for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    return report;
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

std::vector<AggregateRow> MetricsReport::aggregate() const {
    std::vector<AggregateRow> out;
    auto find = [&](const std::string& variant, int T, int tau) -> AggregateRow* {
        for (auto& row : out) {
            if (row.variant == variant && row.T == T && row.tau == tau) return &row;
        }
        return nullptr;
    };
    for (const CellResult& cell : rows) {
        if (cell.failed) continue;
        AggregateRow* agg = find(cell.variant, cell.T, cell.tau);
        if (!agg) {
            out.push_back(AggregateRow{cell.variant, cell.dataset, cell.T, cell.tau, 0, 0.0, 0.0});
            agg = &out.back();
        }
        agg->mse += cell.mse;
        agg->mae += cell.mae;
        agg->n_seeds += 1;
    }
    for (auto& row : out) {
        if (row.n_seeds > 0) {
            row.mse /= row.n_seeds;
            row.mae /= row.n_seeds;
        }
    }
    return out;
}

std::vector<AggregateRow> MetricsReport::best_t() const {
    std::vector<AggregateRow> all = aggregate();
    std::vector<AggregateRow> out;
    for (const AggregateRow& row : all) {
        AggregateRow* best = nullptr;
        for (auto& b : out) {
            if (b.variant == row.variant && b.tau == row.tau) best = &b;
        }
        if (!best) {
            out.push_back(row);
        } else if (row.mse < best->mse) {
            *best = row;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Manifest and hashing
// ---------------------------------------------------------------------------

std::uint64_t spec_hash(const ExperimentSpec& spec) {
    std::string text = spec.dataset_id;
    for (const auto& v : spec.variants) text += "|" + config_to_json(v);
    for (int T : spec.T_grid) text += ",T" + std::to_string(T);
    for (int tau : spec.tau_grid) text += ",p" + std::to_string(tau);
    for (auto seed : spec.seeds) text += ",s" + std::to_string(seed);
    text += "|lr" + std::to_string(spec.train.lr) + "|d" + std::to_string(spec.train.decay) +
            "|b" + std::to_string(spec.train.batch_size) + "|e" +
            std::to_string(spec.train.epochs) + "|raw" + (spec.raw_scale_metrics ? "1" : "0");
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string run_manifest(const ExperimentSpec& spec) {
    nlohmann::json j;
    j["version"] = kVersion;
    j["dataset"] = spec.dataset_id;
    j["config_hash"] = spec_hash(spec);
    std::vector<std::string> labels;
    for (const auto& v : spec.variants) labels.push_back(v.label());
    j["variants"] = labels;
    j["T_grid"] = spec.T_grid;
    j["tau_grid"] = spec.tau_grid;
    j["seeds"] = spec.seeds;
    j["best_T_mode"] = spec.best_T_mode;
    j["raw_scale_metrics"] = spec.raw_scale_metrics;
    j["train"] = {{"lr", spec.train.lr},
                  {"decay", spec.train.decay},
                  {"batch_size", spec.train.batch_size},
                  {"epochs", spec.train.epochs},
                  {"patience", spec.train.patience},
                  {"seed", spec.train.seed}};
    return j.dump(2);
}

// ---------------------------------------------------------------------------
// Report emission
// ---------------------------------------------------------------------------

namespace {

std::string fmt17(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path);
    if (!out.is_open()) throw DataError("cannot write file: " + path);
    return out;
}

}  // namespace

void emit_report_csv(const MetricsReport& report, const std::string& path) {
    std::ofstream out = open_out(path);
    out << "variant,dataset,T,tau,seed,mse,mae,failed,note\n";
    for (const CellResult& cell : report.rows) {
        out << cell.variant << ',' << cell.dataset << ',' << cell.T << ',' << cell.tau << ','
            << cell.seed << ',' << fmt17(cell.mse) << ',' << fmt17(cell.mae) << ','
            << (cell.failed ? 1 : 0) << ',' << cell.note << '\n';
    }
}

MetricsReport parse_report_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in.is_open()) throw DataError("cannot open report: " + path);
    std::string line;
    if (!std::getline(in, line)) throw DataError(path + ": empty report");
    MetricsReport report;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, ',')) fields.push_back(field);
        if (fields.size() < 8) throw DataError(path + ": malformed report row: " + line);
        CellResult cell;
        cell.variant = fields[0];
        cell.dataset = fields[1];
        cell.T = std::stoi(fields[2]);
        cell.tau = std::stoi(fields[3]);
        cell.seed = std::stoull(fields[4]);
        auto parse = [&](const std::string& s) {
            double v;
            auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
            if (ec != std::errc()) throw DataError(path + ": bad numeric field '" + s + "'");
            (void)ptr;
            return v;
        };
        cell.mse = parse(fields[5]);
        cell.mae = parse(fields[6]);
        cell.failed = fields[7] == "1";
        if (fields.size() > 8) cell.note = fields[8];
        report.rows.push_back(std::move(cell));
    }
    if (!report.rows.empty()) report.dataset_id = report.rows[0].dataset;
    return report;
}

void emit_report_markdown(const MetricsReport& report, const std::string& path) {
    std::ofstream out = open_out(path);
    const std::vector<AggregateRow> rows =
        report.best_T_mode ? report.best_t() : report.aggregate();
    out << "| variant | dataset | T | tau | mse | mae |\n";
    out << "|---|---|---|---|---|---|\n";
    char buf[32];
    for (const AggregateRow& row : rows) {
        // best MSE within the same (dataset, T, tau) group gets bold
        bool best = true;
        for (const AggregateRow& other : rows) {
            if (other.T == row.T && other.tau == row.tau && other.dataset == row.dataset &&
                other.mse < row.mse) {
                best = false;
            }
        }
        std::snprintf(buf, sizeof(buf), "%.6g", row.mse);
        const std::string mse_text = best ? "**" + std::string(buf) + "**" : std::string(buf);
        std::snprintf(buf, sizeof(buf), "%.6g", row.mae);
        out << "| " << row.variant << " | " << row.dataset << " | " << row.T << " | " << row.tau
            << " | " << mse_text << " | " << buf << " |\n";
    }
}

void emit_accuracy_curves(const MetricsReport& report, int T, const std::string& path) {
    const std::vector<AggregateRow> rows = report.aggregate();
    std::vector<std::string> variants;
    std::vector<int> taus;
    for (const AggregateRow& row : rows) {
        if (row.T != T) continue;
        if (std::find(variants.begin(), variants.end(), row.variant) == variants.end()) {
            variants.push_back(row.variant);
        }
        if (std::find(taus.begin(), taus.end(), row.tau) == taus.end()) taus.push_back(row.tau);
    }
    std::sort(taus.begin(), taus.end());

    std::ofstream out = open_out(path);
    out << "tau";
    for (const auto& v : variants) out << ',' << v;
    out << '\n';
    for (int tau : taus) {
        out << tau;
        for (const auto& v : variants) {
            const AggregateRow* found = nullptr;
            for (const AggregateRow& row : rows) {
                if (row.T == T && row.tau == tau && row.variant == v) found = &row;
            }
            out << ',';
            if (!found) {
                out << "nan";
            } else if (found->mse == 0.0) {
                out << "inf";  // sentinel: 1/MSE undefined
            } else {
                out << fmt17(1.0 / found->mse);
            }
        }
        out << '\n';
    }
}

void emit_traces(const std::vector<TraceModel>& models, const Window& window, int channel,
                 const std::string& path) {
    if (channel < 0 || channel >= window.obs.cols()) {
        throw ConfigError("trace channel out of range");
    }
    const int T = window.obs.rows();
    const int tau = window.target.rows();
    Context ctx;
    std::vector<Tensor> preds;
    preds.reserve(models.size());
    for (const TraceModel& m : models) {
        preds.push_back(m.model->forward(ctx, window.obs,
                                         window.has_stamps ? &window.obs_stamps : nullptr,
                                         window.has_stamps ? &window.target_stamps : nullptr));
    }
    std::ofstream out = open_out(path);
    out << "t,truth";
    for (const TraceModel& m : models) out << ',' << m.label;
    out << '\n';
    for (int t = 0; t < T + tau; ++t) {
        const double truth = t < T ? window.obs.at(t, channel) : window.target.at(t - T, channel);
        out << t << ',' << fmt17(truth);
        for (const Tensor& pred : preds) {
            out << ',';
            if (t >= T) out << fmt17(pred.at(t - T, channel));
        }
        out << '\n';
    }
}

}  // namespace stlf
