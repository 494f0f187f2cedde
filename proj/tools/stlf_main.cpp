// stlf: train, evaluate and sweep SpatioTemporal-Linear forecasters from
// declarative runfiles. Exit codes: 0 ok, 1 config error, 2 data error,
// 3 numeric abort.
#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "oracles.hpp"
#include "stlf/experiment.hpp"
#include "stlf/runfile.hpp"

namespace fs = std::filesystem;
using namespace stlf;

namespace {

struct CommonOpts {
    std::string config;
    std::string out;
    std::string preset;
    std::optional<std::uint64_t> seed;
    int jobs = 0;
};

RunFile load_effective(const CommonOpts& opts) {
    std::ifstream in(opts.config);
    if (!in.is_open()) throw ConfigError("cannot open runfile: " + opts.config);
    std::stringstream buffer;
    buffer << in.rdbuf();
    const std::string text = buffer.str();

    RunFile rf = parse_runfile(text);
    std::string preset = opts.preset;
    if (preset.empty() && is_known_preset(rf.dataset.name)) preset = rf.dataset.name;
    if (!preset.empty()) apply_preset(rf, preset, runfile_keys(text));
    if (opts.seed) {
        rf.train.seed = *opts.seed;
        rf.seeds = {*opts.seed};
    }
    if (opts.jobs > 0) rf.jobs = opts.jobs;
    return rf;
}

RawSeries load_series(const RunFile& rf) {
    if (rf.dataset.synthetic) return gen_synthetic(rf.dataset.synth);
    if (rf.dataset.path.empty()) {
        throw ConfigError("runfile needs dataset.path or dataset.synthetic = true");
    }
    return load_csv(rf.dataset.path);
}

std::shared_ptr<const PreparedData> prepare(const RunFile& rf, const RawSeries& series) {
    auto data = split_and_scale(series, rf.dataset.ratio);
    for (const std::string& warning : data->warnings) std::cerr << "warning: " << warning << "\n";
    if (rf.model.variant == ModelVariant::kStl && rf.model.route_temporal) {
        if (!data->calendar) {
            throw ConfigError("temporal route needs calendar timestamps; disable it via "
                              "model.routes or use a calendar dataset");
        }
        for (Component c : rf.model.datetime_components) {
            if (c == Component::kMinute && data->interval > 900) {
                throw ConfigError("minute component requested but the dataset interval is coarser "
                                  "than 15 minutes");
            }
        }
    }
    return data;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out.is_open()) throw DataError("cannot write: " + path);
    out << text;
}

int cmd_train(const CommonOpts& opts) {
    RunFile rf = load_effective(opts);
    RawSeries series = load_series(rf);
    auto data = prepare(rf, series);

    ModelConfig cfg = rf.model;
    cfg.C = data->C;
    WindowedDataset windows(data, cfg.T, cfg.tau, 1, /*allow_empty_splits=*/true);
    auto model = make_model(cfg, rf.train.seed);
    std::cout << "model " << cfg.label() << " with " << model->param_count() << " parameters\n";

    TrainResult result = train(*model, windows, rf.train);

    fs::create_directories(opts.out);
    save_checkpoint(*model, opts.out + "/checkpoint.stlf");
    std::ostringstream log;
    log << "# epoch, lr, train_mse, val_mse, val_mae, seconds\n";
    for (const EpochStats& e : result.history) log << format_epoch_log(e) << "\n";
    write_text(opts.out + "/train_log.txt", log.str());
    write_text(opts.out + "/manifest.run", emit_runfile(rf));
    write_text(opts.out + "/dataset_manifest.json", dataset_manifest(*data));

    for (const EpochStats& e : result.history) std::cout << format_epoch_log(e) << "\n";
    if (windows.count(Split::kTest) > 0) {
        Metrics test = evaluate(*model, windows, Split::kTest, rf.raw_scale);
        char buf[96];
        std::snprintf(buf, sizeof(buf), "test mse %.6f mae %.6f", test.mse, test.mae);
        std::cout << buf << "\n";
        std::ostringstream metrics;
        metrics << "mse,mae\n" << test.mse << ',' << test.mae << "\n";
        write_text(opts.out + "/metrics.csv", metrics.str());
    }
    std::cout << "artifacts written to " << opts.out << "\n";
    return 0;
}

int cmd_eval(const CommonOpts& opts, const std::string& checkpoint) {
    RunFile rf = load_effective(opts);
    RawSeries series = load_series(rf);
    auto data = prepare(rf, series);
    ModelConfig cfg = rf.model;
    cfg.C = data->C;
    auto model = load_checkpoint(checkpoint, cfg);
    WindowedDataset windows(data, cfg.T, cfg.tau, 1, true);
    Metrics test = evaluate(*model, windows, Split::kTest, rf.raw_scale);
    char buf[96];
    std::snprintf(buf, sizeof(buf), "test mse %.6f mae %.6f", test.mse, test.mae);
    std::cout << buf << "\n";
    if (!opts.out.empty()) {
        fs::create_directories(opts.out);
        std::ostringstream metrics;
        metrics << "mse,mae\n" << test.mse << ',' << test.mae << "\n";
        write_text(opts.out + "/metrics.csv", metrics.str());
    }
    return 0;
}

int cmd_sweep(const CommonOpts& opts) {
    RunFile rf = load_effective(opts);
    RawSeries series = load_series(rf);
    auto data = split_and_scale(series, rf.dataset.ratio);
    for (const std::string& warning : data->warnings) std::cerr << "warning: " << warning << "\n";

    ExperimentSpec spec = to_experiment_spec(rf);
    MetricsReport report = run_grid(spec, data);

    fs::create_directories(opts.out);
    emit_report_csv(report, opts.out + "/report.csv");
    emit_report_markdown(report, opts.out + "/report.md");
    for (int T : spec.T_grid) {
        emit_accuracy_curves(report, T, opts.out + "/curves_T" + std::to_string(T) + ".csv");
    }
    write_text(opts.out + "/manifest.json", run_manifest(spec));
    write_text(opts.out + "/manifest.run", emit_runfile(rf));
    write_text(opts.out + "/dataset_manifest.json", dataset_manifest(*data));

    int failed = 0;
    for (const CellResult& cell : report.rows) failed += cell.failed ? 1 : 0;
    std::cout << report.rows.size() << " cells, " << failed << " failed; report in " << opts.out
              << "\n";
    for (const AggregateRow& row : report.best_T_mode ? report.best_t() : report.aggregate()) {
        char buf[160];
        std::snprintf(buf, sizeof(buf), "%-18s T=%-4d tau=%-4d mse %.6f mae %.6f",
                      row.variant.c_str(), row.T, row.tau, row.mse, row.mae);
        std::cout << buf << "\n";
    }
    return 0;
}

int cmd_synth(const SyntheticSpec& spec, const std::string& out_path) {
    RawSeries series = gen_synthetic(spec);
    write_csv(series, out_path);
    std::cout << "wrote " << series.length() << " rows x " << series.channels()
              << " channels to " << out_path << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// selfcheck: gradient checks for every layer and a tiny end-to-end model,
// oracle equivalence, determinism, and a negative control proving the
// checker catches a wrong backward rule.
// ---------------------------------------------------------------------------

struct CheckOutcome {
    bool ok = true;

    void report(const std::string& name, bool pass, double err) {
        char buf[160];
        std::snprintf(buf, sizeof(buf), "[%s] %-42s max rel err %.3g", pass ? "ok" : "FAIL",
                      name.c_str(), err);
        std::cout << buf << "\n";
        if (!pass) ok = false;
    }
};

Tensor rand_tensor(Rng& rng, Shape shape) {
    std::vector<double> v(shape.size());
    for (auto& x : v) x = rng.uniform(-2.0, 2.0);
    return Tensor::from_vector(std::move(v), shape);
}

int cmd_selfcheck() {
    set_finite_checks(true);
    CheckOutcome out;
    Rng rng(2021);

    {  // linear layer: input and weight gradients
        LinearLayer layer = make_linear(4, 3, rng);
        Tensor x0 = rand_tensor(rng, Shape(2, 4));
        auto fx = [&](const Context& c, const Tensor& x) {
            return reduce_mean(c, stlf::tanh(c, linear_forward(c, layer, x)), -1);
        };
        auto r = grad_check(fx, x0);
        out.report("linear_forward d/dx", r.pass, r.max_rel_err);
        auto fw = [&](const Context& c, const Tensor& w) {
            return reduce_mean(c, stlf::tanh(c, affine(c, x0, w, c.use(layer.bias))), -1);
        };
        r = grad_check(fw, layer.weight.value);
        out.report("linear_forward d/dW", r.pass, r.max_rel_err);
    }
    {  // res-l block
        ResLBlock block = make_res_l(4, 3, Activation::kSilu, 0.0, rng);
        auto f = [&](const Context& c, const Tensor& x) {
            Tensor y = res_l_forward(c, block, x);
            return reduce_mean(c, mul(c, y, y), -1);
        };
        auto r = grad_check(f, rand_tensor(rng, Shape(2, 4)));
        out.report("res_l_forward", r.pass, r.max_rel_err);
    }
    {  // positional-encoding-added input
        Context none;
        Tensor pe_t = transpose(none, positional_encoding(5, 3));
        auto f = [&](const Context& c, const Tensor& x) {
            return reduce_mean(c, stlf::tanh(c, add(c, x, pe_t)), -1);
        };
        auto r = grad_check(f, rand_tensor(rng, Shape(3, 5)));
        out.report("pe-added input", r.pass, r.max_rel_err);
    }
    {  // spatial attention
        auto f = [](const Context& c, const Tensor& x) {
            Tensor y = spatial_attention_forward(c, x);
            return reduce_mean(c, mul(c, y, y), -1);
        };
        auto r = grad_check(f, rand_tensor(rng, Shape(3, 4)));
        out.report("spatial_attention_forward", r.pass, r.max_rel_err);
    }
    {  // tiny end-to-end STL: every parameter and the input
        ModelConfig cfg;
        cfg.T = 4;
        cfg.tau = 3;
        cfg.C = 2;
        cfg.hidden_size = 5;
        cfg.theta_T = 96;
        cfg.datetime_components = {Component::kMonth, Component::kDate, Component::kWeekday,
                                   Component::kHour};
        auto model = make_model(cfg, 2021);
        CalendarStamps obs, tgt;
        for (int i = 0; i < 4; ++i) obs.codes.push_back({i % 12, i % 31, i % 7, i % 24, 0});
        for (int i = 4; i < 7; ++i) tgt.codes.push_back({i % 12, i % 31, i % 7, i % 24, 0});
        Tensor x0 = rand_tensor(rng, Shape(4, 2));
        Tensor target = rand_tensor(rng, Shape(3, 2));

        double worst = 0.0;
        bool pass = true;
        for (auto& [name, p] : model->params()) {
            Param* param = p;
            auto f = [&, param](const Context& c, const Tensor& v) {
                Tensor keep = param->value;
                const auto keep_tape = param->tape_id;
                const auto keep_node = param->node;
                param->value = v.detached();
                if (c.tape && v.node() >= 0) {
                    param->tape_id = c.tape->id();
                    param->node = v.node();
                } else {
                    param->tape_id = 0;
                    param->node = -1;
                }
                Tensor loss = mse_loss(c, model->forward(c, x0, &obs, &tgt), target);
                param->value = keep;
                param->tape_id = keep_tape;
                param->node = keep_node;
                return loss;
            };
            auto r = grad_check(f, param->value);
            worst = std::max(worst, r.max_rel_err);
            pass = pass && r.pass;
        }
        out.report("tiny STL all-parameter gradients", pass, worst);
        auto fx = [&](const Context& c, const Tensor& x) {
            return mse_loss(c, model->forward(c, x, &obs, &tgt), target);
        };
        auto r = grad_check(fx, x0);
        out.report("tiny STL input gradient", r.pass, r.max_rel_err);
    }
    {  // oracle equivalence on random inputs
        Context none;
        double worst = 0.0;
        for (int trial = 0; trial < 50; ++trial) {
            Tensor x = rand_tensor(rng, Shape(3, 5));
            Tensor y = spatial_attention_forward(none, x);
            auto ref = oracle::spatial_attention(oracle::from_tensor(x));
            for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 5; ++j)
                    worst = std::max(worst, std::abs(y.at(i, j) - ref[i][j]));
        }
        out.report("spatial attention vs brute force", worst < 1e-10, worst);

        worst = 0.0;
        for (int trial = 0; trial < 50; ++trial) {
            ResLBlock block = make_res_l(4, 3, Activation::kLeakyRelu, 0.0, rng);
            Tensor x = rand_tensor(rng, Shape(2, 4));
            Tensor y = res_l_forward(none, block, x);
            oracle::ResLWeights w;
            w.w1 = block.l1.weight.value.to_vector();
            w.b1 = block.l1.bias.value.to_vector();
            w.w2 = block.l2.weight.value.to_vector();
            w.b2 = block.l2.bias.value.to_vector();
            w.w3 = block.l3.weight.value.to_vector();
            w.b3 = block.l3.bias.value.to_vector();
            w.in = 4;
            w.out = 3;
            w.activation = Activation::kLeakyRelu;
            auto ref = oracle::res_l(w, oracle::from_tensor(x));
            for (int i = 0; i < 2; ++i)
                for (int j = 0; j < 3; ++j)
                    worst = std::max(worst, std::abs(y.at(i, j) - ref[i][j]));
        }
        out.report("res-l vs straight-line oracle", worst < 1e-10, worst);

        worst = 0.0;
        for (int trial = 0; trial < 50; ++trial) {
            Tensor x = rand_tensor(rng, Shape(16, 2));
            Tensor trend = moving_average_time(x, 5);
            auto ref = oracle::moving_average(oracle::from_tensor(x), 5);
            for (int i = 0; i < 16; ++i)
                for (int j = 0; j < 2; ++j)
                    worst = std::max(worst, std::abs(trend.at(i, j) - ref[i][j]));
        }
        out.report("moving average vs padded oracle", worst < 1e-10, worst);
    }
    {  // determinism of a short training run
        auto run = [&]() {
            SyntheticSpec sspec;
            sspec.length = 60;
            sspec.channels = 2;
            sspec.noise_sigma = 0.05;
            sspec.seed = 7;
            auto data = split_and_scale(gen_synthetic(sspec), SplitRatio{6, 2, 2});
            WindowedDataset windows(data, 8, 4, 1, true);
            ModelConfig cfg;
            cfg.T = 8;
            cfg.tau = 4;
            cfg.C = 2;
            cfg.hidden_size = 8;
            cfg.datetime_components = {Component::kWeekday, Component::kHour};
            auto model = make_model(cfg, 2021);
            TrainConfig tc;
            tc.epochs = 2;
            tc.lr = 1e-3;
            tc.eval_each_epoch = false;
            return train(*model, windows, tc).history;
        };
        auto a = run();
        auto b = run();
        bool same = a.size() == b.size();
        for (std::size_t i = 0; same && i < a.size(); ++i) {
            same = a[i].train_mse == b[i].train_mse;
        }
        out.report("training determinism (bit-exact)", same, same ? 0.0 : 1.0);
    }
    {  // negative control: a deliberately wrong backward rule must be caught
        auto wrong_square = [](const Context& c, const Tensor& x) {
            std::vector<double> vals(x.size());
            for (std::size_t i = 0; i < x.size(); ++i) {
                vals[i] = x.at(static_cast<int>(i)) * x.at(static_cast<int>(i));
            }
            Tensor y = Tensor::from_vector(std::move(vals), x.shape());
            if (c.recording() && x.requires_grad()) {
                const int xn = x.node();
                Tensor xv = x.detached();
                const std::size_t n = x.size();
                const int id =
                    c.tape->record(x.shape(), {xn}, [xn, xv, n](const double* g, Tape& t) {
                        double* dx = t.grad_accum(xn, n);
                        // wrong on purpose: d(x^2)/dx reported as 3x
                        for (std::size_t i = 0; i < n; ++i)
                            dx[i] += g[i] * 3.0 * xv.at(static_cast<int>(i));
                    });
                y = y.with_node(id);
            }
            return y;
        };
        auto f = [&](const Context& c, const Tensor& x) {
            return reduce_sum(c, wrong_square(c, x), -1);
        };
        auto r = grad_check(f, rand_tensor(rng, Shape(3)));
        out.report("negative control: perturbed backward caught", !r.pass, r.max_rel_err);
    }

    std::cout << (out.ok ? "selfcheck passed" : "selfcheck FAILED") << "\n";
    return out.ok ? 0 : 1;
}

int run_cli(int argc, char** argv) {
    CLI::App app{"SpatioTemporal-Linear (STL) time-series forecaster"};
    app.require_subcommand(1);
    int rc = 0;

    CommonOpts train_opts;
    auto* train_cmd = app.add_subcommand("train", "train one model from a runfile");
    train_cmd->add_option("--config", train_opts.config, "runfile path")->required();
    train_cmd->add_option("--out", train_opts.out, "output directory")->required();
    train_cmd->add_option("--preset", train_opts.preset, "dataset preset name");
    train_cmd->add_option("--seed", train_opts.seed, "override the training seed");
    train_cmd->callback([&]() { rc = cmd_train(train_opts); });

    CommonOpts eval_opts;
    std::string checkpoint;
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
    eval_cmd->add_option("--config", eval_opts.config, "runfile path")->required();
    eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint path")->required();
    eval_cmd->add_option("--out", eval_opts.out, "optional output directory");
    eval_cmd->add_option("--preset", eval_opts.preset, "dataset preset name");
    eval_cmd->callback([&]() { rc = cmd_eval(eval_opts, checkpoint); });

    CommonOpts sweep_opts;
    auto* sweep_cmd = app.add_subcommand("sweep", "run a (variant, T, tau, seed) grid");
    sweep_cmd->add_option("--config", sweep_opts.config, "runfile path")->required();
    sweep_cmd->add_option("--out", sweep_opts.out, "output directory")->required();
    sweep_cmd->add_option("--preset", sweep_opts.preset, "dataset preset name");
    sweep_cmd->add_option("--seed", sweep_opts.seed, "restrict to one seed");
    sweep_cmd->add_option("--jobs", sweep_opts.jobs, "concurrent cells");
    sweep_cmd->callback([&]() { rc = cmd_sweep(sweep_opts); });

    SyntheticSpec synth_spec;
    std::string synth_out;
    std::string spike_arg = "none", lags_arg = "none";
    auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic CSV dataset");
    synth_cmd->add_option("--out", synth_out, "output CSV path")->required();
    synth_cmd->add_option("--length", synth_spec.length, "number of rows");
    synth_cmd->add_option("--channels", synth_spec.channels, "number of channels");
    synth_cmd->add_option("--period", synth_spec.period, "base period in hours");
    synth_cmd->add_option("--noise", synth_spec.noise_sigma, "gaussian noise sigma");
    synth_cmd->add_option("--seed", synth_spec.seed, "generator seed");
    synth_cmd->add_option("--spike", spike_arg, "weekday:hour:amplitude or none");
    synth_cmd->add_option("--lags", lags_arg, "lag couplings, e.g. 1<-0:3:2.0;2<-0:5:0.8");
    synth_cmd->callback([&]() {
        const std::string doc = "[dataset]\nspike = " + spike_arg + "\nlags = " + lags_arg + "\n";
        RunFile tmp = parse_runfile(doc);
        synth_spec.spike = tmp.dataset.synth.spike;
        synth_spec.spike_weekday = tmp.dataset.synth.spike_weekday;
        synth_spec.spike_hour = tmp.dataset.synth.spike_hour;
        synth_spec.spike_amplitude = tmp.dataset.synth.spike_amplitude;
        synth_spec.lags = tmp.dataset.synth.lags;
        rc = cmd_synth(synth_spec, synth_out);
    });

    auto* selfcheck_cmd =
        app.add_subcommand("selfcheck", "gradient, oracle and determinism checks");
    selfcheck_cmd->callback([&]() { rc = cmd_selfcheck(); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }
    return rc;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run_cli(argc, argv);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numeric abort: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
