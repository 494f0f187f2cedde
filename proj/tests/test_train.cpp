#include <doctest.h>

#include <cmath>
#include <cstdio>

#include <fstream>
#include <unistd.h>

#include "stlf/train.hpp"

using namespace stlf;

namespace {

ModelConfig tiny_stl(int T, int tau, int C, int hidden) {
    ModelConfig cfg;
    cfg.variant = ModelVariant::kStl;
    cfg.T = T;
    cfg.tau = tau;
    cfg.C = C;
    cfg.hidden_size = hidden;
    cfg.theta_T = 96;
    cfg.datetime_components = {Component::kMonth, Component::kDate, Component::kWeekday,
                               Component::kHour};
    return cfg;
}

std::shared_ptr<const PreparedData> synthetic_prepared(int L, int C, double sigma,
                                                       std::uint64_t seed, bool spike = false) {
    SyntheticSpec spec;
    spec.length = L;
    spec.channels = C;
    spec.noise_sigma = sigma;
    spec.seed = seed;
    spec.spike = spike;
    spec.spike_weekday = 2;
    spec.spike_hour = 9;
    spec.spike_amplitude = 2.0;
    if (C > 1) spec.lags = {{1, 0, 3, 1.5}};
    return split_and_scale(gen_synthetic(spec), SplitRatio{6, 2, 2});
}

}  // namespace

TEST_CASE("mse_loss") {
    Context ctx;
    Tensor a = Tensor::from_vector({1, 2}, Shape(2));
    CHECK(mse_loss(ctx, a, a).item() == 0.0);

    Tensor b = Tensor::from_vector({0, 2}, Shape(2));
    CHECK(mse_loss(ctx, a, b).item() == 0.5);

    Rng rng(5);
    std::vector<double> pv(6), tv(6);
    for (auto& v : pv) v = rng.uniform(-2, 2);
    for (auto& v : tv) v = rng.uniform(-2, 2);
    double hand = 0.0;
    for (int i = 0; i < 6; ++i) hand += (pv[i] - tv[i]) * (pv[i] - tv[i]);
    hand /= 6.0;
    Tensor p = Tensor::from_vector(pv, Shape(2, 3));
    Tensor t = Tensor::from_vector(tv, Shape(2, 3));
    CHECK(mse_loss(ctx, p, t).item() == doctest::Approx(hand).epsilon(1e-14));

    CHECK_THROWS_AS(mse_loss(ctx, a, Tensor::from_vector({1, 2, 3}, Shape(3))), DimensionError);
}

TEST_CASE("adam_step") {
    SUBCASE("zero gradient leaves parameters bit-identical") {
        Param p(Tensor::from_vector({0.5, -1.5, 2.25}, Shape(3)));
        ParamRefs refs = {{"p", &p}};
        AdamState state;
        state.init(refs);
        std::vector<Tensor> grads = {Tensor::zeros(Shape(3))};
        adam_step(state, refs, grads, 1e-3);
        CHECK(p.value.at(0) == 0.5);
        CHECK(p.value.at(1) == -1.5);
        CHECK(p.value.at(2) == 2.25);
    }
    SUBCASE("first step closed form") {
        Param p(Tensor::scalar(1.0));
        ParamRefs refs = {{"p", &p}};
        AdamState state;
        state.init(refs);
        std::vector<Tensor> grads = {Tensor::scalar(1.0)};
        adam_step(state, refs, grads, 1e-3);
        // m_hat = 1, v_hat = 1 -> delta = -lr / (1 + eps)
        const double expected = 1.0 - 1e-3 / (1.0 + 1e-8);
        CHECK(p.value.item() == doctest::Approx(expected).epsilon(1e-15));
    }
    SUBCASE("identical updates are bit-identical") {
        Param a(Tensor::from_vector({0.1, 0.2}, Shape(2)));
        Param b(Tensor::from_vector({0.1, 0.2}, Shape(2)));
        ParamRefs ra = {{"p", &a}}, rb = {{"p", &b}};
        AdamState sa, sb;
        sa.init(ra);
        sb.init(rb);
        std::vector<Tensor> g = {Tensor::from_vector({0.3, -0.7}, Shape(2))};
        for (int i = 0; i < 10; ++i) {
            adam_step(sa, ra, g, 1e-2);
            adam_step(sb, rb, g, 1e-2);
        }
        CHECK(a.value.at(0) == b.value.at(0));
        CHECK(a.value.at(1) == b.value.at(1));
    }
}

TEST_CASE("train loop") {
    SUBCASE("epochs=0 leaves the model untouched") {
        auto data = synthetic_prepared(60, 2, 0.05, 7);
        WindowedDataset windows(data, 8, 4, 1, true);
        auto model = make_model(tiny_stl(8, 4, 2, 8), 2021);
        auto before = model->params();
        std::vector<std::vector<double>> kept;
        for (auto& [n, p] : before) kept.push_back(p->value.to_vector());
        TrainConfig cfg;
        cfg.epochs = 0;
        TrainResult result = train(*model, windows, cfg);
        CHECK(result.history.empty());
        auto after = model->params();
        for (std::size_t i = 0; i < after.size(); ++i) {
            CHECK(after[i].second->value.to_vector() == kept[i]);
        }
    }
    SUBCASE("geometric lr decay") {
        auto data = synthetic_prepared(60, 2, 0.05, 7);
        WindowedDataset windows(data, 8, 4, 1, true);
        auto model = make_model(tiny_stl(8, 4, 2, 8), 2021);
        TrainConfig cfg;
        cfg.lr = 6e-4;
        cfg.decay = 0.8;
        cfg.epochs = 4;
        cfg.eval_each_epoch = false;
        TrainResult result = train(*model, windows, cfg);
        REQUIRE(result.history.size() == 4);
        CHECK(result.history[3].lr == doctest::Approx(6e-4 * 0.8 * 0.8 * 0.8).epsilon(1e-15));
    }
    SUBCASE("single repeated batch overfits") {
        auto data = synthetic_prepared(25, 2, 0.05, 11);
        WindowedDataset windows(data, 8, 4, 1, true);
        REQUIRE(windows.count(Split::kTrain) <= 32);  // one batch per epoch
        auto model = make_model(tiny_stl(8, 4, 2, 8), 2021);
        TrainConfig cfg;
        cfg.lr = 5e-3;
        cfg.decay = 1.0;
        cfg.epochs = 300;
        cfg.eval_each_epoch = false;
        TrainResult result = train(*model, windows, cfg);
        REQUIRE(result.history.size() == 300);
        CHECK(result.history[299].train_mse < result.history[9].train_mse);
        CHECK(result.history[299].train_mse < 0.05);
    }
    SUBCASE("dataset/model mismatch is rejected") {
        auto data = synthetic_prepared(60, 2, 0.05, 7);
        WindowedDataset windows(data, 8, 4, 1, true);
        auto model = make_model(tiny_stl(8, 5, 2, 8), 2021);
        TrainConfig cfg;
        CHECK_THROWS_AS(train(*model, windows, cfg), ConfigError);
    }
    SUBCASE("diverging run aborts with a numeric error") {
        auto data = synthetic_prepared(60, 2, 0.05, 7);
        WindowedDataset windows(data, 8, 4, 1, true);
        ModelConfig cfg_model;
        cfg_model.variant = ModelVariant::kLinear;
        cfg_model.T = 8;
        cfg_model.tau = 4;
        cfg_model.C = 2;
        auto model = make_model(cfg_model, 2021);
        TrainConfig cfg;
        cfg.lr = 1e160;
        cfg.epochs = 50;
        cfg.eval_each_epoch = false;
        CHECK_THROWS_AS(train(*model, windows, cfg), NumericError);
    }
    SUBCASE("bit-identical history across two runs") {
        TrainConfig cfg;
        cfg.lr = 1e-3;
        cfg.decay = 0.9;
        cfg.epochs = 3;
        cfg.seed = 2021;

        std::vector<EpochStats> histories[2];
        for (int run = 0; run < 2; ++run) {
            auto data = synthetic_prepared(60, 2, 0.05, 7);
            WindowedDataset windows(data, 8, 4, 1, true);
            auto model = make_model(tiny_stl(8, 4, 2, 8), 2021);
            histories[run] = train(*model, windows, cfg).history;
        }
        REQUIRE(histories[0].size() == histories[1].size());
        for (std::size_t i = 0; i < histories[0].size(); ++i) {
            CHECK(histories[0][i].train_mse == histories[1][i].train_mse);
            CHECK(histories[0][i].val_mse == histories[1][i].val_mse);
            CHECK(histories[0][i].lr == histories[1][i].lr);
        }
    }
    SUBCASE("best-val weights are restored") {
        auto data = synthetic_prepared(120, 2, 0.1, 7);
        WindowedDataset windows(data, 8, 4, 1, true);
        REQUIRE(windows.count(Split::kVal) > 0);
        auto model = make_model(tiny_stl(8, 4, 2, 8), 2021);
        TrainConfig cfg;
        cfg.lr = 2e-3;
        cfg.epochs = 8;
        cfg.patience = 0;  // no early stop, pure best-val selection
        TrainResult result = train(*model, windows, cfg);
        REQUIRE(result.best_epoch >= 0);
        double best = result.history[0].val_mse;
        for (const auto& e : result.history) best = std::min(best, e.val_mse);
        CHECK(result.best_val_mse == best);
        Metrics val = evaluate(*model, windows, Split::kVal);
        CHECK(val.mse == doctest::Approx(best).epsilon(1e-12));
    }
    SUBCASE("gate parameter receives gradient when the temporal route is active") {
        auto data = synthetic_prepared(400, 2, 0.1, 3, /*spike=*/true);
        WindowedDataset windows(data, 48, 24, 1, true);
        auto model = make_model(tiny_stl(48, 24, 2, 8), 2021);

        Tape tape;
        Rng rng(1);
        Context ctx;
        ctx.tape = &tape;
        ctx.rng = &rng;
        ctx.training = true;
        Window w = windows.window(Split::kTrain, 0);
        Tensor loss = mse_loss(ctx, model->forward(ctx, w.obs, &w.obs_stamps, &w.target_stamps),
                               w.target);
        tape.backward(loss);
        bool found = false;
        for (auto& [name, p] : model->params()) {
            if (name == "temporal.encoder.gate_m") {
                found = true;
                CHECK(param_grad(tape, *p).item() != 0.0);
            }
        }
        CHECK(found);
    }
}

TEST_CASE("evaluate") {
    SUBCASE("zero predictor on standardized data reads the target second moment") {
        auto data = synthetic_prepared(200, 2, 0.1, 13);
        WindowedDataset windows(data, 8, 4, 1, true);
        ModelConfig cfg;
        cfg.variant = ModelVariant::kLinear;
        cfg.T = 8;
        cfg.tau = 4;
        cfg.C = 2;
        auto model = make_model(cfg, 1);
        for (auto& [n, p] : model->params()) p->assign(Tensor::zeros(p->value.shape()));

        Metrics m = evaluate(*model, windows, Split::kTest);
        double expected = 0.0;
        const int n = windows.count(Split::kTest);
        for (int i = 0; i < n; ++i) {
            Window w = windows.window(Split::kTest, i);
            double acc = 0.0;
            for (std::size_t k = 0; k < w.target.size(); ++k) {
                const double v = w.target.at(static_cast<int>(k));
                acc += v * v;
            }
            expected += acc / static_cast<double>(w.target.size());
        }
        expected /= n;
        CHECK(m.mse == doctest::Approx(expected).epsilon(1e-14));
    }
    SUBCASE("constant offset of 0.5 gives (0.25, 0.5)") {
        // constant series standardizes to zeros; a bias-only model predicts 0.5
        std::vector<double> v(60, 3.0);
        RawSeries s;
        s.values = Tensor::from_vector(std::move(v), Shape(60, 1));
        s.calendar = false;
        s.interval = 1;
        for (int t = 0; t < 60; ++t) s.timestamps.push_back(t);
        s.channel_names = {"flat"};
        auto data = split_and_scale(s, SplitRatio{6, 2, 2});
        WindowedDataset windows(data, 4, 2, 1, true);

        ModelConfig cfg;
        cfg.variant = ModelVariant::kLinear;
        cfg.T = 4;
        cfg.tau = 2;
        cfg.C = 1;
        auto model = make_model(cfg, 1);
        auto params = model->params();
        for (auto& [name, p] : params) {
            if (name == "main.weight") p->assign(Tensor::zeros(p->value.shape()));
            if (name == "main.bias") p->assign(Tensor::full(p->value.shape(), 0.5));
        }
        Metrics m = evaluate(*model, windows, Split::kTest);
        CHECK(m.mse == doctest::Approx(0.25).epsilon(1e-14));
        CHECK(m.mae == doctest::Approx(0.5).epsilon(1e-14));
    }
    SUBCASE("empty split is an error") {
        auto data = synthetic_prepared(25, 2, 0.05, 11);
        WindowedDataset windows(data, 8, 4, 1, true);
        REQUIRE(windows.count(Split::kVal) == 0);
        ModelConfig cfg;
        cfg.variant = ModelVariant::kLinear;
        cfg.T = 8;
        cfg.tau = 4;
        cfg.C = 2;
        auto model = make_model(cfg, 1);
        CHECK_THROWS_AS(evaluate(*model, windows, Split::kVal), DataError);
    }
}

TEST_CASE("checkpoint round trip") {
    auto data = synthetic_prepared(60, 2, 0.05, 7);
    WindowedDataset windows(data, 8, 4, 1, true);
    ModelConfig cfg = tiny_stl(8, 4, 2, 8);
    auto model = make_model(cfg, 2021);
    TrainConfig tc;
    tc.epochs = 2;
    tc.eval_each_epoch = false;
    train(*model, windows, tc);

    const std::string path = "/tmp/stlf_test_ckpt.bin";

    SUBCASE("save then load reproduces the forward bit-exactly") {
        save_checkpoint(*model, path);
        auto loaded = load_checkpoint(path);
        CHECK(loaded->config() == cfg);
        Context ctx;
        Window w = windows.window(Split::kTrain, 0);
        Tensor ya = model->forward(ctx, w.obs, &w.obs_stamps, &w.target_stamps);
        Tensor yb = loaded->forward(ctx, w.obs, &w.obs_stamps, &w.target_stamps);
        for (std::size_t i = 0; i < ya.size(); ++i)
            CHECK(ya.at(static_cast<int>(i)) == yb.at(static_cast<int>(i)));
        std::remove(path.c_str());
    }
    SUBCASE("truncated checkpoint is rejected") {
        save_checkpoint(*model, path);
        std::FILE* f = std::fopen(path.c_str(), "rb+");
        REQUIRE(f);
        std::fseek(f, 0, SEEK_END);
        const long size = std::ftell(f);
        std::fclose(f);
        REQUIRE(truncate(path.c_str(), size / 2) == 0);
        CHECK_THROWS_AS(load_checkpoint(path), DataError);
        std::remove(path.c_str());
    }
    SUBCASE("config mismatch is rejected") {
        save_checkpoint(*model, path);
        ModelConfig other = cfg;
        other.tau = 5;
        CHECK_THROWS_AS(load_checkpoint(path, other), ConfigError);
        std::remove(path.c_str());
    }
    SUBCASE("junk file is rejected") {
        std::ofstream junk(path, std::ios::binary);
        junk << "definitely not a checkpoint";
        junk.close();
        CHECK_THROWS_AS(load_checkpoint(path), DataError);
        std::remove(path.c_str());
    }
}
