#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "stlf/model.hpp"
#include "test_util.hpp"

using namespace stlf;

namespace {

Tensor random_tensor(Rng& rng, Shape shape, double lo = -2.0, double hi = 2.0) {
    std::vector<double> v(shape.size());
    for (auto& x : v) x = rng.uniform(lo, hi);
    return Tensor::from_vector(std::move(v), shape);
}

CalendarStamps hourly_stamps(int start_hour, int count) {
    CalendarStamps s;
    for (int i = 0; i < count; ++i) {
        const int h = start_hour + i;
        s.codes.push_back({h / 24 % 12, h / 24 % 31, (h / 24 + 3) % 7, h % 24, 0});
    }
    return s;
}

ModelConfig tiny_stl_config() {
    ModelConfig cfg;
    cfg.variant = ModelVariant::kStl;
    cfg.T = 3;
    cfg.tau = 2;
    cfg.C = 2;
    cfg.hidden_size = 4;
    cfg.theta_T = 96;
    cfg.activation = Activation::kSilu;
    cfg.datetime_components = {Component::kMonth, Component::kDate, Component::kWeekday,
                               Component::kHour};
    return cfg;
}

void zero_all_params(Forecaster& model) {
    for (auto& [name, p] : model.params()) p->assign(Tensor::zeros(p->value.shape()));
}

}  // namespace

TEST_CASE("stl forward basics") {
    Context ctx;
    Rng rng(3);

    SUBCASE("core-only with zero weights predicts zero") {
        ModelConfig cfg = tiny_stl_config();
        cfg.route_temporal = cfg.route_spatial = false;
        cfg.datetime_components.clear();
        auto model = make_model(cfg, 2021);
        zero_all_params(*model);
        Tensor y = model->forward(ctx, random_tensor(rng, Shape(3, 2)), nullptr, nullptr);
        CHECK(y.shape() == Shape(2, 2));
        for (std::size_t i = 0; i < y.size(); ++i) CHECK(y.at(static_cast<int>(i)) == 0.0);
    }
    SUBCASE("observation shape is validated") {
        auto model = make_model(tiny_stl_config(), 2021);
        CHECK_THROWS_AS(model->forward(ctx, random_tensor(rng, Shape(4, 2)), nullptr, nullptr),
                        DimensionError);
    }
    SUBCASE("active temporal route requires stamps") {
        auto model = make_model(tiny_stl_config(), 2021);
        CHECK_THROWS_AS(model->forward(ctx, random_tensor(rng, Shape(3, 2)), nullptr, nullptr),
                        DataError);
    }
}

TEST_CASE("temporal gate semantics") {
    ModelConfig full = tiny_stl_config();
    full.T = 8;
    full.theta_T = 4;  // T > theta_T: temporal route must not contribute

    ModelConfig reduced = full;
    reduced.route_temporal = false;
    reduced.datetime_components.clear();

    auto model_full = make_model(full, 2021);
    auto model_reduced = make_model(reduced, 2021);

    Context ctx;
    Rng rng(9);
    Tensor x = random_tensor(rng, Shape(8, 2));
    Tensor ya = model_full->forward(ctx, x, nullptr, nullptr);
    Tensor yb = model_reduced->forward(ctx, x, nullptr, nullptr);
    for (std::size_t i = 0; i < ya.size(); ++i) {
        CHECK(ya.at(static_cast<int>(i)) == yb.at(static_cast<int>(i)));
    }
}

TEST_CASE("tiny STL matches the scripted three-route recomputation") {
    ModelConfig cfg = tiny_stl_config();
    auto model = make_model(cfg, 2021);

    Context ctx;
    Rng rng(41);
    Tensor x = random_tensor(rng, Shape(3, 2));
    CalendarStamps obs = hourly_stamps(5, 3);
    CalendarStamps tgt = hourly_stamps(8, 2);

    Tensor y = model->forward(ctx, x, &obs, &tgt);
    auto snap = oracle::snapshot(*model);
    auto ref = oracle::stl_forward(cfg, snap, oracle::from_tensor(x), &obs, &tgt);

    REQUIRE(y.shape() == Shape(2, 2));
    for (int t = 0; t < 2; ++t)
        for (int c = 0; c < 2; ++c) CHECK(std::abs(y.at(t, c) - ref[t][c]) < 1e-12);
}

TEST_CASE("route additivity: zeroed temporal+spatial equals core alone") {
    ModelConfig cfg = tiny_stl_config();
    auto full = make_model(cfg, 2021);

    ModelConfig core_cfg = cfg;
    core_cfg.route_temporal = core_cfg.route_spatial = false;
    core_cfg.datetime_components.clear();
    auto core_only = make_model(core_cfg, 2021);

    for (auto& [name, p] : full->params()) {
        if (name.rfind("core", 0) != 0) p->assign(Tensor::zeros(p->value.shape()));
    }

    Context ctx;
    Rng rng(4);
    Tensor x = random_tensor(rng, Shape(3, 2));
    CalendarStamps obs = hourly_stamps(0, 3);
    CalendarStamps tgt = hourly_stamps(3, 2);
    Tensor ya = full->forward(ctx, x, &obs, &tgt);
    Tensor yb = core_only->forward(ctx, x, nullptr, nullptr);
    for (std::size_t i = 0; i < ya.size(); ++i)
        CHECK(ya.at(static_cast<int>(i)) == yb.at(static_cast<int>(i)));
}

TEST_CASE("baseline forwards") {
    Context ctx;
    Rng rng(12);

    SUBCASE("linear with zero parameters predicts zero") {
        ModelConfig cfg;
        cfg.variant = ModelVariant::kLinear;
        cfg.T = 4;
        cfg.tau = 3;
        cfg.C = 2;
        auto model = make_model(cfg, 7);
        zero_all_params(*model);
        Tensor y = model->forward(ctx, random_tensor(rng, Shape(4, 2)), nullptr, nullptr);
        for (std::size_t i = 0; i < y.size(); ++i) CHECK(y.at(static_cast<int>(i)) == 0.0);
    }
    SUBCASE("nlinear anchors constant series at the last value") {
        ModelConfig cfg;
        cfg.variant = ModelVariant::kNlinear;
        cfg.T = 4;
        cfg.tau = 3;
        cfg.C = 2;
        auto model = make_model(cfg, 7);
        zero_all_params(*model);
        Tensor y = model->forward(ctx, Tensor::full(Shape(4, 2), 6.5), nullptr, nullptr);
        for (std::size_t i = 0; i < y.size(); ++i) CHECK(y.at(static_cast<int>(i)) == 6.5);
    }
    SUBCASE("nlinear translation equivariance") {
        ModelConfig cfg;
        cfg.variant = ModelVariant::kNlinear;
        cfg.T = 6;
        cfg.tau = 4;
        cfg.C = 3;
        auto model = make_model(cfg, 99);
        Tensor x = random_tensor(rng, Shape(6, 3));
        const double shift = 3.75;
        Tensor xs = add(ctx, x, Tensor::scalar(shift));
        Tensor y = model->forward(ctx, x, nullptr, nullptr);
        Tensor ys = model->forward(ctx, xs, nullptr, nullptr);
        for (std::size_t i = 0; i < y.size(); ++i) {
            CHECK(ys.at(static_cast<int>(i)) ==
                  doctest::Approx(y.at(static_cast<int>(i)) + shift).epsilon(1e-10));
        }
    }
    SUBCASE("dlinear moving average matches the hand convolution") {
        Tensor x = Tensor::from_vector({1, 2, 3, 4}, Shape(4, 1));
        Tensor trend = moving_average_time(x, 3);
        CHECK(trend.at(0, 0) == doctest::Approx(4.0 / 3.0).epsilon(1e-15));
        CHECK(trend.at(1, 0) == doctest::Approx(2.0).epsilon(1e-15));
        CHECK(trend.at(2, 0) == doctest::Approx(3.0).epsilon(1e-15));
        CHECK(trend.at(3, 0) == doctest::Approx(11.0 / 3.0).epsilon(1e-15));
    }
    SUBCASE("dlinear decomposition reconstructs the input") {
        Tensor x = random_tensor(rng, Shape(24, 3));
        Decomposition d = dlinear_decompose(x, 5);
        Tensor recon = add(ctx, d.trend, d.remainder);
        for (std::size_t i = 0; i < x.size(); ++i) {
            // remainder = x - trend carries one rounding per element, so the
            // round trip is exact to 1 ulp of the trend magnitude.
            const double bound = 4.0 * 2.220446049250313e-16 *
                                 std::max(1.0, std::abs(d.trend.at(static_cast<int>(i))));
            CHECK(std::abs(recon.at(static_cast<int>(i)) - x.at(static_cast<int>(i))) <= bound);
        }
        // And the decomposition feeds a working forward pass.
        ModelConfig cfg;
        cfg.variant = ModelVariant::kDlinear;
        cfg.T = 24;
        cfg.tau = 5;
        cfg.C = 3;
        cfg.ma_kernel = 5;
        auto model = make_model(cfg, 31);
        Tensor y = model->forward(ctx, x, nullptr, nullptr);
        CHECK(y.shape() == Shape(5, 3));
    }
    SUBCASE("dlinear rejects an even kernel") {
        ModelConfig cfg;
        cfg.variant = ModelVariant::kDlinear;
        cfg.ma_kernel = 4;
        CHECK_THROWS_AS(make_model(cfg, 1), ConfigError);
    }
}

TEST_CASE("make_model determinism and counting") {
    SUBCASE("same config and seed give bit-identical parameters") {
        ModelConfig cfg = tiny_stl_config();
        auto a = make_model(cfg, 2021);
        auto b = make_model(cfg, 2021);
        auto pa = a->params();
        auto pb = b->params();
        REQUIRE(pa.size() == pb.size());
        for (std::size_t i = 0; i < pa.size(); ++i) {
            CHECK(pa[i].first == pb[i].first);
            const Tensor& ta = pa[i].second->value;
            const Tensor& tb = pb[i].second->value;
            REQUIRE(ta.size() == tb.size());
            for (std::size_t k = 0; k < ta.size(); ++k)
                CHECK(ta.at(static_cast<int>(k)) == tb.at(static_cast<int>(k)));
        }
    }
    SUBCASE("a different seed changes at least one parameter") {
        ModelConfig cfg = tiny_stl_config();
        auto a = make_model(cfg, 2021);
        auto b = make_model(cfg, 2022);
        auto pa = a->params();
        auto pb = b->params();
        bool any_diff = false;
        for (std::size_t i = 0; i < pa.size() && !any_diff; ++i) {
            const Tensor& ta = pa[i].second->value;
            const Tensor& tb = pb[i].second->value;
            for (std::size_t k = 0; k < ta.size(); ++k) {
                if (ta.at(static_cast<int>(k)) != tb.at(static_cast<int>(k))) {
                    any_diff = true;
                    break;
                }
            }
        }
        CHECK(any_diff);
    }
    SUBCASE("core-only parameter count follows the layer shapes") {
        ModelConfig cfg;
        cfg.variant = ModelVariant::kStl;
        cfg.T = 5;
        cfg.tau = 3;
        cfg.C = 2;
        cfg.route_temporal = cfg.route_spatial = false;
        auto model = make_model(cfg, 1);
        const std::size_t expected = 2u * 5 * 3 + 3 * 3 + 3 * 3;  // T*tau*2 + tau*tau + 3*tau
        CHECK(model->param_count() == expected);
    }
    SUBCASE("disabling one route leaves the other routes' init untouched") {
        ModelConfig cfg = tiny_stl_config();
        auto full = make_model(cfg, 2021);
        ModelConfig no_temporal = cfg;
        no_temporal.route_temporal = false;
        no_temporal.datetime_components.clear();
        auto partial = make_model(no_temporal, 2021);

        auto find = [](ParamRefs refs, const std::string& name) -> Tensor {
            for (auto& [n, p] : refs) {
                if (n == name) return p->value;
            }
            throw std::runtime_error("param not found: " + name);
        };
        Tensor a = find(full->params(), "spatial.pre1.l1.weight");
        Tensor b = find(partial->params(), "spatial.pre1.l1.weight");
        for (std::size_t k = 0; k < a.size(); ++k)
            CHECK(a.at(static_cast<int>(k)) == b.at(static_cast<int>(k)));
    }
}

TEST_CASE("ablation variants") {
    ModelConfig base = tiny_stl_config();
    auto variants = ablation_variants(base);
    REQUIRE(variants.size() == 4);
    CHECK(variants[0].variant == ModelVariant::kStl);
    CHECK(variants[0].route_core);
    CHECK(variants[0].route_temporal);
    CHECK(variants[0].route_spatial);
    CHECK(variants[1].route_core);
    CHECK_FALSE(variants[1].route_temporal);
    CHECK(variants[1].route_spatial);
    CHECK(variants[2].route_core);
    CHECK_FALSE(variants[2].route_temporal);
    CHECK_FALSE(variants[2].route_spatial);
    CHECK(variants[3].variant == ModelVariant::kLinear);
    CHECK(variants[0].label() == "STL");
    CHECK(variants[1].label() == "STL-Core-Spatial");
    CHECK(variants[2].label() == "STL-Core");
    CHECK(variants[3].label() == "Linear");
}

TEST_CASE("config json round trip") {
    ModelConfig cfg = tiny_stl_config();
    cfg.per_channel_weights = true;
    cfg.attn_norm = AttnNorm::kColwise;
    ModelConfig back = config_from_json(config_to_json(cfg));
    CHECK(back == cfg);
    CHECK_THROWS_AS(config_from_json("{broken"), DataError);
}

TEST_CASE("per-channel weights mode") {
    ModelConfig cfg;
    cfg.variant = ModelVariant::kLinear;
    cfg.T = 4;
    cfg.tau = 2;
    cfg.C = 3;
    cfg.per_channel_weights = true;
    auto model = make_model(cfg, 11);
    // One (tau x T) weight and (tau) bias per channel.
    CHECK(model->param_count() == 3u * (2 * 4) + 3u * 2);

    Context ctx;
    Rng rng(8);
    Tensor x = random_tensor(rng, Shape(4, 3));
    Tensor y = model->forward(ctx, x, nullptr, nullptr);
    CHECK(y.shape() == Shape(2, 3));
}
