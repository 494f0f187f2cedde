#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "stlf/experiment.hpp"

using namespace stlf;

namespace {

std::shared_ptr<const PreparedData> small_data(int L = 80) {
    SyntheticSpec spec;
    spec.length = L;
    spec.channels = 2;
    spec.noise_sigma = 0.1;
    spec.seed = 5;
    spec.lags = {{1, 0, 2, 1.2}};
    return split_and_scale(gen_synthetic(spec), SplitRatio{6, 2, 2});
}

ExperimentSpec small_spec() {
    ExperimentSpec spec;
    spec.dataset_id = "synthetic";
    ModelConfig linear;
    linear.variant = ModelVariant::kLinear;
    spec.variants = {linear};
    spec.T_grid = {8};
    spec.tau_grid = {4};
    spec.seeds = {2021};
    spec.train.epochs = 2;
    spec.train.lr = 1e-3;
    spec.train.batch_size = 16;
    return spec;
}

struct TempPath {
    std::string path;
    explicit TempPath(const std::string& name) : path("/tmp/stlf_exp_" + name) {}
    ~TempPath() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("run_grid basics") {
    auto data = small_data();

    SUBCASE("1x1 grid gives a single row") {
        MetricsReport report = run_grid(small_spec(), data);
        REQUIRE(report.rows.size() == 1);
        CHECK_FALSE(report.rows[0].failed);
        CHECK(report.rows[0].variant == "Linear");
        CHECK(report.rows[0].mse >= 0.0);
        CHECK(report.rows[0].mae >= 0.0);
    }
    SUBCASE("failed cells are recorded and the grid continues") {
        ExperimentSpec spec = small_spec();
        spec.T_grid = {8, 5000};  // second T cannot fit one window
        MetricsReport report = run_grid(spec, data);
        REQUIRE(report.rows.size() == 2);
        CHECK_FALSE(report.rows[0].failed);
        CHECK(report.rows[1].failed);
        CHECK_FALSE(report.rows[1].note.empty());
    }
    SUBCASE("seed union equals the union of separate runs") {
        ExperimentSpec both = small_spec();
        both.seeds = {2021, 2022};
        MetricsReport joint = run_grid(both, data);

        ExperimentSpec first = small_spec();
        first.seeds = {2021};
        ExperimentSpec second = small_spec();
        second.seeds = {2022};
        MetricsReport a = run_grid(first, data);
        MetricsReport b = run_grid(second, data);

        REQUIRE(joint.rows.size() == 2);
        CHECK(joint.rows[0].mse == a.rows[0].mse);
        CHECK(joint.rows[0].mae == a.rows[0].mae);
        CHECK(joint.rows[1].mse == b.rows[0].mse);
        CHECK(joint.rows[1].mae == b.rows[0].mae);
    }
    SUBCASE("cells are reproducible bit-for-bit") {
        MetricsReport a = run_grid(small_spec(), data);
        MetricsReport b = run_grid(small_spec(), data);
        CHECK(a.rows[0].mse == b.rows[0].mse);
        CHECK(a.rows[0].mae == b.rows[0].mae);
    }
    SUBCASE("parallel jobs do not change the rows") {
        ExperimentSpec spec = small_spec();
        spec.tau_grid = {3, 4};
        spec.seeds = {2021, 2022};
        MetricsReport serial = run_grid(spec, data);
        spec.jobs = 2;
        MetricsReport parallel = run_grid(spec, data);
        REQUIRE(serial.rows.size() == parallel.rows.size());
        for (std::size_t i = 0; i < serial.rows.size(); ++i) {
            CHECK(serial.rows[i].mse == parallel.rows[i].mse);
            CHECK(serial.rows[i].mae == parallel.rows[i].mae);
        }
    }
}

TEST_CASE("best_T aggregation is an argmin over per-T means") {
    MetricsReport report;
    report.dataset_id = "d";
    auto add = [&](const char* variant, int T, int tau, std::uint64_t seed, double mse) {
        CellResult cell;
        cell.variant = variant;
        cell.dataset = "d";
        cell.T = T;
        cell.tau = tau;
        cell.seed = seed;
        cell.mse = mse;
        cell.mae = mse / 2;
        report.rows.push_back(cell);
    };
    add("A", 24, 24, 1, 0.30);
    add("A", 24, 24, 2, 0.40);  // mean 0.35
    add("A", 48, 24, 1, 0.20);
    add("A", 48, 24, 2, 0.50);  // mean 0.35 -> tie keeps first (24)
    add("A", 96, 24, 1, 0.10);
    add("A", 96, 24, 2, 0.30);  // mean 0.20 -> best
    add("A", 24, 48, 1, 0.70);
    add("A", 48, 48, 1, 0.60);  // best for tau=48
    add("A", 96, 48, 1, 0.65);

    auto best = report.best_t();
    REQUIRE(best.size() == 2);
    CHECK(best[0].tau == 24);
    CHECK(best[0].T == 96);
    CHECK(best[0].mse == doctest::Approx(0.20).epsilon(1e-12));
    CHECK(best[1].tau == 48);
    CHECK(best[1].T == 48);

    // argmin consistency: best row equals the minimum over aggregated rows
    for (const AggregateRow& b : best) {
        for (const AggregateRow& row : report.aggregate()) {
            if (row.variant == b.variant && row.tau == b.tau) CHECK(b.mse <= row.mse);
        }
    }
}

TEST_CASE("report emission") {
    SUBCASE("empty report writes only the header") {
        MetricsReport report;
        TempPath p("empty.csv");
        emit_report_csv(report, p.path);
        std::ifstream in(p.path);
        std::string line;
        REQUIRE(std::getline(in, line));
        CHECK(line == "variant,dataset,T,tau,seed,mse,mae,failed,note");
        CHECK_FALSE(std::getline(in, line));
    }
    SUBCASE("csv round trip is exact to the bit") {
        MetricsReport report;
        CellResult cell;
        cell.variant = "STL";
        cell.dataset = "synthetic";
        cell.T = 48;
        cell.tau = 24;
        cell.seed = 2021;
        cell.mse = 0.12345678901234567;
        cell.mae = 1.0 / 3.0;
        report.rows.push_back(cell);
        TempPath p("roundtrip.csv");
        emit_report_csv(report, p.path);
        MetricsReport back = parse_report_csv(p.path);
        REQUIRE(back.rows.size() == 1);
        CHECK(back.rows[0].mse == cell.mse);
        CHECK(back.rows[0].mae == cell.mae);
        CHECK(back.rows[0].seed == 2021);
    }
    SUBCASE("markdown bolds the best MSE per cell group") {
        MetricsReport report;
        CellResult a;
        a.variant = "A";
        a.dataset = "d";
        a.T = 48;
        a.tau = 24;
        a.seed = 1;
        a.mse = 0.5;
        a.mae = 0.4;
        CellResult b = a;
        b.variant = "B";
        b.mse = 0.25;
        report.rows = {a, b};
        TempPath p("table.md");
        emit_report_markdown(report, p.path);
        std::ifstream in(p.path);
        std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        CHECK(text.find("**0.25**") != std::string::npos);
        CHECK(text.find("**0.5**") == std::string::npos);
    }
    SUBCASE("accuracy curves invert the MSE with an inf sentinel") {
        MetricsReport report;
        CellResult a;
        a.variant = "A";
        a.dataset = "d";
        a.T = 48;
        a.tau = 24;
        a.seed = 1;
        a.mse = 0.25;
        a.mae = 0.1;
        CellResult b = a;
        b.tau = 48;
        b.mse = 0.0;
        report.rows = {a, b};
        TempPath p("curves.csv");
        emit_accuracy_curves(report, 48, p.path);
        std::ifstream in(p.path);
        std::string header, row1, row2;
        std::getline(in, header);
        std::getline(in, row1);
        std::getline(in, row2);
        CHECK(header == "tau,A");
        CHECK(row1 == "24,4");
        CHECK(row2 == "48,inf");
    }
    SUBCASE("trace export shapes") {
        auto data = small_data();
        WindowedDataset windows(data, 8, 4, 1, true);
        ModelConfig cfg;
        cfg.variant = ModelVariant::kLinear;
        cfg.T = 8;
        cfg.tau = 4;
        cfg.C = 2;
        auto model = make_model(cfg, 3);
        Window w = windows.window(Split::kTest, 0);
        TempPath p("traces.csv");
        emit_traces({{"Linear", model.get()}}, w, 0, p.path);
        std::ifstream in(p.path);
        std::string line;
        std::getline(in, line);
        CHECK(line == "t,truth,Linear");
        int rows = 0, with_pred = 0;
        while (std::getline(in, line)) {
            ++rows;
            if (line.back() != ',') ++with_pred;
        }
        CHECK(rows == 12);      // T + tau ground-truth rows
        CHECK(with_pred == 4);  // tau prediction rows
    }
    SUBCASE("manifest carries the spec") {
        ExperimentSpec spec = small_spec();
        std::string manifest = run_manifest(spec);
        CHECK(manifest.find("\"dataset\": \"synthetic\"") != std::string::npos);
        CHECK(manifest.find("config_hash") != std::string::npos);
        CHECK(spec_hash(spec) == spec_hash(spec));
    }
}

TEST_CASE("evaluate is pure") {
    auto data = small_data();
    WindowedDataset windows(data, 8, 4, 1, true);
    ModelConfig cfg;
    cfg.variant = ModelVariant::kNlinear;
    cfg.T = 8;
    cfg.tau = 4;
    cfg.C = 2;
    auto model = make_model(cfg, 17);
    Metrics a = evaluate(*model, windows, Split::kTest);
    Metrics b = evaluate(*model, windows, Split::kTest);
    CHECK(a.mse == b.mse);
    CHECK(a.mae == b.mae);
}
