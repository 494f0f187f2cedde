#include "stlf/runfile.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace stlf {

bool DatasetSection::operator==(const DatasetSection& o) const {
    return name == o.name && path == o.path && synthetic == o.synthetic && synth == o.synth &&
           ratio == o.ratio && components == o.components;
}

bool RunFile::operator==(const RunFile& o) const {
    return dataset == o.dataset && model == o.model && train == o.train && T_grid == o.T_grid &&
           tau_grid == o.tau_grid && seeds == o.seeds && protocol == o.protocol &&
           best_T_mode == o.best_T_mode && ablation == o.ablation && variants == o.variants &&
           raw_scale == o.raw_scale && jobs == o.jobs;
}

// ---------------------------------------------------------------------------
// Tokenizing
// ---------------------------------------------------------------------------

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

struct RawEntry {
    std::string section, key, value;
};

std::vector<RawEntry> tokenize(const std::string& text) {
    std::vector<RawEntry> entries;
    std::istringstream in(text);
    std::string line, section;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') {
                throw ConfigError("runfile line " + std::to_string(line_no) +
                                  ": malformed section header");
            }
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos || section.empty()) {
            throw ConfigError("runfile line " + std::to_string(line_no) +
                              ": expected 'key = value' inside a section");
        }
        RawEntry e{section, trim(line.substr(0, eq)), trim(line.substr(eq + 1))};
        for (const RawEntry& prev : entries) {
            if (prev.section == e.section && prev.key == e.key) {
                throw ConfigError("runfile: duplicate key '" + e.section + "." + e.key + "'");
            }
        }
        entries.push_back(std::move(e));
    }
    return entries;
}

// ---------------------------------------------------------------------------
// Value parsing
// ---------------------------------------------------------------------------

[[noreturn]] void bad_value(const RawEntry& e, const std::string& what) {
    throw ConfigError("runfile key '" + e.section + "." + e.key + "': " + what + " (got '" +
                      e.value + "')");
}

int to_int(const RawEntry& e) {
    try {
        std::size_t pos;
        const int v = std::stoi(e.value, &pos);
        if (pos != e.value.size()) bad_value(e, "expected an integer");
        return v;
    } catch (const ConfigError&) {
        throw;
    } catch (...) {
        bad_value(e, "expected an integer");
    }
}

double to_double(const RawEntry& e) {
    try {
        std::size_t pos;
        const double v = std::stod(e.value, &pos);
        if (pos != e.value.size()) bad_value(e, "expected a number");
        return v;
    } catch (const ConfigError&) {
        throw;
    } catch (...) {
        bad_value(e, "expected a number");
    }
}

std::uint64_t to_u64(const RawEntry& e) {
    try {
        std::size_t pos;
        const std::uint64_t v = std::stoull(e.value, &pos);
        if (pos != e.value.size()) bad_value(e, "expected an unsigned integer");
        return v;
    } catch (const ConfigError&) {
        throw;
    } catch (...) {
        bad_value(e, "expected an unsigned integer");
    }
}

bool to_bool(const RawEntry& e) {
    if (e.value == "true" || e.value == "1") return true;
    if (e.value == "false" || e.value == "0") return false;
    bad_value(e, "expected true/false");
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, sep)) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::vector<int> to_int_list(const RawEntry& e) {
    std::vector<int> out;
    for (const auto& item : split(e.value, ',')) {
        try {
            out.push_back(std::stoi(item));
        } catch (...) {
            bad_value(e, "expected a comma-separated integer list");
        }
    }
    if (out.empty()) bad_value(e, "expected a non-empty list");
    return out;
}

std::vector<std::uint64_t> to_u64_list(const RawEntry& e) {
    std::vector<std::uint64_t> out;
    for (const auto& item : split(e.value, ',')) {
        try {
            out.push_back(std::stoull(item));
        } catch (...) {
            bad_value(e, "expected a comma-separated seed list");
        }
    }
    if (out.empty()) bad_value(e, "expected a non-empty list");
    return out;
}

SplitRatio to_ratio(const RawEntry& e) {
    const auto parts = split(e.value, ':');
    if (parts.size() != 3) bad_value(e, "expected a:b:c");
    try {
        return SplitRatio{std::stoi(parts[0]), std::stoi(parts[1]), std::stoi(parts[2])};
    } catch (...) {
        bad_value(e, "expected integer ratio parts");
    }
}

std::vector<Component> to_components(const RawEntry& e) {
    if (e.value == "none") return {};
    std::vector<Component> out;
    for (const auto& name : split(e.value, ',')) out.push_back(component_from_name(name));
    return out;
}

void to_routes(const RawEntry& e, ModelConfig& cfg) {
    cfg.route_core = cfg.route_temporal = cfg.route_spatial = false;
    for (const auto& name : split(e.value, ',')) {
        if (name == "core") cfg.route_core = true;
        else if (name == "temporal") cfg.route_temporal = true;
        else if (name == "spatial") cfg.route_spatial = true;
        else bad_value(e, "routes are core, temporal, spatial");
    }
}

std::vector<SyntheticSpec::Lag> to_lags(const RawEntry& e) {
    // "1<-0:3:2.0;2<-0:5:0.8"
    std::vector<SyntheticSpec::Lag> out;
    if (e.value == "none") return out;
    for (const auto& item : split(e.value, ';')) {
        SyntheticSpec::Lag lag;
        int consumed = 0;
        if (std::sscanf(item.c_str(), "%d<-%d:%d:%lf%n", &lag.target, &lag.source, &lag.lag,
                        &lag.gain, &consumed) != 4 ||
            consumed != static_cast<int>(item.size())) {
            bad_value(e, "expected lags like 1<-0:3:2.0;2<-0:5:0.8");
        }
        out.push_back(lag);
    }
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

std::vector<std::string> runfile_keys(const std::string& text) {
    std::vector<std::string> keys;
    for (const RawEntry& e : tokenize(text)) keys.push_back(e.section + "." + e.key);
    return keys;
}

RunFile parse_runfile(const std::string& text) {
    RunFile rf;
    for (const RawEntry& e : tokenize(text)) {
        if (e.section == "dataset") {
            if (e.key == "name") rf.dataset.name = e.value;
            else if (e.key == "path") rf.dataset.path = e.value;
            else if (e.key == "synthetic") rf.dataset.synthetic = to_bool(e);
            else if (e.key == "ratio") rf.dataset.ratio = to_ratio(e);
            else if (e.key == "components") rf.dataset.components = to_components(e);
            else if (e.key == "length") rf.dataset.synth.length = to_int(e);
            else if (e.key == "channels") rf.dataset.synth.channels = to_int(e);
            else if (e.key == "period") rf.dataset.synth.period = to_double(e);
            else if (e.key == "lags") rf.dataset.synth.lags = to_lags(e);
            else if (e.key == "noise") rf.dataset.synth.noise_sigma = to_double(e);
            else if (e.key == "synth_seed") rf.dataset.synth.seed = to_u64(e);
            else if (e.key == "spike") {
                if (e.value == "none") {
                    rf.dataset.synth.spike = false;
                } else {
                    int wd, h, consumed = 0;
                    double amp;
                    if (std::sscanf(e.value.c_str(), "%d:%d:%lf%n", &wd, &h, &amp, &consumed) !=
                            3 ||
                        consumed != static_cast<int>(e.value.size())) {
                        bad_value(e, "expected weekday:hour:amplitude or none");
                    }
                    rf.dataset.synth.spike = true;
                    rf.dataset.synth.spike_weekday = wd;
                    rf.dataset.synth.spike_hour = h;
                    rf.dataset.synth.spike_amplitude = amp;
                }
            } else {
                throw ConfigError("runfile: unknown key 'dataset." + e.key + "'");
            }
        } else if (e.section == "model") {
            if (e.key == "variant") rf.model.variant = variant_from_name(e.value);
            else if (e.key == "T") rf.model.T = to_int(e);
            else if (e.key == "tau") rf.model.tau = to_int(e);
            else if (e.key == "hidden_size") rf.model.hidden_size = to_int(e);
            else if (e.key == "dropout") rf.model.dropout_p = to_double(e);
            else if (e.key == "activation") rf.model.activation = activation_from_name(e.value);
            else if (e.key == "leaky_alpha") rf.model.leaky_alpha = to_double(e);
            else if (e.key == "theta_T") rf.model.theta_T = to_int(e);
            else if (e.key == "routes") to_routes(e, rf.model);
            else if (e.key == "per_channel") rf.model.per_channel_weights = to_bool(e);
            else if (e.key == "ma_kernel") rf.model.ma_kernel = to_int(e);
            else if (e.key == "minute_bins") rf.model.minute_bins = to_int(e);
            else if (e.key == "attn_norm") {
                if (e.value == "row") rf.model.attn_norm = AttnNorm::kRowwise;
                else if (e.value == "col") rf.model.attn_norm = AttnNorm::kColwise;
                else bad_value(e, "expected row or col");
            } else {
                throw ConfigError("runfile: unknown key 'model." + e.key + "'");
            }
        } else if (e.section == "train") {
            if (e.key == "lr") rf.train.lr = to_double(e);
            else if (e.key == "decay") rf.train.decay = to_double(e);
            else if (e.key == "batch_size") rf.train.batch_size = to_int(e);
            else if (e.key == "epochs") rf.train.epochs = to_int(e);
            else if (e.key == "seed") rf.train.seed = to_u64(e);
            else if (e.key == "patience") rf.train.patience = to_int(e);
            else if (e.key == "eval_each_epoch") rf.train.eval_each_epoch = to_bool(e);
            else throw ConfigError("runfile: unknown key 'train." + e.key + "'");
        } else if (e.section == "experiment") {
            if (e.key == "T_grid") rf.T_grid = to_int_list(e);
            else if (e.key == "tau_grid") rf.tau_grid = to_int_list(e);
            else if (e.key == "seeds") rf.seeds = to_u64_list(e);
            else if (e.key == "protocol") rf.protocol = e.value;
            else if (e.key == "best_T_mode") rf.best_T_mode = to_bool(e);
            else if (e.key == "ablation") rf.ablation = to_bool(e);
            else if (e.key == "variants") rf.variants = split(e.value, ',');
            else if (e.key == "raw_scale") rf.raw_scale = to_bool(e);
            else if (e.key == "jobs") rf.jobs = to_int(e);
            else throw ConfigError("runfile: unknown key 'experiment." + e.key + "'");
        } else {
            throw ConfigError("runfile: unknown section '[" + e.section + "]'");
        }
    }
    if (!rf.protocol.empty() && rf.protocol != "scarce" && rf.protocol != "best_T") {
        throw ConfigError("runfile: protocol must be scarce or best_T");
    }
    rf.model.datetime_components = rf.dataset.components;
    return rf;
}

RunFile load_runfile(const std::string& path) {
    std::ifstream in(path);
    if (!in.is_open()) throw ConfigError("cannot open runfile: " + path);
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse_runfile(buffer.str());
}

// ---------------------------------------------------------------------------
// Presets (per-dataset best configurations)
// ---------------------------------------------------------------------------

namespace {

struct Preset {
    const char* name;
    int hidden_size;
    double dropout;
    double lr;
    double decay;
    Activation activation;
    SplitRatio ratio;
    const char* components;
    bool temporal_route;
};

const Preset kPresets[] = {
    {"electricity", 512, 0.0, 6e-4, 0.8, Activation::kSilu, {6, 2, 2},
     "month,date,weekday,hour", true},
    {"etth1", 256, 0.1, 2e-4, 0.75, Activation::kLeakyRelu, {6, 2, 2},
     "month,date,weekday,hour", true},
    {"ettm1", 256, 0.25, 2e-4, 0.8, Activation::kSilu, {7, 1, 2},
     "month,date,weekday,hour,minute", true},
    {"weather", 512, 0.25, 2e-4, 0.75, Activation::kSilu, {5, 1, 4},
     "month,date,weekday,hour", true},
    // trajectory data: no calendar stamps, temporal route off
    {"jaad", 512, 0.0, 1e-3, 0.9, Activation::kSilu, {7, 1, 2}, "none", false},
};

bool has_key(const std::vector<std::string>& keys, const char* key) {
    return std::find(keys.begin(), keys.end(), key) != keys.end();
}

}  // namespace

bool is_known_preset(const std::string& name) {
    for (const Preset& p : kPresets) {
        if (name == p.name) return true;
    }
    return false;
}

void apply_preset(RunFile& rf, const std::string& preset,
                  const std::vector<std::string>& explicit_keys) {
    const Preset* found = nullptr;
    for (const Preset& p : kPresets) {
        if (preset == p.name) found = &p;
    }
    if (!found) throw ConfigError("unknown preset '" + preset + "'");
    if (rf.dataset.name.empty()) rf.dataset.name = found->name;
    if (!has_key(explicit_keys, "model.hidden_size")) rf.model.hidden_size = found->hidden_size;
    if (!has_key(explicit_keys, "model.dropout")) rf.model.dropout_p = found->dropout;
    if (!has_key(explicit_keys, "model.activation")) rf.model.activation = found->activation;
    if (!has_key(explicit_keys, "train.lr")) rf.train.lr = found->lr;
    if (!has_key(explicit_keys, "train.decay")) rf.train.decay = found->decay;
    if (!has_key(explicit_keys, "dataset.ratio")) rf.dataset.ratio = found->ratio;
    if (!has_key(explicit_keys, "dataset.components")) {
        RawEntry fake{"dataset", "components", found->components};
        rf.dataset.components = to_components(fake);
        rf.model.datetime_components = rf.dataset.components;
    }
    if (!found->temporal_route && !has_key(explicit_keys, "model.routes")) {
        rf.model.route_temporal = false;
    }
}

// ---------------------------------------------------------------------------
// Emission (normalized echo)
// ---------------------------------------------------------------------------

namespace {

std::string g17(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string join_ints(const std::vector<int>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(v[i]);
    }
    return out;
}

}  // namespace

std::string emit_runfile(const RunFile& rf) {
    std::ostringstream out;
    out << "[dataset]\n";
    if (!rf.dataset.name.empty()) out << "name = " << rf.dataset.name << "\n";
    if (!rf.dataset.path.empty()) out << "path = " << rf.dataset.path << "\n";
    out << "synthetic = " << (rf.dataset.synthetic ? "true" : "false") << "\n";
    if (rf.dataset.synthetic) {
        const SyntheticSpec& s = rf.dataset.synth;
        out << "length = " << s.length << "\n";
        out << "channels = " << s.channels << "\n";
        out << "period = " << g17(s.period) << "\n";
        if (!s.lags.empty()) {
            out << "lags = ";
            for (std::size_t i = 0; i < s.lags.size(); ++i) {
                if (i) out << ';';
                out << s.lags[i].target << "<-" << s.lags[i].source << ':' << s.lags[i].lag << ':'
                    << g17(s.lags[i].gain);
            }
            out << "\n";
        }
        if (s.spike) {
            out << "spike = " << s.spike_weekday << ':' << s.spike_hour << ':'
                << g17(s.spike_amplitude) << "\n";
        } else {
            out << "spike = none\n";
        }
        out << "noise = " << g17(s.noise_sigma) << "\n";
        out << "synth_seed = " << s.seed << "\n";
    }
    out << "ratio = " << rf.dataset.ratio.train << ':' << rf.dataset.ratio.val << ':'
        << rf.dataset.ratio.test << "\n";
    if (rf.dataset.components.empty()) {
        out << "components = none\n";
    } else {
        out << "components = ";
        for (std::size_t i = 0; i < rf.dataset.components.size(); ++i) {
            if (i) out << ',';
            out << component_name(rf.dataset.components[i]);
        }
        out << "\n";
    }

    const ModelConfig& m = rf.model;
    out << "\n[model]\n";
    out << "variant = " << variant_name(m.variant) << "\n";
    out << "T = " << m.T << "\n";
    out << "tau = " << m.tau << "\n";
    out << "hidden_size = " << m.hidden_size << "\n";
    out << "dropout = " << g17(m.dropout_p) << "\n";
    out << "activation = " << activation_name(m.activation) << "\n";
    out << "leaky_alpha = " << g17(m.leaky_alpha) << "\n";
    out << "theta_T = " << m.theta_T << "\n";
    out << "routes = ";
    {
        bool first = true;
        auto route = [&](bool on, const char* name) {
            if (on) {
                if (!first) out << ',';
                out << name;
                first = false;
            }
        };
        route(m.route_core, "core");
        route(m.route_temporal, "temporal");
        route(m.route_spatial, "spatial");
    }
    out << "\n";
    out << "per_channel = " << (m.per_channel_weights ? "true" : "false") << "\n";
    out << "ma_kernel = " << m.ma_kernel << "\n";
    out << "attn_norm = " << (m.attn_norm == AttnNorm::kRowwise ? "row" : "col") << "\n";
    out << "minute_bins = " << m.minute_bins << "\n";

    const TrainConfig& t = rf.train;
    out << "\n[train]\n";
    out << "lr = " << g17(t.lr) << "\n";
    out << "decay = " << g17(t.decay) << "\n";
    out << "batch_size = " << t.batch_size << "\n";
    out << "epochs = " << t.epochs << "\n";
    out << "seed = " << t.seed << "\n";
    out << "patience = " << t.patience << "\n";
    out << "eval_each_epoch = " << (t.eval_each_epoch ? "true" : "false") << "\n";

    out << "\n[experiment]\n";
    if (!rf.T_grid.empty()) out << "T_grid = " << join_ints(rf.T_grid) << "\n";
    if (!rf.tau_grid.empty()) out << "tau_grid = " << join_ints(rf.tau_grid) << "\n";
    out << "seeds = ";
    for (std::size_t i = 0; i < rf.seeds.size(); ++i) {
        if (i) out << ',';
        out << rf.seeds[i];
    }
    out << "\n";
    if (!rf.protocol.empty()) out << "protocol = " << rf.protocol << "\n";
    out << "best_T_mode = " << (rf.best_T_mode ? "true" : "false") << "\n";
    out << "ablation = " << (rf.ablation ? "true" : "false") << "\n";
    if (!rf.variants.empty()) {
        out << "variants = ";
        for (std::size_t i = 0; i < rf.variants.size(); ++i) {
            if (i) out << ',';
            out << rf.variants[i];
        }
        out << "\n";
    }
    out << "raw_scale = " << (rf.raw_scale ? "true" : "false") << "\n";
    out << "jobs = " << rf.jobs << "\n";
    return out.str();
}

// ---------------------------------------------------------------------------
// Experiment spec resolution
// ---------------------------------------------------------------------------

ExperimentSpec to_experiment_spec(const RunFile& rf) {
    ExperimentSpec spec;
    spec.dataset_id = rf.dataset.name.empty() ? "dataset" : rf.dataset.name;
    spec.train = rf.train;
    spec.seeds = rf.seeds;
    spec.raw_scale_metrics = rf.raw_scale;
    spec.jobs = rf.jobs;
    spec.best_T_mode = rf.best_T_mode;
    spec.T_grid = rf.T_grid;
    spec.tau_grid = rf.tau_grid;

    if (rf.protocol == "scarce") {
        // fixed short observation, wide prediction range
        if (spec.T_grid.empty()) spec.T_grid = {48};
        if (spec.tau_grid.empty()) {
            spec.tau_grid = {24, 36, 48, 72, 96, 120, 144, 168, 192, 336};
        }
    } else if (rf.protocol == "best_T") {
        if (spec.T_grid.empty()) spec.T_grid = {24, 48, 96, 192, 336, 504};
        if (spec.tau_grid.empty()) spec.tau_grid = {24, 48, 96, 192, 336};
        spec.best_T_mode = true;
    }
    if (spec.T_grid.empty()) spec.T_grid = {rf.model.T};
    if (spec.tau_grid.empty()) spec.tau_grid = {rf.model.tau};

    if (rf.ablation) {
        if (!rf.variants.empty()) {
            throw ConfigError("runfile: 'ablation' and 'variants' are mutually exclusive");
        }
        ModelConfig base = rf.model;
        base.variant = ModelVariant::kStl;
        spec.variants = ablation_variants(base);
    } else if (!rf.variants.empty()) {
        for (const std::string& name : rf.variants) {
            ModelConfig cfg = rf.model;
            cfg.variant = variant_from_name(name);
            spec.variants.push_back(cfg);
        }
    } else {
        spec.variants = {rf.model};
    }
    return spec;
}

}  // namespace stlf
