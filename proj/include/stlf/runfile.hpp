#pragma once

#include <string>
#include <vector>

#include "stlf/data.hpp"
#include "stlf/experiment.hpp"
#include "stlf/model.hpp"
#include "stlf/train.hpp"

namespace stlf {

// ---------------------------------------------------------------------------
// Declarative run configuration: an INI-style text document with [dataset],
// [model], [train] and [experiment] sections. Unknown sections or keys are
// rejected. Known dataset names carry presets (hidden size, dropout, lr,
// decay, activation, split ratio, calendar components); explicit keys always
// override the preset.
// ---------------------------------------------------------------------------

struct DatasetSection {
    std::string name;  // preset id or free label
    std::string path;  // CSV path ("" for synthetic)
    bool synthetic = false;
    SyntheticSpec synth;
    SplitRatio ratio{6, 2, 2};
    std::vector<Component> components;

    bool operator==(const DatasetSection& o) const;
};

struct RunFile {
    DatasetSection dataset;
    ModelConfig model;
    TrainConfig train;

    std::vector<int> T_grid;
    std::vector<int> tau_grid;
    std::vector<std::uint64_t> seeds = {2021};
    std::string protocol;  // "", "scarce" or "best_T"
    bool best_T_mode = false;
    bool ablation = false;
    std::vector<std::string> variants;  // sweep variant names; empty = model.variant
    bool raw_scale = false;
    int jobs = 1;

    bool operator==(const RunFile& o) const;
};

RunFile parse_runfile(const std::string& text);
RunFile load_runfile(const std::string& path);

// Normalized echo of every effective setting; parsing it back yields an
// equivalent RunFile, which is how a run manifest reproduces its run.
std::string emit_runfile(const RunFile& rf);

// Merges a named preset (electricity, etth1, ettm1, weather, jaad) under the
// explicitly-set keys of `rf`. `explicit_keys` come from parse_runfile via
// the raw document; the CLI passes the preset name from --preset or the
// dataset name.
bool is_known_preset(const std::string& name);
void apply_preset(RunFile& rf, const std::string& preset,
                  const std::vector<std::string>& explicit_keys);

// Keys that were explicitly present in the document, as "section.key".
std::vector<std::string> runfile_keys(const std::string& text);

// Builds the sweep specification: resolves protocol presets, the variant
// list (or the four ablation configurations) and grids.
ExperimentSpec to_experiment_spec(const RunFile& rf);

}  // namespace stlf
