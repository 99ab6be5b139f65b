#pragma once

#include <string>
#include <vector>

#include "drc/training.hpp"

namespace drc {

// Whole-run configuration: dataset recipe, split parameters, model and
// training configs, output directory, one global seed. Every stage derives
// its own stream from the seed through labeled fan-out, so the serialized
// form pins the full experiment.
struct RunConfig {
    std::string dataset = "DXR4"; // DXR1..DXR4, or empty when a manifest is given
    std::string manifest_path;
    std::string sources_root;
    int folds = 4;
    double train_fraction = 0.7;
    bool stratified = false;
    nlohmann::json model;  // FusionModelConfig::to_json or backbone kind config
    TrainConfig train;
    std::string output_dir;
    std::uint64_t seed = 0;

    nlohmann::json to_json() const;
    static RunConfig from_json(const nlohmann::json& j);
};

// Table-3-shaped text rendering: metric rows, fold columns, average +- sd,
// max/min fold markers, percentages with one decimal.
std::string format_summary_table(const CrossValResult& result, const std::string& title);

// Full command-line entry point; returns the process exit code (0 ok,
// 2 config error, 3 data error, 4 numeric failure).
int run_cli(const std::vector<std::string>& args);

} // namespace drc
