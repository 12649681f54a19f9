#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pvpm/eval.hpp"
#include "pvpm/synth.hpp"
#include "pvpm/trainer.hpp"

namespace pvpm {

// Everything a CLI run needs, merged from the JSON config file and the
// command-line overrides. The config file is the single source of truth;
// unknown keys anywhere are rejected.
struct RunConfig {
    std::uint64_t seed = 1;
    int workers = 0;

    struct Paths {
        std::filesystem::path data;        // manifest.jsonl
        std::filesystem::path classifiers; // classifiers.pvtc
        std::filesystem::path checkpoint;  // checkpoint.pvtc
    } paths;

    SynthConfig synth;
    TrainConfig train;

    struct Pretrain {
        int epochs = 100;
        double lr = 2.0;
    } pretrain;

    struct Eval {
        EvalMode mode = EvalMode::Pvpm;
        double tau = 0.5;
        int max_rank = 20;
        bool per_query_csv = false;
    } eval;

    struct Sweep {
        std::string param = "lambda";  // lambda | parts
        std::string grid = "0.6:1.0:0.1";
    } sweep;

    struct GradCheck {
        int trials = 20;
        std::vector<std::string> ops;
    } gradcheck;

    struct PairSelection {
        std::string probe;
        std::string gallery;
    } pair;
};

RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json run_config_to_json(const RunConfig& config);

// Grid syntax: either "start:end:step" (inclusive, tolerant endpoint) or a
// comma-separated list of values.
std::vector<double> parse_grid(const std::string& text);

}  // namespace pvpm
