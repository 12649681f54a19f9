#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace pvpm {

// Central-finite-difference verification of every differentiable operation.
// All arithmetic is double; the step is 1e-3 for the piecewise-linear pose
// encoder and 1e-4 elsewhere. The relative error of one component is
// |analytic - numeric| / max(|analytic|, |numeric|, 1e-3).
struct GradCheckEntry {
    std::string op;
    int trials = 0;
    double max_rel_error = 0.0;
    bool pass = false;  // max_rel_error < 1e-4
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    bool all_pass = false;
    std::uint64_t seed = 0;
};

inline constexpr double kGradCheckTolerance = 1e-4;

// Known operation names: pose_encoder, part_attention, pvp_train, pvp_eval,
// loss_visibility, loss_matching, loss_classification. An empty selector
// runs all of them.
GradCheckReport check_gradients(const std::vector<std::string>& ops, int trials,
                                std::uint64_t seed);

nlohmann::json gradcheck_to_json(const GradCheckReport& report);

}  // namespace pvpm
