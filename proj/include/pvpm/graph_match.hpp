#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "pvpm/checkpoint.hpp"
#include "pvpm/part_attention.hpp"
#include "pvpm/volume.hpp"

namespace pvpm {

// Affinity matrix between the part graphs of a positive pair. The diagonal
// holds raw inner products of corresponding node features; off-diagonal
// entries hold inner products of L2-normalized edge vectors f_i - f_j,
// centered by their moving average.
struct AffinityMatrix {
    Mat m;
    int parts() const { return m.rows; }
};

// Global training state: running averages of the raw edge and node
// affinities. Single writer per training step; readers between updates.
struct MovingAverageState {
    int parts = 0;
    double momentum = 0.9;
    std::int64_t updates = 0;
    Mat edge_avg;                  // off-diagonal slots; diagonal kept at zero
    std::vector<double> diag_avg;  // node affinity average

    static MovingAverageState make(int parts, double momentum = 0.9);
    bool initialized() const { return updates > 0; }

    void save_into(Checkpoint& ckpt) const;
    static MovingAverageState load_from(const Checkpoint& ckpt);
};

struct MatchIndicator {
    std::vector<std::uint8_t> selected;  // v* in {0,1}^parts
    double objective = 0.0;              // exactly v*' M v* - lambda_bar' v*

    int count() const;
};

// Raw (pre-centering) affinities; symmetric by construction because edge
// vectors flip sign on both sides. A zero edge (f_i == f_j) contributes 0.
Mat build_raw_affinity(const PartFeatureSet& probe, const PartFeatureSet& gallery);

// Centers the off-diagonal with the state's current averages without mutating
// the state. An uninitialized state centers by zero.
AffinityMatrix center_affinity(const Mat& raw, const MovingAverageState& state);

AffinityMatrix build_affinity(const PartFeatureSet& probe, const PartFeatureSet& gallery,
                              const MovingAverageState& state);

// EMA over the batch mean of the raw affinities; the first update initializes
// directly to the batch mean.
void update_moving_average(MovingAverageState& state, std::span<const Mat> raw_batch);

// lambda_bar = lambda * diag_avg; requires an initialized state.
std::vector<double> regularizer(const MovingAverageState& state, double lambda);

// Exhaustive maximization of v' M v - lambda_bar' v over {0,1}^parts.
// Ties break toward more selected parts, then the lexicographically greatest
// indicator. parts <= 20 enforced.
MatchIndicator solve_iqp_exact(const Mat& m, std::span<const double> lambda_bar);

// Single-flip local search from the all-zeros and all-ones starts, best of
// the two; never worse than either start; deterministic given seed.
MatchIndicator solve_iqp_local(const Mat& m, std::span<const double> lambda_bar,
                               std::uint64_t seed);

// The thresholding ablation: v_i = 1 iff M_ii > tau.
MatchIndicator threshold_baseline(const Mat& m, double tau);

double match_objective(const Mat& m, std::span<const double> lambda_bar,
                       std::span<const std::uint8_t> selected);

}  // namespace pvpm
