#pragma once

#include <cstdint>
#include <vector>

#include "pvpm/classifier.hpp"
#include "pvpm/dataset.hpp"
#include "pvpm/graph_match.hpp"
#include "pvpm/losses.hpp"
#include "pvpm/pose_encoder.hpp"
#include "pvpm/visibility.hpp"

namespace pvpm {

// Feature-level random-occlusion injection applied to training images.
struct AugmentConfig {
    double probability = 0.0;
    int span_min = 1;
    int span_max = 2;
    double obstacle_scale = 2.0;
    double noise_amplitude = 0.05;
    double pose_suppression = 0.003;
};

struct TrainConfig {
    int batch_size = 32;  // images per step; pairs = batch_size / 2
    int epochs = 30;
    double learning_rate = 0.002;  // plain SGD, no momentum
    double lambda = 0.9;
    int parts = 6;
    std::uint64_t seed = 1;
    // T. 0 derives epochs * ceil(train image count / batch_size).
    int max_steps = 0;
    double ema_momentum = 0.9;
    // Open choices surfaced as flags: L_m gradient through lambda', and
    // whether the solver sees the current batch's averages instead of the
    // pre-step ones.
    bool grad_through_lambda_prime = true;
    bool solve_with_fresh_ema = false;
    AugmentConfig augment;
    int workers = 0;
    PoseEncoderConfig encoder;
};

struct ModelParams {
    PoseEncoderParams pe;
    PgaParams pga;
    PvpParams pvp;

    static ModelParams init(const TrainConfig& config);

    Checkpoint to_checkpoint(const MovingAverageState& state) const;
    static std::pair<ModelParams, MovingAverageState> from_checkpoint(const Checkpoint& ckpt);
};

struct StepMetrics {
    int step = 0;
    double loss_visibility = 0.0;
    double loss_matching = 0.0;
    double loss_classification = 0.0;
    double mean_selected = 0.0;
    double learning_rate = 0.0;
};

struct TrainResult {
    ModelParams params;
    MovingAverageState state;
    std::vector<StepMetrics> metrics;
    // lambda = 0 sanity accounting: pairs whose centered affinity matrix was
    // elementwise nonnegative, and how many of those failed to select all
    // parts (must stay 0; all-ones is optimal there).
    std::int64_t nonneg_pairs = 0;
    std::int64_t nonneg_violations = 0;
};

// One Algorithm-1 style training loop: pose encoder, attention generator and
// visibility predictor trained jointly; pseudo-labels solved exactly per
// positive pair; gradients routed per parameter group.
class Trainer {
public:
    Trainer(const LoadedDataset& dataset, const ToyClassifierBank& bank, TrainConfig config);

    StepMetrics step();
    TrainResult run();

    int total_steps() const { return total_steps_; }
    const ModelParams& params() const { return params_; }
    ModelParams& mutable_params() { return params_; }
    const MovingAverageState& state() const { return state_; }
    std::int64_t nonneg_pairs() const { return nonneg_pairs_; }
    std::int64_t nonneg_violations() const { return nonneg_violations_; }

private:
    struct Pair {
        std::size_t first;
        std::size_t second;
        int label;
    };
    std::vector<Pair> sample_pairs();

    const LoadedDataset& dataset_;
    const ToyClassifierBank& bank_;
    TrainConfig config_;
    ModelParams params_;
    MovingAverageState state_;
    Rng sampler_;
    Rng augment_rng_;
    std::vector<std::vector<std::size_t>> train_groups_;
    std::vector<int> eligible_identities_;
    int total_steps_ = 0;
    int step_index_ = 0;
    std::int64_t nonneg_pairs_ = 0;
    std::int64_t nonneg_violations_ = 0;
};

TrainResult train_model(const LoadedDataset& dataset, const ToyClassifierBank& bank,
                        const TrainConfig& config);

void write_metrics_csv(const std::vector<StepMetrics>& metrics,
                       const std::filesystem::path& path);

}  // namespace pvpm
