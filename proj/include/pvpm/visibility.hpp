#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "pvpm/checkpoint.hpp"
#include "pvpm/volume.hpp"

namespace pvpm {

// Global average pooling -> 1x1 convolution -> batch normalization -> sigmoid.
struct PvpConfig {
    int parts = 6;
    int in_channels = 128;
    double momentum = 0.1;  // running = (1-momentum)*running + momentum*batch
    double epsilon = 1e-5;
};

struct PvpParams {
    PvpConfig config;
    std::vector<double> weight;  // [parts][in_channels]
    std::vector<double> bias;    // [parts]
    std::vector<double> gamma;
    std::vector<double> beta;
    std::vector<double> running_mean;
    std::vector<double> running_var;

    static PvpParams init(const PvpConfig& config, std::uint64_t seed);

    double& w(int p, int c) { return weight[std::size_t(p) * config.in_channels + c]; }
    double w(int p, int c) const { return weight[std::size_t(p) * config.in_channels + c]; }

    void save_into(Checkpoint& ckpt) const;
    static PvpParams load_from(const Checkpoint& ckpt);
};

enum class PvpMode { Train, Eval };

// Per-part visibility scores of one image, each strictly inside (0,1).
using VisibilityScores = std::vector<double>;

struct PvpCache {
    PvpMode mode = PvpMode::Eval;
    int height = 0;  // spatial dims of the pose features, for spreading the
    int width = 0;   // pooled gradient back out
    Mat pooled;      // batch x in_channels GAP features
    Mat logits;      // batch x parts
    Mat normalized;  // batch x parts, post-BN pre-scale
    Mat scores;      // batch x parts sigmoid outputs
    std::vector<double> batch_mean;
    std::vector<double> batch_var;
};

// Train mode uses batch statistics (batch >= 2 required) and updates the
// running statistics in place; eval mode is pure and per-sample independent.
std::vector<VisibilityScores> pvp_forward(std::span<const Volume> f_pose_batch, PvpParams& params,
                                          PvpMode mode, PvpCache* cache = nullptr);

VisibilityScores pvp_forward_single(const Volume& f_pose, const PvpParams& params);

struct PvpGrads {
    std::vector<double> d_weight;
    std::vector<double> d_bias;
    std::vector<double> d_gamma;
    std::vector<double> d_beta;
};

// Upstream is dL/dscore per sample. Fills d_f_pose (one volume per sample)
// when requested; in train mode the batch-statistics terms are included.
PvpGrads pvp_backward(const PvpCache& cache, const PvpParams& params, const Mat& upstream,
                      std::vector<Volume>* d_f_pose);

void pvp_sgd_step(PvpParams& params, const PvpGrads& grads, double lr);

}  // namespace pvpm
