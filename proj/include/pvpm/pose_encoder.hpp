#pragma once

#include <cstdint>
#include <vector>

#include "pvpm/checkpoint.hpp"
#include "pvpm/volume.hpp"

namespace pvpm {

// Two 3x3 convolution + ReLU stages embedding the stacked pose tensor
// (18 keypoint heatmaps + 38 part affinity fields by default) into pose
// features at the appearance feature map's spatial resolution.
struct PoseEncoderConfig {
    int in_channels = 56;
    int hidden_channels = 32;
    int out_channels = 128;  // C_e
    int stride1 = 2;
    int stride2 = 1;
    // Spatial dims the encoder must land on; equal to the appearance map's.
    int target_height = 12;
    int target_width = 4;
};

// 3x3 convolution with padding 1; output extent is ceil(in/stride).
struct Conv3x3 {
    int in_channels = 0;
    int out_channels = 0;
    int stride = 1;
    std::vector<double> weight;  // [out][in][3][3]
    std::vector<double> bias;    // [out]

    double& w(int o, int i, int ky, int kx) {
        return weight[((std::size_t(o) * in_channels + i) * 3 + ky) * 3 + kx];
    }
    double w(int o, int i, int ky, int kx) const {
        return weight[((std::size_t(o) * in_channels + i) * 3 + ky) * 3 + kx];
    }
};

struct PoseEncoderParams {
    PoseEncoderConfig config;
    Conv3x3 conv1;
    Conv3x3 conv2;

    // Fan-in scaled uniform weights, zero biases.
    static PoseEncoderParams init(const PoseEncoderConfig& config, std::uint64_t seed);

    std::size_t parameter_count() const;

    void save_into(Checkpoint& ckpt) const;
    static PoseEncoderParams load_from(const Checkpoint& ckpt);
};

// Forward intermediates kept for the backward pass.
struct PoseEncoderCache {
    Volume input;
    Volume pre1;  // stage-1 pre-activation
    Volume act1;
    Volume pre2;  // stage-2 pre-activation
};

struct PoseEncoderGrads {
    std::vector<double> d_weight1, d_bias1;
    std::vector<double> d_weight2, d_bias2;

    void accumulate(const PoseEncoderGrads& other, double scale);
};

// F_pose = ReLU(conv2(ReLU(conv1(P)))). Throws on channel mismatch or when the
// stride schedule cannot land on (target_height, target_width).
Volume pe_forward(const Volume& pose, const PoseEncoderParams& params,
                  PoseEncoderCache* cache = nullptr);

// Gradients of the parameters given dL/dF_pose. The pose tensor is input data,
// so no input gradient is produced.
PoseEncoderGrads pe_backward(const PoseEncoderCache& cache, const PoseEncoderParams& params,
                             const Volume& upstream);

void pe_sgd_step(PoseEncoderParams& params, const PoseEncoderGrads& grads, double lr);

}  // namespace pvpm
