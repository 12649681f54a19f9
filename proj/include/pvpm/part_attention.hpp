#pragma once

#include <cstdint>
#include <vector>

#include "pvpm/checkpoint.hpp"
#include "pvpm/volume.hpp"

namespace pvpm {

// A part with smaller mask mass yields a zero feature and is flagged invisible
// by construction; the pooling normalization divides by the mass.
inline constexpr double kMassEpsilon = 1e-6;

// 1x1 convolution (C_e -> N_p) followed by sigmoid.
struct PgaParams {
    int parts = 0;
    int in_channels = 0;
    std::vector<double> weight;  // [parts][in_channels]
    std::vector<double> bias;    // [parts]

    static PgaParams init(int parts, int in_channels, std::uint64_t seed);

    double& w(int p, int c) { return weight[std::size_t(p) * in_channels + c]; }
    double w(int p, int c) const { return weight[std::size_t(p) * in_channels + c]; }

    void save_into(Checkpoint& ckpt) const;
    static PgaParams load_from(const Checkpoint& ckpt);
};

// Exclusive-max result: each spatial location keeps its activation only in the
// argmax part map, so part supports are pairwise disjoint.
struct MaskedAttention {
    Volume masked;             // N_p x H x W, zero except at owned locations
    std::vector<int> owner;    // H*W entries, winning part index per location
    std::vector<double> mass;  // per-part sum of kept activations
};

struct PartFeatureSet {
    Mat features;                      // N_p x C pooled descriptors
    std::vector<double> mass;          // copied from the mask
    std::vector<std::uint8_t> visible; // mass > kMassEpsilon

    int parts() const { return features.rows; }
    int feature_dim() const { return features.cols; }
};

struct PgaGrads {
    std::vector<double> d_weight;
    std::vector<double> d_bias;

    void accumulate(const PgaGrads& other, double scale);
};

// A = sigmoid(1x1 conv of F_pose); every entry in (0,1).
Volume pga_forward(const Volume& f_pose, const PgaParams& params);

// Ties go to the lowest part index, which keeps the result deterministic and
// independent of evaluation order.
MaskedAttention exclusive_max_mask(const Volume& attention);

// f_i = (1/mass_i) * sum_{h,w} masked_i(h,w) * F(:,h,w); the zero vector when
// mass_i <= kMassEpsilon.
PartFeatureSet part_pool(const Volume& appearance, const MaskedAttention& masked);

// Routes upstream gradients on the pooled part features back to the 1x1
// convolution parameters and to F_pose. The argmax ownership pattern is
// treated as locally constant.
PgaGrads pga_backward(const Volume& appearance, const Volume& f_pose, const PgaParams& params,
                      const Volume& attention, const MaskedAttention& masked,
                      const PartFeatureSet& parts, const Mat& d_parts, Volume* d_f_pose);

void pga_sgd_step(PgaParams& params, const PgaGrads& grads, double lr);

}  // namespace pvpm
