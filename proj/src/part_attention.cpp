#include "pvpm/part_attention.hpp"

#include <cmath>
#include <stdexcept>

#include "pvpm/rng.hpp"

namespace pvpm {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

PgaParams PgaParams::init(int parts, int in_channels, std::uint64_t seed) {
    Rng rng(derive_seed(seed, "part-attention"));
    PgaParams p;
    p.parts = parts;
    p.in_channels = in_channels;
    p.weight.resize(std::size_t(parts) * in_channels);
    p.bias.assign(parts, 0.0);
    const double bound = 1.0 / std::sqrt(double(in_channels));
    for (double& w : p.weight) w = rng.uniform(-bound, bound);
    return p;
}

Volume pga_forward(const Volume& f_pose, const PgaParams& params) {
    if (f_pose.channels != params.in_channels) {
        throw std::invalid_argument("attention generator expects " +
                                    std::to_string(params.in_channels) + " channels, got " +
                                    std::to_string(f_pose.channels));
    }
    Volume a(params.parts, f_pose.height, f_pose.width);
    const int hw = f_pose.height * f_pose.width;
    for (int p = 0; p < params.parts; ++p) {
        for (int s = 0; s < hw; ++s) {
            double acc = params.bias[p];
            for (int c = 0; c < params.in_channels; ++c) {
                acc += params.w(p, c) * f_pose.v[std::size_t(c) * hw + s];
            }
            a.v[std::size_t(p) * hw + s] = sigmoid(acc);
        }
    }
    return a;
}

MaskedAttention exclusive_max_mask(const Volume& attention) {
    const int parts = attention.channels;
    const int hw = attention.height * attention.width;
    MaskedAttention m;
    m.masked = Volume(parts, attention.height, attention.width);
    m.owner.assign(hw, 0);
    m.mass.assign(parts, 0.0);
    for (int s = 0; s < hw; ++s) {
        int best = 0;
        double best_val = attention.v[s];
        for (int p = 1; p < parts; ++p) {
            const double val = attention.v[std::size_t(p) * hw + s];
            if (val > best_val) {
                best_val = val;
                best = p;
            }
        }
        m.owner[s] = best;
        m.masked.v[std::size_t(best) * hw + s] = best_val;
        m.mass[best] += best_val;
    }
    return m;
}

PartFeatureSet part_pool(const Volume& appearance, const MaskedAttention& masked) {
    if (appearance.height != masked.masked.height || appearance.width != masked.masked.width) {
        throw std::invalid_argument("appearance and attention spatial dims differ");
    }
    const int parts = masked.masked.channels;
    const int channels = appearance.channels;
    const int hw = appearance.height * appearance.width;

    PartFeatureSet set;
    set.features = Mat(parts, channels);
    set.mass = masked.mass;
    set.visible.assign(parts, 0);
    for (int p = 0; p < parts; ++p) {
        if (masked.mass[p] <= kMassEpsilon) continue;  // zero feature, flagged invisible
        set.visible[p] = 1;
        const double inv_mass = 1.0 / masked.mass[p];
        for (int s = 0; s < hw; ++s) {
            const double a = masked.masked.v[std::size_t(p) * hw + s];
            if (a == 0.0) continue;
            for (int c = 0; c < channels; ++c) {
                set.features.at(p, c) += a * appearance.v[std::size_t(c) * hw + s];
            }
        }
        for (int c = 0; c < channels; ++c) set.features.at(p, c) *= inv_mass;
    }
    return set;
}

PgaGrads pga_backward(const Volume& appearance, const Volume& f_pose, const PgaParams& params,
                      const Volume& attention, const MaskedAttention& masked,
                      const PartFeatureSet& parts, const Mat& d_parts, Volume* d_f_pose) {
    const int n_parts = params.parts;
    const int channels = appearance.channels;
    const int hw = appearance.height * appearance.width;
    if (d_parts.rows != n_parts || d_parts.cols != channels) {
        throw std::invalid_argument("upstream part-gradient shape mismatch");
    }

    PgaGrads grads;
    grads.d_weight.assign(params.weight.size(), 0.0);
    grads.d_bias.assign(params.bias.size(), 0.0);
    if (d_f_pose != nullptr) *d_f_pose = Volume(f_pose.channels, f_pose.height, f_pose.width);

    // d objective / d pre-sigmoid logit at each owned location.
    for (int s = 0; s < hw; ++s) {
        const int p = masked.owner[s];
        if (masked.mass[p] <= kMassEpsilon) continue;
        const double a = attention.v[std::size_t(p) * hw + s];
        // Quotient rule through f_p = sum(a*F)/mass.
        double d_mask = 0.0;
        for (int c = 0; c < channels; ++c) {
            d_mask += d_parts.at(p, c) *
                      (appearance.v[std::size_t(c) * hw + s] - parts.features.at(p, c));
        }
        d_mask /= masked.mass[p];
        const double d_logit = d_mask * a * (1.0 - a);
        if (d_logit == 0.0) continue;
        grads.d_bias[p] += d_logit;
        for (int c = 0; c < params.in_channels; ++c) {
            const double fp = f_pose.v[std::size_t(c) * hw + s];
            grads.d_weight[std::size_t(p) * params.in_channels + c] += d_logit * fp;
            if (d_f_pose != nullptr) {
                d_f_pose->v[std::size_t(c) * hw + s] += d_logit * params.w(p, c);
            }
        }
    }
    return grads;
}

void PgaGrads::accumulate(const PgaGrads& other, double scale) {
    if (d_weight.empty()) d_weight.assign(other.d_weight.size(), 0.0);
    if (d_bias.empty()) d_bias.assign(other.d_bias.size(), 0.0);
    for (std::size_t i = 0; i < other.d_weight.size(); ++i) d_weight[i] += scale * other.d_weight[i];
    for (std::size_t i = 0; i < other.d_bias.size(); ++i) d_bias[i] += scale * other.d_bias[i];
}

void pga_sgd_step(PgaParams& params, const PgaGrads& grads, double lr) {
    for (std::size_t i = 0; i < params.weight.size(); ++i) params.weight[i] -= lr * grads.d_weight[i];
    for (std::size_t i = 0; i < params.bias.size(); ++i) params.bias[i] -= lr * grads.d_bias[i];
}

void PgaParams::save_into(Checkpoint& ckpt) const {
    ckpt.put("pga.weight",
             tensor_from_doubles(
                 {static_cast<std::uint32_t>(parts), static_cast<std::uint32_t>(in_channels)},
                 weight));
    ckpt.put("pga.bias", tensor_from_doubles({static_cast<std::uint32_t>(parts)}, bias));
}

PgaParams PgaParams::load_from(const Checkpoint& ckpt) {
    const Tensor& w = ckpt.get("pga.weight");
    if (w.rank() != 2) throw std::runtime_error("pga.weight must be rank 2");
    PgaParams p;
    p.parts = static_cast<int>(w.dims[0]);
    p.in_channels = static_cast<int>(w.dims[1]);
    p.weight = doubles_from_tensor(w);
    p.bias = doubles_from_tensor(ckpt.get("pga.bias"));
    if (p.bias.size() != std::size_t(p.parts)) {
        throw std::runtime_error("pga.bias length mismatch");
    }
    return p;
}

}  // namespace pvpm
