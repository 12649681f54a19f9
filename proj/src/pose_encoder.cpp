#include "pvpm/pose_encoder.hpp"

#include <cmath>
#include <stdexcept>

#include "pvpm/rng.hpp"

namespace pvpm {

namespace {

int out_extent(int in, int stride) { return (in + stride - 1) / stride; }

Conv3x3 init_conv(int in_ch, int out_ch, int stride, Rng& rng) {
    Conv3x3 conv;
    conv.in_channels = in_ch;
    conv.out_channels = out_ch;
    conv.stride = stride;
    conv.weight.resize(std::size_t(out_ch) * in_ch * 9);
    conv.bias.assign(out_ch, 0.0);
    const double bound = 1.0 / std::sqrt(double(in_ch) * 9.0);
    for (double& w : conv.weight) w = rng.uniform(-bound, bound);
    return conv;
}

Volume conv_forward(const Volume& in, const Conv3x3& conv) {
    const int s = conv.stride;
    Volume out(conv.out_channels, out_extent(in.height, s), out_extent(in.width, s));
    for (int o = 0; o < conv.out_channels; ++o) {
        for (int y = 0; y < out.height; ++y) {
            for (int x = 0; x < out.width; ++x) {
                double acc = conv.bias[o];
                for (int i = 0; i < conv.in_channels; ++i) {
                    for (int ky = 0; ky < 3; ++ky) {
                        const int yy = y * s + ky - 1;
                        if (yy < 0 || yy >= in.height) continue;
                        for (int kx = 0; kx < 3; ++kx) {
                            const int xx = x * s + kx - 1;
                            if (xx < 0 || xx >= in.width) continue;
                            acc += conv.w(o, i, ky, kx) * in.at(i, yy, xx);
                        }
                    }
                }
                out.at(o, y, x) = acc;
            }
        }
    }
    return out;
}

// Accumulates weight/bias gradients and, when d_input != nullptr, the input
// gradient from dL/d(pre-activation).
void conv_backward(const Volume& in, const Conv3x3& conv, const Volume& d_pre,
                   std::vector<double>& d_weight, std::vector<double>& d_bias, Volume* d_input) {
    const int s = conv.stride;
    d_weight.assign(conv.weight.size(), 0.0);
    d_bias.assign(conv.bias.size(), 0.0);
    if (d_input != nullptr) *d_input = Volume(in.channels, in.height, in.width);
    for (int o = 0; o < conv.out_channels; ++o) {
        for (int y = 0; y < d_pre.height; ++y) {
            for (int x = 0; x < d_pre.width; ++x) {
                const double g = d_pre.at(o, y, x);
                if (g == 0.0) continue;
                d_bias[o] += g;
                for (int i = 0; i < conv.in_channels; ++i) {
                    for (int ky = 0; ky < 3; ++ky) {
                        const int yy = y * s + ky - 1;
                        if (yy < 0 || yy >= in.height) continue;
                        for (int kx = 0; kx < 3; ++kx) {
                            const int xx = x * s + kx - 1;
                            if (xx < 0 || xx >= in.width) continue;
                            d_weight[((std::size_t(o) * conv.in_channels + i) * 3 + ky) * 3 + kx] +=
                                g * in.at(i, yy, xx);
                            if (d_input != nullptr) {
                                d_input->at(i, yy, xx) += g * conv.w(o, i, ky, kx);
                            }
                        }
                    }
                }
            }
        }
    }
}

Volume relu(const Volume& v) {
    Volume out = v;
    for (double& x : out.v) x = x > 0.0 ? x : 0.0;
    return out;
}

Volume relu_backward(const Volume& pre, const Volume& d_out) {
    Volume d_pre = d_out;
    for (std::size_t i = 0; i < pre.v.size(); ++i) {
        if (pre.v[i] <= 0.0) d_pre.v[i] = 0.0;
    }
    return d_pre;
}

}  // namespace

PoseEncoderParams PoseEncoderParams::init(const PoseEncoderConfig& config, std::uint64_t seed) {
    Rng rng(derive_seed(seed, "pose-encoder"));
    PoseEncoderParams p;
    p.config = config;
    p.conv1 = init_conv(config.in_channels, config.hidden_channels, config.stride1, rng);
    p.conv2 = init_conv(config.hidden_channels, config.out_channels, config.stride2, rng);
    return p;
}

std::size_t PoseEncoderParams::parameter_count() const {
    return conv1.weight.size() + conv1.bias.size() + conv2.weight.size() + conv2.bias.size();
}

Volume pe_forward(const Volume& pose, const PoseEncoderParams& params, PoseEncoderCache* cache) {
    const auto& cfg = params.config;
    if (pose.channels != cfg.in_channels) {
        throw std::invalid_argument("pose encoder expects " + std::to_string(cfg.in_channels) +
                                    " input channels, got " + std::to_string(pose.channels));
    }
    const int h_out = out_extent(out_extent(pose.height, cfg.stride1), cfg.stride2);
    const int w_out = out_extent(out_extent(pose.width, cfg.stride1), cfg.stride2);
    if (h_out != cfg.target_height || w_out != cfg.target_width) {
        throw std::invalid_argument(
            "stride schedule maps pose dims " + std::to_string(pose.height) + "x" +
            std::to_string(pose.width) + " to " + std::to_string(h_out) + "x" +
            std::to_string(w_out) + ", expected " + std::to_string(cfg.target_height) + "x" +
            std::to_string(cfg.target_width));
    }

    Volume pre1 = conv_forward(pose, params.conv1);
    Volume act1 = relu(pre1);
    Volume pre2 = conv_forward(act1, params.conv2);
    Volume out = relu(pre2);
    if (cache != nullptr) {
        cache->input = pose;
        cache->pre1 = std::move(pre1);
        cache->act1 = std::move(act1);
        cache->pre2 = std::move(pre2);
    }
    return out;
}

PoseEncoderGrads pe_backward(const PoseEncoderCache& cache, const PoseEncoderParams& params,
                             const Volume& upstream) {
    if (!upstream.same_shape(cache.pre2)) {
        throw std::invalid_argument("upstream gradient shape does not match forward output");
    }
    PoseEncoderGrads grads;
    Volume d_pre2 = relu_backward(cache.pre2, upstream);
    Volume d_act1;
    conv_backward(cache.act1, params.conv2, d_pre2, grads.d_weight2, grads.d_bias2, &d_act1);
    Volume d_pre1 = relu_backward(cache.pre1, d_act1);
    conv_backward(cache.input, params.conv1, d_pre1, grads.d_weight1, grads.d_bias1, nullptr);
    return grads;
}

void PoseEncoderGrads::accumulate(const PoseEncoderGrads& other, double scale) {
    auto add = [scale](std::vector<double>& dst, const std::vector<double>& src) {
        if (dst.empty()) dst.assign(src.size(), 0.0);
        for (std::size_t i = 0; i < src.size(); ++i) dst[i] += scale * src[i];
    };
    add(d_weight1, other.d_weight1);
    add(d_bias1, other.d_bias1);
    add(d_weight2, other.d_weight2);
    add(d_bias2, other.d_bias2);
}

void pe_sgd_step(PoseEncoderParams& params, const PoseEncoderGrads& grads, double lr) {
    for (std::size_t i = 0; i < params.conv1.weight.size(); ++i)
        params.conv1.weight[i] -= lr * grads.d_weight1[i];
    for (std::size_t i = 0; i < params.conv1.bias.size(); ++i)
        params.conv1.bias[i] -= lr * grads.d_bias1[i];
    for (std::size_t i = 0; i < params.conv2.weight.size(); ++i)
        params.conv2.weight[i] -= lr * grads.d_weight2[i];
    for (std::size_t i = 0; i < params.conv2.bias.size(); ++i)
        params.conv2.bias[i] -= lr * grads.d_bias2[i];
}

void PoseEncoderParams::save_into(Checkpoint& ckpt) const {
    auto conv_tensor = [](const Conv3x3& c) {
        return tensor_from_doubles({static_cast<std::uint32_t>(c.out_channels),
                                    static_cast<std::uint32_t>(c.in_channels), 3u, 3u},
                                   c.weight);
    };
    ckpt.put("pe.conv1.weight", conv_tensor(conv1));
    ckpt.put("pe.conv1.bias",
             tensor_from_doubles({static_cast<std::uint32_t>(conv1.out_channels)}, conv1.bias));
    ckpt.put("pe.conv2.weight", conv_tensor(conv2));
    ckpt.put("pe.conv2.bias",
             tensor_from_doubles({static_cast<std::uint32_t>(conv2.out_channels)}, conv2.bias));
    ckpt.meta["pose_encoder"] = {
        {"in_channels", config.in_channels},   {"hidden_channels", config.hidden_channels},
        {"out_channels", config.out_channels}, {"stride1", config.stride1},
        {"stride2", config.stride2},           {"target_height", config.target_height},
        {"target_width", config.target_width},
    };
}

PoseEncoderParams PoseEncoderParams::load_from(const Checkpoint& ckpt) {
    const auto& meta = ckpt.meta.at("pose_encoder");
    PoseEncoderConfig cfg;
    cfg.in_channels = meta.at("in_channels").get<int>();
    cfg.hidden_channels = meta.at("hidden_channels").get<int>();
    cfg.out_channels = meta.at("out_channels").get<int>();
    cfg.stride1 = meta.at("stride1").get<int>();
    cfg.stride2 = meta.at("stride2").get<int>();
    cfg.target_height = meta.at("target_height").get<int>();
    cfg.target_width = meta.at("target_width").get<int>();

    PoseEncoderParams p;
    p.config = cfg;
    auto load_conv = [&](const std::string& prefix, int in_ch, int out_ch, int stride) {
        Conv3x3 c;
        c.in_channels = in_ch;
        c.out_channels = out_ch;
        c.stride = stride;
        c.weight = doubles_from_tensor(ckpt.get(prefix + ".weight"));
        c.bias = doubles_from_tensor(ckpt.get(prefix + ".bias"));
        if (c.weight.size() != std::size_t(out_ch) * in_ch * 9 ||
            c.bias.size() != std::size_t(out_ch)) {
            throw std::runtime_error("checkpoint conv shapes do not match meta for " + prefix);
        }
        return c;
    };
    p.conv1 = load_conv("pe.conv1", cfg.in_channels, cfg.hidden_channels, cfg.stride1);
    p.conv2 = load_conv("pe.conv2", cfg.hidden_channels, cfg.out_channels, cfg.stride2);
    return p;
}

}  // namespace pvpm
