#include "pvpm/visibility.hpp"

#include <cmath>
#include <stdexcept>

#include "pvpm/rng.hpp"

namespace pvpm {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

PvpParams PvpParams::init(const PvpConfig& config, std::uint64_t seed) {
    Rng rng(derive_seed(seed, "visibility-predictor"));
    PvpParams p;
    p.config = config;
    p.weight.resize(std::size_t(config.parts) * config.in_channels);
    const double bound = 1.0 / std::sqrt(double(config.in_channels));
    for (double& w : p.weight) w = rng.uniform(-bound, bound);
    p.bias.assign(config.parts, 0.0);
    p.gamma.assign(config.parts, 1.0);
    p.beta.assign(config.parts, 0.0);
    p.running_mean.assign(config.parts, 0.0);
    p.running_var.assign(config.parts, 1.0);
    return p;
}

std::vector<VisibilityScores> pvp_forward(std::span<const Volume> f_pose_batch, PvpParams& params,
                                          PvpMode mode, PvpCache* cache) {
    const auto& cfg = params.config;
    const int batch = static_cast<int>(f_pose_batch.size());
    if (batch == 0) {
        throw std::invalid_argument("visibility predictor needs at least one sample");
    }
    if (mode == PvpMode::Train && batch < 2) {
        throw std::invalid_argument(
            "train-mode batch statistics are undefined for batch size 1; need >= 2 samples");
    }
    for (const Volume& v : f_pose_batch) {
        if (v.channels != cfg.in_channels) {
            throw std::invalid_argument("visibility predictor expects " +
                                        std::to_string(cfg.in_channels) + " channels, got " +
                                        std::to_string(v.channels));
        }
    }

    Mat pooled(batch, cfg.in_channels);
    Mat logits(batch, cfg.parts);
    for (int b = 0; b < batch; ++b) {
        const Volume& v = f_pose_batch[b];
        const int hw = v.height * v.width;
        const double inv = 1.0 / double(hw);
        for (int c = 0; c < cfg.in_channels; ++c) {
            double s = 0.0;
            for (int i = 0; i < hw; ++i) s += v.v[std::size_t(c) * hw + i];
            pooled.at(b, c) = s * inv;
        }
        for (int p = 0; p < cfg.parts; ++p) {
            double z = params.bias[p];
            for (int c = 0; c < cfg.in_channels; ++c) z += params.w(p, c) * pooled.at(b, c);
            logits.at(b, p) = z;
        }
    }

    std::vector<double> mean(cfg.parts, 0.0), var(cfg.parts, 0.0);
    if (mode == PvpMode::Train) {
        for (int p = 0; p < cfg.parts; ++p) {
            double m = 0.0;
            for (int b = 0; b < batch; ++b) m += logits.at(b, p);
            m /= batch;
            double v = 0.0;
            for (int b = 0; b < batch; ++b) {
                const double d = logits.at(b, p) - m;
                v += d * d;
            }
            v /= batch;  // population variance
            mean[p] = m;
            var[p] = v;
            params.running_mean[p] = (1.0 - cfg.momentum) * params.running_mean[p] + cfg.momentum * m;
            params.running_var[p] = (1.0 - cfg.momentum) * params.running_var[p] + cfg.momentum * v;
        }
    } else {
        mean = params.running_mean;
        var = params.running_var;
    }

    Mat normalized(batch, cfg.parts);
    Mat scores(batch, cfg.parts);
    std::vector<VisibilityScores> out(batch);
    for (int b = 0; b < batch; ++b) {
        out[b].resize(cfg.parts);
        for (int p = 0; p < cfg.parts; ++p) {
            const double xhat = (logits.at(b, p) - mean[p]) / std::sqrt(var[p] + cfg.epsilon);
            const double y = params.gamma[p] * xhat + params.beta[p];
            const double score = sigmoid(y);
            normalized.at(b, p) = xhat;
            scores.at(b, p) = score;
            out[b][p] = score;
        }
    }

    if (cache != nullptr) {
        cache->mode = mode;
        cache->height = f_pose_batch[0].height;
        cache->width = f_pose_batch[0].width;
        cache->pooled = std::move(pooled);
        cache->logits = std::move(logits);
        cache->normalized = std::move(normalized);
        cache->scores = std::move(scores);
        cache->batch_mean = std::move(mean);
        cache->batch_var = std::move(var);
    }
    return out;
}

VisibilityScores pvp_forward_single(const Volume& f_pose, const PvpParams& params) {
    PvpParams& mutable_params = const_cast<PvpParams&>(params);  // eval mode never mutates
    auto scores = pvp_forward({&f_pose, 1}, mutable_params, PvpMode::Eval, nullptr);
    return scores[0];
}

PvpGrads pvp_backward(const PvpCache& cache, const PvpParams& params, const Mat& upstream,
                      std::vector<Volume>* d_f_pose) {
    const auto& cfg = params.config;
    const int batch = cache.logits.rows;
    if (upstream.rows != batch || upstream.cols != cfg.parts) {
        throw std::invalid_argument("upstream gradient shape does not match forward batch");
    }

    PvpGrads grads;
    grads.d_weight.assign(params.weight.size(), 0.0);
    grads.d_bias.assign(cfg.parts, 0.0);
    grads.d_gamma.assign(cfg.parts, 0.0);
    grads.d_beta.assign(cfg.parts, 0.0);

    // Through the sigmoid and the affine BN output.
    Mat d_xhat(batch, cfg.parts);
    for (int b = 0; b < batch; ++b) {
        for (int p = 0; p < cfg.parts; ++p) {
            const double s = cache.scores.at(b, p);
            const double dy = upstream.at(b, p) * s * (1.0 - s);
            grads.d_gamma[p] += dy * cache.normalized.at(b, p);
            grads.d_beta[p] += dy;
            d_xhat.at(b, p) = dy * params.gamma[p];
        }
    }

    // Through the normalization; train mode includes the batch-statistics
    // terms, eval mode treats the running statistics as constants.
    Mat d_logits(batch, cfg.parts);
    for (int p = 0; p < cfg.parts; ++p) {
        const double inv_std = 1.0 / std::sqrt(cache.batch_var[p] + cfg.epsilon);
        if (cache.mode == PvpMode::Train) {
            double sum_dx = 0.0, sum_dx_xhat = 0.0;
            for (int b = 0; b < batch; ++b) {
                sum_dx += d_xhat.at(b, p);
                sum_dx_xhat += d_xhat.at(b, p) * cache.normalized.at(b, p);
            }
            for (int b = 0; b < batch; ++b) {
                d_logits.at(b, p) =
                    inv_std * (d_xhat.at(b, p) - sum_dx / batch -
                               cache.normalized.at(b, p) * sum_dx_xhat / batch);
            }
        } else {
            for (int b = 0; b < batch; ++b) {
                d_logits.at(b, p) = d_xhat.at(b, p) * inv_std;
            }
        }
    }

    if (d_f_pose != nullptr) {
        d_f_pose->assign(batch, Volume());
    }
    const int hw = cache.height * cache.width;
    const double inv_hw = 1.0 / double(hw);
    for (int b = 0; b < batch; ++b) {
        for (int p = 0; p < cfg.parts; ++p) {
            const double dz = d_logits.at(b, p);
            grads.d_bias[p] += dz;
            for (int c = 0; c < cfg.in_channels; ++c) {
                grads.d_weight[std::size_t(p) * cfg.in_channels + c] += dz * cache.pooled.at(b, c);
            }
        }
        if (d_f_pose != nullptr) {
            Volume dv(cfg.in_channels, cache.height, cache.width);
            for (int c = 0; c < cfg.in_channels; ++c) {
                double dg = 0.0;
                for (int p = 0; p < cfg.parts; ++p) {
                    dg += d_logits.at(b, p) * params.w(p, c);
                }
                const double spread = dg * inv_hw;
                for (int i = 0; i < hw; ++i) dv.v[std::size_t(c) * hw + i] = spread;
            }
            (*d_f_pose)[b] = std::move(dv);
        }
    }
    return grads;
}

void pvp_sgd_step(PvpParams& params, const PvpGrads& grads, double lr) {
    for (std::size_t i = 0; i < params.weight.size(); ++i) params.weight[i] -= lr * grads.d_weight[i];
    for (std::size_t i = 0; i < params.bias.size(); ++i) params.bias[i] -= lr * grads.d_bias[i];
    for (std::size_t i = 0; i < params.gamma.size(); ++i) params.gamma[i] -= lr * grads.d_gamma[i];
    for (std::size_t i = 0; i < params.beta.size(); ++i) params.beta[i] -= lr * grads.d_beta[i];
}

void PvpParams::save_into(Checkpoint& ckpt) const {
    const auto parts_u = static_cast<std::uint32_t>(config.parts);
    ckpt.put("pvp.weight",
             tensor_from_doubles({parts_u, static_cast<std::uint32_t>(config.in_channels)}, weight));
    ckpt.put("pvp.bias", tensor_from_doubles({parts_u}, bias));
    ckpt.put("pvp.gamma", tensor_from_doubles({parts_u}, gamma));
    ckpt.put("pvp.beta", tensor_from_doubles({parts_u}, beta));
    ckpt.put("pvp.running_mean", tensor_from_doubles({parts_u}, running_mean));
    ckpt.put("pvp.running_var", tensor_from_doubles({parts_u}, running_var));
    ckpt.meta["visibility_predictor"] = {
        {"parts", config.parts},
        {"in_channels", config.in_channels},
        {"momentum", config.momentum},
        {"epsilon", config.epsilon},
    };
}

PvpParams PvpParams::load_from(const Checkpoint& ckpt) {
    const auto& meta = ckpt.meta.at("visibility_predictor");
    PvpConfig cfg;
    cfg.parts = meta.at("parts").get<int>();
    cfg.in_channels = meta.at("in_channels").get<int>();
    cfg.momentum = meta.at("momentum").get<double>();
    cfg.epsilon = meta.at("epsilon").get<double>();

    PvpParams p;
    p.config = cfg;
    p.weight = doubles_from_tensor(ckpt.get("pvp.weight"));
    p.bias = doubles_from_tensor(ckpt.get("pvp.bias"));
    p.gamma = doubles_from_tensor(ckpt.get("pvp.gamma"));
    p.beta = doubles_from_tensor(ckpt.get("pvp.beta"));
    p.running_mean = doubles_from_tensor(ckpt.get("pvp.running_mean"));
    p.running_var = doubles_from_tensor(ckpt.get("pvp.running_var"));
    for (double v : p.running_var) {
        if (!(v > 0.0)) throw std::runtime_error("checkpoint running variance must be positive");
    }
    return p;
}

}  // namespace pvpm
