#include "pvpm/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "pvpm/synth.hpp"

namespace pvpm {

ModelParams ModelParams::init(const TrainConfig& config) {
    ModelParams p;
    p.pe = PoseEncoderParams::init(config.encoder, config.seed);
    p.pga = PgaParams::init(config.parts, config.encoder.out_channels, config.seed);
    PvpConfig pvp_cfg;
    pvp_cfg.parts = config.parts;
    pvp_cfg.in_channels = config.encoder.out_channels;
    p.pvp = PvpParams::init(pvp_cfg, config.seed);
    return p;
}

Checkpoint ModelParams::to_checkpoint(const MovingAverageState& state) const {
    Checkpoint ckpt;
    pe.save_into(ckpt);
    pga.save_into(ckpt);
    pvp.save_into(ckpt);
    state.save_into(ckpt);
    return ckpt;
}

std::pair<ModelParams, MovingAverageState> ModelParams::from_checkpoint(const Checkpoint& ckpt) {
    ModelParams p;
    p.pe = PoseEncoderParams::load_from(ckpt);
    p.pga = PgaParams::load_from(ckpt);
    p.pvp = PvpParams::load_from(ckpt);
    return {std::move(p), MovingAverageState::load_from(ckpt)};
}

Trainer::Trainer(const LoadedDataset& dataset, const ToyClassifierBank& bank, TrainConfig config)
    : dataset_(dataset),
      bank_(bank),
      config_(config),
      params_(ModelParams::init(config)),
      state_(MovingAverageState::make(config.parts, config.ema_momentum)),
      sampler_(derive_seed(config.seed, "batch-sampler")),
      augment_rng_(derive_seed(config.seed, "augment-train")) {
    if (config_.batch_size < 2) {
        throw std::invalid_argument("batch size must be at least 2 (one positive pair)");
    }
    train_groups_ = dataset_.by_identity(Role::Train);
    for (std::size_t id = 0; id < train_groups_.size(); ++id) {
        if (train_groups_[id].size() >= 2) eligible_identities_.push_back(static_cast<int>(id));
    }
    if (eligible_identities_.empty()) {
        throw std::invalid_argument(
            "training set contains no positive pair (no identity with >= 2 images)");
    }
    const auto train_count = dataset_.indices(Role::Train).size();
    const int steps_per_epoch =
        static_cast<int>((train_count + config_.batch_size - 1) / config_.batch_size);
    total_steps_ = config_.max_steps > 0 ? config_.max_steps
                                         : config_.epochs * std::max(1, steps_per_epoch);
}

std::vector<Trainer::Pair> Trainer::sample_pairs() {
    const int want = std::max(1, config_.batch_size / 2);
    std::vector<int> ids = eligible_identities_;
    sampler_.shuffle(ids);
    const int n_pairs = std::min<int>(want, static_cast<int>(ids.size()));
    std::vector<Pair> pairs;
    pairs.reserve(n_pairs);
    for (int k = 0; k < n_pairs; ++k) {
        const auto& group = train_groups_[ids[k]];
        const std::size_t a = sampler_.below(group.size());
        std::size_t b = sampler_.below(group.size() - 1);
        if (b >= a) ++b;
        pairs.push_back(Pair{group[a], group[b], ids[k]});
    }
    return pairs;
}

StepMetrics Trainer::step() {
    const auto pairs = sample_pairs();
    const int n_pairs = static_cast<int>(pairs.size());
    const int n_images = 2 * n_pairs;
    const double pair_scale = 1.0 / n_pairs;
    const double image_scale = 1.0 / n_images;

    // Assemble the batch; images are copied so augmentation cannot touch the
    // dataset.
    struct ImageSlot {
        Volume feature;
        Volume pose;
        int label = 0;
    };
    std::vector<ImageSlot> batch(n_images);
    for (int k = 0; k < n_pairs; ++k) {
        for (int side = 0; side < 2; ++side) {
            const auto& img = dataset_.images[side == 0 ? pairs[k].first : pairs[k].second];
            ImageSlot slot;
            slot.feature = img.feature;
            slot.pose = img.pose;
            slot.label = img.label;
            batch[2 * k + side] = std::move(slot);
        }
    }
    if (config_.augment.probability > 0.0) {
        const auto& aug = config_.augment;
        for (auto& slot : batch) {
            if (augment_rng_.uniform() >= aug.probability) continue;
            const int parts = config_.parts;
            const int lo = std::max(1, aug.span_min);
            const int hi = std::min(parts, std::max(lo, aug.span_max));
            const int span = lo + static_cast<int>(augment_rng_.below(hi - lo + 1));
            const int start = static_cast<int>(augment_rng_.below(parts - span + 1));
            std::vector<double> obstacle(slot.feature.channels);
            double n2 = 0.0;
            for (double& x : obstacle) {
                x = augment_rng_.normal();
                n2 += x * x;
            }
            const double scale = aug.obstacle_scale / std::sqrt(std::max(n2, 1e-30));
            for (double& x : obstacle) x *= scale;
            std::vector<std::uint8_t> scratch_vis(parts, 1);
            inject_occlusion_span(slot.feature, slot.pose, scratch_vis, parts, start, span,
                                  obstacle, aug.noise_amplitude, aug.pose_suppression,
                                  augment_rng_);
        }
    }

    // Forward: pose encoder and attention pooling per image, in parallel.
    std::vector<PoseEncoderCache> pe_caches(n_images);
    std::vector<Volume> f_pose(n_images);
    std::vector<Volume> attention(n_images);
    std::vector<MaskedAttention> masks(n_images);
    std::vector<PartFeatureSet> parts(n_images);
    parallel_for(n_images, config_.workers, [&](int b) {
        f_pose[b] = pe_forward(batch[b].pose, params_.pe, &pe_caches[b]);
        attention[b] = pga_forward(f_pose[b], params_.pga);
        masks[b] = exclusive_max_mask(attention[b]);
        parts[b] = part_pool(batch[b].feature, masks[b]);
    });

    // Visibility scores for the whole batch (train mode batch statistics).
    PvpCache pvp_cache;
    auto scores = pvp_forward(f_pose, params_.pvp, PvpMode::Train, &pvp_cache);

    // Pseudo-labels per pair. The solver sees the pre-step averages except on
    // the very first step, which bootstraps them from the current batch.
    std::vector<Mat> raws(n_pairs);
    for (int k = 0; k < n_pairs; ++k) {
        raws[k] = build_raw_affinity(parts[2 * k], parts[2 * k + 1]);
    }
    bool ema_updated = false;
    if (!state_.initialized() || config_.solve_with_fresh_ema) {
        update_moving_average(state_, raws);
        ema_updated = true;
    }
    const std::vector<double> lambda_bar = regularizer(state_, config_.lambda);

    double loss_v_total = 0.0, loss_m_total = 0.0, loss_c_total = 0.0;
    double selected_total = 0.0;
    Mat d_scores(n_images, config_.parts);
    std::vector<Mat> d_parts(n_images);
    for (int b = 0; b < n_images; ++b) {
        d_parts[b] = Mat(parts[b].parts(), parts[b].feature_dim());
    }

    for (int k = 0; k < n_pairs; ++k) {
        const int a = 2 * k, g = 2 * k + 1;
        const AffinityMatrix affinity = center_affinity(raws[k], state_);
        const MatchIndicator pseudo = solve_iqp_exact(affinity.m, lambda_bar);
        selected_total += pseudo.count();

        const bool nonneg = std::all_of(affinity.m.v.begin(), affinity.m.v.end(),
                                        [](double x) { return x >= 0.0; });
        if (nonneg) {
            ++nonneg_pairs_;
            if (pseudo.count() < config_.parts) ++nonneg_violations_;
        }

        const auto lv = loss_visibility(pseudo, scores[a], scores[g]);
        loss_v_total += lv.value;
        for (int p = 0; p < config_.parts; ++p) {
            d_scores.at(a, p) += pair_scale * lv.d_probe[p];
            d_scores.at(g, p) += pair_scale * lv.d_gallery[p];
        }

        const auto lm = loss_matching(pseudo, parts[a], parts[g], state_,
                                      config_.grad_through_lambda_prime);
        loss_m_total += lm.value;
        for (std::size_t i = 0; i < lm.d_probe.v.size(); ++i) {
            d_parts[a].v[i] += pair_scale * lm.d_probe.v[i];
            d_parts[g].v[i] += pair_scale * lm.d_gallery.v[i];
        }
    }
    for (int b = 0; b < n_images; ++b) {
        const auto lc = loss_classification(parts[b], bank_, batch[b].label);
        loss_c_total += lc.value;
        for (std::size_t i = 0; i < lc.d_features.v.size(); ++i) {
            d_parts[b].v[i] += image_scale * lc.d_features.v[i];
        }
    }

    if (!ema_updated) {
        update_moving_average(state_, raws);
    }

    // Backward. L_v reaches theta_v and, through the pose features, theta_e;
    // L_c + L_m reach theta_a and theta_e. The routing of Algorithm 1 is the
    // dependency structure itself.
    std::vector<Volume> d_f_pose_pvp;
    const PvpGrads pvp_grads = pvp_backward(pvp_cache, params_.pvp, d_scores, &d_f_pose_pvp);

    std::vector<PgaGrads> pga_grads(n_images);
    std::vector<PoseEncoderGrads> pe_grads(n_images);
    parallel_for(n_images, config_.workers, [&](int b) {
        Volume d_f_pose;
        pga_grads[b] = pga_backward(batch[b].feature, f_pose[b], params_.pga, attention[b],
                                    masks[b], parts[b], d_parts[b], &d_f_pose);
        for (std::size_t i = 0; i < d_f_pose.v.size(); ++i) {
            d_f_pose.v[i] += d_f_pose_pvp[b].v[i];
        }
        pe_grads[b] = pe_backward(pe_caches[b], params_.pe, d_f_pose);
    });

    PgaGrads pga_total;
    PoseEncoderGrads pe_total;
    for (int b = 0; b < n_images; ++b) {  // fixed order keeps sums deterministic
        pga_total.accumulate(pga_grads[b], 1.0);
        pe_total.accumulate(pe_grads[b], 1.0);
    }

    const double lr = config_.learning_rate;
    pvp_sgd_step(params_.pvp, pvp_grads, lr);
    pga_sgd_step(params_.pga, pga_total, lr);
    pe_sgd_step(params_.pe, pe_total, lr);

    StepMetrics m;
    m.step = ++step_index_;
    m.loss_visibility = loss_v_total * pair_scale;
    m.loss_matching = loss_m_total * pair_scale;
    m.loss_classification = loss_c_total * image_scale;
    m.mean_selected = selected_total * pair_scale;
    m.learning_rate = lr;
    return m;
}

TrainResult Trainer::run() {
    TrainResult result;
    result.metrics.reserve(total_steps_);
    for (int t = 0; t < total_steps_; ++t) {
        result.metrics.push_back(step());
    }
    result.params = params_;
    result.state = state_;
    result.nonneg_pairs = nonneg_pairs_;
    result.nonneg_violations = nonneg_violations_;
    return result;
}

TrainResult train_model(const LoadedDataset& dataset, const ToyClassifierBank& bank,
                        const TrainConfig& config) {
    Trainer trainer(dataset, bank, config);
    return trainer.run();
}

void write_metrics_csv(const std::vector<StepMetrics>& metrics,
                       const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot open " + path.string() + " for writing");
    }
    out << "step,L_v,L_m,L_c,mean_selected,learning_rate\n";
    char buf[256];
    for (const auto& m : metrics) {
        std::snprintf(buf, sizeof(buf), "%d,%.12g,%.12g,%.12g,%.12g,%.12g\n", m.step,
                      m.loss_visibility, m.loss_matching, m.loss_classification, m.mean_selected,
                      m.learning_rate);
        out << buf;
    }
}

}  // namespace pvpm
