#include "pvpm/synth.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace pvpm {

namespace {

constexpr int kKeypointChannels = 18;

std::vector<double> random_unit(int dim, Rng& rng) {
    std::vector<double> v(dim);
    double n2 = 0.0;
    while (n2 == 0.0) {
        for (double& x : v) x = rng.normal();
        n2 = norm2(v);
    }
    const double inv = 1.0 / std::sqrt(n2);
    for (double& x : v) x *= inv;
    return v;
}

int stripe_begin(int stripe, int height, int parts) { return stripe * height / parts; }

// Canonical body layout: keypoint k sits at a fixed fractional row so that
// occluding rows removes energy from specific channels. Columns are spread by
// the golden-ratio sequence to decorrelate them.
double keypoint_row(int k, int pose_height) {
    return (k + 0.5) / double(kKeypointChannels) * pose_height;
}

double keypoint_col(int k, int pose_width) {
    const double f = std::fmod(0.15 + k * 0.6180339887498949, 1.0);
    return (0.15 + 0.7 * f) * pose_width;
}

void render_pose(Volume& pose, Rng& rng) {
    const double sigma = std::max(1.0, pose.height / 16.0);
    const double inv_two_sigma2 = 1.0 / (2.0 * sigma * sigma);
    // Keypoint heatmaps.
    for (int k = 0; k < kKeypointChannels; ++k) {
        const double amp = 0.8 + 0.4 * rng.uniform();
        const double cy = keypoint_row(k, pose.height) + rng.uniform(-1.0, 1.0);
        const double cx = keypoint_col(k, pose.width) + rng.uniform(-1.0, 1.0);
        for (int y = 0; y < pose.height; ++y) {
            for (int x = 0; x < pose.width; ++x) {
                const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
                pose.at(k, y, x) += amp * std::exp(-d2 * inv_two_sigma2);
            }
        }
    }
    // Part affinity fields: limb l connects keypoints l and l+1 (mod 18); the
    // two channels carry the unit direction components along the limb strip.
    const int limbs = (pose.channels - kKeypointChannels) / 2;
    for (int l = 0; l < limbs; ++l) {
        const int k1 = l % kKeypointChannels;
        const int k2 = (l + 1) % kKeypointChannels;
        const double amp = 0.6 + 0.4 * rng.uniform();
        const double y1 = keypoint_row(k1, pose.height);
        const double y2 = keypoint_row(k2, pose.height);
        const double x1 = keypoint_col(k1, pose.width);
        const double x2 = keypoint_col(k2, pose.width);
        const double len = std::max(1.0, std::hypot(y2 - y1, x2 - x1));
        const double dy = (y2 - y1) / len;
        const double dx = (x2 - x1) / len;
        const int steps = static_cast<int>(len * 2.0) + 1;
        for (int s = 0; s <= steps; ++s) {
            const double t = double(s) / steps;
            const int y = static_cast<int>(std::lround(y1 + t * (y2 - y1)));
            const int x = static_cast<int>(std::lround(x1 + t * (x2 - x1)));
            if (y < 0 || y >= pose.height || x < 0 || x >= pose.width) continue;
            pose.at(kKeypointChannels + 2 * l, y, x) = amp * dy;
            pose.at(kKeypointChannels + 2 * l + 1, y, x) = amp * dx;
        }
    }
}

}  // namespace

void inject_occlusion_span(Volume& feature, Volume& pose, std::vector<std::uint8_t>& vis,
                           int parts, int span_start, int span_len,
                           std::span<const double> obstacle, double noise_amplitude,
                           double pose_suppression, Rng& rng) {
    const int span_end = std::min(parts, span_start + span_len);
    const int factor = pose.height / feature.height;
    for (int s = span_start; s < span_end; ++s) {
        vis[s] = 0;
        const int r0 = stripe_begin(s, feature.height, parts);
        const int r1 = stripe_begin(s + 1, feature.height, parts);
        for (int y = r0; y < r1; ++y) {
            for (int x = 0; x < feature.width; ++x) {
                for (int c = 0; c < feature.channels; ++c) {
                    feature.at(c, y, x) = obstacle[c] + noise_amplitude * rng.normal();
                }
            }
        }
        for (int y = r0 * factor; y < r1 * factor; ++y) {
            for (int x = 0; x < pose.width; ++x) {
                for (int c = 0; c < pose.channels; ++c) {
                    pose.at(c, y, x) *= pose_suppression;
                }
            }
        }
    }
}

SynthOutput generate(const SynthConfig& config) {
    if (config.height < config.parts) {
        throw std::invalid_argument("feature height " + std::to_string(config.height) +
                                    " too small for " + std::to_string(config.parts) + " stripes");
    }
    if (config.identities < 1 || config.images_per_identity < 1 || config.width < 1) {
        throw std::invalid_argument("synth config counts must be positive");
    }
    if (config.occlusion_probability < 0.0 || config.occlusion_probability > 1.0) {
        throw std::invalid_argument("occlusion probability must lie in [0,1]");
    }

    Rng rng(derive_seed(config.seed, "synth"));
    const int C = config.feature_channels;
    const int parts = config.parts;

    // Shared per-stripe base plus identity-specific offsets.
    std::vector<std::vector<double>> base(parts);
    for (int s = 0; s < parts; ++s) base[s] = random_unit(C, rng);

    std::vector<std::vector<std::vector<double>>> prototypes(config.identities);
    for (int id = 0; id < config.identities; ++id) {
        prototypes[id].resize(parts);
        for (int s = 0; s < parts; ++s) {
            std::vector<double> offset = random_unit(C, rng);
            std::vector<double> proto(C);
            double n2 = 0.0;
            for (int c = 0; c < C; ++c) {
                proto[c] = base[s][c] + config.identity_spread * offset[c];
                n2 += proto[c] * proto[c];
            }
            const double inv = 1.0 / std::sqrt(n2);
            for (double& x : proto) x *= inv;
            prototypes[id][s] = std::move(proto);
        }
    }

    std::vector<std::vector<double>> obstacles(config.obstacles);
    for (int o = 0; o < config.obstacles; ++o) {
        obstacles[o] = random_unit(C, rng);
        for (double& x : obstacles[o]) x *= config.obstacle_scale;
    }

    SynthOutput out;
    out.config = config;
    const int pose_h = config.height * config.pose_factor;
    const int pose_w = config.width * config.pose_factor;

    for (int id = 0; id < config.identities; ++id) {
        for (int j = 0; j < config.images_per_identity; ++j) {
            Volume feature(C, config.height, config.width);
            for (int s = 0; s < parts; ++s) {
                const int r0 = stripe_begin(s, config.height, parts);
                const int r1 = stripe_begin(s + 1, config.height, parts);
                for (int y = r0; y < r1; ++y) {
                    for (int x = 0; x < config.width; ++x) {
                        for (int c = 0; c < C; ++c) {
                            feature.at(c, y, x) =
                                prototypes[id][s][c] + config.noise_amplitude * rng.normal();
                        }
                    }
                }
            }
            Volume pose(config.pose_channels, pose_h, pose_w);
            render_pose(pose, rng);

            std::vector<std::uint8_t> vis(parts, 1);
            if (rng.uniform() < config.occlusion_probability) {
                const int lo = std::max(1, config.occluded_min);
                const int hi = std::min(parts, std::max(lo, config.occluded_max));
                const int span = lo + static_cast<int>(rng.below(hi - lo + 1));
                const int start = static_cast<int>(rng.below(parts - span + 1));
                const auto& obstacle = obstacles[rng.below(obstacles.size())];
                inject_occlusion_span(feature, pose, vis, parts, start, span, obstacle,
                                      config.noise_amplitude, config.pose_suppression, rng);
            }

            SynthRecord rec;
            rec.feature = tensor_from_volume(feature);
            rec.pose = tensor_from_volume(pose);
            rec.label = id;
            rec.vis_gt = vis;

            ManifestRecord mrec;
            mrec.id = "id" + std::to_string(id) + "_im" + std::to_string(j);
            mrec.label = id;
            if (config.images_per_identity >= 3) {
                if (j == config.images_per_identity - 2) mrec.role = Role::Probe;
                else if (j == config.images_per_identity - 1) mrec.role = Role::Gallery;
                else mrec.role = Role::Train;
            } else if (config.images_per_identity == 2) {
                mrec.role = j == 0 ? Role::Probe : Role::Gallery;
            } else {
                mrec.role = Role::Gallery;
            }
            mrec.vis_gt = vis;

            out.records.push_back(std::move(rec));
            out.manifest.records.push_back(std::move(mrec));
        }
    }
    return out;
}

void write_dataset(SynthOutput& output, const std::filesystem::path& dir) {
    const auto tensor_dir = dir / "tensors";
    std::filesystem::create_directories(tensor_dir);
    for (std::size_t i = 0; i < output.records.size(); ++i) {
        auto& mrec = output.manifest.records[i];
        const auto feature_path = tensor_dir / (mrec.id + "_feat.pvt");
        const auto pose_path = tensor_dir / (mrec.id + "_pose.pvt");
        save_tensor(output.records[i].feature, feature_path);
        save_tensor(output.records[i].pose, pose_path);
        mrec.feature_path = feature_path;
        mrec.pose_path = pose_path;
    }
    save_manifest(output.manifest, dir / "manifest.jsonl");
}

LoadedDataset to_loaded(const SynthOutput& output) {
    LoadedDataset ds;
    for (std::size_t i = 0; i < output.records.size(); ++i) {
        const auto& rec = output.records[i];
        const auto& mrec = output.manifest.records[i];
        LoadedImage img;
        img.id = mrec.id;
        img.label = mrec.label;
        img.role = mrec.role;
        img.feature = volume_from_tensor(rec.feature);
        img.pose = volume_from_tensor(rec.pose);
        img.vis_gt = rec.vis_gt;
        ds.images.push_back(std::move(img));
    }
    return ds;
}

SynthRecord augment_occlusion(const SynthRecord& record, const SynthConfig& config,
                              std::uint64_t seed) {
    if (std::count(record.vis_gt.begin(), record.vis_gt.end(), std::uint8_t(1)) == 0) {
        throw std::invalid_argument("record is fully occluded; nothing left to augment");
    }
    Rng rng(derive_seed(seed, "augment"));
    SynthRecord out;
    out.label = record.label;
    out.vis_gt = record.vis_gt;
    Volume feature = volume_from_tensor(record.feature);
    Volume pose = volume_from_tensor(record.pose);

    const int parts = static_cast<int>(record.vis_gt.size());
    const int lo = std::max(1, config.occluded_min);
    const int hi = std::min(parts, std::max(lo, config.occluded_max));
    const int span = lo + static_cast<int>(rng.below(hi - lo + 1));
    const int start = static_cast<int>(rng.below(parts - span + 1));
    std::vector<double> obstacle = random_unit(feature.channels, rng);
    for (double& x : obstacle) x *= config.obstacle_scale;
    inject_occlusion_span(feature, pose, out.vis_gt, parts, start, span, obstacle,
                          config.noise_amplitude, config.pose_suppression, rng);

    out.feature = tensor_from_volume(feature);
    out.pose = tensor_from_volume(pose);
    return out;
}

}  // namespace pvpm
