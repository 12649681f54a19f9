#include "pvpm/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "pvpm/synth.hpp"

namespace pvpm {

PartDistances part_distances(const PartFeatureSet& probe, const PartFeatureSet& gallery) {
    const int n = probe.parts();
    if (gallery.parts() != n || probe.feature_dim() != gallery.feature_dim()) {
        throw std::invalid_argument("part feature sets must share part count and dimension");
    }
    PartDistances d(n, 1.0);
    for (int i = 0; i < n; ++i) {
        const double np = norm2(probe.features.row(i));
        const double ng = norm2(gallery.features.row(i));
        if (np == 0.0 || ng == 0.0) continue;  // neutral midpoint for empty parts
        const double c = dot(probe.features.row(i), gallery.features.row(i)) /
                         (std::sqrt(np) * std::sqrt(ng));
        d[i] = 1.0 - std::min(1.0, std::max(-1.0, c));
    }
    return d;
}

double weighted_distance(const PartDistances& d, std::span<const double> probe_vis,
                         std::span<const double> gallery_vis) {
    const std::size_t n = d.size();
    if (probe_vis.size() != n || gallery_vis.size() != n) {
        throw std::invalid_argument("visibility vectors must match the distance count");
    }
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double w = probe_vis[i] * gallery_vis[i];
        num += w * d[i];
        den += w;
    }
    if (den < 1e-6) {
        double mean = 0.0;
        for (double x : d) mean += x;
        return mean / double(n);
    }
    return num / den;
}

const char* eval_mode_name(EvalMode mode) {
    switch (mode) {
        case EvalMode::Pvpm: return "pvpm";
        case EvalMode::PgaOnly: return "pga-only";
        case EvalMode::PvpOnly: return "pvp-only";
        case EvalMode::Baseline: return "baseline";
        case EvalMode::Threshold: return "thre";
    }
    return "?";
}

EvalMode parse_eval_mode(const std::string& name) {
    if (name == "pvpm") return EvalMode::Pvpm;
    if (name == "pga-only") return EvalMode::PgaOnly;
    if (name == "pvp-only") return EvalMode::PvpOnly;
    if (name == "baseline") return EvalMode::Baseline;
    if (name == "thre") return EvalMode::Threshold;
    throw std::runtime_error("unknown eval mode '" + name + "'");
}

RankingResult rank_metrics(const Mat& distances, std::span<const int> probe_labels,
                           std::span<const int> gallery_labels,
                           std::span<const std::string> probe_ids, int max_rank) {
    const int n_probe = distances.rows;
    const int n_gallery = distances.cols;
    const int depth = std::min(max_rank, n_gallery);

    RankingResult result;
    result.cmc.assign(depth, 0.0);

    std::size_t evaluated = 0;
    double ap_sum = 0.0;
    std::vector<int> order(n_gallery);
    for (int q = 0; q < n_probe; ++q) {
        int relevant = 0;
        for (int g = 0; g < n_gallery; ++g) relevant += (gallery_labels[g] == probe_labels[q]);
        if (relevant == 0) {
            result.excluded_probes.push_back(std::string(probe_ids[q]));
            continue;
        }
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
            return distances.at(q, a) < distances.at(q, b);  // ties keep manifest order
        });
        int first_match = -1;
        int hits = 0;
        double ap = 0.0;
        for (int k = 0; k < n_gallery; ++k) {
            if (gallery_labels[order[k]] == probe_labels[q]) {
                ++hits;
                ap += double(hits) / double(k + 1);
                if (first_match < 0) first_match = k;
            }
        }
        ap /= relevant;
        ap_sum += ap;
        ++evaluated;
        for (int k = std::max(first_match, 0); k < depth; ++k) result.cmc[k] += 1.0;

        QueryResult qr;
        qr.probe_id = std::string(probe_ids[q]);
        qr.average_precision = ap;
        qr.first_match_rank = first_match + 1;
        result.per_query.push_back(std::move(qr));
    }
    if (evaluated > 0) {
        for (double& v : result.cmc) v /= double(evaluated);
        result.mean_average_precision = ap_sum / double(evaluated);
    }
    return result;
}

namespace {

struct EvalSide {
    PartFeatureSet parts;
    std::vector<double> visibility;
};

EvalSide prepare_image(const LoadedImage& img, const ModelParams* params, EvalMode mode,
                       int part_count) {
    EvalSide side;
    const bool pose_parts = (mode == EvalMode::Pvpm || mode == EvalMode::PgaOnly ||
                             mode == EvalMode::Threshold);
    const bool predicted_vis = (mode == EvalMode::Pvpm || mode == EvalMode::PvpOnly);
    Volume f_pose;
    if (pose_parts || predicted_vis) {
        if (params == nullptr) {
            throw std::invalid_argument("this evaluation mode needs a trained checkpoint");
        }
        f_pose = pe_forward(img.pose, params->pe);
    }
    if (pose_parts) {
        const Volume attention = pga_forward(f_pose, params->pga);
        side.parts = part_pool(img.feature, exclusive_max_mask(attention));
    } else {
        side.parts = uniform_stripe_features(img.feature, part_count);
    }
    if (predicted_vis) {
        side.visibility = pvp_forward_single(f_pose, params->pvp);
    } else {
        side.visibility.assign(side.parts.parts(), 1.0);
    }
    return side;
}

}  // namespace

RankingResult evaluate(const LoadedDataset& dataset, const ModelParams* params,
                       const EvalConfig& config) {
    const auto probe_idx = dataset.indices(Role::Probe);
    const auto gallery_idx = dataset.indices(Role::Gallery);
    if (probe_idx.empty() || gallery_idx.empty()) {
        throw std::invalid_argument("evaluation needs at least one probe and one gallery record");
    }
    int part_count;
    if (params != nullptr) {
        part_count = params->pga.parts;
    } else {
        // Baseline without a checkpoint: take the part count from the
        // ground-truth bitmask when present, else the paper default 6.
        const auto& first = dataset.images[probe_idx[0]];
        part_count = first.vis_gt ? static_cast<int>(first.vis_gt->size()) : 6;
    }

    std::vector<EvalSide> probes(probe_idx.size());
    std::vector<EvalSide> gallery(gallery_idx.size());
    parallel_for(static_cast<int>(probe_idx.size()), config.workers, [&](int i) {
        probes[i] = prepare_image(dataset.images[probe_idx[i]], params, config.mode, part_count);
    });
    parallel_for(static_cast<int>(gallery_idx.size()), config.workers, [&](int i) {
        gallery[i] = prepare_image(dataset.images[gallery_idx[i]], params, config.mode, part_count);
    });

    Mat distances(static_cast<int>(probe_idx.size()), static_cast<int>(gallery_idx.size()));
    parallel_for(static_cast<int>(probe_idx.size()), config.workers, [&](int q) {
        for (std::size_t g = 0; g < gallery_idx.size(); ++g) {
            const PartDistances d = part_distances(probes[q].parts, gallery[g].parts);
            double dist;
            if (config.mode == EvalMode::Threshold) {
                // Pair visibility from thresholded node similarities.
                std::vector<double> pair_vis(d.size(), 0.0);
                for (std::size_t i = 0; i < d.size(); ++i) {
                    const double node = dot(probes[q].parts.features.row(static_cast<int>(i)),
                                            gallery[g].parts.features.row(static_cast<int>(i)));
                    pair_vis[i] = node > config.tau ? 1.0 : 0.0;
                }
                std::vector<double> ones(d.size(), 1.0);
                dist = weighted_distance(d, pair_vis, ones);
            } else {
                dist = weighted_distance(d, probes[q].visibility, gallery[g].visibility);
            }
            distances.at(q, static_cast<int>(g)) = dist;
        }
    });

    std::vector<int> probe_labels, gallery_labels;
    std::vector<std::string> probe_ids;
    for (std::size_t i : probe_idx) {
        probe_labels.push_back(dataset.images[i].label);
        probe_ids.push_back(dataset.images[i].id);
    }
    for (std::size_t i : gallery_idx) gallery_labels.push_back(dataset.images[i].label);

    return rank_metrics(distances, probe_labels, gallery_labels, probe_ids, config.max_rank);
}

std::vector<SweepRow> sweep_lambda(const LoadedDataset& dataset, const ToyClassifierBank& bank,
                                   const TrainConfig& base, std::span<const double> grid,
                                   const EvalConfig& eval_config) {
    if (grid.empty()) throw std::invalid_argument("empty sweep grid");
    std::vector<SweepRow> rows;
    for (double lambda : grid) {
        if (lambda < 0.0) throw std::invalid_argument("lambda must be nonnegative");
        TrainConfig cfg = base;
        cfg.lambda = lambda;
        TrainResult trained = train_model(dataset, bank, cfg);
        RankingResult r = evaluate(dataset, &trained.params, eval_config);
        rows.push_back(SweepRow{lambda, r.rank1(), r.mean_average_precision});
    }
    return rows;
}

std::vector<SweepRow> sweep_parts(const SynthConfig& synth_base, const TrainConfig& train_base,
                                  int pretrain_epochs, double pretrain_lr,
                                  std::span<const int> grid, const EvalConfig& eval_config) {
    if (grid.empty()) throw std::invalid_argument("empty sweep grid");
    std::vector<SweepRow> rows;
    for (int parts : grid) {
        if (parts < 2) throw std::invalid_argument("part-count sweep requires N_p >= 2");
        SynthConfig synth_cfg = synth_base;
        synth_cfg.parts = parts;
        SynthOutput data = generate(synth_cfg);
        LoadedDataset dataset = to_loaded(data);
        PretrainResult pre =
            pretrain_classifiers(data.manifest, parts, pretrain_epochs, train_base.seed,
                                 pretrain_lr);
        TrainConfig cfg = train_base;
        cfg.parts = parts;
        TrainResult trained = train_model(dataset, pre.bank, cfg);
        RankingResult r = evaluate(dataset, &trained.params, eval_config);
        rows.push_back(SweepRow{double(parts), r.rank1(), r.mean_average_precision});
    }
    return rows;
}

void write_sweep_csv(const std::vector<SweepRow>& rows, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out << "param,rank1,mAP\n";
    char buf[128];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%.12g,%.12g,%.12g\n", r.param, r.rank1,
                      r.mean_average_precision);
        out << buf;
    }
}

}  // namespace pvpm
