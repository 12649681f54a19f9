#pragma once

#include <span>
#include <string>
#include <vector>

#include "pvpm/dataset.hpp"
#include "pvpm/trainer.hpp"

namespace pvpm {

// Per-part cosine distances in [0,2]; parts with a zero feature on either
// side sit at the neutral midpoint 1.
using PartDistances = std::vector<double>;

PartDistances part_distances(const PartFeatureSet& probe, const PartFeatureSet& gallery);

// Eq'n of the visibility-weighted distance: sum(wp*wg*d) / sum(wp*wg), with an
// unweighted mean fallback when the weight mass drops below 1e-6.
double weighted_distance(const PartDistances& d, std::span<const double> probe_vis,
                         std::span<const double> gallery_vis);

enum class EvalMode { Pvpm, PgaOnly, PvpOnly, Baseline, Threshold };

const char* eval_mode_name(EvalMode mode);
EvalMode parse_eval_mode(const std::string& name);

struct EvalConfig {
    EvalMode mode = EvalMode::Pvpm;
    double tau = 0.5;  // Threshold mode only
    int max_rank = 20;
    int workers = 0;
};

struct QueryResult {
    std::string probe_id;
    double average_precision = 0.0;
    int first_match_rank = 0;  // 1-based
};

struct RankingResult {
    std::vector<double> cmc;  // index k-1 = rank-k match rate
    double mean_average_precision = 0.0;
    std::vector<QueryResult> per_query;
    std::vector<std::string> excluded_probes;  // identity absent from gallery

    double rank1() const { return cmc.empty() ? 0.0 : cmc[0]; }
};

// Metric core shared by evaluate() and the tests' brute-force oracle harness:
// ranks each probe's gallery row by ascending distance with stable ties.
RankingResult rank_metrics(const Mat& distances, std::span<const int> probe_labels,
                           std::span<const int> gallery_labels,
                           std::span<const std::string> probe_ids, int max_rank);

// Full evaluation over the manifest's probe/gallery split. `params` may be
// null for Baseline mode only; the other modes use the trained components
// their name implies.
RankingResult evaluate(const LoadedDataset& dataset, const ModelParams* params,
                       const EvalConfig& config);

struct SweepRow {
    double param = 0.0;
    double rank1 = 0.0;
    double mean_average_precision = 0.0;
};

// Retrains per grid value with the given seed and evaluates in Pvpm mode.
std::vector<SweepRow> sweep_lambda(const LoadedDataset& dataset, const ToyClassifierBank& bank,
                                   const TrainConfig& base, std::span<const double> grid,
                                   const EvalConfig& eval_config);

// The part-count sweep regenerates the dataset, the classifiers and the model
// for every grid value.
std::vector<SweepRow> sweep_parts(const SynthConfig& synth_base, const TrainConfig& train_base,
                                  int pretrain_epochs, double pretrain_lr,
                                  std::span<const int> grid, const EvalConfig& eval_config);

void write_sweep_csv(const std::vector<SweepRow>& rows, const std::filesystem::path& path);

}  // namespace pvpm
