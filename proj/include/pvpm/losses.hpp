#pragma once

#include <span>
#include <vector>

#include "pvpm/classifier.hpp"
#include "pvpm/graph_match.hpp"
#include "pvpm/part_attention.hpp"
#include "pvpm/visibility.hpp"
#include "pvpm/volume.hpp"

namespace pvpm {

inline constexpr double kLogClampEpsilon = 1e-7;

// L_v: binary cross entropy against the mined pseudo-labels, positive terms
// only. Score products are clamped into [eps, 1] before the log; gradients
// vanish where the clamp is active.
struct VisibilityLossResult {
    double value = 0.0;
    std::vector<double> d_probe;
    std::vector<double> d_gallery;
};

VisibilityLossResult loss_visibility(const MatchIndicator& pseudo_labels,
                                     const VisibilityScores& probe_scores,
                                     const VisibilityScores& gallery_scores,
                                     double clamp_eps = kLogClampEpsilon);

// Inter-part cosine similarity within one image; zero-feature parts get zero
// similarity, the diagonal of a nonzero part is exactly 1.
Mat cosine_similarity_matrix(const PartFeatureSet& parts);

// lambda'_i = sum_{j != i} (S^p_ij + S^g_ij) / (2 (parts - 1)).
std::vector<double> matching_regularizer(const Mat& sim_probe, const Mat& sim_gallery);

// Direct evaluation of L_m = -v*' M v* + lambda'' v* from the matrices.
double matching_loss_value(const MatchIndicator& pseudo_labels, const Mat& affinity,
                           std::span<const double> lambda_prime);

// L_m with gradients into the part features, flowing through the node
// affinities, the normalized edge affinities, and (unless disabled) the
// similarity matrices behind lambda'. The pseudo-labels and the moving
// averages are constants.
struct MatchingLossResult {
    double value = 0.0;
    Mat d_probe;    // parts x C
    Mat d_gallery;  // parts x C
    std::vector<double> lambda_prime;
};

MatchingLossResult loss_matching(const MatchIndicator& pseudo_labels, const PartFeatureSet& probe,
                                 const PartFeatureSet& gallery, const MovingAverageState& state,
                                 bool grad_through_lambda_prime = true);

// L_c: sum of per-part cross entropies under the frozen classifiers.
struct ClassificationLossResult {
    double value = 0.0;
    Mat d_features;  // parts x C
};

ClassificationLossResult loss_classification(const PartFeatureSet& parts,
                                             const ToyClassifierBank& bank, int label);

}  // namespace pvpm
