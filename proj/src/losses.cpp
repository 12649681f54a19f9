#include "pvpm/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace pvpm {

VisibilityLossResult loss_visibility(const MatchIndicator& pseudo_labels,
                                     const VisibilityScores& probe_scores,
                                     const VisibilityScores& gallery_scores, double clamp_eps) {
    const std::size_t n = pseudo_labels.selected.size();
    if (probe_scores.size() != n || gallery_scores.size() != n) {
        throw std::invalid_argument("visibility loss inputs must share length");
    }
    VisibilityLossResult r;
    r.d_probe.assign(n, 0.0);
    r.d_gallery.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        if (!pseudo_labels.selected[i]) continue;
        const double product = probe_scores[i] * gallery_scores[i];
        if (product <= clamp_eps) {
            r.value += -std::log(clamp_eps);  // clamp active: constant, no gradient
        } else if (product >= 1.0) {
            // Cannot occur for sigmoid outputs; kept for total clamp semantics.
        } else {
            r.value += -std::log(product);
            r.d_probe[i] = -1.0 / probe_scores[i];
            r.d_gallery[i] = -1.0 / gallery_scores[i];
        }
    }
    return r;
}

Mat cosine_similarity_matrix(const PartFeatureSet& parts) {
    const int n = parts.parts();
    Mat s(n, n);
    std::vector<double> norms(n, 0.0);
    for (int i = 0; i < n; ++i) norms[i] = std::sqrt(norm2(parts.features.row(i)));
    for (int i = 0; i < n; ++i) {
        if (norms[i] == 0.0) continue;
        s.at(i, i) = 1.0;
        for (int j = i + 1; j < n; ++j) {
            if (norms[j] == 0.0) continue;
            double c = dot(parts.features.row(i), parts.features.row(j)) / (norms[i] * norms[j]);
            c = std::min(1.0, std::max(-1.0, c));
            s.at(i, j) = c;
            s.at(j, i) = c;
        }
    }
    return s;
}

std::vector<double> matching_regularizer(const Mat& sim_probe, const Mat& sim_gallery) {
    const int n = sim_probe.rows;
    if (n < 2) {
        throw std::invalid_argument("matching regularizer needs at least 2 parts");
    }
    std::vector<double> lambda_prime(n, 0.0);
    const double denom = 2.0 * (n - 1);
    for (int i = 0; i < n; ++i) {
        double s = 0.0;
        for (int j = 0; j < n; ++j) {
            if (j != i) s += sim_probe.at(i, j) + sim_gallery.at(i, j);
        }
        lambda_prime[i] = s / denom;
    }
    return lambda_prime;
}

double matching_loss_value(const MatchIndicator& pseudo_labels, const Mat& affinity,
                           std::span<const double> lambda_prime) {
    const int n = affinity.rows;
    double quad = 0.0, lin = 0.0;
    for (int i = 0; i < n; ++i) {
        if (!pseudo_labels.selected[i]) continue;
        lin += lambda_prime[i];
        for (int j = 0; j < n; ++j) {
            if (pseudo_labels.selected[j]) quad += affinity.at(i, j);
        }
    }
    return -quad + lin;
}

MatchingLossResult loss_matching(const MatchIndicator& pseudo_labels, const PartFeatureSet& probe,
                                 const PartFeatureSet& gallery, const MovingAverageState& state,
                                 bool grad_through_lambda_prime) {
    const int n = probe.parts();
    if (n < 2) {
        throw std::invalid_argument("part matching loss needs at least 2 parts");
    }
    if (gallery.parts() != n || static_cast<int>(pseudo_labels.selected.size()) != n) {
        throw std::invalid_argument("matching loss inputs must share part count");
    }
    const int dim = probe.feature_dim();
    const auto& v = pseudo_labels.selected;

    const Mat sim_probe = cosine_similarity_matrix(probe);
    const Mat sim_gallery = cosine_similarity_matrix(gallery);
    const std::vector<double> lambda_prime = matching_regularizer(sim_probe, sim_gallery);
    const AffinityMatrix affinity = build_affinity(probe, gallery, state);

    MatchingLossResult r;
    r.lambda_prime = lambda_prime;
    r.value = matching_loss_value(pseudo_labels, affinity.m, lambda_prime);
    r.d_probe = Mat(n, dim);
    r.d_gallery = Mat(n, dim);

    // -sum_i v_i M_ii: node affinities are raw inner products.
    for (int i = 0; i < n; ++i) {
        if (!v[i]) continue;
        for (int c = 0; c < dim; ++c) {
            r.d_probe.at(i, c) -= gallery.features.at(i, c);
            r.d_gallery.at(i, c) -= probe.features.at(i, c);
        }
    }

    // -2 sum_{i<j} v_i v_j <e^p_ij, e^g_ij> with unit edge vectors; the moving
    // average offset is constant. d<x^,y^>/dx = (y^ - <x^,y^> x^)/|x|.
    std::vector<double> ep(dim), eg(dim);
    for (int i = 0; i < n; ++i) {
        if (!v[i]) continue;
        for (int j = i + 1; j < n; ++j) {
            if (!v[j]) continue;
            double np = 0.0, ng = 0.0;
            for (int c = 0; c < dim; ++c) {
                ep[c] = probe.features.at(i, c) - probe.features.at(j, c);
                eg[c] = gallery.features.at(i, c) - gallery.features.at(j, c);
                np += ep[c] * ep[c];
                ng += eg[c] * eg[c];
            }
            if (np == 0.0 || ng == 0.0) continue;  // zero edge: affinity fixed at 0
            np = std::sqrt(np);
            ng = std::sqrt(ng);
            double cosv = 0.0;
            for (int c = 0; c < dim; ++c) cosv += (ep[c] / np) * (eg[c] / ng);
            for (int c = 0; c < dim; ++c) {
                const double up = ep[c] / np;
                const double ug = eg[c] / ng;
                const double gp = -2.0 * (ug - cosv * up) / np;  // d/d e^p
                const double gg = -2.0 * (up - cosv * ug) / ng;  // d/d e^g
                r.d_probe.at(i, c) += gp;
                r.d_probe.at(j, c) -= gp;
                r.d_gallery.at(i, c) += gg;
                r.d_gallery.at(j, c) -= gg;
            }
        }
    }

    // + sum_i v_i lambda'_i through the cosine similarity matrices.
    if (grad_through_lambda_prime) {
        const double denom = 2.0 * (n - 1);
        auto add_sim_grads = [&](const PartFeatureSet& parts, Mat& d_parts) {
            std::vector<double> norms(n, 0.0);
            for (int i = 0; i < n; ++i) norms[i] = std::sqrt(norm2(parts.features.row(i)));
            const Mat& sim = (&parts == &probe) ? sim_probe : sim_gallery;
            for (int i = 0; i < n; ++i) {
                for (int j = i + 1; j < n; ++j) {
                    const double coeff = (double(v[i]) + double(v[j])) / denom;
                    if (coeff == 0.0 || norms[i] == 0.0 || norms[j] == 0.0) continue;
                    const double cosv = sim.at(i, j);
                    for (int c = 0; c < dim; ++c) {
                        const double ui = parts.features.at(i, c) / norms[i];
                        const double uj = parts.features.at(j, c) / norms[j];
                        d_parts.at(i, c) += coeff * (uj - cosv * ui) / norms[i];
                        d_parts.at(j, c) += coeff * (ui - cosv * uj) / norms[j];
                    }
                }
            }
        };
        add_sim_grads(probe, r.d_probe);
        add_sim_grads(gallery, r.d_gallery);
    }
    return r;
}

ClassificationLossResult loss_classification(const PartFeatureSet& parts,
                                             const ToyClassifierBank& bank, int label) {
    if (label < 0 || label >= bank.identities()) {
        throw std::invalid_argument("identity label " + std::to_string(label) +
                                    " out of range for " + std::to_string(bank.identities()) +
                                    " classes");
    }
    if (parts.parts() != bank.parts() || parts.feature_dim() != bank.feature_dim()) {
        throw std::invalid_argument("part features do not match classifier bank shape");
    }
    const int n = parts.parts();
    const int dim = parts.feature_dim();
    const int n_id = bank.identities();

    ClassificationLossResult r;
    r.d_features = Mat(n, dim);
    std::vector<double> logits(n_id);
    for (int p = 0; p < n; ++p) {
        std::span<const double> feat = parts.features.row(p);
        double max_logit = -1e300;
        for (int k = 0; k < n_id; ++k) {
            logits[k] = dot(bank.weights(p).row(k), feat) + bank.biases(p)[k];
            max_logit = std::max(max_logit, logits[k]);
        }
        double z = 0.0;
        for (int k = 0; k < n_id; ++k) z += std::exp(logits[k] - max_logit);
        r.value += std::log(z) + max_logit - logits[label];
        for (int k = 0; k < n_id; ++k) {
            double g = std::exp(logits[k] - max_logit) / z;
            if (k == label) g -= 1.0;
            for (int c = 0; c < dim; ++c) {
                r.d_features.at(p, c) += g * bank.weights(p).at(k, c);
            }
        }
    }
    return r;
}

}  // namespace pvpm
