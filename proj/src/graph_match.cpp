#include "pvpm/graph_match.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "pvpm/rng.hpp"

namespace pvpm {

namespace {

// Lexicographic order on (v_0, v_1, ...): greater means the first differing
// position carries a 1.
bool lex_greater(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] != b[i]) return a[i] > b[i];
    }
    return false;
}

int popcount(const std::vector<std::uint8_t>& v) {
    return static_cast<int>(std::count(v.begin(), v.end(), std::uint8_t(1)));
}

// Tie-break: higher objective, then more selected parts, then lexicographically
// greatest indicator.
bool better(double val, const std::vector<std::uint8_t>& sel, double best_val,
            const std::vector<std::uint8_t>& best_sel) {
    if (val != best_val) return val > best_val;
    const int c = popcount(sel);
    const int bc = popcount(best_sel);
    if (c != bc) return c > bc;
    return lex_greater(sel, best_sel);
}

}  // namespace

int MatchIndicator::count() const { return popcount(selected); }

MovingAverageState MovingAverageState::make(int parts, double momentum) {
    MovingAverageState s;
    s.parts = parts;
    s.momentum = momentum;
    s.edge_avg = Mat(parts, parts);
    s.diag_avg.assign(parts, 0.0);
    return s;
}

Mat build_raw_affinity(const PartFeatureSet& probe, const PartFeatureSet& gallery) {
    const int n = probe.parts();
    if (gallery.parts() != n || probe.feature_dim() != gallery.feature_dim()) {
        throw std::invalid_argument("part feature sets must share part count and dimension");
    }
    Mat raw(n, n);
    for (int i = 0; i < n; ++i) {
        raw.at(i, i) = dot(probe.features.row(i), gallery.features.row(i));
    }
    const int dim = probe.feature_dim();
    std::vector<double> ep(dim), eg(dim);
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            double np = 0.0, ng = 0.0;
            for (int c = 0; c < dim; ++c) {
                ep[c] = probe.features.at(i, c) - probe.features.at(j, c);
                eg[c] = gallery.features.at(i, c) - gallery.features.at(j, c);
                np += ep[c] * ep[c];
                ng += eg[c] * eg[c];
            }
            double value = 0.0;
            if (np > 0.0 && ng > 0.0) {
                double d = 0.0;
                for (int c = 0; c < dim; ++c) d += ep[c] * eg[c];
                value = d / (std::sqrt(np) * std::sqrt(ng));
            }
            raw.at(i, j) = value;
            raw.at(j, i) = value;
        }
    }
    return raw;
}

AffinityMatrix center_affinity(const Mat& raw, const MovingAverageState& state) {
    if (raw.rows != raw.cols) throw std::invalid_argument("affinity matrix must be square");
    if (state.initialized() && state.parts != raw.rows) {
        throw std::invalid_argument("moving-average state part count mismatch");
    }
    AffinityMatrix out;
    out.m = raw;
    if (state.initialized()) {
        for (int i = 0; i < raw.rows; ++i) {
            for (int j = 0; j < raw.cols; ++j) {
                if (i != j) out.m.at(i, j) -= state.edge_avg.at(i, j);
            }
        }
    }
    return out;
}

AffinityMatrix build_affinity(const PartFeatureSet& probe, const PartFeatureSet& gallery,
                              const MovingAverageState& state) {
    return center_affinity(build_raw_affinity(probe, gallery), state);
}

void update_moving_average(MovingAverageState& state, std::span<const Mat> raw_batch) {
    if (raw_batch.empty()) throw std::invalid_argument("empty affinity batch");
    const int n = state.parts;
    for (const Mat& raw : raw_batch) {
        if (raw.rows != n || raw.cols != n) {
            throw std::invalid_argument("raw affinity part count does not match state");
        }
    }
    Mat batch_edge(n, n);
    std::vector<double> batch_diag(n, 0.0);
    const double inv = 1.0 / double(raw_batch.size());
    for (const Mat& raw : raw_batch) {
        for (int i = 0; i < n; ++i) {
            batch_diag[i] += raw.at(i, i) * inv;
            for (int j = 0; j < n; ++j) {
                if (i != j) batch_edge.at(i, j) += raw.at(i, j) * inv;
            }
        }
    }
    if (!state.initialized()) {
        state.edge_avg = std::move(batch_edge);
        state.diag_avg = std::move(batch_diag);
    } else {
        const double rho = state.momentum;
        for (int i = 0; i < n; ++i) {
            state.diag_avg[i] = rho * state.diag_avg[i] + (1.0 - rho) * batch_diag[i];
            for (int j = 0; j < n; ++j) {
                if (i != j) {
                    state.edge_avg.at(i, j) =
                        rho * state.edge_avg.at(i, j) + (1.0 - rho) * batch_edge.at(i, j);
                }
            }
        }
    }
    ++state.updates;
}

std::vector<double> regularizer(const MovingAverageState& state, double lambda) {
    if (!state.initialized()) {
        throw std::runtime_error("moving-average state is uninitialized; no diagonal average yet");
    }
    std::vector<double> out(state.diag_avg.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = lambda * state.diag_avg[i];
    return out;
}

double match_objective(const Mat& m, std::span<const double> lambda_bar,
                       std::span<const std::uint8_t> selected) {
    const int n = m.rows;
    double obj = 0.0;
    for (int i = 0; i < n; ++i) {
        if (!selected[i]) continue;
        obj += m.at(i, i) - lambda_bar[i];
        for (int j = i + 1; j < n; ++j) {
            if (selected[j]) obj += 2.0 * m.at(i, j);
        }
    }
    return obj;
}

MatchIndicator solve_iqp_exact(const Mat& m, std::span<const double> lambda_bar) {
    const int n = m.rows;
    if (m.cols != n || static_cast<int>(lambda_bar.size()) != n) {
        throw std::invalid_argument("affinity/regularizer dimensions disagree");
    }
    if (n > 20) {
        throw std::invalid_argument("exhaustive solver is limited to 20 parts; use the local search");
    }

    std::vector<std::uint8_t> sel(n, 0), best_sel(n, 0);
    double best_val = 0.0;  // the all-zeros indicator
    for (std::uint32_t mask = 1; mask < (1u << n); ++mask) {
        for (int i = 0; i < n; ++i) sel[i] = (mask >> i) & 1u;
        const double val = match_objective(m, lambda_bar, sel);
        if (better(val, sel, best_val, best_sel)) {
            best_val = val;
            best_sel = sel;
        }
    }
    return MatchIndicator{std::move(best_sel), best_val};
}

MatchIndicator solve_iqp_local(const Mat& m, std::span<const double> lambda_bar,
                               std::uint64_t seed) {
    const int n = m.rows;
    if (m.cols != n || static_cast<int>(lambda_bar.size()) != n) {
        throw std::invalid_argument("affinity/regularizer dimensions disagree");
    }
    Rng rng(derive_seed(seed, "iqp-local"));

    auto climb = [&](std::vector<std::uint8_t> sel) {
        // t[i] = sum over selected j != i of M_ij; flip deltas come from it.
        std::vector<double> t(n, 0.0);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) {
                if (j != i && sel[j]) t[i] += m.at(i, j);
            }
        }
        std::vector<int> order(n);
        std::iota(order.begin(), order.end(), 0);
        bool improved = true;
        while (improved) {
            improved = false;
            rng.shuffle(order);
            for (int i : order) {
                const double gain = m.at(i, i) - lambda_bar[i] + 2.0 * t[i];
                const double delta = sel[i] ? -gain : gain;
                if (delta > 0.0) {
                    sel[i] ^= 1;
                    const double sign = sel[i] ? 1.0 : -1.0;
                    for (int j = 0; j < n; ++j) {
                        if (j != i) t[j] += sign * m.at(i, j);
                    }
                    improved = true;
                }
            }
        }
        return sel;
    };

    std::vector<std::uint8_t> from_zero = climb(std::vector<std::uint8_t>(n, 0));
    std::vector<std::uint8_t> from_one = climb(std::vector<std::uint8_t>(n, 1));
    const double val_zero = match_objective(m, lambda_bar, from_zero);
    const double val_one = match_objective(m, lambda_bar, from_one);
    if (better(val_one, from_one, val_zero, from_zero)) {
        return MatchIndicator{std::move(from_one), val_one};
    }
    return MatchIndicator{std::move(from_zero), val_zero};
}

MatchIndicator threshold_baseline(const Mat& m, double tau) {
    const int n = m.rows;
    MatchIndicator out;
    out.selected.assign(n, 0);
    for (int i = 0; i < n; ++i) out.selected[i] = m.at(i, i) > tau ? 1 : 0;
    out.objective = match_objective(m, std::vector<double>(n, 0.0), out.selected);
    return out;
}

void MovingAverageState::save_into(Checkpoint& ckpt) const {
    const auto n = static_cast<std::uint32_t>(parts);
    ckpt.put("ema.edge_avg", tensor_from_doubles({n, n}, edge_avg.v));
    ckpt.put("ema.diag_avg", tensor_from_doubles({n}, diag_avg));
    ckpt.meta["moving_average"] = {
        {"parts", parts},
        {"momentum", momentum},
        {"updates", updates},
    };
}

MovingAverageState MovingAverageState::load_from(const Checkpoint& ckpt) {
    const auto& meta = ckpt.meta.at("moving_average");
    MovingAverageState s = make(meta.at("parts").get<int>(), meta.at("momentum").get<double>());
    s.updates = meta.at("updates").get<std::int64_t>();
    s.edge_avg.v = doubles_from_tensor(ckpt.get("ema.edge_avg"));
    s.diag_avg = doubles_from_tensor(ckpt.get("ema.diag_avg"));
    if (s.edge_avg.v.size() != std::size_t(s.parts) * s.parts ||
        s.diag_avg.size() != std::size_t(s.parts)) {
        throw std::runtime_error("moving-average tensors do not match part count");
    }
    return s;
}

}  // namespace pvpm
