#include "pvpm/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>

#include "pvpm/losses.hpp"
#include "pvpm/pose_encoder.hpp"
#include "pvpm/rng.hpp"

namespace pvpm {

namespace {

double rel_error(double analytic, double numeric) {
    const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-3});
    return std::fabs(analytic - numeric) / denom;
}

// One randomized instance: `slots` point into live storage, `eval` recomputes
// the scalar objective after a perturbation, `analytic` is the gradient in
// slot order.
struct Instance {
    std::vector<double*> slots;
    std::function<double()> eval;
    std::vector<double> analytic;
};

double run_instance(Instance& inst, double step) {
    double worst = 0.0;
    for (std::size_t i = 0; i < inst.slots.size(); ++i) {
        double* x = inst.slots[i];
        const double saved = *x;
        *x = saved + step;
        const double up = inst.eval();
        *x = saved - step;
        const double down = inst.eval();
        *x = saved;
        const double numeric = (up - down) / (2.0 * step);
        worst = std::max(worst, rel_error(inst.analytic[i], numeric));
    }
    return worst;
}

Volume random_volume(int c, int h, int w, Rng& rng, double scale = 1.0) {
    Volume v(c, h, w);
    for (double& x : v.v) x = scale * rng.normal();
    return v;
}

void collect(std::vector<double*>& slots, std::vector<double>& v) {
    for (double& x : v) slots.push_back(&x);
}

double trial_pose_encoder(Rng& rng) {
    PoseEncoderConfig cfg;
    cfg.in_channels = 8;
    cfg.hidden_channels = 6;
    cfg.out_channels = 7;
    cfg.stride1 = 2;
    cfg.stride2 = 1;
    cfg.target_height = 4;
    cfg.target_width = 3;
    PoseEncoderParams params = PoseEncoderParams::init(cfg, rng.next_u64());
    for (double& b : params.conv1.bias) b = 0.1 * rng.normal();
    for (double& b : params.conv2.bias) b = 0.1 * rng.normal();
    const Volume input = random_volume(cfg.in_channels, 8, 6, rng);
    const Volume projection = random_volume(cfg.out_channels, 4, 3, rng);

    Instance inst;
    collect(inst.slots, params.conv1.weight);
    collect(inst.slots, params.conv1.bias);
    collect(inst.slots, params.conv2.weight);
    collect(inst.slots, params.conv2.bias);
    inst.eval = [&]() {
        const Volume out = pe_forward(input, params);
        return dot(out.v, projection.v);
    };
    PoseEncoderCache cache;
    pe_forward(input, params, &cache);
    const PoseEncoderGrads grads = pe_backward(cache, params, projection);
    inst.analytic.insert(inst.analytic.end(), grads.d_weight1.begin(), grads.d_weight1.end());
    inst.analytic.insert(inst.analytic.end(), grads.d_bias1.begin(), grads.d_bias1.end());
    inst.analytic.insert(inst.analytic.end(), grads.d_weight2.begin(), grads.d_weight2.end());
    inst.analytic.insert(inst.analytic.end(), grads.d_bias2.begin(), grads.d_bias2.end());
    return run_instance(inst, 1e-3);
}

double trial_part_attention(Rng& rng) {
    const int parts = 3, channels_e = 6, channels = 5, h = 4, w = 3;
    PgaParams params = PgaParams::init(parts, channels_e, rng.next_u64());
    Volume f_pose;
    // Resample until the argmax is comfortably away from ties everywhere and
    // every part owns some mass; finite differences must not flip the winner.
    for (;;) {
        f_pose = random_volume(channels_e, h, w, rng);
        const Volume a = pga_forward(f_pose, params);
        const auto mask = exclusive_max_mask(a);
        bool ok = true;
        for (int s = 0; s < h * w && ok; ++s) {
            double top = -1.0, second = -1.0;
            for (int p = 0; p < parts; ++p) {
                const double v = a.v[std::size_t(p) * h * w + s];
                if (v > top) {
                    second = top;
                    top = v;
                } else if (v > second) {
                    second = v;
                }
            }
            ok = (top - second) > 0.02;
        }
        for (int p = 0; p < parts && ok; ++p) ok = mask.mass[p] > 1e-2;
        if (ok) break;
        params = PgaParams::init(parts, channels_e, rng.next_u64());
    }
    const Volume appearance = random_volume(channels, h, w, rng);
    Mat projection(parts, channels);
    for (double& x : projection.v) x = rng.normal();

    Instance inst;
    collect(inst.slots, params.weight);
    collect(inst.slots, params.bias);
    collect(inst.slots, f_pose.v);
    inst.eval = [&]() {
        const Volume a = pga_forward(f_pose, params);
        const auto mask = exclusive_max_mask(a);
        const auto parts_set = part_pool(appearance, mask);
        return dot(parts_set.features.v, projection.v);
    };
    const Volume a = pga_forward(f_pose, params);
    const auto mask = exclusive_max_mask(a);
    const auto parts_set = part_pool(appearance, mask);
    Volume d_f_pose;
    const PgaGrads grads =
        pga_backward(appearance, f_pose, params, a, mask, parts_set, projection, &d_f_pose);
    inst.analytic.insert(inst.analytic.end(), grads.d_weight.begin(), grads.d_weight.end());
    inst.analytic.insert(inst.analytic.end(), grads.d_bias.begin(), grads.d_bias.end());
    inst.analytic.insert(inst.analytic.end(), d_f_pose.v.begin(), d_f_pose.v.end());
    return run_instance(inst, 1e-4);
}

double trial_pvp(Rng& rng, PvpMode mode) {
    PvpConfig cfg;
    cfg.parts = 3;
    cfg.in_channels = 6;
    const int batch = mode == PvpMode::Train ? 4 : 2;
    PvpParams base = PvpParams::init(cfg, rng.next_u64());
    for (int p = 0; p < cfg.parts; ++p) {
        base.gamma[p] = 0.5 + rng.uniform();
        base.beta[p] = 0.3 * rng.normal();
        base.running_mean[p] = 0.2 * rng.normal();
        base.running_var[p] = 0.5 + rng.uniform();
    }
    std::vector<Volume> inputs;
    for (int b = 0; b < batch; ++b) inputs.push_back(random_volume(cfg.in_channels, 3, 2, rng));
    Mat projection(batch, cfg.parts);
    for (double& x : projection.v) x = rng.normal();

    Instance inst;
    collect(inst.slots, base.weight);
    collect(inst.slots, base.bias);
    collect(inst.slots, base.gamma);
    collect(inst.slots, base.beta);
    for (auto& v : inputs) collect(inst.slots, v.v);
    inst.eval = [&]() {
        PvpParams copy = base;  // train mode mutates running stats
        const auto scores = pvp_forward(inputs, copy, mode, nullptr);
        double s = 0.0;
        for (int b = 0; b < batch; ++b) {
            for (int p = 0; p < cfg.parts; ++p) s += projection.at(b, p) * scores[b][p];
        }
        return s;
    };
    PvpParams copy = base;
    PvpCache cache;
    pvp_forward(inputs, copy, mode, &cache);
    std::vector<Volume> d_inputs;
    const PvpGrads grads = pvp_backward(cache, base, projection, &d_inputs);
    inst.analytic.insert(inst.analytic.end(), grads.d_weight.begin(), grads.d_weight.end());
    inst.analytic.insert(inst.analytic.end(), grads.d_bias.begin(), grads.d_bias.end());
    inst.analytic.insert(inst.analytic.end(), grads.d_gamma.begin(), grads.d_gamma.end());
    inst.analytic.insert(inst.analytic.end(), grads.d_beta.begin(), grads.d_beta.end());
    for (const auto& v : d_inputs) {
        inst.analytic.insert(inst.analytic.end(), v.v.begin(), v.v.end());
    }
    return run_instance(inst, 1e-4);
}

MatchIndicator random_indicator(int parts, Rng& rng, int min_selected) {
    MatchIndicator ind;
    ind.selected.assign(parts, 0);
    int count = 0;
    while (count < min_selected) {
        for (int i = 0; i < parts; ++i) ind.selected[i] = rng.uniform() < 0.6 ? 1 : 0;
        count = ind.count();
    }
    return ind;
}

double trial_loss_visibility(Rng& rng) {
    const int parts = 5;
    const MatchIndicator pseudo = random_indicator(parts, rng, 1);
    // Scores well inside (0,1): the clamp boundary is excluded by design.
    VisibilityScores probe(parts), gallery(parts);
    for (int i = 0; i < parts; ++i) {
        probe[i] = 0.1 + 0.8 * rng.uniform();
        gallery[i] = 0.1 + 0.8 * rng.uniform();
    }

    Instance inst;
    for (double& x : probe) inst.slots.push_back(&x);
    for (double& x : gallery) inst.slots.push_back(&x);
    inst.eval = [&]() { return loss_visibility(pseudo, probe, gallery).value; };
    const auto r = loss_visibility(pseudo, probe, gallery);
    inst.analytic.insert(inst.analytic.end(), r.d_probe.begin(), r.d_probe.end());
    inst.analytic.insert(inst.analytic.end(), r.d_gallery.begin(), r.d_gallery.end());
    return run_instance(inst, 1e-4);
}

PartFeatureSet random_parts(int parts, int dim, Rng& rng) {
    PartFeatureSet set;
    set.features = Mat(parts, dim);
    for (double& x : set.features.v) x = rng.normal();
    set.mass.assign(parts, 1.0);
    set.visible.assign(parts, 1);
    return set;
}

double trial_loss_matching(Rng& rng) {
    const int parts = 4, dim = 6;
    PartFeatureSet probe = random_parts(parts, dim, rng);
    PartFeatureSet gallery = random_parts(parts, dim, rng);
    MovingAverageState state = MovingAverageState::make(parts);
    Mat fake_raw(parts, parts);
    for (int i = 0; i < parts; ++i) {
        for (int j = i + 1; j < parts; ++j) {
            const double v = 0.3 * rng.normal();
            fake_raw.at(i, j) = v;
            fake_raw.at(j, i) = v;
        }
        fake_raw.at(i, i) = rng.normal();
    }
    update_moving_average(state, {&fake_raw, 1});
    const MatchIndicator pseudo = random_indicator(parts, rng, 2);

    Instance inst;
    collect(inst.slots, probe.features.v);
    collect(inst.slots, gallery.features.v);
    inst.eval = [&]() { return loss_matching(pseudo, probe, gallery, state, true).value; };
    const auto r = loss_matching(pseudo, probe, gallery, state, true);
    inst.analytic.insert(inst.analytic.end(), r.d_probe.v.begin(), r.d_probe.v.end());
    inst.analytic.insert(inst.analytic.end(), r.d_gallery.v.begin(), r.d_gallery.v.end());
    return run_instance(inst, 1e-4);
}

double trial_loss_classification(Rng& rng) {
    const int parts = 3, dim = 5, n_id = 7;
    ToyClassifierBank bank(parts, dim, n_id);
    for (int p = 0; p < parts; ++p) {
        Mat dw(n_id, dim);
        std::vector<double> db(n_id);
        for (double& x : dw.v) x = rng.normal();
        for (double& x : db) x = 0.3 * rng.normal();
        bank.apply_update(p, dw, db, -1.0);  // random parameters via a negative step
    }
    bank.freeze();
    PartFeatureSet parts_set = random_parts(parts, dim, rng);
    const int label = static_cast<int>(rng.below(n_id));

    Instance inst;
    collect(inst.slots, parts_set.features.v);
    inst.eval = [&]() { return loss_classification(parts_set, bank, label).value; };
    const auto r = loss_classification(parts_set, bank, label);
    inst.analytic.insert(inst.analytic.end(), r.d_features.v.begin(), r.d_features.v.end());
    return run_instance(inst, 1e-4);
}

}  // namespace

GradCheckReport check_gradients(const std::vector<std::string>& ops, int trials,
                                std::uint64_t seed) {
    using TrialFn = std::function<double(Rng&)>;
    const std::vector<std::pair<std::string, TrialFn>> all_ops = {
        {"pose_encoder", [](Rng& r) { return trial_pose_encoder(r); }},
        {"part_attention", [](Rng& r) { return trial_part_attention(r); }},
        {"pvp_train", [](Rng& r) { return trial_pvp(r, PvpMode::Train); }},
        {"pvp_eval", [](Rng& r) { return trial_pvp(r, PvpMode::Eval); }},
        {"loss_visibility", [](Rng& r) { return trial_loss_visibility(r); }},
        {"loss_matching", [](Rng& r) { return trial_loss_matching(r); }},
        {"loss_classification", [](Rng& r) { return trial_loss_classification(r); }},
    };

    GradCheckReport report;
    report.seed = seed;
    report.all_pass = true;
    for (const auto& [name, fn] : all_ops) {
        if (!ops.empty() && std::find(ops.begin(), ops.end(), name) == ops.end()) continue;
        Rng rng(derive_seed(seed, "gradcheck-" + std::string(name)));
        GradCheckEntry entry;
        entry.op = name;
        entry.trials = trials;
        for (int t = 0; t < trials; ++t) {
            entry.max_rel_error = std::max(entry.max_rel_error, fn(rng));
        }
        entry.pass = entry.max_rel_error < kGradCheckTolerance;
        report.all_pass = report.all_pass && entry.pass;
        report.entries.push_back(std::move(entry));
    }
    if (report.entries.empty()) {
        throw std::invalid_argument("no matching operations in gradient-check selector");
    }
    return report;
}

nlohmann::json gradcheck_to_json(const GradCheckReport& report) {
    nlohmann::json j;
    j["seed"] = report.seed;
    j["tolerance"] = kGradCheckTolerance;
    j["all_pass"] = report.all_pass;
    j["ops"] = nlohmann::json::object();
    for (const auto& e : report.entries) {
        j["ops"][e.op] = {
            {"trials", e.trials},
            {"max_rel_error", e.max_rel_error},
            {"pass", e.pass},
        };
    }
    return j;
}

}  // namespace pvpm
