#include "pvpm/run_config.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace pvpm {

using nlohmann::json;

namespace {

// Pulls known keys out of an object and rejects anything left over.
class StrictObject {
public:
    StrictObject(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) {
            throw std::runtime_error("config node " + path_ + " must be an object");
        }
    }

    ~StrictObject() = default;

    template <typename T>
    void get(const char* key, T& out) {
        if (j_.contains(key)) {
            out = j_.at(key).get<T>();
        }
        seen_.insert(key);
    }

    bool has(const char* key) {
        seen_.insert(key);
        return j_.contains(key);
    }

    const json& child(const char* key) {
        seen_.insert(key);
        return j_.at(key);
    }

    void finish() const {
        for (const auto& [key, value] : j_.items()) {
            if (!seen_.count(key)) {
                throw std::runtime_error("unknown config key '" + path_ + "." + key + "'");
            }
        }
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

std::filesystem::path get_path(StrictObject& obj, const char* key) {
    std::string s;
    obj.get(key, s);
    return s;
}

}  // namespace

RunConfig parse_run_config(const json& j) {
    RunConfig cfg;
    StrictObject root(j, "$");
    root.get("seed", cfg.seed);
    root.get("workers", cfg.workers);

    if (root.has("paths")) {
        StrictObject paths(root.child("paths"), "$.paths");
        cfg.paths.data = get_path(paths, "data");
        cfg.paths.classifiers = get_path(paths, "classifiers");
        cfg.paths.checkpoint = get_path(paths, "checkpoint");
        paths.finish();
    }

    if (root.has("synth")) {
        StrictObject s(root.child("synth"), "$.synth");
        s.get("identities", cfg.synth.identities);
        s.get("images_per_identity", cfg.synth.images_per_identity);
        s.get("feature_channels", cfg.synth.feature_channels);
        s.get("pose_channels", cfg.synth.pose_channels);
        s.get("height", cfg.synth.height);
        s.get("width", cfg.synth.width);
        s.get("pose_factor", cfg.synth.pose_factor);
        s.get("parts", cfg.synth.parts);
        s.get("occlusion_probability", cfg.synth.occlusion_probability);
        s.get("occluded_min", cfg.synth.occluded_min);
        s.get("occluded_max", cfg.synth.occluded_max);
        s.get("obstacles", cfg.synth.obstacles);
        s.get("obstacle_scale", cfg.synth.obstacle_scale);
        s.get("noise_amplitude", cfg.synth.noise_amplitude);
        s.get("identity_spread", cfg.synth.identity_spread);
        s.get("pose_suppression", cfg.synth.pose_suppression);
        s.finish();
    }

    if (root.has("train")) {
        StrictObject t(root.child("train"), "$.train");
        t.get("batch_size", cfg.train.batch_size);
        t.get("epochs", cfg.train.epochs);
        t.get("learning_rate", cfg.train.learning_rate);
        t.get("lambda", cfg.train.lambda);
        t.get("parts", cfg.train.parts);
        t.get("max_steps", cfg.train.max_steps);
        t.get("ema_momentum", cfg.train.ema_momentum);
        t.get("grad_lambda_prime", cfg.train.grad_through_lambda_prime);
        t.get("solve_with_fresh_ema", cfg.train.solve_with_fresh_ema);
        if (t.has("augment")) {
            StrictObject a(t.child("augment"), "$.train.augment");
            a.get("probability", cfg.train.augment.probability);
            a.get("span_min", cfg.train.augment.span_min);
            a.get("span_max", cfg.train.augment.span_max);
            a.get("obstacle_scale", cfg.train.augment.obstacle_scale);
            a.get("noise_amplitude", cfg.train.augment.noise_amplitude);
            a.get("pose_suppression", cfg.train.augment.pose_suppression);
            a.finish();
        }
        if (t.has("encoder")) {
            StrictObject e(t.child("encoder"), "$.train.encoder");
            e.get("in_channels", cfg.train.encoder.in_channels);
            e.get("hidden_channels", cfg.train.encoder.hidden_channels);
            e.get("out_channels", cfg.train.encoder.out_channels);
            e.get("stride1", cfg.train.encoder.stride1);
            e.get("stride2", cfg.train.encoder.stride2);
            e.finish();
        }
        t.finish();
    }

    if (root.has("pretrain")) {
        StrictObject p(root.child("pretrain"), "$.pretrain");
        p.get("epochs", cfg.pretrain.epochs);
        p.get("lr", cfg.pretrain.lr);
        p.finish();
    }

    if (root.has("eval")) {
        StrictObject e(root.child("eval"), "$.eval");
        std::string mode;
        e.get("mode", mode);
        if (!mode.empty()) cfg.eval.mode = parse_eval_mode(mode);
        e.get("tau", cfg.eval.tau);
        e.get("max_rank", cfg.eval.max_rank);
        e.get("per_query_csv", cfg.eval.per_query_csv);
        e.finish();
    }

    if (root.has("sweep")) {
        StrictObject s(root.child("sweep"), "$.sweep");
        s.get("param", cfg.sweep.param);
        s.get("grid", cfg.sweep.grid);
        s.finish();
        if (cfg.sweep.param != "lambda" && cfg.sweep.param != "parts") {
            throw std::runtime_error("sweep.param must be 'lambda' or 'parts'");
        }
    }

    if (root.has("gradcheck")) {
        StrictObject g(root.child("gradcheck"), "$.gradcheck");
        g.get("trials", cfg.gradcheck.trials);
        g.get("ops", cfg.gradcheck.ops);
        g.finish();
    }

    if (root.has("pair")) {
        StrictObject p(root.child("pair"), "$.pair");
        p.get("probe", cfg.pair.probe);
        p.get("gallery", cfg.pair.gallery);
        p.finish();
    }

    root.finish();

    // Seeds and worker counts propagate into the nested configs.
    cfg.synth.seed = cfg.seed;
    cfg.train.seed = cfg.seed;
    cfg.train.workers = cfg.workers;
    return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open config " + path.string());
    }
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw std::runtime_error("config " + path.string() + ": " + e.what());
    }
    return parse_run_config(j);
}

json run_config_to_json(const RunConfig& cfg) {
    json j;
    j["seed"] = cfg.seed;
    j["workers"] = cfg.workers;
    j["paths"] = {
        {"data", cfg.paths.data.generic_string()},
        {"classifiers", cfg.paths.classifiers.generic_string()},
        {"checkpoint", cfg.paths.checkpoint.generic_string()},
    };
    j["synth"] = {
        {"identities", cfg.synth.identities},
        {"images_per_identity", cfg.synth.images_per_identity},
        {"feature_channels", cfg.synth.feature_channels},
        {"pose_channels", cfg.synth.pose_channels},
        {"height", cfg.synth.height},
        {"width", cfg.synth.width},
        {"pose_factor", cfg.synth.pose_factor},
        {"parts", cfg.synth.parts},
        {"occlusion_probability", cfg.synth.occlusion_probability},
        {"occluded_min", cfg.synth.occluded_min},
        {"occluded_max", cfg.synth.occluded_max},
        {"obstacles", cfg.synth.obstacles},
        {"obstacle_scale", cfg.synth.obstacle_scale},
        {"noise_amplitude", cfg.synth.noise_amplitude},
        {"identity_spread", cfg.synth.identity_spread},
        {"pose_suppression", cfg.synth.pose_suppression},
    };
    j["train"] = {
        {"batch_size", cfg.train.batch_size},
        {"epochs", cfg.train.epochs},
        {"learning_rate", cfg.train.learning_rate},
        {"lambda", cfg.train.lambda},
        {"parts", cfg.train.parts},
        {"max_steps", cfg.train.max_steps},
        {"ema_momentum", cfg.train.ema_momentum},
        {"grad_lambda_prime", cfg.train.grad_through_lambda_prime},
        {"solve_with_fresh_ema", cfg.train.solve_with_fresh_ema},
        {"augment",
         {
             {"probability", cfg.train.augment.probability},
             {"span_min", cfg.train.augment.span_min},
             {"span_max", cfg.train.augment.span_max},
             {"obstacle_scale", cfg.train.augment.obstacle_scale},
             {"noise_amplitude", cfg.train.augment.noise_amplitude},
             {"pose_suppression", cfg.train.augment.pose_suppression},
         }},
        {"encoder",
         {
             {"in_channels", cfg.train.encoder.in_channels},
             {"hidden_channels", cfg.train.encoder.hidden_channels},
             {"out_channels", cfg.train.encoder.out_channels},
             {"stride1", cfg.train.encoder.stride1},
             {"stride2", cfg.train.encoder.stride2},
         }},
    };
    j["pretrain"] = {{"epochs", cfg.pretrain.epochs}, {"lr", cfg.pretrain.lr}};
    j["eval"] = {
        {"mode", eval_mode_name(cfg.eval.mode)},
        {"tau", cfg.eval.tau},
        {"max_rank", cfg.eval.max_rank},
        {"per_query_csv", cfg.eval.per_query_csv},
    };
    j["sweep"] = {{"param", cfg.sweep.param}, {"grid", cfg.sweep.grid}};
    j["gradcheck"] = {{"trials", cfg.gradcheck.trials}, {"ops", cfg.gradcheck.ops}};
    j["pair"] = {{"probe", cfg.pair.probe}, {"gallery", cfg.pair.gallery}};
    return j;
}

std::vector<double> parse_grid(const std::string& text) {
    std::vector<double> values;
    if (text.find(':') != std::string::npos) {
        double start = 0.0, end = 0.0, step = 0.0;
        char c1 = 0, c2 = 0;
        std::istringstream in(text);
        if (!(in >> start >> c1 >> end >> c2 >> step) || c1 != ':' || c2 != ':' || step <= 0.0) {
            throw std::runtime_error("bad grid '" + text + "': want start:end:step");
        }
        for (double v = start; v <= end + 1e-9; v += step) values.push_back(v);
    } else {
        std::istringstream in(text);
        std::string token;
        while (std::getline(in, token, ',')) {
            if (token.empty()) continue;
            values.push_back(std::stod(token));
        }
    }
    if (values.empty()) {
        throw std::runtime_error("empty grid '" + text + "'");
    }
    return values;
}

}  // namespace pvpm
