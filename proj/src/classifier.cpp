#include "pvpm/classifier.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

#include "pvpm/checkpoint.hpp"
#include "pvpm/tensor.hpp"

namespace pvpm {

PartFeatureSet uniform_stripe_features(const Volume& appearance, int parts) {
    if (parts < 1 || appearance.height < parts) {
        throw std::invalid_argument("feature map height " + std::to_string(appearance.height) +
                                    " cannot host " + std::to_string(parts) + " stripes");
    }
    PartFeatureSet set;
    set.features = Mat(parts, appearance.channels);
    set.mass.assign(parts, 0.0);
    set.visible.assign(parts, 1);
    for (int p = 0; p < parts; ++p) {
        const int row_begin = p * appearance.height / parts;
        const int row_end = (p + 1) * appearance.height / parts;
        const int count = (row_end - row_begin) * appearance.width;
        set.mass[p] = count;
        for (int c = 0; c < appearance.channels; ++c) {
            double s = 0.0;
            for (int h = row_begin; h < row_end; ++h) {
                for (int w = 0; w < appearance.width; ++w) s += appearance.at(c, h, w);
            }
            set.features.at(p, c) = s / count;
        }
    }
    return set;
}

ToyClassifierBank::ToyClassifierBank(int parts, int feature_dim, int identities)
    : parts_(parts), feature_dim_(feature_dim), identities_(identities) {
    weights_.assign(parts, Mat(identities, feature_dim));
    biases_.assign(parts, std::vector<double>(identities, 0.0));
}

void ToyClassifierBank::apply_update(int part, const Mat& d_weights,
                                     const std::vector<double>& d_biases, double lr) {
    if (frozen_) {
        throw std::logic_error("classifier bank is frozen; updates are rejected");
    }
    Mat& w = weights_[part];
    for (std::size_t i = 0; i < w.v.size(); ++i) w.v[i] -= lr * d_weights.v[i];
    for (std::size_t i = 0; i < biases_[part].size(); ++i) biases_[part][i] -= lr * d_biases[i];
}

std::uint64_t ToyClassifierBank::checksum() const {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](const double* data, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) {
            std::uint64_t bits;
            std::memcpy(&bits, &data[i], 8);
            h ^= bits;
            h *= 1099511628211ull;
        }
    };
    for (int p = 0; p < parts_; ++p) {
        mix(weights_[p].v.data(), weights_[p].v.size());
        mix(biases_[p].data(), biases_[p].size());
    }
    return h;
}

void ToyClassifierBank::save(const std::filesystem::path& path) const {
    Checkpoint ckpt;
    ckpt.meta["classifier_bank"] = {
        {"parts", parts_},
        {"feature_dim", feature_dim_},
        {"identities", identities_},
        {"frozen", frozen_},
    };
    for (int p = 0; p < parts_; ++p) {
        const std::string prefix = "classifier." + std::to_string(p);
        ckpt.put(prefix + ".weight",
                 tensor_from_doubles({static_cast<std::uint32_t>(identities_),
                                      static_cast<std::uint32_t>(feature_dim_)},
                                     weights_[p].v));
        ckpt.put(prefix + ".bias",
                 tensor_from_doubles({static_cast<std::uint32_t>(identities_)}, biases_[p]));
    }
    save_checkpoint(ckpt, path);
}

ToyClassifierBank ToyClassifierBank::load(const std::filesystem::path& path) {
    Checkpoint ckpt = load_checkpoint(path);
    const auto& meta = ckpt.meta.at("classifier_bank");
    ToyClassifierBank bank(meta.at("parts").get<int>(), meta.at("feature_dim").get<int>(),
                           meta.at("identities").get<int>());
    for (int p = 0; p < bank.parts_; ++p) {
        const std::string prefix = "classifier." + std::to_string(p);
        bank.weights_[p].v = doubles_from_tensor(ckpt.get(prefix + ".weight"));
        bank.biases_[p] = doubles_from_tensor(ckpt.get(prefix + ".bias"));
    }
    bank.frozen_ = meta.at("frozen").get<bool>();
    return bank;
}

namespace {

PretrainResult pretrain_on_features(std::vector<Mat> stripe_features, std::vector<int> labels,
                                    int n_id, int parts, int epochs, double lr) {
    if (n_id < 2) {
        throw std::invalid_argument("classifier pretraining needs at least 2 identities");
    }
    const int feature_dim = stripe_features.empty() ? 0 : stripe_features[0].cols;
    const int n = static_cast<int>(labels.size());

    ToyClassifierBank bank(parts, feature_dim, n_id);
    double last_loss = 0.0;
    for (int epoch = 0; epoch < epochs; ++epoch) {
        last_loss = 0.0;
        for (int p = 0; p < parts; ++p) {
            Mat d_w(n_id, feature_dim);
            std::vector<double> d_b(n_id, 0.0);
            const Mat& w = bank.weights(p);
            const auto& b = bank.biases(p);
            for (int s = 0; s < n; ++s) {
                std::span<const double> feat = stripe_features[s].row(p);
                // Softmax cross-entropy in the log domain.
                std::vector<double> logits(n_id);
                double max_logit = -1e300;
                for (int k = 0; k < n_id; ++k) {
                    logits[k] = dot(w.row(k), feat) + b[k];
                    max_logit = std::max(max_logit, logits[k]);
                }
                double z = 0.0;
                for (int k = 0; k < n_id; ++k) z += std::exp(logits[k] - max_logit);
                last_loss += (std::log(z) + max_logit - logits[labels[s]]) / (n * parts);
                for (int k = 0; k < n_id; ++k) {
                    double g = std::exp(logits[k] - max_logit) / z;
                    if (k == labels[s]) g -= 1.0;
                    g /= n;
                    d_b[k] += g;
                    for (int c = 0; c < feature_dim; ++c) d_w.at(k, c) += g * feat[c];
                }
            }
            bank.apply_update(p, d_w, d_b, lr);
        }
    }

    // Training accuracy with the final parameters.
    std::size_t correct = 0, total = 0;
    for (int s = 0; s < n; ++s) {
        for (int p = 0; p < parts; ++p) {
            std::span<const double> feat = stripe_features[s].row(p);
            int best = 0;
            double best_score = -1e300;
            for (int k = 0; k < n_id; ++k) {
                const double score = dot(bank.weights(p).row(k), feat) + bank.biases(p)[k];
                if (score > best_score) {
                    best_score = score;
                    best = k;
                }
            }
            correct += (best == labels[s]);
            ++total;
        }
    }
    bank.freeze();

    PretrainResult result;
    result.bank = std::move(bank);
    result.train_accuracy = total > 0 ? double(correct) / double(total) : 0.0;
    result.final_loss = last_loss;
    return result;
}

}  // namespace

PretrainResult pretrain_classifiers(const DatasetManifest& manifest, int parts, int epochs,
                                    std::uint64_t seed, double lr) {
    (void)seed;  // zero-initialized convex problem; kept for interface stability
    std::vector<Mat> stripe_features;
    std::vector<int> labels;
    for (std::size_t idx : manifest.indices(Role::Train)) {
        const auto& rec = manifest.records[idx];
        Volume f = volume_from_tensor(load_tensor(rec.feature_path));
        stripe_features.push_back(uniform_stripe_features(f, parts).features);
        labels.push_back(rec.label);
    }
    return pretrain_on_features(std::move(stripe_features), std::move(labels),
                                manifest.train_identity_count(), parts, epochs, lr);
}

PretrainResult pretrain_classifiers(const LoadedDataset& dataset, int parts, int epochs,
                                    std::uint64_t seed, double lr) {
    (void)seed;
    std::vector<Mat> stripe_features;
    std::vector<int> labels;
    int max_label = -1;
    for (std::size_t idx : dataset.indices(Role::Train)) {
        const auto& img = dataset.images[idx];
        stripe_features.push_back(uniform_stripe_features(img.feature, parts).features);
        labels.push_back(img.label);
        max_label = std::max(max_label, img.label);
    }
    return pretrain_on_features(std::move(stripe_features), std::move(labels), max_label + 1,
                                parts, epochs, lr);
}

}  // namespace pvpm
