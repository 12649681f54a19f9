#include "pvpm/manifest.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include <json.hpp>

namespace pvpm {

using nlohmann::json;

const char* role_name(Role r) {
    switch (r) {
        case Role::Probe: return "probe";
        case Role::Gallery: return "gallery";
        case Role::Train: return "train";
    }
    return "?";
}

Role parse_role(const std::string& s) {
    if (s == "probe") return Role::Probe;
    if (s == "gallery") return Role::Gallery;
    if (s == "train") return Role::Train;
    throw std::runtime_error("unknown role '" + s + "'");
}

std::size_t DatasetManifest::count(Role r) const {
    return static_cast<std::size_t>(
        std::count_if(records.begin(), records.end(),
                      [r](const ManifestRecord& rec) { return rec.role == r; }));
}

std::vector<std::size_t> DatasetManifest::indices(Role r) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (records[i].role == r) out.push_back(i);
    }
    return out;
}

int DatasetManifest::train_identity_count() const {
    int max_label = -1;
    for (const auto& rec : records) {
        if (rec.role == Role::Train) max_label = std::max(max_label, rec.label);
    }
    return max_label + 1;
}

DatasetManifest load_manifest(const std::filesystem::path& path,
                              std::optional<int> expected_parts) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open manifest " + path.string());
    }
    const std::filesystem::path base = path.parent_path();

    DatasetManifest manifest;
    std::unordered_set<std::string> seen_ids;
    std::set<int> train_labels;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::parse_error& e) {
            throw std::runtime_error("manifest line " + std::to_string(line_no) +
                                     ": invalid JSON: " + e.what());
        }
        auto require = [&](const char* key) -> const json& {
            if (!rec.contains(key)) {
                throw std::runtime_error("manifest line " + std::to_string(line_no) +
                                         ": missing field '" + key + "'");
            }
            return rec.at(key);
        };
        ManifestRecord r;
        r.id = require("id").get<std::string>();
        r.label = require("label").get<int>();
        if (r.label < 0) {
            throw std::runtime_error("manifest line " + std::to_string(line_no) +
                                     ": negative label");
        }
        r.role = parse_role(require("role").get<std::string>());
        r.feature_path = base / require("feature").get<std::string>();
        r.pose_path = base / require("pose").get<std::string>();
        if (rec.contains("vis_gt")) {
            std::vector<std::uint8_t> bits;
            for (const auto& b : rec.at("vis_gt")) {
                int x = b.get<int>();
                if (x != 0 && x != 1) {
                    throw std::runtime_error("manifest line " + std::to_string(line_no) +
                                             ": vis_gt entries must be 0/1");
                }
                bits.push_back(static_cast<std::uint8_t>(x));
            }
            if (expected_parts && static_cast<int>(bits.size()) != *expected_parts) {
                throw std::runtime_error("manifest line " + std::to_string(line_no) +
                                         ": vis_gt length " + std::to_string(bits.size()) +
                                         " does not match configured parts " +
                                         std::to_string(*expected_parts));
            }
            r.vis_gt = std::move(bits);
        }
        if (!seen_ids.insert(r.id).second) {
            throw std::runtime_error("manifest line " + std::to_string(line_no) +
                                     ": duplicate image id '" + r.id + "'");
        }
        if (r.role == Role::Train) train_labels.insert(r.label);
        manifest.records.push_back(std::move(r));
    }

    // Training labels must form a contiguous 0..n-1 set.
    if (!train_labels.empty()) {
        int expect = 0;
        for (int l : train_labels) {
            if (l != expect) {
                throw std::runtime_error("manifest " + path.string() +
                                         ": training labels are not contiguous 0..n-1");
            }
            ++expect;
        }
    }
    return manifest;
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
    const std::filesystem::path base = path.parent_path();
    auto relativize = [&](const std::filesystem::path& p) {
        std::error_code ec;
        auto rel = std::filesystem::relative(p, base, ec);
        return (ec || rel.empty()) ? p.generic_string() : rel.generic_string();
    };
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot open manifest " + path.string() + " for writing");
    }
    for (const auto& r : manifest.records) {
        json rec;
        rec["id"] = r.id;
        rec["label"] = r.label;
        rec["role"] = role_name(r.role);
        rec["feature"] = relativize(r.feature_path);
        rec["pose"] = relativize(r.pose_path);
        if (r.vis_gt) {
            rec["vis_gt"] = json::array();
            for (std::uint8_t b : *r.vis_gt) rec["vis_gt"].push_back(static_cast<int>(b));
        }
        out << rec.dump() << "\n";
    }
    if (!out) {
        throw std::runtime_error("write failure on manifest " + path.string());
    }
}

}  // namespace pvpm
