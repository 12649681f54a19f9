#include "pvpm/dataset.hpp"

#include <atomic>
#include <exception>
#include <mutex>
#include <thread>

#include "pvpm/tensor.hpp"

namespace pvpm {

std::vector<std::size_t> LoadedDataset::indices(Role r) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < images.size(); ++i) {
        if (images[i].role == r) out.push_back(i);
    }
    return out;
}

std::vector<std::vector<std::size_t>> LoadedDataset::by_identity(Role r) const {
    int max_label = -1;
    for (const auto& img : images) {
        if (img.role == r) max_label = std::max(max_label, img.label);
    }
    std::vector<std::vector<std::size_t>> groups(max_label + 1);
    for (std::size_t i = 0; i < images.size(); ++i) {
        if (images[i].role == r) groups[images[i].label].push_back(i);
    }
    return groups;
}

LoadedDataset load_dataset(const DatasetManifest& manifest) {
    LoadedDataset ds;
    ds.images.resize(manifest.records.size());
    parallel_for(static_cast<int>(manifest.records.size()), 0, [&](int i) {
        const auto& rec = manifest.records[i];
        LoadedImage img;
        img.id = rec.id;
        img.label = rec.label;
        img.role = rec.role;
        img.feature = volume_from_tensor(load_tensor(rec.feature_path));
        img.pose = volume_from_tensor(load_tensor(rec.pose_path));
        img.vis_gt = rec.vis_gt;
        ds.images[i] = std::move(img);
    });
    return ds;
}

void parallel_for(int n, int workers, const std::function<void(int)>& fn) {
    if (n <= 0) return;
    int hw = static_cast<int>(std::thread::hardware_concurrency());
    if (hw <= 0) hw = 1;
    const int threads = std::min(n, workers > 0 ? workers : hw);
    if (threads <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto worker = [&]() {
        for (;;) {
            const int i = next.fetch_add(1);
            if (i >= n) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!error) error = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace pvpm
