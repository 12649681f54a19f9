#include "pvpm/volume.hpp"

namespace pvpm {

Volume volume_from_tensor(const Tensor& t) {
    if (t.rank() != 3) {
        throw std::invalid_argument("expected rank-3 tensor (C x H x W), got rank " +
                                    std::to_string(t.rank()));
    }
    Volume vol(static_cast<int>(t.dims[0]), static_cast<int>(t.dims[1]),
               static_cast<int>(t.dims[2]));
    for (std::size_t i = 0; i < t.data.size(); ++i) vol.v[i] = t.data[i];
    return vol;
}

Tensor tensor_from_volume(const Volume& vol) {
    std::vector<float> data(vol.v.size());
    for (std::size_t i = 0; i < vol.v.size(); ++i) data[i] = static_cast<float>(vol.v[i]);
    return Tensor({static_cast<std::uint32_t>(vol.channels), static_cast<std::uint32_t>(vol.height),
                   static_cast<std::uint32_t>(vol.width)},
                  std::move(data));
}

}  // namespace pvpm
