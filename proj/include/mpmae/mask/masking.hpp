#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "mpmae/core/rng.hpp"
#include "mpmae/core/tensor.hpp"

namespace mpmae::mask {

struct PatchGrid {
    int image_size = 0;
    int patch_size = 0;

    PatchGrid() = default;
    PatchGrid(int image, int patch) : image_size(image), patch_size(patch) {
        if (patch <= 0 || image <= 0 || image % patch != 0)
            throw std::invalid_argument("patch size must divide image size");
    }
    int grid_side() const { return image_size / patch_size; }
    int num_patches() const { return grid_side() * grid_side(); }
};

// Boolean visibility pattern over the patch grid; 1 = masked (non-visible).
struct PatchMask {
    Tensor<std::uint8_t> masked;  // (num_patches)
    double masking_ratio = 0.0;

    int count_masked() const {
        int n = 0;
        for (std::int64_t i = 0; i < masked.numel(); ++i) n += masked[i];
        return n;
    }
};

// Uniformly random subset of exactly floor(ratio * num_patches) patches.
PatchMask sample_mask(const PatchGrid& grid, double ratio, Rng& rng);

// (C,H,W) -> (num_patches, C*p*p); patch order row-major over the grid,
// vector layout (c, py, px) row-major.
Tensor<float> patchify(const Tensor<float>& raster, const PatchGrid& grid);
Tensor<float> unpatchify(const Tensor<float>& patches, const PatchGrid& grid, int channels);

// (H,W) boolean raster, 1 = masked pixel.
Tensor<std::uint8_t> upsample_mask_to_pixels(const PatchMask& mask, const PatchGrid& grid);

// Zero mean / unit variance within each patch and channel (variance floored
// at 1e-6).
Tensor<float> patch_normalize(const Tensor<float>& raster, const PatchGrid& grid);

std::vector<std::uint8_t> pack_mask(const PatchMask& mask);
PatchMask unpack_mask(const std::vector<std::uint8_t>& bytes, int num_patches, double ratio);

// Visibility map (1 = visible) at a feature resolution `size`, which must be
// a multiple of the grid side. Used by the masked encoder at every stage.
template <typename T>
Tensor<T> visibility_at(const PatchMask& mask, const PatchGrid& grid, int size) {
    const int g = grid.grid_side();
    if (size % g != 0) throw std::invalid_argument("feature size not aligned with patch grid");
    const int cell = size / g;
    Tensor<T> out({size, size});
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
            out[y * size + x] = mask.masked[(y / cell) * g + (x / cell)] ? T(0) : T(1);
    return out;
}

// Batched (N,1,size,size) visibility tensor for a vector of per-sample masks.
template <typename T>
Tensor<T> batch_visibility(const std::vector<PatchMask>& masks, const PatchGrid& grid, int size) {
    const std::int64_t n = static_cast<std::int64_t>(masks.size());
    Tensor<T> out({n, 1, size, size});
    for (std::int64_t i = 0; i < n; ++i) {
        auto v = visibility_at<T>(masks[static_cast<std::size_t>(i)], grid, size);
        std::copy(v.data(), v.data() + v.numel(), out.data() + i * size * size);
    }
    return out;
}

// Batched (N, num_patches) masked flags.
inline Tensor<std::uint8_t> batch_masked_cells(const std::vector<PatchMask>& masks, const PatchGrid& grid) {
    const std::int64_t n = static_cast<std::int64_t>(masks.size());
    const std::int64_t p = grid.num_patches();
    Tensor<std::uint8_t> out({n, p});
    for (std::int64_t i = 0; i < n; ++i)
        std::copy(masks[static_cast<std::size_t>(i)].masked.data(),
                  masks[static_cast<std::size_t>(i)].masked.data() + p, out.data() + i * p);
    return out;
}

}  // namespace mpmae::mask
