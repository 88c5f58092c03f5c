#include "mpmae/mask/masking.hpp"

#include <cmath>
#include <numeric>

namespace mpmae::mask {

PatchMask sample_mask(const PatchGrid& grid, double ratio, Rng& rng) {
    if (!(ratio > 0.0 && ratio < 1.0)) throw std::invalid_argument("masking ratio must be in (0,1)");
    const int p = grid.num_patches();
    const int k = static_cast<int>(std::floor(ratio * p));
    std::vector<int> idx(static_cast<std::size_t>(p));
    std::iota(idx.begin(), idx.end(), 0);
    // partial Fisher-Yates: first k entries are a uniform subset
    for (int i = 0; i < k; ++i) {
        const int j = i + static_cast<int>(rng.uniform_int(p - i));
        std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
    }
    PatchMask m;
    m.masking_ratio = ratio;
    m.masked = Tensor<std::uint8_t>({p});
    for (int i = 0; i < k; ++i) m.masked[idx[static_cast<std::size_t>(i)]] = 1;
    return m;
}

Tensor<float> patchify(const Tensor<float>& raster, const PatchGrid& grid) {
    if (raster.rank() != 3 || raster.dim(1) != grid.image_size || raster.dim(2) != grid.image_size)
        throw std::invalid_argument("patchify: raster shape mismatch");
    const int C = static_cast<int>(raster.dim(0));
    const int g = grid.grid_side(), ps = grid.patch_size, H = grid.image_size;
    Tensor<float> out({grid.num_patches(), static_cast<std::int64_t>(C) * ps * ps});
    const float* src = raster.data();
    float* dst = out.data();
    const std::int64_t d = static_cast<std::int64_t>(C) * ps * ps;
    for (int gy = 0; gy < g; ++gy)
        for (int gx = 0; gx < g; ++gx) {
            float* pv = dst + (gy * g + gx) * d;
            for (int c = 0; c < C; ++c)
                for (int py = 0; py < ps; ++py)
                    for (int px = 0; px < ps; ++px)
                        pv[(c * ps + py) * ps + px] =
                            src[(c * H + gy * ps + py) * H + gx * ps + px];
        }
    return out;
}

Tensor<float> unpatchify(const Tensor<float>& patches, const PatchGrid& grid, int channels) {
    const int g = grid.grid_side(), ps = grid.patch_size, H = grid.image_size;
    if (patches.rank() != 2 || patches.dim(0) != grid.num_patches() ||
        patches.dim(1) != static_cast<std::int64_t>(channels) * ps * ps)
        throw std::invalid_argument("unpatchify: patch matrix shape mismatch");
    Tensor<float> out({channels, H, H});
    const float* src = patches.data();
    float* dst = out.data();
    const std::int64_t d = static_cast<std::int64_t>(channels) * ps * ps;
    for (int gy = 0; gy < g; ++gy)
        for (int gx = 0; gx < g; ++gx) {
            const float* pv = src + (gy * g + gx) * d;
            for (int c = 0; c < channels; ++c)
                for (int py = 0; py < ps; ++py)
                    for (int px = 0; px < ps; ++px)
                        dst[(c * H + gy * ps + py) * H + gx * ps + px] =
                            pv[(c * ps + py) * ps + px];
        }
    return out;
}

Tensor<std::uint8_t> upsample_mask_to_pixels(const PatchMask& mask, const PatchGrid& grid) {
    if (mask.masked.numel() != grid.num_patches())
        throw std::invalid_argument("mask length does not match grid");
    const int g = grid.grid_side(), ps = grid.patch_size, H = grid.image_size;
    Tensor<std::uint8_t> out({H, H});
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < H; ++x) out[y * H + x] = mask.masked[(y / ps) * g + (x / ps)];
    return out;
}

Tensor<float> patch_normalize(const Tensor<float>& raster, const PatchGrid& grid) {
    if (raster.rank() != 3 || raster.dim(1) != grid.image_size || raster.dim(2) != grid.image_size)
        throw std::invalid_argument("patch_normalize: raster shape mismatch");
    const int C = static_cast<int>(raster.dim(0));
    const int g = grid.grid_side(), ps = grid.patch_size, H = grid.image_size;
    Tensor<float> out(raster.shape());
    const float* src = raster.data();
    float* dst = out.data();
    const double inv_n = 1.0 / (ps * ps);
    for (int c = 0; c < C; ++c)
        for (int gy = 0; gy < g; ++gy)
            for (int gx = 0; gx < g; ++gx) {
                double mean = 0;
                for (int py = 0; py < ps; ++py)
                    for (int px = 0; px < ps; ++px)
                        mean += src[(c * H + gy * ps + py) * H + gx * ps + px];
                mean *= inv_n;
                double var = 0;
                for (int py = 0; py < ps; ++py)
                    for (int px = 0; px < ps; ++px) {
                        const double d = src[(c * H + gy * ps + py) * H + gx * ps + px] - mean;
                        var += d * d;
                    }
                var *= inv_n;
                const double inv_sd = 1.0 / std::sqrt(std::max(var, 1e-6));
                for (int py = 0; py < ps; ++py)
                    for (int px = 0; px < ps; ++px) {
                        const std::int64_t i = (c * H + gy * ps + py) * H + gx * ps + px;
                        dst[i] = static_cast<float>((src[i] - mean) * inv_sd);
                    }
            }
    return out;
}

std::vector<std::uint8_t> pack_mask(const PatchMask& mask) {
    const std::int64_t p = mask.masked.numel();
    std::vector<std::uint8_t> out(static_cast<std::size_t>((p + 7) / 8), 0);
    for (std::int64_t i = 0; i < p; ++i)
        if (mask.masked[i]) out[static_cast<std::size_t>(i / 8)] |= static_cast<std::uint8_t>(1u << (i % 8));
    return out;
}

PatchMask unpack_mask(const std::vector<std::uint8_t>& bytes, int num_patches, double ratio) {
    PatchMask m;
    m.masking_ratio = ratio;
    m.masked = Tensor<std::uint8_t>({num_patches});
    for (int i = 0; i < num_patches; ++i)
        m.masked[i] = (bytes[static_cast<std::size_t>(i / 8)] >> (i % 8)) & 1u;
    return m;
}

}  // namespace mpmae::mask
