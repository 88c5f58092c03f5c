#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mpmae/mask/masking.hpp"

using namespace mpmae;
using namespace mpmae::mask;

TEST_CASE("patch grid invariants") {
    PatchGrid a(112, 16), b(56, 8);
    CHECK(a.grid_side() == 7);
    CHECK(b.grid_side() == 7);
    CHECK(a.num_patches() == 49);
    CHECK_THROWS_AS(PatchGrid(100, 16), std::invalid_argument);
}

TEST_CASE("sample_mask: exact count and bounds") {
    PatchGrid g(56, 8);
    Rng rng(1);
    for (int i = 0; i < 50; ++i) {
        auto m = sample_mask(g, 0.6, rng);
        CHECK(m.count_masked() == 29);  // floor(0.6*49)
    }
    PatchGrid g2(16, 8);  // 2x2 grid
    auto m2 = sample_mask(g2, 0.5, rng);
    CHECK(m2.count_masked() == 2);

    CHECK_THROWS_AS(sample_mask(g, 0.0, rng), std::invalid_argument);
    CHECK_THROWS_AS(sample_mask(g, 1.0, rng), std::invalid_argument);

    Rng ra(7), rb(7);
    auto ma = sample_mask(g, 0.6, ra);
    auto mb = sample_mask(g, 0.6, rb);
    CHECK(max_abs_diff(ma.masked.cast<float>(), mb.masked.cast<float>()) == 0.0f);
}

TEST_CASE("sample_mask: per-patch frequency is uniform") {
    PatchGrid g(56, 8);
    Rng rng(99);
    std::vector<int> hits(49, 0);
    const int draws = 10000;
    for (int d = 0; d < draws; ++d) {
        auto m = sample_mask(g, 0.6, rng);
        for (int p = 0; p < 49; ++p) hits[static_cast<std::size_t>(p)] += m.masked[p];
    }
    for (int p = 0; p < 49; ++p) {
        const double freq = static_cast<double>(hits[static_cast<std::size_t>(p)]) / draws;
        CHECK(std::abs(freq - 0.6) < 0.02);
    }
}

TEST_CASE("patchify / unpatchify") {
    PatchGrid g(16, 4);
    Rng rng(5);
    auto x = Tensor<float>::randn({3, 16, 16}, rng);
    auto p = patchify(x, g);
    CHECK(p.dim(0) == 16);
    CHECK(p.dim(1) == 3 * 16);
    auto back = unpatchify(p, g, 3);
    CHECK(max_abs_diff(back, x) == 0.0f);

    auto c = Tensor<float>::full({2, 16, 16}, 3.5f);
    auto pc = patchify(c, g);
    for (std::int64_t i = 0; i < pc.numel(); ++i) CHECK(pc[i] == 3.5f);

    // ramp oracle: patch (0,0) equals the top-left block, (c, py, px) layout
    Tensor<float> ramp({1, 16, 16});
    for (int y = 0; y < 16; ++y)
        for (int xx = 0; xx < 16; ++xx) ramp[y * 16 + xx] = static_cast<float>(y * 16 + xx);
    auto pr = patchify(ramp, g);
    for (int py = 0; py < 4; ++py)
        for (int px = 0; px < 4; ++px)
            CHECK(pr[py * 4 + px] == static_cast<float>(py * 16 + px));

    CHECK_THROWS_AS(patchify(Tensor<float>({3, 8, 8}), g), std::invalid_argument);
}

TEST_CASE("upsample_mask_to_pixels") {
    PatchGrid g(112, 16);
    PatchMask none;
    none.masked = Tensor<std::uint8_t>({49});
    auto raster = upsample_mask_to_pixels(none, g);
    for (std::int64_t i = 0; i < raster.numel(); ++i) CHECK(raster[i] == 0);

    PatchMask one = none;
    one.masked = none.masked.clone();
    one.masked[10] = 1;  // grid position (1, 3)
    auto r1 = upsample_mask_to_pixels(one, g);
    int count = 0;
    for (std::int64_t i = 0; i < r1.numel(); ++i) count += r1[i];
    CHECK(count == 256);
    CHECK(r1[16 * 112 + 48] == 1);  // top-left pixel of patch (1,3)
    CHECK(r1[0] == 0);

    // patch-wise any() recovers the mask
    Rng rng(3);
    auto m = sample_mask(g, 0.37, rng);
    auto up = upsample_mask_to_pixels(m, g);
    for (int gy = 0; gy < 7; ++gy)
        for (int gx = 0; gx < 7; ++gx) {
            int any = 0;
            for (int py = 0; py < 16; ++py)
                for (int px = 0; px < 16; ++px) any |= up[(gy * 16 + py) * 112 + gx * 16 + px];
            CHECK(any == m.masked[gy * 7 + gx]);
        }
}

TEST_CASE("patch_normalize") {
    PatchGrid g(8, 2);
    auto c = Tensor<float>::full({1, 8, 8}, 7.0f);
    auto n = patch_normalize(c, g);
    for (std::int64_t i = 0; i < n.numel(); ++i) CHECK(n[i] == 0.0f);

    // two distinct values {1,3} within a patch -> {-1, +1}
    Tensor<float> t({1, 8, 8});
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) t[y * 8 + x] = (x % 2 == 0) ? 1.0f : 3.0f;
    auto nt = patch_normalize(t, g);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) CHECK(nt[y * 8 + x] == doctest::Approx((x % 2 == 0) ? -1.0 : 1.0));

    // post-condition on random data: per-patch moments
    Rng rng(11);
    auto r = Tensor<float>::randn({3, 8, 8}, rng, 2.5f);
    auto nr = patch_normalize(r, g);
    for (int c2 = 0; c2 < 3; ++c2)
        for (int gy = 0; gy < 4; ++gy)
            for (int gx = 0; gx < 4; ++gx) {
                double mean = 0, var = 0;
                for (int py = 0; py < 2; ++py)
                    for (int px = 0; px < 2; ++px)
                        mean += nr[(c2 * 8 + gy * 2 + py) * 8 + gx * 2 + px];
                mean /= 4;
                for (int py = 0; py < 2; ++py)
                    for (int px = 0; px < 2; ++px) {
                        const double d = nr[(c2 * 8 + gy * 2 + py) * 8 + gx * 2 + px] - mean;
                        var += d * d;
                    }
                var /= 4;
                CHECK(std::abs(mean) < 1e-5);
                CHECK(std::abs(var - 1.0) < 1e-3);
            }
}

TEST_CASE("mask bit packing round trip") {
    PatchGrid g(56, 8);
    Rng rng(2);
    auto m = sample_mask(g, 0.6, rng);
    auto bytes = pack_mask(m);
    CHECK(bytes.size() == 7);  // ceil(49/8)
    auto m2 = unpack_mask(bytes, 49, 0.6);
    for (int i = 0; i < 49; ++i) CHECK(m.masked[i] == m2.masked[i]);
}

TEST_CASE("visibility_at matches the pixel mask") {
    PatchGrid g(56, 8);
    Rng rng(4);
    auto m = sample_mask(g, 0.6, rng);
    auto vis28 = visibility_at<float>(m, g, 28);  // stride-2 feature map
    for (int y = 0; y < 28; ++y)
        for (int x = 0; x < 28; ++x)
            CHECK(vis28[y * 28 + x] == (m.masked[(y / 4) * 7 + x / 4] ? 0.0f : 1.0f));
    CHECK_THROWS_AS(visibility_at<float>(m, g, 30), std::invalid_argument);
}
