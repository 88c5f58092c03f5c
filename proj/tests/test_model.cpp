#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mpmae/model/mpmae.hpp"
#include "mpmae/model/unet.hpp"
#include "support/gradcheck.hpp"
#include "support/reference_model.hpp"

using namespace mpmae;
using namespace mpmae::model;

namespace {

MPMAEConfig tiny_cfg(int image = 28, int patch = 4, std::vector<int> widths = {8, 8, 8, 8},
                     std::vector<int> depths = {1, 1, 1, 1}) {
    MPMAEConfig cfg;
    cfg.encoder.image_size = image;
    cfg.encoder.patch_size = patch;
    cfg.encoder.widths = std::move(widths);
    cfg.encoder.depths = std::move(depths);
    cfg.decoder_width = 8;
    return cfg;
}

std::vector<schema::TaskSpec> default_tasks() {
    return schema::build_default_tasks(schema::build_modality_registry());
}

std::vector<mask::PatchMask> make_masks(const EncoderConfig& cfg, std::int64_t n, double ratio,
                                        std::uint64_t seed) {
    mask::PatchGrid grid(cfg.image_size, cfg.patch_size);
    Rng rng(seed);
    std::vector<mask::PatchMask> masks;
    for (std::int64_t i = 0; i < n; ++i) masks.push_back(mask::sample_mask(grid, ratio, rng));
    return masks;
}

}  // namespace

TEST_CASE("stem shapes and 7x7 token grids") {
    Rng rx(1);
    // modified stem on 56: full-resolution first features
    {
        auto cfg = tiny_cfg(56, 8);
        MPMAE<double> net(cfg, default_tasks(), 1);
        auto x = make_node(Tensor<double>::randn({1, 12, 56, 56}, rx));
        auto out = net.encode(x, nullptr);
        CHECK(out.pyramid[0]->value.dim(2) == 56);
        CHECK(out.tokens->value.dim(2) == 7);
        CHECK(out.tokens->value.dim(3) == 7);
    }
    // original stem on 224: stem output at 1/4 resolution, 7x7 tokens
    {
        auto cfg = tiny_cfg(224, 32);
        cfg.encoder.stem = StemKind::original;
        MPMAE<double> net(cfg, default_tasks(), 1);
        auto x = make_node(Tensor<double>::randn({1, 12, 224, 224}, rx));
        auto out = net.encode(x, nullptr);
        CHECK(out.pyramid[0]->value.dim(2) == 56);
        CHECK(out.tokens->value.dim(2) == 7);
    }
    // both stems on the 112/16 configuration
    for (auto stem : {StemKind::modified, StemKind::original}) {
        auto cfg = tiny_cfg(112, 16);
        cfg.encoder.stem = stem;
        MPMAE<double> net(cfg, default_tasks(), 1);
        auto x = make_node(Tensor<double>::randn({1, 12, 112, 112}, rx));
        auto out = net.encode(x, nullptr);
        CHECK(out.tokens->value.dim(2) == 7);
    }
}

TEST_CASE("masked encoder equals the naive zero-fill oracle") {
    Rng rng(7);
    for (int trial = 0; trial < 4; ++trial) {
        auto cfg = tiny_cfg(16, 4, {4 + trial, 6, 5, 7}, {1, 2, 1, 1});
        MPMAE<double> net(cfg, default_tasks(), 10 + trial);
        auto masks = make_masks(cfg.encoder, 2, 0.4 + 0.1 * trial, 99 + trial);
        auto x = make_node(Tensor<double>::randn({2, 12, 16, 16}, rng));
        auto out = net.encode(x, &masks);
        auto ref = mpmae::testing::ref_masked_encoder(net.params(), cfg.encoder, x->value, masks);
        CHECK(max_abs_diff(out.tokens->value, ref) < 1e-10);
    }
}

TEST_CASE("all-visible mask equals the dense forward") {
    auto cfg = tiny_cfg(16, 4);
    MPMAE<double> net(cfg, default_tasks(), 3);
    Rng rng(5);
    auto x = make_node(Tensor<double>::randn({2, 12, 16, 16}, rng));
    std::vector<mask::PatchMask> none(2);
    for (auto& m : none) {
        m.masked = Tensor<std::uint8_t>({16});
        m.masking_ratio = 0.0;
    }
    auto masked = net.encode(x, &none);
    auto dense = net.encode(x, nullptr);
    CHECK(max_abs_diff(masked.tokens->value, dense.tokens->value) < 1e-12);
}

TEST_CASE("information isolation through the full encoder") {
    auto cfg = tiny_cfg(28, 4, {8, 10, 12, 14}, {2, 2, 2, 2});
    MPMAE<double> net(cfg, default_tasks(), 4);
    auto masks = make_masks(cfg.encoder, 2, 0.6, 42);
    Rng rng(6);
    auto x0 = Tensor<double>::randn({2, 12, 28, 28}, rng);

    // perturb only the pixels inside masked patches
    auto x1 = x0.clone();
    mask::PatchGrid grid(28, 4);
    for (std::int64_t n = 0; n < 2; ++n) {
        auto px = mask::upsample_mask_to_pixels(masks[static_cast<std::size_t>(n)], grid);
        for (std::int64_t c = 0; c < 12; ++c)
            for (std::int64_t i = 0; i < 28 * 28; ++i)
                if (px[i]) x1[(n * 12 + c) * 28 * 28 + i] += rng.normal() * 10.0;
    }
    auto t0 = net.encode(make_node(x0), &masks).tokens->value;
    auto t1 = net.encode(make_node(x1), &masks).tokens->value;

    // visible tokens unchanged, masked tokens zero in both
    for (std::int64_t n = 0; n < 2; ++n) {
        const auto& m = masks[static_cast<std::size_t>(n)].masked;
        for (std::int64_t c = 0; c < t0.dim(1); ++c)
            for (std::int64_t p = 0; p < 49; ++p) {
                const auto a = t0[(n * t0.dim(1) + c) * 49 + p];
                const auto b = t1[(n * t0.dim(1) + c) * 49 + p];
                if (m[p]) {
                    CHECK(a == 0.0);
                    CHECK(b == 0.0);
                } else {
                    CHECK(std::abs(a - b) < 1e-5);
                }
            }
    }
}

TEST_CASE("fill_mask_tokens examples") {
    auto cfg = tiny_cfg(16, 4);
    MPMAE<double> net(cfg, default_tasks(), 5);
    Rng rng(8);
    auto z = make_node(Tensor<double>::randn({1, 8, 4, 4}, rng));

    std::vector<mask::PatchMask> all(1), none(1), mixed(1);
    all[0].masked = Tensor<std::uint8_t>::full({16}, 1);
    none[0].masked = Tensor<std::uint8_t>({16});
    mixed[0].masked = Tensor<std::uint8_t>({16});
    for (int i = 0; i < 16; i += 3) mixed[0].masked[i] = 1;

    auto fa = net.fill_tokens(z, all)->value;
    for (std::int64_t c = 0; c < 8; ++c)
        for (int p = 0; p < 16; ++p)
            CHECK(fa[c * 16 + p] == net.mask_token()->value[c]);

    auto fn = net.fill_tokens(z, none)->value;
    CHECK(max_abs_diff(fn, z->value) == 0.0);

    auto fm = net.fill_tokens(z, mixed)->value;
    for (std::int64_t c = 0; c < 8; ++c)
        for (int p = 0; p < 16; ++p) {
            const double expect = mixed[0].masked[p] ? net.mask_token()->value[c] : z->value[c * 16 + p];
            CHECK(fm[c * 16 + p] == expect);
        }
}

TEST_CASE("pixel decoding shapes and zero-head behaviour") {
    auto cfg = tiny_cfg(56, 8, {8, 8, 8, 8});
    auto tasks = default_tasks();
    MPMAE<double> net(cfg, tasks, 6);
    Rng rng(9);
    auto x = make_node(Tensor<double>::randn({2, 12, 56, 56}, rng));
    auto masks = make_masks(cfg.encoder, 2, 0.6, 1);
    auto enc = net.encode(x, &masks);
    auto dense = net.fill_tokens(enc.tokens, masks);

    auto s2 = net.decode_pixel(net.decoder_for("sentinel2"), dense);
    CHECK(s2->value.shape() == Shape{2, 12, 56, 56});
    auto dw = net.decode_pixel(net.decoder_for("dynamic_world"), dense);
    CHECK(dw->value.shape() == Shape{2, 10, 56, 56});

    // zero tokens + zeroed head weights -> all-zero raster
    auto zero_tokens = make_node(Tensor<double>::zeros({2, 8, 7, 7}));
    auto& dec = net.decoder_for("sentinel2");
    dec.pixel_head.w->value.fill(0.0);
    auto out = net.decode_pixel(dec, zero_tokens);
    for (std::int64_t i = 0; i < out->value.numel(); ++i) CHECK(out->value[i] == 0.0);

    CHECK_THROWS_AS(net.decoder_for("nope"), schema::ConfigError);
    CHECK_THROWS_AS(net.decode_image(net.decoder_for("sentinel2"), dense, masks),
                    schema::ConfigError);
}

TEST_CASE("image decoding pools over masked cells only") {
    auto cfg = tiny_cfg(28, 4);
    auto tasks = default_tasks();
    MPMAE<double> net(cfg, tasks, 7);
    Rng rng(10);
    auto dense = make_node(Tensor<double>::randn({1, 8, 7, 7}, rng));

    auto biome = net.decoder_for("biome");
    std::vector<mask::PatchMask> one(1);
    one[0].masked = Tensor<std::uint8_t>({49});
    one[0].masked[17] = 1;
    auto out = net.decode_image(biome, dense, one);
    CHECK(out->value.shape() == Shape{1, 14});

    // equals that cell's decoded vector through the head
    auto h = biome.proj(dense);
    h = biome.block.forward(h);
    Tensor<double> cell({1, h->value.dim(1)});
    for (std::int64_t c = 0; c < h->value.dim(1); ++c) cell[c] = h->value[c * 49 + 17];
    auto direct = biome.image_head(make_node(cell));
    CHECK(max_abs_diff(direct->value, out->value) < 1e-12);

    // zero masked cells -> invalid state
    std::vector<mask::PatchMask> none(1);
    none[0].masked = Tensor<std::uint8_t>({49});
    CHECK_THROWS_AS(net.decode_image(biome, dense, none), std::logic_error);
}

TEST_CASE("1x1-kernel decoder is invariant to visible-cell permutations") {
    auto cfg = tiny_cfg(28, 4);
    cfg.decoder_kernel = 1;
    MPMAE<double> net(cfg, default_tasks(), 8);
    Rng rng(11);

    std::vector<mask::PatchMask> masks(1);
    masks[0].masked = Tensor<std::uint8_t>({49});
    for (int i = 0; i < 49; i += 2) masks[0].masked[i] = 1;

    auto z = Tensor<double>::randn({1, 8, 7, 7}, rng);
    auto dense0 = net.fill_tokens(make_node(z), masks);
    // permute contents of the visible cells
    std::vector<int> vis_cells;
    for (int p = 0; p < 49; ++p)
        if (!masks[0].masked[p]) vis_cells.push_back(p);
    auto zp = z.clone();
    for (std::size_t i = 0; i < vis_cells.size(); ++i) {
        const int src = vis_cells[i], dst = vis_cells[(i + 7) % vis_cells.size()];
        for (std::int64_t c = 0; c < 8; ++c) zp[c * 49 + dst] = z[c * 49 + src];
    }
    auto dense1 = net.fill_tokens(make_node(zp), masks);

    auto out0 = net.decode_image(net.decoder_for("climate"), dense0, masks);
    auto out1 = net.decode_image(net.decoder_for("climate"), dense1, masks);
    CHECK(max_abs_diff(out0->value, out1->value) < 1e-12);
}

TEST_CASE("parameter counts") {
    // Atto defaults at (112,16): within 10% of the published 3.7M
    MPMAEConfig atto;
    atto.encoder.image_size = 112;
    atto.encoder.patch_size = 16;
    MPMAE<float> net(atto, default_tasks(), 1);
    const auto counts = net.count_parameters();
    CHECK(counts.encoder > 3.7e6 * 0.9);
    CHECK(counts.encoder < 3.7e6 * 1.1);
    CHECK(counts.total == counts.encoder + counts.decoders);

    // decoder parameters scale with the task list
    auto tasks = default_tasks();
    CHECK(net.decoders().size() == tasks.size());
    std::vector<schema::TaskSpec> one = {tasks[0]};
    MPMAE<float> net1(atto, one, 1);
    std::vector<schema::TaskSpec> two = {tasks[0], tasks[1]};
    MPMAE<float> net2(atto, two, 1);
    const auto c1 = net1.count_parameters(), c2 = net2.count_parameters();
    CHECK(c2.decoders > c1.decoders);
    CHECK(c2.decoders - c1.decoders == net2.params().count("decoders.sentinel1."));

    // zero-width config rejected at construction
    auto bad = tiny_cfg();
    bad.encoder.widths = {0, 8, 8, 8};
    CHECK_THROWS_AS(MPMAE<float>(bad, one, 1), std::invalid_argument);
}

TEST_CASE("encoder gradient check on a width-8 one-block config") {
    auto cfg = tiny_cfg(14, 2, {8, 8, 8, 8}, {1, 1, 1, 1});
    MPMAE<double> net(cfg, default_tasks(), 12);
    auto masks = make_masks(cfg.encoder, 1, 0.5, 77);
    Rng rng(13);
    Tensor<double> x = Tensor<double>::randn({1, 12, 14, 14}, rng);

    auto build = [&] {
        auto xn = make_node(x);
        auto out = net.encode(xn, &masks);
        // scalar: weighted sum of tokens
        Tensor<double> w(out.tokens->value.shape());
        for (std::int64_t i = 0; i < w.numel(); ++i) w[i] = 0.01 * static_cast<double>(i % 13) + 0.1;
        auto target = make_node(Tensor<double>::zeros(out.tokens->value.shape()));
        return ops::masked_mse_loss(out.tokens, target, w).node;
    };
    // spot-check a subset of encoder parameters (every 7th element)
    std::vector<NodeRef<double>> leaves;
    for (const auto& p : net.params().with_prefix("encoder.stage0")) leaves.push_back(p);
    leaves.push_back(net.params().find("encoder.stem.conv.weight"));
    const double err = mpmae::testing::gradcheck(leaves, build, 1e-5, 7);
    CHECK(err < 1e-3);
}

TEST_CASE("unet: shapes, skip count, live skips") {
    EncoderConfig enc;
    enc.image_size = 56;
    enc.patch_size = 8;
    enc.widths = {8, 8, 8, 8};
    enc.depths = {1, 1, 1, 1};
    UNetSeg<double> unet(enc, 9, 21);
    CHECK(unet.skip_count() == 4);

    Rng rng(14);
    auto x = make_node(Tensor<double>::randn({1, 12, 64, 64}, rng));
    auto y = unet.forward(x);
    CHECK(y->value.shape() == Shape{1, 9, 64, 64});

    // zeroing any single skip changes the output
    for (int skip = 0; skip < 4; ++skip) {
        auto y2 = unet.forward(x, skip);
        CHECK(max_abs_diff(y->value, y2->value) > 1e-9);
    }
}
