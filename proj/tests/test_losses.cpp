#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mpmae/loss/losses.hpp"
#include "support/fixtures.hpp"

using namespace mpmae;
using namespace mpmae::loss;

namespace {

struct Fixture {
    schema::ModalityRegistry reg = schema::build_modality_registry({16, 14, 16});
    std::vector<schema::TaskSpec> tasks = schema::build_default_tasks(reg);
    model::MPMAEConfig cfg;
    std::unique_ptr<model::MPMAE<double>> net;
    mask::PatchGrid grid{16, 4};  // 4x4 patch grid (16 patches)

    Fixture() {
        cfg.encoder.image_size = 16;
        cfg.encoder.patch_size = 4;
        cfg.encoder.widths = {6, 6, 8, 8};
        cfg.encoder.depths = {1, 1, 1, 1};
        cfg.decoder_width = 8;
        net = std::make_unique<model::MPMAE<double>>(cfg, tasks, 33);
    }

    PretrainBatch<double> make_batch(std::int64_t n, std::uint64_t seed, double ratio = 0.5) {
        std::vector<schema::MultiModalSample> samples;
        auto stats = mpmae::testing::make_stats(reg, 0.0, 1.0);
        for (std::int64_t i = 0; i < n; ++i)
            samples.push_back(
                schema::standardize_sample(mpmae::testing::make_valid_sample(reg, seed + i), stats, reg));
        Rng rng(seed + 99);
        std::vector<mask::PatchMask> masks;
        for (std::int64_t i = 0; i < n; ++i) masks.push_back(mask::sample_mask(grid, ratio, rng));
        return build_pretrain_batch<double>(samples, tasks, grid, std::move(masks));
    }
};

NodeRef<double> make_s(std::int64_t t, double v = 0.0, bool grad = true) {
    auto s = make_node(Tensor<double>::full({t}, v), grad);
    s->name = "uncertainty.s";
    return s;
}

}  // namespace

TEST_CASE("masked mse: visible errors contribute nothing") {
    auto pred = make_node(Tensor<double>::from({1, 1, 2, 2}, {5, 5, 1, 3}), true);
    auto targ = make_node(Tensor<double>::from({1, 1, 2, 2}, {0, 0, 0, 0}));
    // first two pixels visible (weight 0) with large errors
    Tensor<double> w = Tensor<double>::from({1, 1, 2, 2}, {0, 0, 1, 1});
    auto l = ops::masked_mse_loss(pred, targ, w);
    CHECK(l.node->value[0] == doctest::Approx(5.0));  // (1+9)/2
    auto exact = make_node(pred->value.clone(), true);
    auto l2 = ops::masked_mse_loss(exact, pred, w);
    CHECK(l2.node->value[0] == 0.0);
}

TEST_CASE("masked cross entropy: ignore label and loop oracle") {
    Rng rng(3);
    auto logits = make_node(Tensor<double>::randn({2, 6, 4, 4}, rng), true);
    Tensor<std::int32_t> labels({2, 1, 4, 4});
    Tensor<double> m({2, 1, 4, 4});
    for (std::int64_t i = 0; i < 32; ++i) {
        labels[i] = static_cast<std::int32_t>(rng.uniform_int(6));
        m[i] = rng.uniform() < 0.7 ? 1.0 : 0.0;
    }
    labels[3] = 0;
    m[3] = 1.0;  // ignored but masked
    auto l = ops::masked_ce_loss(logits, labels, m, 0);

    // explicit loop oracle over the non-ignored masked subset
    double acc = 0;
    int cnt = 0;
    for (std::int64_t n = 0; n < 2; ++n)
        for (std::int64_t i = 0; i < 16; ++i) {
            if (m[n * 16 + i] == 0.0 || labels[n * 16 + i] == 0) continue;
            double z = 0, mx = -1e30;
            for (int k = 0; k < 6; ++k) mx = std::max(mx, logits->value[(n * 6 + k) * 16 + i]);
            for (int k = 0; k < 6; ++k) z += std::exp(logits->value[(n * 6 + k) * 16 + i] - mx);
            acc += std::log(z) + mx - logits->value[(n * 6 + labels[n * 16 + i]) * 16 + i];
            ++cnt;
        }
    CHECK(l.count == cnt);
    CHECK(l.node->value[0] == doctest::Approx(acc / cnt).epsilon(1e-12));

    // one-hot-confident scores drive the loss to zero
    auto conf = make_node(Tensor<double>::zeros({1, 3, 1, 1}));
    conf->value[1] = 50.0;
    Tensor<std::int32_t> lab({1, 1, 1, 1});
    lab[0] = 1;
    Tensor<double> m1 = Tensor<double>::full({1, 1, 1, 1}, 1.0);
    CHECK(ops::masked_ce_loss(conf, lab, m1, -1).node->value[0] < 1e-12);

    // all masked pixels ignored -> skipped
    Tensor<std::int32_t> allz({2, 1, 4, 4});
    auto skip = ops::masked_ce_loss(logits, allz, m, 0);
    CHECK(skip.count == 0);
}

TEST_CASE("image-level losses: analytic cases") {
    // biome uniform scores -> log 14
    auto logits = make_node(Tensor<double>::zeros({3, 14}), true);
    Tensor<std::int32_t> lab({3});
    lab[0] = 2;
    lab[1] = 7;
    lab[2] = 13;
    auto l = ops::image_ce_loss(logits, lab);
    CHECK(l.node->value[0] == doctest::Approx(std::log(14.0)).epsilon(1e-12));

    // latitude pred (0,1) vs target (1,0) -> MSE of 1
    auto pred = make_node(Tensor<double>::from({1, 2}, {0, 1}), true);
    auto targ = make_node(Tensor<double>::from({1, 2}, {1, 0}));
    Tensor<double> valid = Tensor<double>::full({1}, 1.0);
    auto l2 = ops::image_mse_loss(pred, targ, valid);
    CHECK(l2.node->value[0] == doctest::Approx(1.0));

    // exact prediction -> 0
    auto l3 = ops::image_mse_loss(pred, pred, valid);
    CHECK(l3.node->value[0] == 0.0);
}

TEST_CASE("aggregate: equal mode is the s=0 specialization") {
    Fixture f;
    auto batch1 = f.make_batch(2, 100);
    auto batch2 = f.make_batch(2, 100);
    auto s = make_s(static_cast<std::int64_t>(f.tasks.size()));
    auto eq = multitask_pretrain_loss(*f.net, batch1, f.tasks, s, LossMode::equal);
    auto un = multitask_pretrain_loss(*f.net, batch2, f.tasks, s, LossMode::uncertainty);
    CHECK(eq.total->value[0] == doctest::Approx(un.total->value[0]).epsilon(1e-12));
    for (std::size_t t = 0; t < f.tasks.size(); ++t)
        CHECK(eq.tasks[t].raw_value == doctest::Approx(un.tasks[t].raw_value).epsilon(1e-12));
}

TEST_CASE("aggregate: closed-form single task and fixed point") {
    // L = 2, s = log 4: exp(-s)*L + s/2 = 0.5 + log 2
    std::vector<TaskLossResult<double>> results(1);
    results[0].task_id = "t";
    results[0].raw = make_node(Tensor<double>::full({1}, 2.0), true);
    results[0].raw_value = 2.0;
    results[0].skipped = false;
    auto s = make_s(1, std::log(4.0));
    auto total = aggregate_multitask(results, s, LossMode::uncertainty);
    CHECK(total->value[0] == doctest::Approx(0.5 + std::log(2.0)).epsilon(1e-9));
    CHECK(std::abs(total->value[0] - 1.1931471805599453) < 1e-6);

    // d total / d s = -exp(-s) L + 1/2; zero at sigma^2 = 2L
    backward(total);
    CHECK(s->grad[0] == doctest::Approx(-std::exp(-std::log(4.0)) * 2.0 + 0.5).epsilon(1e-12));
    auto s_star = make_s(1, std::log(2.0 * 2.0));
    std::vector<TaskLossResult<double>> r2(1);
    r2[0] = results[0];
    r2[0].raw = make_node(Tensor<double>::full({1}, 2.0), true);
    auto t2 = aggregate_multitask(r2, s_star, LossMode::uncertainty);
    backward(t2);
    CHECK(std::abs(s_star->grad[0]) < 1e-12);
}

TEST_CASE("each s_t receives gradient only from its own task") {
    Fixture f;
    auto batch = f.make_batch(2, 200);
    auto s = make_s(static_cast<std::int64_t>(f.tasks.size()), 0.3);
    auto out = multitask_pretrain_loss(*f.net, batch, f.tasks, s, LossMode::uncertainty);
    backward(out.total);
    for (std::size_t t = 0; t < f.tasks.size(); ++t) {
        const double expect = -std::exp(-0.3) * out.tasks[t].raw_value + 0.5;
        CHECK(s->grad[static_cast<std::int64_t>(t)] == doctest::Approx(expect).epsilon(1e-9));
    }
}

TEST_CASE("task order does not change per-task losses") {
    Fixture f;
    auto batch1 = f.make_batch(2, 300);
    auto batch2 = f.make_batch(2, 300);
    auto s = make_s(static_cast<std::int64_t>(f.tasks.size()));
    auto tasks_rev = f.tasks;
    std::reverse(tasks_rev.begin(), tasks_rev.end());
    auto batch_rev = build_pretrain_batch<double>(
        [&] {
            std::vector<schema::MultiModalSample> samples;
            auto stats = mpmae::testing::make_stats(f.reg, 0.0, 1.0);
            for (std::int64_t i = 0; i < 2; ++i)
                samples.push_back(schema::standardize_sample(
                    mpmae::testing::make_valid_sample(f.reg, 300 + i), stats, f.reg));
            return samples;
        }(),
        tasks_rev, f.grid, batch1.masks);

    auto a = multitask_pretrain_loss(*f.net, batch1, f.tasks, s, LossMode::equal);
    auto s2 = make_s(static_cast<std::int64_t>(f.tasks.size()));
    auto b = multitask_pretrain_loss(*f.net, batch_rev, tasks_rev, s2, LossMode::equal);
    CHECK(a.total->value[0] == doctest::Approx(b.total->value[0]).epsilon(1e-12));
    for (const auto& ra : a.tasks) {
        bool found = false;
        for (const auto& rb : b.tasks)
            if (rb.task_id == ra.task_id) {
                CHECK(ra.raw_value == doctest::Approx(rb.raw_value).epsilon(1e-12));
                found = true;
            }
        CHECK(found);
    }
}

TEST_CASE("gradient isolation: visible targets and masked inputs get zero gradient") {
    Fixture f;
    auto batch = f.make_batch(2, 400, 0.5);
    auto s = make_s(static_cast<std::int64_t>(f.tasks.size()));
    auto out = multitask_pretrain_loss(*f.net, batch, f.tasks, s, LossMode::uncertainty,
                                       /*input_requires_grad=*/true, /*targets_require_grad=*/true);
    backward(out.total);

    const int S = 16;
    for (std::int64_t n = 0; n < 2; ++n) {
        auto px = mask::upsample_mask_to_pixels(batch.masks[static_cast<std::size_t>(n)], f.grid);
        // visible-patch target gradients are exactly zero for pixel tasks
        for (const auto& [task_id, tnode] : out.target_nodes) {
            if (tnode->value.rank() != 4) continue;
            const std::int64_t C = tnode->value.dim(1);
            for (std::int64_t c = 0; c < C; ++c)
                for (std::int64_t i = 0; i < S * S; ++i)
                    if (!px[i]) CHECK(tnode->grad[(n * C + c) * S * S + i] == 0.0);
        }
        // input gradients inside masked patches are exactly zero
        for (std::int64_t c = 0; c < 12; ++c)
            for (std::int64_t i = 0; i < S * S; ++i)
                if (px[i]) CHECK(out.input->grad[(n * 12 + c) * S * S + i] == 0.0);
    }

    // and the complementary directions are live
    double vis_in = 0, masked_tgt = 0;
    for (std::int64_t i = 0; i < out.input->grad.numel(); ++i) vis_in += std::abs(out.input->grad[i]);
    for (const auto& [task_id, tnode] : out.target_nodes)
        for (std::int64_t i = 0; i < tnode->grad.numel(); ++i) masked_tgt += std::abs(tnode->grad[i]);
    CHECK(vis_in > 0.0);
    CHECK(masked_tgt > 0.0);
}

TEST_CASE("skipped tasks leave their s_t untouched") {
    Fixture f;
    auto batch = f.make_batch(2, 500);
    // force dynamic_world to skip: all labels no-data
    batch.label_targets["dynamic_world"].fill(0);
    auto s = make_s(static_cast<std::int64_t>(f.tasks.size()), 0.1);
    auto out = multitask_pretrain_loss(*f.net, batch, f.tasks, s, LossMode::uncertainty);
    backward(out.total);
    for (std::size_t t = 0; t < f.tasks.size(); ++t) {
        if (f.tasks[t].task_id == "dynamic_world") {
            CHECK(out.tasks[t].skipped);
            CHECK(s->grad[static_cast<std::int64_t>(t)] == 0.0);
        } else {
            CHECK_FALSE(out.tasks[t].skipped);
        }
    }
}
