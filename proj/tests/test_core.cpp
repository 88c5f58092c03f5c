#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>

#include "mpmae/core/ops.hpp"
#include "mpmae/core/serialize.hpp"

using namespace mpmae;

TEST_CASE("tensor basics") {
    auto t = Tensor<float>::from({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(t.numel() == 6);
    CHECK(t.dim(1) == 3);
    auto r = t.reshaped({3, 2});
    r[0] = 9;
    CHECK(t[0] == 9);  // aliasing
    auto c = t.clone();
    c[0] = 1;
    CHECK(t[0] == 9);
    CHECK_THROWS_AS(t.reshaped({4, 2}), std::invalid_argument);
}

TEST_CASE("rng determinism and distribution") {
    Rng a(123), b(123), c(124);
    bool same = true, diff = false;
    for (int i = 0; i < 100; ++i) {
        auto x = a.next_u64();
        same &= (x == b.next_u64());
        diff |= (x != c.next_u64());
    }
    CHECK(same);
    CHECK(diff);

    Rng r(7);
    double acc = 0, acc2 = 0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        double v = r.normal();
        acc += v;
        acc2 += v * v;
    }
    CHECK(std::abs(acc / n) < 0.01);
    CHECK(std::abs(acc2 / n - 1.0) < 0.02);
}

TEST_CASE("parallel_for covers range once") {
    std::vector<int> hits(1000, 0);
    parallel_for(1000, [&](std::int64_t s, std::int64_t e) {
        for (std::int64_t i = s; i < e; ++i) hits[static_cast<std::size_t>(i)]++;
    });
    for (int h : hits) CHECK(h == 1);
}

TEST_CASE("parallel_chunks is thread-count independent") {
    std::vector<double> vals(1003);
    Rng r(5);
    for (auto& v : vals) v = r.normal();
    auto run = [&] {
        std::vector<double> partial(8, 0.0);
        parallel_chunks(static_cast<std::int64_t>(vals.size()), 8,
                        [&](int c, std::int64_t s, std::int64_t e) {
                            for (std::int64_t i = s; i < e; ++i)
                                partial[static_cast<std::size_t>(c)] += vals[static_cast<std::size_t>(i)];
                        });
        double total = 0;
        for (double p : partial) total += p;
        return total;
    };
    const double t1 = run();
    ThreadPool::instance().set_size(1);
    const double t2 = run();
    ThreadPool::instance().set_size(4);
    const double t3 = run();
    CHECK(t1 == t2);
    CHECK(t1 == t3);
}

TEST_CASE("gemm against naive") {
    Rng r(3);
    const int M = 7, N = 5, K = 9;
    std::vector<double> A(M * K), B(K * N), C(M * N, 0.0), Cref(M * N, 0.0);
    for (auto& v : A) v = r.normal();
    for (auto& v : B) v = r.normal();
    gemm<double>(false, false, M, N, K, 1.0, A.data(), K, B.data(), N, 0.0, C.data(), N);
    for (int i = 0; i < M; ++i)
        for (int j = 0; j < N; ++j)
            for (int k = 0; k < K; ++k) Cref[i * N + j] += A[i * K + k] * B[k * N + j];
    for (int i = 0; i < M * N; ++i) CHECK(C[i] == doctest::Approx(Cref[i]).epsilon(1e-12));
}

TEST_CASE("tensor archive round trip and integrity") {
    TensorArchive a;
    a.meta = "{\"purpose\":\"test\"}";
    Rng r(11);
    a.put("w", Tensor<float>::randn({3, 4}, r));
    a.put("labels", Tensor<std::int32_t>::from({4}, {0, 1, 2, 3}));
    const std::string path = "test_archive.mpck";
    a.save(path);

    auto b = TensorArchive::load(path);
    CHECK(b.meta == a.meta);
    auto w0 = a.get<float>("w");
    auto w1 = b.get<float>("w");
    for (std::int64_t i = 0; i < w0.numel(); ++i) CHECK(w0[i] == w1[i]);
    CHECK(b.get<std::int32_t>("labels")[2] == 2);
    CHECK_THROWS_AS(b.get<float>("nope"), FormatError);
    CHECK_THROWS_AS(b.get<float>("labels"), FormatError);

    // flip one payload byte -> integrity error
    {
        std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
        f.seekp(40);
        char c;
        f.seekg(40);
        f.get(c);
        f.seekp(40);
        c = static_cast<char>(c ^ 0x5A);
        f.put(c);
    }
    CHECK_THROWS_AS(TensorArchive::load(path), IntegrityError);
    std::remove(path.c_str());
}
