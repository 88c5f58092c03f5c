#pragma once

#include <Eigen/Core>
#include <cstdint>

namespace mpmae {

// C(MxN) = alpha * op(A) * op(B) + beta * C, all row-major contiguous.
// Eigen runs single-threaded here; parallelism is applied by callers over
// independent output slices so results are thread-count independent.
template <typename T>
void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k, T alpha,
          const T* a, std::int64_t lda, const T* b, std::int64_t ldb, T beta, T* c, std::int64_t ldc) {
    using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using Map = Eigen::Map<Mat, 0, Eigen::OuterStride<>>;
    using CMap = Eigen::Map<const Mat, 0, Eigen::OuterStride<>>;

    CMap A(a, trans_a ? k : m, trans_a ? m : k, Eigen::OuterStride<>(lda));
    CMap B(b, trans_b ? n : k, trans_b ? k : n, Eigen::OuterStride<>(ldb));
    Map C(c, m, n, Eigen::OuterStride<>(ldc));

    if (beta == T(0)) {
        if (!trans_a && !trans_b)
            C.noalias() = alpha * (A * B);
        else if (trans_a && !trans_b)
            C.noalias() = alpha * (A.transpose() * B);
        else if (!trans_a && trans_b)
            C.noalias() = alpha * (A * B.transpose());
        else
            C.noalias() = alpha * (A.transpose() * B.transpose());
    } else {
        if (beta != T(1)) C *= beta;
        if (!trans_a && !trans_b)
            C.noalias() += alpha * (A * B);
        else if (trans_a && !trans_b)
            C.noalias() += alpha * (A.transpose() * B);
        else if (!trans_a && trans_b)
            C.noalias() += alpha * (A * B.transpose());
        else
            C.noalias() += alpha * (A.transpose() * B.transpose());
    }
}

}  // namespace mpmae
