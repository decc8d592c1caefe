#include "dxlm/numcore/gemm.hpp"

#include <cblas.h>

#include <Eigen/Core>

namespace dxlm::blas {

namespace {
CBLAS_TRANSPOSE flag(bool t) { return t ? CblasTrans : CblasNoTrans; }
}  // namespace

template <>
void gemm<float>(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
                 float alpha, const float* a, std::size_t lda, const float* b, std::size_t ldb,
                 float beta, float* c, std::size_t ldc) {
  cblas_sgemm(CblasRowMajor, flag(trans_a), flag(trans_b), static_cast<int>(m),
              static_cast<int>(n), static_cast<int>(k), alpha, a, static_cast<int>(lda), b,
              static_cast<int>(ldb), beta, c, static_cast<int>(ldc));
}

// OpenBLAS 0.3.20's Cooperlake dgemm kernel returns wrong products once N
// reaches about 200. Double precision goes through Eigen instead.
template <>
void gemm<double>(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
                  double alpha, const double* a, std::size_t lda, const double* b,
                  std::size_t ldb, double beta, double* c, std::size_t ldc) {
  using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Stride = Eigen::OuterStride<>;
  const auto rows = [](bool t, std::size_t r, std::size_t cl) { return static_cast<Eigen::Index>(t ? cl : r); };
  const auto cols = [](bool t, std::size_t r, std::size_t cl) { return static_cast<Eigen::Index>(t ? r : cl); };
  Eigen::Map<const Mat, 0, Stride> A(a, rows(trans_a, m, k), cols(trans_a, m, k),
                                     Stride(static_cast<Eigen::Index>(lda)));
  Eigen::Map<const Mat, 0, Stride> B(b, rows(trans_b, k, n), cols(trans_b, k, n),
                                     Stride(static_cast<Eigen::Index>(ldb)));
  Eigen::Map<Mat, 0, Stride> C(c, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n),
                               Stride(static_cast<Eigen::Index>(ldc)));
  if (beta == 0.0) {
    C.setZero();
  } else if (beta != 1.0) {
    C *= beta;
  }
  if (trans_a && trans_b) {
    C.noalias() += alpha * A.transpose() * B.transpose();
  } else if (trans_a) {
    C.noalias() += alpha * A.transpose() * B;
  } else if (trans_b) {
    C.noalias() += alpha * A * B.transpose();
  } else {
    C.noalias() += alpha * A * B;
  }
}

}  // namespace dxlm::blas
