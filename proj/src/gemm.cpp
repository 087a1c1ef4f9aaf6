#include <Eigen/Core>

#include "vqos/ops.hpp"

namespace vqos::ops {
namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;

// Eigen switches to vector or coefficient kernels for thin or tiny products,
// and those peel loops by pointer alignment, so their sums depend on where
// the data sits. Such shapes use a plain loop; the packed kernel used for
// the rest copies its operands first and does not have this issue.
bool use_plain_loop(std::size_t m, std::size_t n, std::size_t k) {
  return m == 1 || n == 1 || m + n + k < 20;
}

void plain_gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
                const double* a, const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) {
        acc += (trans_a ? a[p * m + i] : a[i * k + p]) * (trans_b ? b[j * k + p] : b[p * n + j]);
      }
      c[i * n + j] += acc;
    }
  }
}

}  // namespace

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const double* a,
          const double* b, double* c) {
  if (m == 0 || n == 0 || k == 0) return;
  if (use_plain_loop(m, n, k)) {
    plain_gemm(trans_a, trans_b, m, n, k, a, b, c);
    return;
  }
  const auto em = static_cast<Eigen::Index>(m);
  const auto en = static_cast<Eigen::Index>(n);
  const auto ek = static_cast<Eigen::Index>(k);
  Eigen::Map<RowMajor> cm(c, em, en);
  if (!trans_a && !trans_b) {
    cm.noalias() += ConstMap(a, em, ek) * ConstMap(b, ek, en);
  } else if (!trans_a) {
    cm.noalias() += ConstMap(a, em, ek) * ConstMap(b, en, ek).transpose();
  } else if (!trans_b) {
    cm.noalias() += ConstMap(a, ek, em).transpose() * ConstMap(b, ek, en);
  } else {
    cm.noalias() += ConstMap(a, ek, em).transpose() * ConstMap(b, en, ek).transpose();
  }
}

}  // namespace vqos::ops
