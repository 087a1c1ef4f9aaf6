#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "vqos/tensor.hpp"

namespace vqos::ops {

/// Weights and hyperparameters of one trainable layer.
///
/// conv2d:           weight [out, in, kh, kw]
/// conv_transpose2d: weight [in, out, kh, kw]
/// dense:            weight [out, in]
/// bias always has one entry per output channel / feature.
struct LayerParams {
  Tensor weight;
  Tensor bias;
  std::size_t stride = 1;
  std::size_t padding = 0;
};

/// C[m, n] += op(A)[m, k] * op(B)[k, n], row-major; op transposes when the
/// flag is set. Single-threaded, so results repeat bit for bit on one
/// machine and build.
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          const double* a, const double* b, double* c);

/// Output extent of a strided, zero-padded convolution along one axis.
std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                            std::size_t padding);
/// Output extent of the matching transposed convolution.
std::size_t conv_transpose_out_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                                      std::size_t padding);

Tensor conv2d(const Tensor& input, const LayerParams& params);
Tensor conv_transpose2d(const Tensor& input, const LayerParams& params);
Tensor dense(const Tensor& input, const LayerParams& params);

Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double alpha);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor softmax(const Tensor& x, std::size_t axis);

Tensor reshape(const Tensor& x, Shape shape);
/// Concatenation along `axis`; all other extents must agree.
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor add(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Mean over the spatial axes: [N,C,H,W] -> [N,C].
Tensor global_avg_pool(const Tensor& x);

/// Lower / upper clamp applied to predictions inside `bce`.
inline constexpr double kBceEpsilon = 1e-7;

/// Mean binary cross-entropy. Predictions are clamped to
/// [kBceEpsilon, 1 - kBceEpsilon]; clamped entries pass no gradient.
Tensor bce(const Tensor& pred, const Tensor& target);
/// Same as above against a constant target for every element.
Tensor bce(const Tensor& pred, double target);
/// Mean softmax cross-entropy of logits [N, K] against class indices.
Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> labels);
Tensor l1(const Tensor& a, const Tensor& b);
Tensor mse(const Tensor& a, const Tensor& b);

}  // namespace vqos::ops
