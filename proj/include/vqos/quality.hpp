#pragma once

#include <limits>
#include <span>

#include "vqos/frame.hpp"

namespace vqos {

/// Returned by psnr() for identical inputs.
inline constexpr double kPsnrIdentical = std::numeric_limits<double>::infinity();

/// 10 * log10(1 / MSE) for signals in [0, 1].
double psnr(std::span<const double> a, std::span<const double> b);
double psnr(const Frame& a, const Frame& b);

}  // namespace vqos
