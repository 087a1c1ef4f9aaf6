#include "vqos/quality.hpp"

#include <cmath>
#include <string>

#include "vqos/tensor.hpp"

namespace vqos {

double psnr(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty()) {
    throw ShapeError("psnr: inputs of " + std::to_string(a.size()) + " and " +
                     std::to_string(b.size()) + " values");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  if (s == 0.0) return kPsnrIdentical;
  return 10.0 * std::log10(static_cast<double>(a.size()) / s);
}

double psnr(const Frame& a, const Frame& b) {
  if (!a.same_shape(b)) throw ShapeError("psnr: frames differ in size");
  return psnr(std::span<const double>(a.pixels), std::span<const double>(b.pixels));
}

}  // namespace vqos
