#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace vqos {

/// Image with values in [0, 1], stored channel-major (plane after plane),
/// each plane row-major.
struct Frame {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 1;
  std::vector<double> pixels;

  Frame() = default;
  Frame(std::size_t w, std::size_t h, std::size_t c = 1, double fill = 0.0)
      : width(w), height(h), channels(c), pixels(w * h * c, fill) {}

  std::size_t size() const { return pixels.size(); }
  double& at(std::size_t c, std::size_t y, std::size_t x) {
    return pixels[(c * height + y) * width + x];
  }
  double at(std::size_t c, std::size_t y, std::size_t x) const {
    return pixels[(c * height + y) * width + x];
  }
  bool same_shape(const Frame& o) const {
    return width == o.width && height == o.height && channels == o.channels;
  }
  bool operator==(const Frame&) const = default;
};

/// Malformed image file or stream.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Checks dimensions and that every pixel lies in [0, 1].
void validate_frame(const Frame& f);

/// floor(p * 255 + 0.5), clamped to [0, 255].
std::uint8_t to_byte(double p);
inline double from_byte(std::uint8_t v) { return static_cast<double>(v) / 255.0; }

/// Rounds every pixel onto the 8-bit grid.
Frame quantize_8bit(const Frame& f);

/// Binary PGM (P5, maxval 255) for one channel, PPM (P6) for three.
std::vector<std::uint8_t> encode_pnm(const Frame& f);
Frame decode_pnm(const std::vector<std::uint8_t>& bytes);

void write_pnm(const std::filesystem::path& path, const Frame& f);
Frame read_pnm(const std::filesystem::path& path);

}  // namespace vqos
