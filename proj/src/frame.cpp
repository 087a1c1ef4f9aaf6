#include "vqos/frame.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

namespace vqos {

void validate_frame(const Frame& f) {
  if (f.width == 0 || f.height == 0 || f.channels == 0) {
    throw std::invalid_argument("frame has a zero dimension");
  }
  if (f.pixels.size() != f.width * f.height * f.channels) {
    throw std::invalid_argument("frame pixel count does not match " + std::to_string(f.width) +
                                "x" + std::to_string(f.height) + "x" +
                                std::to_string(f.channels));
  }
  for (double p : f.pixels) {
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("frame pixel outside [0,1]");
  }
}

std::uint8_t to_byte(double p) {
  const double v = std::floor(p * 255.0 + 0.5);
  return static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
}

Frame quantize_8bit(const Frame& f) {
  Frame out = f;
  for (auto& p : out.pixels) p = from_byte(to_byte(p));
  return out;
}

std::vector<std::uint8_t> encode_pnm(const Frame& f) {
  validate_frame(f);
  if (f.channels != 1 && f.channels != 3) {
    throw FormatError("PNM output supports 1 or 3 channels, got " + std::to_string(f.channels));
  }
  const std::string header = std::string(f.channels == 1 ? "P5" : "P6") + "\n" +
                             std::to_string(f.width) + " " + std::to_string(f.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + f.size());
  const std::size_t plane = f.width * f.height;
  // PNM interleaves channels per pixel.
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t c = 0; c < f.channels; ++c) out.push_back(to_byte(f.pixels[c * plane + i]));
  }
  return out;
}

namespace {

class Cursor {
 public:
  explicit Cursor(const std::vector<std::uint8_t>& b) : bytes_(b) {}

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::size_t read_uint(const char* what) {
    skip_space_and_comments();
    std::size_t v = 0;
    std::size_t digits = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      v = v * 10 + (bytes_[pos_++] - '0');
      if (++digits > 9) throw FormatError(std::string("PNM ") + what + " too large");
    }
    if (digits == 0) throw FormatError(std::string("PNM header: expected ") + what);
    return v;
  }

  std::size_t pos_ = 0;
  const std::vector<std::uint8_t>& bytes_;
};

}  // namespace

Frame decode_pnm(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    throw FormatError("not a binary PGM/PPM file (expected P5 or P6 magic)");
  }
  const std::size_t channels = bytes[1] == '5' ? 1 : 3;
  Cursor cur(bytes);
  cur.pos_ = 2;
  const std::size_t w = cur.read_uint("width");
  const std::size_t h = cur.read_uint("height");
  const std::size_t maxval = cur.read_uint("maxval");
  if (w == 0 || h == 0) throw FormatError("PNM has zero width or height");
  if (maxval != 255) throw FormatError("PNM maxval must be 255, got " + std::to_string(maxval));
  if (cur.pos_ >= bytes.size() || !std::isspace(bytes[cur.pos_])) {
    throw FormatError("PNM header not terminated by whitespace");
  }
  ++cur.pos_;
  const std::size_t need = w * h * channels;
  if (bytes.size() - cur.pos_ < need) {
    throw FormatError("PNM truncated: expected " + std::to_string(need) + " pixel bytes, found " +
                      std::to_string(bytes.size() - cur.pos_));
  }
  Frame f(w, h, channels);
  const std::size_t plane = w * h;
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t c = 0; c < channels; ++c) {
      f.pixels[c * plane + i] = from_byte(bytes[cur.pos_ + i * channels + c]);
    }
  }
  return f;
}

void write_pnm(const std::filesystem::path& path, const Frame& f) {
  const auto bytes = encode_pnm(f);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

Frame read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_pnm(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace vqos
