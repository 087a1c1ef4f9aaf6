#include "vqos/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace vqos::ops {
namespace {

using detail::Node;

void require_finite(std::span<const double> v, const char* op) {
  for (double x : v) {
    if (!std::isfinite(x)) throw NumericError(std::string(op) + ": non-finite input");
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()) + " differ");
  }
}

struct ConvGeometry {
  std::size_t channels, height, width;  // image side
  std::size_t kh, kw, stride, pad;
  std::size_t out_h, out_w;             // patch-grid side
};

// cols[(c*kh + i)*kw + j][oy*out_w + ox] = img[c][oy*s - p + i][ox*s - p + j]
void im2col(const double* img, const ConvGeometry& g, double* cols) {
  const std::size_t patches = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        double* row = cols + ((c * g.kh + i) * g.kw + j) * patches;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto y = static_cast<std::ptrdiff_t>(oy * g.stride + i) -
                         static_cast<std::ptrdiff_t>(g.pad);
          double* dst = row + oy * g.out_w;
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(g.height)) {
            std::fill(dst, dst + g.out_w, 0.0);
            continue;
          }
          const double* src = img + (c * g.height + static_cast<std::size_t>(y)) * g.width;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const auto x = static_cast<std::ptrdiff_t>(ox * g.stride + j) -
                           static_cast<std::ptrdiff_t>(g.pad);
            dst[ox] = (x < 0 || x >= static_cast<std::ptrdiff_t>(g.width))
                          ? 0.0
                          : src[static_cast<std::size_t>(x)];
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-add columns back into the image.
void col2im(const double* cols, const ConvGeometry& g, double* img) {
  const std::size_t patches = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        const double* row = cols + ((c * g.kh + i) * g.kw + j) * patches;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto y = static_cast<std::ptrdiff_t>(oy * g.stride + i) -
                         static_cast<std::ptrdiff_t>(g.pad);
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(g.height)) continue;
          double* dst = img + (c * g.height + static_cast<std::size_t>(y)) * g.width;
          const double* src = row + oy * g.out_w;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const auto x = static_cast<std::ptrdiff_t>(ox * g.stride + j) -
                           static_cast<std::ptrdiff_t>(g.pad);
            if (x >= 0 && x < static_cast<std::ptrdiff_t>(g.width)) {
              dst[static_cast<std::size_t>(x)] += src[ox];
            }
          }
        }
      }
    }
  }
}

void check_layer(const LayerParams& p, std::size_t weight_rank, const char* op) {
  if (!p.weight.defined() || !p.bias.defined()) {
    throw ShapeError(std::string(op) + ": layer parameters not initialized");
  }
  if (p.weight.rank() != weight_rank) {
    throw ShapeError(std::string(op) + ": weight must have rank " + std::to_string(weight_rank) +
                     ", got " + shape_str(p.weight.shape()));
  }
  if (p.stride == 0) throw ShapeError(std::string(op) + ": stride must be >= 1");
}

template <typename F, typename D>
Tensor elementwise(const Tensor& x, const char* name, F f, D df_from_xy) {
  require_finite(x.data(), name);
  std::vector<double> out(x.numel());
  auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  return make_result(x.shape(), std::move(out), {x}, [df_from_xy](Node& self) {
    auto& src = *self.inputs[0];
    if (!src.requires_grad) return;
    auto& g = src.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      g[i] += self.grad[i] * df_from_xy(src.value[i], self.value[i]);
    }
  });
}

}  // namespace

std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                            std::size_t padding) {
  const std::size_t padded = in + 2 * padding;
  if (stride == 0 || padded < kernel) return 0;
  return (padded - kernel) / stride + 1;
}

std::size_t conv_transpose_out_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                                      std::size_t padding) {
  const std::size_t full = (in - 1) * stride + kernel;
  return full > 2 * padding ? full - 2 * padding : 0;
}

Tensor conv2d(const Tensor& input, const LayerParams& params) {
  check_layer(params, 4, "conv2d");
  if (input.rank() != 4) {
    throw ShapeError("conv2d: input must be [N,C,H,W], got " + shape_str(input.shape()));
  }
  const auto& ws = params.weight.shape();
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t k = ws[0], kh = ws[2], kw = ws[3];
  if (ws[1] != c) {
    throw ShapeError("conv2d: input " + shape_str(input.shape()) + " has " + std::to_string(c) +
                     " channels but kernel " + shape_str(ws) + " expects " +
                     std::to_string(ws[1]));
  }
  if (params.bias.numel() != k) {
    throw ShapeError("conv2d: bias of length " + std::to_string(params.bias.numel()) +
                     " for " + std::to_string(k) + " output channels");
  }
  const ConvGeometry g{c, h, w, kh, kw, params.stride, params.padding,
                       conv_out_extent(h, kh, params.stride, params.padding),
                       conv_out_extent(w, kw, params.stride, params.padding)};
  if (g.out_h == 0 || g.out_w == 0) {
    throw ShapeError("conv2d: kernel " + shape_str(ws) + " with stride " +
                     std::to_string(params.stride) + ", padding " +
                     std::to_string(params.padding) + " leaves no output for input " +
                     shape_str(input.shape()));
  }

  const std::size_t patches = g.out_h * g.out_w, ckk = c * kh * kw;
  std::vector<double> out(n * k * patches);
  std::vector<double> cols(ckk * patches);
  const double* x = input.data().data();
  const double* wt = params.weight.data().data();
  const double* b = params.bias.data().data();
  for (std::size_t s = 0; s < n; ++s) {
    im2col(x + s * c * h * w, g, cols.data());
    double* o = out.data() + s * k * patches;
    for (std::size_t ch = 0; ch < k; ++ch) std::fill(o + ch * patches, o + (ch + 1) * patches, b[ch]);
    gemm(false, false, k, patches, ckk, wt, cols.data(), o);
  }

  return make_result(
      {n, k, g.out_h, g.out_w}, std::move(out), {input, params.weight, params.bias},
      [g, n, k](Node& self) {
        auto& xin = *self.inputs[0];
        auto& wn = *self.inputs[1];
        auto& bn = *self.inputs[2];
        const std::size_t patches = g.out_h * g.out_w, ckk = g.channels * g.kh * g.kw;
        const std::size_t img = g.channels * g.height * g.width;
        std::vector<double> cols(ckk * patches);
        std::vector<double> dcols(ckk * patches);
        for (std::size_t s = 0; s < n; ++s) {
          const double* dy = self.grad.data() + s * k * patches;
          if (wn.requires_grad) {
            im2col(xin.value.data() + s * img, g, cols.data());
            gemm(false, true, k, ckk, patches, dy, cols.data(), wn.grad_buffer().data());
          }
          if (bn.requires_grad) {
            auto& db = bn.grad_buffer();
            for (std::size_t ch = 0; ch < k; ++ch) {
              const double* row = dy + ch * patches;
              db[ch] += std::accumulate(row, row + patches, 0.0);
            }
          }
          if (xin.requires_grad) {
            std::fill(dcols.begin(), dcols.end(), 0.0);
            gemm(true, false, ckk, patches, k, wn.value.data(), dy, dcols.data());
            col2im(dcols.data(), g, xin.grad_buffer().data() + s * img);
          }
        }
      });
}

Tensor conv_transpose2d(const Tensor& input, const LayerParams& params) {
  check_layer(params, 4, "conv_transpose2d");
  if (input.rank() != 4) {
    throw ShapeError("conv_transpose2d: input must be [N,C,H,W], got " +
                     shape_str(input.shape()));
  }
  const auto& ws = params.weight.shape();
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t k = ws[1], kh = ws[2], kw = ws[3];
  if (ws[0] != c) {
    throw ShapeError("conv_transpose2d: input " + shape_str(input.shape()) + " has " +
                     std::to_string(c) + " channels but kernel " + shape_str(ws) +
                     " expects " + std::to_string(ws[0]));
  }
  if (params.bias.numel() != k) {
    throw ShapeError("conv_transpose2d: bias of length " + std::to_string(params.bias.numel()) +
                     " for " + std::to_string(k) + " output channels");
  }
  const std::size_t oh = conv_transpose_out_extent(h, kh, params.stride, params.padding);
  const std::size_t ow = conv_transpose_out_extent(w, kw, params.stride, params.padding);
  if (oh == 0 || ow == 0) {
    throw ShapeError("conv_transpose2d: padding " + std::to_string(params.padding) +
                     " leaves no output for input " + shape_str(input.shape()));
  }
  // The output image is the "image" side of a conv whose patch grid is the input.
  const ConvGeometry g{k, oh, ow, kh, kw, params.stride, params.padding, h, w};
  if (conv_out_extent(oh, kh, params.stride, params.padding) != h ||
      conv_out_extent(ow, kw, params.stride, params.padding) != w) {
    throw ShapeError("conv_transpose2d: geometry not invertible for input " +
                     shape_str(input.shape()));
  }

  const std::size_t patches = h * w, kkk = k * kh * kw, out_img = k * oh * ow;
  std::vector<double> out(n * out_img);
  std::vector<double> cols(kkk * patches);
  const double* x = input.data().data();
  const double* wt = params.weight.data().data();
  const double* b = params.bias.data().data();
  for (std::size_t s = 0; s < n; ++s) {
    std::fill(cols.begin(), cols.end(), 0.0);
    gemm(true, false, kkk, patches, c, wt, x + s * c * patches, cols.data());
    double* o = out.data() + s * out_img;
    col2im(cols.data(), g, o);
    for (std::size_t ch = 0; ch < k; ++ch) {
      double* plane = o + ch * oh * ow;
      for (std::size_t i = 0; i < oh * ow; ++i) plane[i] += b[ch];
    }
  }

  return make_result(
      {n, k, oh, ow}, std::move(out), {input, params.weight, params.bias},
      [g, n, c](Node& self) {
        auto& xin = *self.inputs[0];
        auto& wn = *self.inputs[1];
        auto& bn = *self.inputs[2];
        const std::size_t patches = g.out_h * g.out_w, kkk = g.channels * g.kh * g.kw;
        const std::size_t out_img = g.channels * g.height * g.width;
        std::vector<double> dcols(kkk * patches);
        for (std::size_t s = 0; s < n; ++s) {
          const double* dy = self.grad.data() + s * out_img;
          im2col(dy, g, dcols.data());
          if (xin.requires_grad) {
            gemm(false, false, c, patches, kkk, wn.value.data(), dcols.data(),
                 xin.grad_buffer().data() + s * c * patches);
          }
          if (wn.requires_grad) {
            gemm(false, true, c, kkk, patches, xin.value.data() + s * c * patches, dcols.data(),
                 wn.grad_buffer().data());
          }
          if (bn.requires_grad) {
            auto& db = bn.grad_buffer();
            const std::size_t plane = g.height * g.width;
            for (std::size_t ch = 0; ch < g.channels; ++ch) {
              const double* row = dy + ch * plane;
              db[ch] += std::accumulate(row, row + plane, 0.0);
            }
          }
        }
      });
}

Tensor dense(const Tensor& input, const LayerParams& params) {
  check_layer(params, 2, "dense");
  if (input.rank() != 2) {
    throw ShapeError("dense: input must be [N,F], got " + shape_str(input.shape()));
  }
  const std::size_t n = input.dim(0), f = input.dim(1);
  const std::size_t out_f = params.weight.dim(0);
  if (params.weight.dim(1) != f) {
    throw ShapeError("dense: input " + shape_str(input.shape()) + " does not match weight " +
                     shape_str(params.weight.shape()));
  }
  if (params.bias.numel() != out_f) {
    throw ShapeError("dense: bias of length " + std::to_string(params.bias.numel()) + " for " +
                     std::to_string(out_f) + " outputs");
  }
  std::vector<double> out(n * out_f);
  const double* b = params.bias.data().data();
  for (std::size_t r = 0; r < n; ++r) std::copy(b, b + out_f, out.begin() + r * out_f);
  gemm(false, true, n, out_f, f, input.data().data(), params.weight.data().data(), out.data());

  return make_result({n, out_f}, std::move(out), {input, params.weight, params.bias},
                     [n, f, out_f](Node& self) {
                       auto& xin = *self.inputs[0];
                       auto& wn = *self.inputs[1];
                       auto& bn = *self.inputs[2];
                       const double* dy = self.grad.data();
                       if (xin.requires_grad) {
                         gemm(false, false, n, f, out_f, dy, wn.value.data(),
                              xin.grad_buffer().data());
                       }
                       if (wn.requires_grad) {
                         gemm(true, false, out_f, f, n, dy, xin.value.data(),
                              wn.grad_buffer().data());
                       }
                       if (bn.requires_grad) {
                         auto& db = bn.grad_buffer();
                         for (std::size_t r = 0; r < n; ++r) {
                           for (std::size_t j = 0; j < out_f; ++j) db[j] += dy[r * out_f + j];
                         }
                       }
                     });
}

Tensor relu(const Tensor& x) {
  return elementwise(
      x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(const Tensor& x, double alpha) {
  return elementwise(
      x, "leaky_relu", [alpha](double v) { return v > 0.0 ? v : alpha * v; },
      [alpha](double v, double) { return v > 0.0 ? 1.0 : alpha; });
}

Tensor sigmoid(const Tensor& x) {
  return elementwise(
      x, "sigmoid",
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
  return elementwise(
      x, "tanh", [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  require_finite(x.data(), "softmax");
  const auto& s = x.shape();
  if (axis >= s.size()) {
    throw ShapeError("softmax: axis " + std::to_string(axis) + " out of range for " +
                     shape_str(s));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * len * inner + i;
      double mx = in[base];
      for (std::size_t j = 1; j < len; ++j) mx = std::max(mx, in[base + j * inner]);
      double z = 0.0;
      for (std::size_t j = 0; j < len; ++j) {
        out[base + j * inner] = std::exp(in[base + j * inner] - mx);
        z += out[base + j * inner];
      }
      for (std::size_t j = 0; j < len; ++j) out[base + j * inner] /= z;
    }
  }
  return make_result(s, std::move(out), {x}, [outer, inner, len](Node& self) {
    auto& src = *self.inputs[0];
    if (!src.requires_grad) return;
    auto& g = src.grad_buffer();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t base = o * len * inner + i;
        double dot = 0.0;
        for (std::size_t j = 0; j < len; ++j) {
          dot += self.grad[base + j * inner] * self.value[base + j * inner];
        }
        for (std::size_t j = 0; j < len; ++j) {
          const std::size_t idx = base + j * inner;
          g[idx] += self.value[idx] * (self.grad[idx] - dot);
        }
      }
    }
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_result(std::move(shape), std::move(out), {x}, [](Node& self) {
    auto& src = *self.inputs[0];
    if (!src.requires_grad) return;
    auto& g = src.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) throw ShapeError("concat: axis out of range for " + shape_str(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const auto& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == first[i];
    if (!ok) {
      throw ShapeError("concat: " + shape_str(s) + " incompatible with " + shape_str(first) +
                       " along axis " + std::to_string(axis));
    }
    out_shape[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];

  std::vector<std::size_t> widths;  // contiguous run length per part per outer index
  for (const auto& p : parts) widths.push_back(p.dim(axis) * inner);
  const std::size_t row = out_shape[axis] * inner;
  std::vector<double> out(outer * row);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto src = parts[k].data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy(src.begin() + o * widths[k], src.begin() + (o + 1) * widths[k],
                out.begin() + o * row + offset);
    }
    offset += widths[k];
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return make_result(std::move(out_shape), std::move(out), std::move(inputs),
                     [widths, outer, row](Node& self) {
                       std::size_t off = 0;
                       for (std::size_t k = 0; k < self.inputs.size(); ++k) {
                         auto& src = *self.inputs[k];
                         if (src.requires_grad) {
                           auto& g = src.grad_buffer();
                           for (std::size_t o = 0; o < outer; ++o) {
                             for (std::size_t i = 0; i < widths[k]; ++i) {
                               g[o * widths[k] + i] += self.grad[o * row + off + i];
                             }
                           }
                         }
                         off += widths[k];
                       }
                     });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (auto& in : self.inputs) {
      if (!in->requires_grad) continue;
      auto& g = in->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor scale(const Tensor& x, double factor) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * factor;
  return make_result(x.shape(), std::move(out), {x}, [factor](Node& self) {
    auto& src = *self.inputs[0];
    if (!src.requires_grad) return;
    auto& g = src.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
  });
}

Tensor sum(const Tensor& x) {
  auto d = x.data();
  const double total = std::accumulate(d.begin(), d.end(), 0.0);
  return make_result({1}, {total}, {x}, [](Node& self) {
    auto& src = *self.inputs[0];
    if (!src.requires_grad) return;
    auto& g = src.grad_buffer();
    for (auto& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor global_avg_pool(const Tensor& x) {
  if (x.rank() != 4) throw ShapeError("global_avg_pool: input must be [N,C,H,W], got " + shape_str(x.shape()));
  const std::size_t rows = x.dim(0) * x.dim(1), area = x.dim(2) * x.dim(3);
  auto d = x.data();
  std::vector<double> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    out[r] = std::accumulate(d.begin() + static_cast<std::ptrdiff_t>(r * area),
                             d.begin() + static_cast<std::ptrdiff_t>((r + 1) * area), 0.0) /
             static_cast<double>(area);
  }
  return make_result({x.dim(0), x.dim(1)}, std::move(out), {x}, [rows, area](Node& self) {
    auto& src = *self.inputs[0];
    if (!src.requires_grad) return;
    auto& g = src.grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const double v = self.grad[r] / static_cast<double>(area);
      for (std::size_t i = 0; i < area; ++i) g[r * area + i] += v;
    }
  });
}

Tensor bce(const Tensor& pred, const Tensor& target) {
  require_same_shape(pred, target, "bce");
  require_finite(pred.data(), "bce");
  const std::size_t n = pred.numel();
  auto p = pred.data();
  auto t = target.data();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double q = std::clamp(p[i], kBceEpsilon, 1.0 - kBceEpsilon);
    total -= t[i] * std::log(q) + (1.0 - t[i]) * std::log(1.0 - q);
  }
  return make_result({1}, {total / static_cast<double>(n)}, {pred, target}, [n](Node& self) {
    auto& pn = *self.inputs[0];
    const auto& tv = self.inputs[1]->value;
    const double scale_n = self.grad[0] / static_cast<double>(n);
    if (pn.requires_grad) {
      auto& g = pn.grad_buffer();
      for (std::size_t i = 0; i < n; ++i) {
        const double q = pn.value[i];
        if (q < kBceEpsilon || q > 1.0 - kBceEpsilon) continue;
        g[i] += scale_n * (q - tv[i]) / (q * (1.0 - q));
      }
    }
    auto& tn = *self.inputs[1];
    if (tn.requires_grad) {
      auto& g = tn.grad_buffer();
      for (std::size_t i = 0; i < n; ++i) {
        const double q = std::clamp(pn.value[i], kBceEpsilon, 1.0 - kBceEpsilon);
        g[i] += scale_n * (std::log(1.0 - q) - std::log(q));
      }
    }
  });
}

Tensor bce(const Tensor& pred, double target) {
  return bce(pred, Tensor::full(pred.shape(), target));
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> labels) {
  if (logits.rank() != 2) {
    throw ShapeError("cross_entropy: logits must be [N,K], got " + shape_str(logits.shape()));
  }
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (labels.size() != n) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(n) + " rows");
  }
  require_finite(logits.data(), "cross_entropy");
  auto z = logits.data();
  std::vector<double> probs(n * k);
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    if (labels[r] >= k) {
      throw ShapeError("cross_entropy: class index " + std::to_string(labels[r]) +
                       " out of range for " + std::to_string(k) + " classes");
    }
    const double* row = z.data() + r * k;
    const double mx = *std::max_element(row, row + k);
    double zsum = 0.0;
    for (std::size_t j = 0; j < k; ++j) zsum += std::exp(row[j] - mx);
    const double lse = mx + std::log(zsum);
    for (std::size_t j = 0; j < k; ++j) probs[r * k + j] = std::exp(row[j] - lse);
    total += lse - row[labels[r]];
  }
  std::vector<std::size_t> lab(labels.begin(), labels.end());
  return make_result({1}, {total / static_cast<double>(n)}, {logits},
                     [probs = std::move(probs), lab = std::move(lab), n, k](Node& self) {
                       auto& src = *self.inputs[0];
                       if (!src.requires_grad) return;
                       auto& g = src.grad_buffer();
                       const double s = self.grad[0] / static_cast<double>(n);
                       for (std::size_t r = 0; r < n; ++r) {
                         for (std::size_t j = 0; j < k; ++j) {
                           const double onehot = (j == lab[r]) ? 1.0 : 0.0;
                           g[r * k + j] += s * (probs[r * k + j] - onehot);
                         }
                       }
                     });
}

Tensor l1(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "l1");
  const std::size_t n = a.numel();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) total += std::abs(a.data()[i] - b.data()[i]);
  return make_result({1}, {total / static_cast<double>(n)}, {a, b}, [n](Node& self) {
    auto& an = *self.inputs[0];
    auto& bn = *self.inputs[1];
    const double s = self.grad[0] / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double d = an.value[i] - bn.value[i];
      const double sign = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
      if (an.requires_grad) an.grad_buffer()[i] += s * sign;
      if (bn.requires_grad) bn.grad_buffer()[i] -= s * sign;
    }
  });
}

Tensor mse(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mse");
  const std::size_t n = a.numel();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = a.data()[i] - b.data()[i];
    total += d * d;
  }
  return make_result({1}, {total / static_cast<double>(n)}, {a, b}, [n](Node& self) {
    auto& an = *self.inputs[0];
    auto& bn = *self.inputs[1];
    const double s = 2.0 * self.grad[0] / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double d = an.value[i] - bn.value[i];
      if (an.requires_grad) an.grad_buffer()[i] += s * d;
      if (bn.requires_grad) bn.grad_buffer()[i] -= s * d;
    }
  });
}

}  // namespace vqos::ops
