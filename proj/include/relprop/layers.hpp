#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "relprop/error.hpp"
#include "relprop/tensor.hpp"

namespace relprop {

// Forward primitives. Every routine sums in a fixed order so that repeated
// runs are bit-identical.

using Extent2 = std::array<std::size_t, 2>;

struct ConvSpec {
  Tensor kernel;  // out_channels x in_channels x kh x kw
  Tensor bias;    // out_channels
  Extent2 stride{1, 1};
  Extent2 padding{0, 0};

  std::size_t out_channels() const { return kernel.shape()[0]; }
  std::size_t in_channels() const { return kernel.shape()[1]; }
  std::size_t kernel_h() const { return kernel.shape()[2]; }
  std::size_t kernel_w() const { return kernel.shape()[3]; }
};

namespace detail {

inline std::size_t window_extent(std::size_t in, std::size_t pad, std::size_t k,
                                 std::size_t stride, const char* what) {
  if (stride == 0) throw Error(ErrorKind::Shape, std::string(what) + ": stride must be positive");
  if (in + 2 * pad < k) {
    throw Error(ErrorKind::Shape, std::string(what) + ": window " + std::to_string(k) +
                                      " larger than padded input " +
                                      std::to_string(in + 2 * pad));
  }
  return (in + 2 * pad - k) / stride + 1;
}

inline void require_rank(const Tensor& x, std::size_t rank, const char* what) {
  if (x.rank() != rank) {
    throw Error(ErrorKind::Shape, std::string(what) + ": expected rank " + std::to_string(rank) +
                                      " input, got " + shape_string(x.shape()));
  }
}

}  // namespace detail

/// out_k = sum_j x_j * w_jk + b_k, summed left to right over j, bias last.
inline Tensor dense_forward(const Tensor& x, const Tensor& weights, const Tensor& bias) {
  if (x.rank() != 1 || weights.rank() != 2 || bias.rank() != 1 ||
      weights.shape()[0] != x.size() || weights.shape()[1] != bias.size()) {
    throw Error(ErrorKind::Shape, "dense_forward: input " + shape_string(x.shape()) +
                                      " incompatible with weights " +
                                      shape_string(weights.shape()) + " and bias " +
                                      shape_string(bias.shape()));
  }
  const std::size_t n = weights.shape()[0];
  const std::size_t m = weights.shape()[1];
  Tensor out({m});
  for (std::size_t k = 0; k < m; ++k) {
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) acc += x[j] * weights[j * m + k];
    out[k] = acc + bias[k];
  }
  return out;
}

inline Shape conv_output_shape(const Shape& in, const ConvSpec& spec) {
  if (spec.kernel.rank() != 4) {
    throw Error(ErrorKind::Shape, "conv kernel must be rank 4, got " +
                                      shape_string(spec.kernel.shape()));
  }
  if (spec.bias.rank() != 1 || spec.bias.size() != spec.out_channels()) {
    throw Error(ErrorKind::Shape, "conv bias " + shape_string(spec.bias.shape()) +
                                      " does not match kernel " +
                                      shape_string(spec.kernel.shape()));
  }
  if (in.size() != 3 || in[0] != spec.in_channels()) {
    throw Error(ErrorKind::Shape, "conv input " + shape_string(in) + " incompatible with kernel " +
                                      shape_string(spec.kernel.shape()));
  }
  return {spec.out_channels(),
          detail::window_extent(in[1], spec.padding[0], spec.kernel_h(), spec.stride[0], "conv"),
          detail::window_extent(in[2], spec.padding[1], spec.kernel_w(), spec.stride[1], "conv")};
}

/// Cross-correlation with zero padding. Per output element the sum runs over
/// input channel, then kernel row, then kernel column; bias is added last.
inline Tensor conv_forward(const Tensor& x, const ConvSpec& spec) {
  const Shape out_shape = conv_output_shape(x.shape(), spec);
  const std::size_t cin = spec.in_channels(), h = x.shape()[1], w = x.shape()[2];
  const std::size_t kh = spec.kernel_h(), kw = spec.kernel_w();
  const std::size_t oh = out_shape[1], ow = out_shape[2];
  Tensor out(out_shape);
  for (std::size_t co = 0; co < spec.out_channels(); ++co) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        double acc = 0.0;
        for (std::size_t ci = 0; ci < cin; ++ci) {
          for (std::size_t ky = 0; ky < kh; ++ky) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * spec.stride[0] + ky) -
                                      static_cast<std::ptrdiff_t>(spec.padding[0]);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t kx = 0; kx < kw; ++kx) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * spec.stride[1] + kx) -
                                        static_cast<std::ptrdiff_t>(spec.padding[1]);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
              acc += x[(ci * h + iy) * w + ix] * spec.kernel[((co * cin + ci) * kh + ky) * kw + kx];
            }
          }
        }
        out[(co * oh + oy) * ow + ox] = acc + spec.bias[co];
      }
    }
  }
  return out;
}

enum class PoolKind { Max, Avg };

struct PoolResult {
  Tensor output;
  // Flat input index of the winning element per output element (max only).
  std::vector<std::size_t> argmax;
};

inline Shape pool_output_shape(const Shape& in, Extent2 window, Extent2 stride) {
  if (in.size() != 3) {
    throw Error(ErrorKind::Shape, "pool: expected rank 3 input, got " + shape_string(in));
  }
  if (window[0] == 0 || window[1] == 0) throw Error(ErrorKind::Shape, "pool: empty window");
  return {in[0], detail::window_extent(in[1], 0, window[0], stride[0], "pool"),
          detail::window_extent(in[2], 0, window[1], stride[1], "pool")};
}

/// Max or mean per window. Max ties resolve to the smallest flat input index.
inline PoolResult pool_forward(const Tensor& x, PoolKind kind, Extent2 window, Extent2 stride) {
  const Shape out_shape = pool_output_shape(x.shape(), window, stride);
  const std::size_t c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  const std::size_t oh = out_shape[1], ow = out_shape[2];
  const double inv_area = 1.0 / static_cast<double>(window[0] * window[1]);
  PoolResult result{Tensor(out_shape), {}};
  if (kind == PoolKind::Max) result.argmax.resize(result.output.size());
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const std::size_t out_idx = (ch * oh + oy) * ow + ox;
        double acc = 0.0;
        std::size_t best = 0;
        bool first = true;
        for (std::size_t ky = 0; ky < window[0]; ++ky) {
          for (std::size_t kx = 0; kx < window[1]; ++kx) {
            const std::size_t idx = (ch * h + oy * stride[0] + ky) * w + ox * stride[1] + kx;
            if (kind == PoolKind::Avg) {
              acc += x[idx];
            } else if (first || x[idx] > x[best]) {
              // row-major scan visits smaller flat indices first, so strict
              // comparison keeps the earliest maximum
              best = idx;
              first = false;
            }
          }
        }
        if (kind == PoolKind::Avg) {
          result.output[out_idx] = acc * inv_area;
        } else {
          result.output[out_idx] = x[best];
          result.argmax[out_idx] = best;
        }
      }
    }
  }
  return result;
}

inline Tensor relu_forward(const Tensor& x) {
  Tensor out = x;
  for (double& v : out.values()) v = std::max(0.0, v);
  return out;
}

}  // namespace relprop
