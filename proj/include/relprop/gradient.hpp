#pragma once

#include <cmath>
#include <string>
#include <type_traits>
#include <variant>

#include "relprop/error.hpp"
#include "relprop/model.hpp"
#include "relprop/relevance.hpp"
#include "relprop/tensor.hpp"

namespace relprop {

/// Signed partial derivatives of one logit w.r.t. the explained variables
/// (model input, or embedding output for token models).
struct GradientMap {
  Tensor values;
  std::size_t target_class = 0;
};

namespace detail {

inline void check_trace(const Model& model, const ForwardTrace& trace) {
  if (trace.inputs.size() != model.layers.size() || trace.outputs.size() != model.layers.size()) {
    throw Error(ErrorKind::Shape, "stale trace: " + std::to_string(trace.inputs.size()) +
                                      " recorded layers for a " +
                                      std::to_string(model.layers.size()) + "-layer model");
  }
  const auto shapes = model.layer_shapes();
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    if (trace.inputs[i].shape() != shapes[i] || trace.outputs[i].shape() != shapes[i + 1]) {
      throw Error(ErrorKind::Shape, "stale trace: layer " + std::to_string(i) + " recorded " +
                                        shape_string(trace.inputs[i].shape()) + " -> " +
                                        shape_string(trace.outputs[i].shape()) + ", model expects " +
                                        shape_string(shapes[i]) + " -> " + shape_string(shapes[i + 1]));
    }
  }
}

inline void check_class(const Model& model, std::size_t target_class) {
  if (target_class >= model.num_classes()) {
    throw Error(ErrorKind::Config, "target class " + std::to_string(target_class) + " out of range (" +
                                       std::to_string(model.num_classes()) + " classes)");
  }
}

// Vector-Jacobian product of one layer at the recorded input.
inline Tensor layer_vjp(const Layer& layer, const Tensor& input, const std::vector<std::size_t>& argmax,
                        const Tensor& grad_out) {
  return std::visit(
      [&](const auto& l) -> Tensor {
        using T = std::decay_t<decltype(l)>;
        Tensor g(input.shape());
        if constexpr (std::is_same_v<T, DenseLayer>) {
          const std::size_t n = l.weights.shape()[0], m = l.weights.shape()[1];
          for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < m; ++k) acc += l.weights[j * m + k] * grad_out[k];
            g[j] = acc;
          }
        } else if constexpr (std::is_same_v<T, ConvLayer>) {
          const ConvSpec& s = l.spec;
          const std::size_t cin = s.in_channels(), h = input.shape()[1], w = input.shape()[2];
          const std::size_t kh = s.kernel_h(), kw = s.kernel_w();
          const std::size_t oh = grad_out.shape()[1], ow = grad_out.shape()[2];
          for (std::size_t co = 0; co < s.out_channels(); ++co) {
            for (std::size_t oy = 0; oy < oh; ++oy) {
              for (std::size_t ox = 0; ox < ow; ++ox) {
                const double go = grad_out[(co * oh + oy) * ow + ox];
                for (std::size_t ci = 0; ci < cin; ++ci) {
                  for (std::size_t ky = 0; ky < kh; ++ky) {
                    const auto iy = static_cast<std::ptrdiff_t>(oy * s.stride[0] + ky) -
                                    static_cast<std::ptrdiff_t>(s.padding[0]);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                    for (std::size_t kx = 0; kx < kw; ++kx) {
                      const auto ix = static_cast<std::ptrdiff_t>(ox * s.stride[1] + kx) -
                                      static_cast<std::ptrdiff_t>(s.padding[1]);
                      if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                      g[(ci * h + iy) * w + ix] += s.kernel[((co * cin + ci) * kh + ky) * kw + kx] * go;
                    }
                  }
                }
              }
            }
          }
        } else if constexpr (std::is_same_v<T, PoolLayer>) {
          if (l.kind == PoolKind::Max) {
            for (std::size_t o = 0; o < grad_out.size(); ++o) g[argmax[o]] += grad_out[o];
          } else {
            const std::size_t h = input.shape()[1], w = input.shape()[2];
            const std::size_t oh = grad_out.shape()[1], ow = grad_out.shape()[2];
            const double inv_area = 1.0 / static_cast<double>(l.window[0] * l.window[1]);
            for (std::size_t c = 0; c < input.shape()[0]; ++c) {
              for (std::size_t oy = 0; oy < oh; ++oy) {
                for (std::size_t ox = 0; ox < ow; ++ox) {
                  const double share = grad_out[(c * oh + oy) * ow + ox] * inv_area;
                  for (std::size_t ky = 0; ky < l.window[0]; ++ky) {
                    for (std::size_t kx = 0; kx < l.window[1]; ++kx) {
                      g[(c * h + oy * l.stride[0] + ky) * w + ox * l.stride[1] + kx] += share;
                    }
                  }
                }
              }
            }
          }
        } else if constexpr (std::is_same_v<T, ReluLayer>) {
          // derivative at exactly 0 is 0
          for (std::size_t i = 0; i < g.size(); ++i) g[i] = input[i] > 0.0 ? grad_out[i] : 0.0;
        } else if constexpr (std::is_same_v<T, FlattenLayer>) {
          g = grad_out.reshaped(input.shape());
        } else {
          throw Error(ErrorKind::Unsupported, "no gradient through an Embedding layer");
        }
        return g;
      },
      layer);
}

}  // namespace detail

/// Exact reverse-mode gradient of logit `target_class`.
inline GradientMap backward_gradient(const Model& model, const ForwardTrace& trace, std::size_t target_class) {
  detail::check_trace(model, trace);
  detail::check_class(model, target_class);
  Tensor g(trace.logits.shape());
  g[target_class] = 1.0;
  const std::size_t stop = model.embeds_tokens() ? 1 : 0;
  for (std::size_t i = model.layers.size(); i-- > stop;) {
    g = detail::layer_vjp(model.layers[i], trace.inputs[i], trace.argmax[i], g);
  }
  return {std::move(g), target_class};
}

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h per coordinate.
inline GradientMap finite_difference_gradient(const Model& model, const Tensor& input,
                                              std::size_t target_class, double h) {
  if (!(h > 0.0)) throw Error(ErrorKind::Config, "finite-difference step must be positive");
  detail::check_class(model, target_class);
  const ForwardTrace trace = forward(model, input);
  Tensor x = explained_variables(model, trace);
  Tensor g(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double up = logit_at(model, x, target_class);
    x[i] = orig - h;
    const double down = logit_at(model, x, target_class);
    x[i] = orig;
    g[i] = (up - down) / (2.0 * h);
  }
  return {std::move(g), target_class};
}

inline ChannelNorm default_channel_norm(const Tensor& values) {
  return values.rank() == 3 ? ChannelNorm::L2OverChannels : ChannelNorm::Abs;
}

/// Sensitivity map: |df/dx_i| per scalar, or the Euclidean norm across
/// channels of a c x h x w gradient (yielding h x w).
inline RelevanceMap sensitivity_map(const GradientMap& grad, ChannelNorm norm) {
  RelevanceMap map;
  map.target_class = grad.target_class;
  map.sa_norm = norm;
  const Tensor& g = grad.values;
  if (norm == ChannelNorm::Abs) {
    map.values = g;
    for (double& v : map.values.values()) v = std::abs(v);
    return map;
  }
  if (g.rank() != 3) {
    throw Error(ErrorKind::Shape, "l2_over_channels needs a rank-3 gradient, got " + shape_string(g.shape()));
  }
  const std::size_t c = g.shape()[0], hw = g.shape()[1] * g.shape()[2];
  map.values = Tensor({g.shape()[1], g.shape()[2]});
  for (std::size_t p = 0; p < hw; ++p) {
    double ss = 0.0;
    for (std::size_t ch = 0; ch < c; ++ch) ss += g[ch * hw + p] * g[ch * hw + p];
    map.values[p] = std::sqrt(ss);
  }
  return map;
}

}  // namespace relprop
