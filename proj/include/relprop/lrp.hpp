#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "relprop/error.hpp"
#include "relprop/gradient.hpp"
#include "relprop/model.hpp"
#include "relprop/relevance.hpp"
#include "relprop/tensor.hpp"

namespace relprop {

/// Result of redistributing relevance through one layer.
/// sum(relevance) + bias_absorbed + epsilon_leaked == sum(R_out) up to rounding.
struct LayerRelevance {
  Tensor relevance;
  double bias_absorbed = 0.0;
  double epsilon_leaked = 0.0;  // stabilizer loss and dropped alpha-beta terms
};

namespace detail {

inline double stabilizer_sign(double z) { return z >= 0.0 ? 1.0 : -1.0; }

// Applies the configured rule to a linear map given by its connectivity.
// `for_each_input(k, f)` calls f(j, w_jk) for every input j feeding output k,
// in increasing j; `bias(k)` returns b_k.
template <typename ForEachInput, typename Bias>
LayerRelevance apply_linear_rule(const Tensor& x, std::size_t outputs, const ForEachInput& for_each_input,
                                 const Bias& bias, const Tensor& r_out, const RuleConfig& rule) {
  LayerRelevance out{Tensor(x.shape()), 0.0, 0.0};
  Tensor& r_in = out.relevance;
  for (std::size_t k = 0; k < outputs; ++k) {
    const double rk = r_out[k];
    const double bk = bias(k);
    if (rule.rule == Rule::Epsilon) {
      double z = 0.0;
      for_each_input(k, [&](std::size_t j, double w) { z += x[j] * w; });
      z += bk;
      const double stab = rule.epsilon * stabilizer_sign(z);
      const double denom = z + stab;
      if (denom == 0.0) {
        out.epsilon_leaked += rk;
        continue;
      }
      const double scale = rk / denom;
      for_each_input(k, [&](std::size_t j, double w) { r_in[j] += x[j] * w * scale; });
      out.bias_absorbed += bk * scale;
      out.epsilon_leaked += stab * scale;
    } else {
      double zp = 0.0, zn = 0.0;
      for_each_input(k, [&](std::size_t j, double w) {
        const double c = x[j] * w;
        if (c > 0.0) zp += c; else zn += c;
      });
      const double bp = bk > 0.0 ? bk : 0.0, bn = bk < 0.0 ? bk : 0.0;
      zp += bp;
      zn += bn;
      // A missing positive (negative) side drops its term; its share is lost.
      const double pos_scale = zp > 0.0 ? rule.alpha * rk / zp : 0.0;
      const double neg_scale = zn < 0.0 ? rule.beta * rk / zn : 0.0;
      if (!(zp > 0.0)) out.epsilon_leaked += rule.alpha * rk;
      if (!(zn < 0.0)) out.epsilon_leaked -= rule.beta * rk;
      for_each_input(k, [&](std::size_t j, double w) {
        const double c = x[j] * w;
        if (c > 0.0) r_in[j] += c * pos_scale;
        else if (c < 0.0) r_in[j] -= c * neg_scale;
      });
      out.bias_absorbed += bp * pos_scale - bn * neg_scale;
    }
  }
  return out;
}

inline void check_dense_shapes(const Tensor& x, const Tensor& weights, const Tensor& bias, const Tensor& r_out) {
  if (x.rank() != 1 || weights.rank() != 2 || weights.shape()[0] != x.size() || bias.rank() != 1 ||
      bias.size() != weights.shape()[1] || r_out.size() != weights.shape()[1]) {
    throw Error(ErrorKind::Shape, "lrp dense layer: activations " + shape_string(x.shape()) + ", weights " +
                                      shape_string(weights.shape()) + ", bias " + shape_string(bias.shape()) +
                                      ", relevance " + shape_string(r_out.shape()) + " do not conform");
  }
}

inline LayerRelevance dense_rule(const Tensor& x, const Tensor& weights, const Tensor& bias, const Tensor& r_out,
                                 const RuleConfig& rule) {
  check_dense_shapes(x, weights, bias, r_out);
  const std::size_t n = weights.shape()[0], m = weights.shape()[1];
  return apply_linear_rule(
      x, m,
      [&](std::size_t k, auto&& f) {
        for (std::size_t j = 0; j < n; ++j) f(j, weights[j * m + k]);
      },
      [&](std::size_t k) { return bias[k]; }, r_out, rule);
}

inline LayerRelevance conv_rule(const Tensor& x, const ConvSpec& s, const Tensor& r_out, const RuleConfig& rule) {
  const std::size_t cin = s.in_channels(), h = x.shape()[1], w = x.shape()[2];
  const std::size_t kh = s.kernel_h(), kw = s.kernel_w();
  const std::size_t oh = r_out.shape()[1], ow = r_out.shape()[2];
  return apply_linear_rule(
      x, r_out.size(),
      [&](std::size_t k, auto&& f) {
        const std::size_t co = k / (oh * ow), oy = (k / ow) % oh, ox = k % ow;
        for (std::size_t ci = 0; ci < cin; ++ci) {
          for (std::size_t ky = 0; ky < kh; ++ky) {
            const auto iy = static_cast<std::ptrdiff_t>(oy * s.stride[0] + ky) - static_cast<std::ptrdiff_t>(s.padding[0]);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t kx = 0; kx < kw; ++kx) {
              const auto ix = static_cast<std::ptrdiff_t>(ox * s.stride[1] + kx) - static_cast<std::ptrdiff_t>(s.padding[1]);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
              f((ci * h + iy) * w + ix, s.kernel[((co * cin + ci) * kh + ky) * kw + kx]);
            }
          }
        }
      },
      [&](std::size_t k) { return s.bias[k / (oh * ow)]; }, r_out, rule);
}

inline LayerRelevance avg_pool_rule(const Tensor& x, const PoolLayer& p, const Tensor& r_out, const RuleConfig& rule) {
  const std::size_t h = x.shape()[1], w = x.shape()[2];
  const std::size_t oh = r_out.shape()[1], ow = r_out.shape()[2];
  const double weight = 1.0 / static_cast<double>(p.window[0] * p.window[1]);
  return apply_linear_rule(
      x, r_out.size(),
      [&](std::size_t k, auto&& f) {
        const std::size_t c = k / (oh * ow), oy = (k / ow) % oh, ox = k % ow;
        for (std::size_t ky = 0; ky < p.window[0]; ++ky) {
          for (std::size_t kx = 0; kx < p.window[1]; ++kx) {
            f((c * h + oy * p.stride[0] + ky) * w + ox * p.stride[1] + kx, weight);
          }
        }
      },
      [](std::size_t) { return 0.0; }, r_out, rule);
}

// Neumaier-compensated sum, independent of Tensor::sum.
inline double compensated_sum(const Tensor& t) {
  double sum = 0.0, comp = 0.0;
  for (double v : t.values()) {
    const double s = sum + v;
    comp += std::abs(sum) >= std::abs(v) ? (sum - s) + v : (v - s) + sum;
    sum = s;
  }
  return sum + comp;
}

inline void fill_deviations(ConservationReport& r) {
  const double f = r.f_value;
  const double scale = f != 0.0 ? std::abs(f) : 1.0;
  r.max_relative_deviation = 0.0;
  r.accounting_residual = 0.0;
  double accounted = 0.0;
  for (std::size_t l = 0; l < r.layer_sums.size(); ++l) {
    if (l > 0) accounted += r.layer_bias_absorbed[l - 1] + r.layer_epsilon_leaked[l - 1];
    r.max_relative_deviation = std::max(r.max_relative_deviation, std::abs(r.layer_sums[l] - f) / scale);
    r.accounting_residual =
        std::max(r.accounting_residual, std::abs(f - r.layer_sums[l] - accounted) / std::max(1.0, std::abs(f)));
  }
}

}  // namespace detail

/// Epsilon rule for a dense layer:
/// R_j = sum_k x_j w_jk / (z_k + eps * sign(z_k)) * R_k,  z_k = sum_j x_j w_jk + b_k,
/// with sign(0) = +1. The bias share b_k / (z_k + ...) * R_k is absorbed.
inline LayerRelevance lrp_epsilon_layer(const Tensor& x, const Tensor& weights, const Tensor& bias,
                                        const Tensor& r_out, double epsilon) {
  return detail::dense_rule(x, weights, bias, r_out, RuleConfig::make_epsilon(epsilon));
}

/// Alpha-beta rule for a dense layer; positive and negative contributions are
/// normalized separately and weighted alpha and beta (alpha - beta == 1).
/// Positive / negative bias parts join the respective denominators.
inline LayerRelevance lrp_alphabeta_layer(const Tensor& x, const Tensor& weights, const Tensor& bias,
                                          const Tensor& r_out, double alpha, double beta) {
  return detail::dense_rule(x, weights, bias, r_out, RuleConfig::make_alpha_beta(alpha, beta));
}

/// Full backward relevance pass for `target_class`, starting from its raw
/// logit. ReLU is transparent, max-pool is winner-takes-all, avg-pool and
/// conv are linear maps under the configured rule, and an Embedding layer
/// ends propagation at its outputs.
inline RelevanceMap lrp_explain(const Model& model, const ForwardTrace& trace, std::size_t target_class,
                                const RuleConfig& config) {
  config.validate();
  detail::check_trace(model, trace);
  detail::check_class(model, target_class);

  ConservationReport report;
  report.f_value = trace.logits[target_class];

  Tensor r(trace.logits.shape());
  r[target_class] = trace.logits[target_class];

  RelevanceMap map;
  map.target_class = target_class;
  map.rule = config;
  map.layer_relevances.push_back(r);
  report.layer_sums.push_back(r.sum());

  const std::size_t stop = model.embeds_tokens() ? 1 : 0;
  for (std::size_t i = model.layers.size(); i-- > stop;) {
    const Tensor& x = trace.inputs[i];
    LayerRelevance step = std::visit(
        [&](const auto& l) -> LayerRelevance {
          using T = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<T, DenseLayer>) {
            return detail::dense_rule(x, l.weights, l.bias, r, config);
          } else if constexpr (std::is_same_v<T, ConvLayer>) {
            return detail::conv_rule(x, l.spec, r, config);
          } else if constexpr (std::is_same_v<T, PoolLayer>) {
            if (l.kind == PoolKind::Avg) return detail::avg_pool_rule(x, l, r, config);
            LayerRelevance out{Tensor(x.shape())};
            for (std::size_t o = 0; o < r.size(); ++o) out.relevance[trace.argmax[i][o]] += r[o];
            return out;
          } else if constexpr (std::is_same_v<T, ReluLayer>) {
            return {r};
          } else if constexpr (std::is_same_v<T, FlattenLayer>) {
            return {r.reshaped(x.shape())};
          } else {
            throw Error(ErrorKind::Unsupported, "layer " + std::to_string(i) + " (Embedding) cannot propagate relevance");
          }
        },
        model.layers[i]);
    r = std::move(step.relevance);
    map.layer_relevances.push_back(r);
    report.layer_sums.push_back(r.sum());
    report.layer_bias_absorbed.push_back(step.bias_absorbed);
    report.layer_epsilon_leaked.push_back(step.epsilon_leaked);
    report.bias_absorbed += step.bias_absorbed;
    report.epsilon_leaked += step.epsilon_leaked;
  }
  detail::fill_deviations(report);
  map.values = r;
  map.conservation = std::move(report);
  return map;
}

/// Recomputes every per-layer relevance sum from the stored layer
/// relevances (compensated summation) and re-derives the deviations.
/// Sensitivity maps are refused: they do not decompose f(x).
inline ConservationReport conservation_audit(const RelevanceMap& map) {
  if (map.is_sensitivity()) {
    throw Error(ErrorKind::Audit, "conservation audit refused: sensitivity maps explain a variation of f, not f");
  }
  if (!map.conservation || map.layer_relevances.empty()) {
    throw Error(ErrorKind::Audit, "conservation audit needs the per-layer relevances of an lrp_explain pass");
  }
  ConservationReport r = *map.conservation;
  r.layer_sums.clear();
  for (const Tensor& t : map.layer_relevances) r.layer_sums.push_back(detail::compensated_sum(t));
  detail::fill_deviations(r);
  return r;
}

/// Signed relevance sum per group; `groups` must partition the map's indices.
inline std::vector<double> aggregate_groups(const RelevanceMap& map, const std::vector<std::vector<std::size_t>>& groups) {
  const std::size_t n = map.values.size();
  std::vector<char> seen(n, 0);
  std::vector<double> out;
  out.reserve(groups.size());
  for (std::size_t g = 0; g < groups.size(); ++g) {
    double acc = 0.0;
    for (std::size_t idx : groups[g]) {
      if (idx >= n) {
        throw Error(ErrorKind::Config, "group " + std::to_string(g) + " references index " + std::to_string(idx) +
                                           " outside a map of " + std::to_string(n));
      }
      if (seen[idx]) throw Error(ErrorKind::Config, "index " + std::to_string(idx) + " appears in more than one group");
      seen[idx] = 1;
      acc += map.values[idx];
    }
    out.push_back(acc);
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!seen[i]) throw Error(ErrorKind::Config, "groups do not cover index " + std::to_string(i));
  }
  return out;
}

/// Row groups of a tokens x dim map.
inline std::vector<std::vector<std::size_t>> token_groups(const Shape& shape) {
  if (shape.size() != 2) throw Error(ErrorKind::Shape, "token groups need a tokens x dim map, got " + shape_string(shape));
  std::vector<std::vector<std::size_t>> groups(shape[0]);
  for (std::size_t t = 0; t < shape[0]; ++t) {
    for (std::size_t d = 0; d < shape[1]; ++d) groups[t].push_back(t * shape[1] + d);
  }
  return groups;
}

/// Per-token relevance: row sums for tokens x dim maps, the map itself for
/// rank-1 maps.
inline std::vector<double> token_relevance(const RelevanceMap& map) {
  if (map.values.rank() == 1) return map.values.vec();
  return aggregate_groups(map, token_groups(map.values.shape()));
}

/// h x w display map: signed channel sum for LRP, Euclidean channel norm for
/// sensitivity maps. Rank-2 maps pass through.
inline Tensor display_map(const RelevanceMap& map) {
  const Tensor& v = map.values;
  if (v.rank() == 2) return v;
  if (v.rank() != 3) throw Error(ErrorKind::Shape, "display needs a rank-2 or rank-3 map, got " + shape_string(v.shape()));
  const std::size_t c = v.shape()[0], hw = v.shape()[1] * v.shape()[2];
  Tensor out({v.shape()[1], v.shape()[2]});
  for (std::size_t p = 0; p < hw; ++p) {
    double acc = 0.0;
    for (std::size_t ch = 0; ch < c; ++ch) acc += map.is_sensitivity() ? v[ch * hw + p] * v[ch * hw + p] : v[ch * hw + p];
    out[p] = map.is_sensitivity() ? std::sqrt(acc) : acc;
  }
  return out;
}

/// The dense layer equivalent to a convolution on `in_shape` inputs.
inline DenseLayer conv_as_dense(const ConvSpec& s, const Shape& in_shape) {
  const Shape out_shape = conv_output_shape(in_shape, s);
  const std::size_t n = shape_size(in_shape), m = shape_size(out_shape);
  const std::size_t cin = s.in_channels(), h = in_shape[1], w = in_shape[2];
  const std::size_t oh = out_shape[1], ow = out_shape[2];
  DenseLayer dense{Tensor({n, m}), Tensor({m})};
  for (std::size_t co = 0; co < s.out_channels(); ++co) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const std::size_t k = (co * oh + oy) * ow + ox;
        dense.bias[k] = s.bias[co];
        for (std::size_t ci = 0; ci < cin; ++ci) {
          for (std::size_t ky = 0; ky < s.kernel_h(); ++ky) {
            const auto iy = static_cast<std::ptrdiff_t>(oy * s.stride[0] + ky) - static_cast<std::ptrdiff_t>(s.padding[0]);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t kx = 0; kx < s.kernel_w(); ++kx) {
              const auto ix = static_cast<std::ptrdiff_t>(ox * s.stride[1] + kx) - static_cast<std::ptrdiff_t>(s.padding[1]);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
              const std::size_t j = (ci * h + iy) * w + ix;
              dense.weights[j * m + k] = s.kernel[((co * cin + ci) * s.kernel_h() + ky) * s.kernel_w() + kx];
            }
          }
        }
      }
    }
  }
  return dense;
}

}  // namespace relprop
