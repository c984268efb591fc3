#pragma once

// Shared helpers for the unit and acceptance suites: random model builders
// and reference implementations that share no code with the library.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <string>
#include <vector>

#include <unistd.h>

#include "relprop/relprop.hpp"

namespace relprop::testing {

inline Tensor random_tensor(Xoshiro256& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

inline std::size_t random_between(Xoshiro256& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng.below(hi - lo + 1));
}

inline DenseLayer random_dense(Xoshiro256& rng, std::size_t n, std::size_t m, bool bias) {
  DenseLayer d{random_tensor(rng, {n, m}), Tensor({m})};
  if (bias) d.bias = random_tensor(rng, {m}, -0.5, 0.5);
  return d;
}

inline std::vector<std::string> class_list(std::size_t n) {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < n; ++i) names.push_back("c" + std::to_string(i));
  return names;
}

struct NetOptions {
  std::size_t min_dense = 2;
  std::size_t max_dense = 5;
  std::size_t max_width = 32;
  bool bias = false;
  bool avg_pool = false;  // prepend AvgPool + Flatten over a 1 x h x w input
};

// Dense/ReLU stack; optionally fronted by an average pool on an image input.
inline Model random_mlp(Xoshiro256& rng, const NetOptions& opt = {}) {
  Model m;
  std::size_t width;
  if (opt.avg_pool) {
    const std::size_t c = random_between(rng, 1, 2), h = 2 * random_between(rng, 1, 3), w = 2 * random_between(rng, 1, 3);
    m.input_shape = {c, h, w};
    m.layers.push_back(PoolLayer{PoolKind::Avg, {2, 2}, {2, 2}});
    m.layers.push_back(FlattenLayer{});
    width = c * (h / 2) * (w / 2);
  } else {
    width = random_between(rng, 2, opt.max_width);
    m.input_shape = {width};
  }
  const std::size_t dense = random_between(rng, opt.min_dense, opt.max_dense);
  const std::size_t classes = random_between(rng, 2, 5);
  for (std::size_t l = 0; l < dense; ++l) {
    const std::size_t out = l + 1 == dense ? classes : random_between(rng, 2, opt.max_width);
    m.layers.push_back(random_dense(rng, width, out, opt.bias));
    if (l + 1 < dense) m.layers.push_back(ReluLayer{});
    width = out;
  }
  m.class_names = class_list(classes);
  m.validate();
  return m;
}

// Small conv net: Conv -> ReLU -> {Max|Avg}Pool -> Flatten -> Dense.
inline Model random_convnet(Xoshiro256& rng, bool bias, PoolKind pool) {
  const std::size_t c = random_between(rng, 1, 2), co = random_between(rng, 1, 3);
  const std::size_t h = random_between(rng, 5, 8), w = random_between(rng, 5, 8);
  ConvSpec spec{random_tensor(rng, {co, c, 3, 3}), bias ? random_tensor(rng, {co}, -0.3, 0.3) : Tensor({co}),
                {1, 1}, {random_between(rng, 0, 1), random_between(rng, 0, 1)}};
  Model m;
  m.input_shape = {c, h, w};
  m.layers.push_back(ConvLayer{spec});
  m.layers.push_back(ReluLayer{});
  m.layers.push_back(PoolLayer{pool, {2, 2}, {2, 2}});
  m.layers.push_back(FlattenLayer{});
  const Shape pooled = m.layer_shapes()[4];
  m.layers.push_back(random_dense(rng, shape_size(pooled), 3, bias));
  m.class_names = class_list(3);
  m.validate();
  return m;
}

// Minimum distance of any ReLU pre-activation from 0, and of any max-pool
// winner from its runner-up; finite differences are trustworthy only when
// this exceeds the step.
inline double kink_margin(const Model& model, const ForwardTrace& trace) {
  double margin = INFINITY;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    if (std::holds_alternative<ReluLayer>(model.layers[i])) {
      for (double v : trace.inputs[i].values()) margin = std::min(margin, std::abs(v));
    } else if (const auto* p = std::get_if<PoolLayer>(&model.layers[i]); p && p->kind == PoolKind::Max) {
      const Tensor& x = trace.inputs[i];
      const std::size_t h = x.shape()[1], w = x.shape()[2];
      const Tensor& y = trace.outputs[i];
      const std::size_t oh = y.shape()[1], ow = y.shape()[2];
      for (std::size_t o = 0; o < y.size(); ++o) {
        const std::size_t ch = o / (oh * ow), oy = (o / ow) % oh, ox = o % ow;
        for (std::size_t ky = 0; ky < p->window[0]; ++ky) {
          for (std::size_t kx = 0; kx < p->window[1]; ++kx) {
            const std::size_t idx = (ch * h + oy * p->stride[0] + ky) * w + ox * p->stride[1] + kx;
            if (idx != trace.argmax[i][o]) margin = std::min(margin, y[o] - x[idx]);
          }
        }
      }
    }
  }
  return margin;
}

// Reference epsilon rule for one dense layer, straight from the formula.
// Returns input relevance; `leaked` receives the stabilizer share.
inline std::vector<double> oracle_epsilon(const std::vector<double>& x, const std::vector<std::vector<double>>& w,
                                          const std::vector<double>& b, const std::vector<double>& r_out, double eps,
                                          double* leaked = nullptr) {
  const std::size_t n = x.size(), m = b.size();
  std::vector<double> z(m);
  for (std::size_t k = 0; k < m; ++k) {
    long double acc = b[k];
    for (std::size_t j = 0; j < n; ++j) acc += static_cast<long double>(x[j]) * w[j][k];
    z[k] = static_cast<double>(acc);
  }
  std::vector<double> r(n, 0.0);
  double leak = 0.0;
  for (std::size_t k = 0; k < m; ++k) {
    const double d = z[k] + eps * (z[k] < 0 ? -1.0 : 1.0);
    for (std::size_t j = 0; j < n; ++j) r[j] += x[j] * w[j][k] / d * r_out[k];
    leak += eps * (z[k] < 0 ? -1.0 : 1.0) / d * r_out[k];
  }
  if (leaked) *leaked = leak;
  return r;
}

// Every neuron that can carry relevance has both a positive and a negative
// contribution (so no alpha-beta term is dropped).
inline bool both_sides_everywhere(const Model& m, const ForwardTrace& t, std::size_t cls) {
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    const Tensor& x = t.inputs[i];
    auto check = [](auto&& each) {
      double zp = 0, zn = 0;
      each([&](double c) { (c > 0 ? zp : zn) += c; });
      return zp > 0 && zn < 0;
    };
    if (const auto* d = std::get_if<DenseLayer>(&m.layers[i])) {
      const std::size_t n = d->weights.shape()[0], mm = d->weights.shape()[1];
      const bool last = i + 1 == m.layers.size();
      for (std::size_t k = 0; k < mm; ++k) {
        if (last && k != cls) continue;
        if (!last && t.outputs[i][k] <= 0.0) continue;  // dead unit receives no relevance
        if (!check([&](auto&& f) { for (std::size_t j = 0; j < n; ++j) f(x[j] * d->weights[j * mm + k]); })) return false;
      }
    } else if (const auto* p = std::get_if<PoolLayer>(&m.layers[i]); p && p->kind == PoolKind::Avg) {
      const std::size_t h = x.shape()[1], w = x.shape()[2];
      const Tensor& y = t.outputs[i];
      const std::size_t oh = y.shape()[1], ow = y.shape()[2];
      for (std::size_t o = 0; o < y.size(); ++o) {
        const std::size_t c = o / (oh * ow), oy = (o / ow) % oh, ox = o % ow;
        if (!check([&](auto&& f) {
              for (std::size_t ky = 0; ky < p->window[0]; ++ky)
                for (std::size_t kx = 0; kx < p->window[1]; ++kx)
                  f(x[(c * h + oy * p->stride[0] + ky) * w + ox * p->stride[1] + kx]);
            }))
          return false;
      }
    }
  }
  return true;
}

// All deletion orders of n features.
inline std::vector<std::vector<std::size_t>> all_orders(std::size_t n) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), std::size_t{0});
  std::vector<std::vector<std::size_t>> out;
  do out.push_back(p);
  while (std::next_permutation(p.begin(), p.end()));
  return out;
}

// Relative score curve of a linear model f(x) = sum_i w_i x_i (no bias)
// when features are zeroed in `order`.
inline std::vector<double> linear_deletion_curve(const std::vector<double>& w, const std::vector<double>& x,
                                                 const std::vector<std::size_t>& order) {
  double f0 = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) f0 += w[i] * x[i];
  std::vector<double> curve{1.0};
  std::vector<double> cur = x;
  for (std::size_t idx : order) {
    cur[idx] = 0.0;
    double f = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) f += w[i] * cur[i];
    curve.push_back(f / f0);
  }
  return curve;
}

inline double rel_diff(double a, double b, double floor = 1e-300) {
  return std::abs(a - b) / std::max(std::abs(b), floor);
}

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() /
           ("relprop-" + tag + "-" + std::to_string(::getpid()) + "-" +
            std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::filesystem::path operator/(const std::string& name) const { return path / name; }
};

}  // namespace relprop::testing
