#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "relprop/data.hpp"
#include "relprop/error.hpp"
#include "relprop/model.hpp"
#include "relprop/rng.hpp"

namespace relprop {

/// Dense/ReLU stack: widths {in, h1, ..., classes}. A ReLU follows every
/// Dense layer except the last.
struct MlpArchitecture {
  std::vector<std::size_t> widths;
  bool bias = true;
};

struct TrainOptions {
  std::size_t epochs = 50;
  double learning_rate = 0.1;
  std::uint64_t seed = 0;
  std::size_t batch_size = 1;
};

struct TrainResult {
  Model model;
  double train_accuracy = 0.0;
  double initial_loss = 0.0;
  std::vector<double> epoch_losses;  // mean cross-entropy after each epoch
};

namespace detail {

inline double cross_entropy(const Tensor& logits, std::size_t label, Tensor* grad) {
  const double mx = *std::max_element(logits.values().begin(), logits.values().end());
  double z = 0.0;
  for (double v : logits.values()) z += std::exp(v - mx);
  const double log_z = mx + std::log(z);
  if (grad) {
    *grad = Tensor(logits.shape());
    for (std::size_t k = 0; k < logits.size(); ++k) {
      (*grad)[k] = std::exp(logits[k] - log_z) - (k == label ? 1.0 : 0.0);
    }
  }
  return log_z - logits[label];
}

inline double mean_loss(const Model& model, const Dataset& data) {
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    total += cross_entropy(forward(model, data.inputs[i]).logits, data.labels[i], nullptr);
  }
  return total / static_cast<double>(data.size());
}

inline double accuracy(const Model& model, const Dataset& data) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    hits += forward(model, data.inputs[i]).predicted_class == data.labels[i];
  }
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

}  // namespace detail

/// Glorot-uniform initialization drawn from `seed`, layer by layer.
inline Model init_mlp(const Shape& input_shape, const MlpArchitecture& arch,
                      std::vector<std::string> class_names, std::uint64_t seed) {
  if (arch.widths.size() < 2) throw Error(ErrorKind::Config, "MLP needs at least input and output widths");
  if (arch.widths.front() != shape_size(input_shape)) {
    throw Error(ErrorKind::Config, "first width " + std::to_string(arch.widths.front()) +
                                       " does not match input size " +
                                       std::to_string(shape_size(input_shape)));
  }
  if (arch.widths.back() != class_names.size()) {
    throw Error(ErrorKind::Config, "last width " + std::to_string(arch.widths.back()) + " but " +
                                       std::to_string(class_names.size()) + " classes");
  }
  Xoshiro256 rng(seed);
  Model model{input_shape, {}, std::move(class_names)};
  if (input_shape.size() != 1) model.layers.push_back(FlattenLayer{});
  for (std::size_t l = 0; l + 1 < arch.widths.size(); ++l) {
    const std::size_t n = arch.widths[l], m = arch.widths[l + 1];
    const double limit = std::sqrt(6.0 / static_cast<double>(n + m));
    DenseLayer dense{Tensor({n, m}), Tensor({m})};
    for (double& w : dense.weights.values()) w = rng.uniform(-limit, limit);
    model.layers.push_back(std::move(dense));
    if (l + 2 < arch.widths.size()) model.layers.push_back(ReluLayer{});
  }
  model.validate();
  return model;
}

/// Softmax + cross-entropy, plain minibatch SGD (batch_size 1 by default),
/// shuffled each epoch from the seeded stream. Deterministic given the seed.
inline TrainResult train_mlp(const Dataset& data, const MlpArchitecture& arch, const TrainOptions& opt) {
  if (data.size() == 0) throw Error(ErrorKind::Config, "cannot train on an empty dataset");
  if (!data.labeled()) throw Error(ErrorKind::Config, "training requires labels");
  if (opt.batch_size == 0) throw Error(ErrorKind::Config, "batch size must be positive");
  data.validate();

  TrainResult result;
  result.model = init_mlp(data.input_shape(), arch, data.class_names, opt.seed);
  Model& model = result.model;
  result.initial_loss = detail::mean_loss(model, data);

  std::vector<std::size_t> dense_at;  // layer index of each Dense layer
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    if (std::holds_alternative<DenseLayer>(model.layers[i])) dense_at.push_back(i);
  }

  // Separate stream for shuffling so the init draws stay independent of epochs.
  Xoshiro256 shuffler(mix_keys({opt.seed, 0x5348554646ULL}));
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  std::vector<Tensor> grad_w, grad_b;
  for (std::size_t i : dense_at) {
    const auto& d = std::get<DenseLayer>(model.layers[i]);
    grad_w.emplace_back(d.weights.shape());
    grad_b.emplace_back(d.bias.shape());
  }

  for (std::size_t epoch = 1; epoch <= opt.epochs; ++epoch) {
    shuffler.shuffle(order.begin(), order.end());
    for (std::size_t start = 0; start < order.size(); start += opt.batch_size) {
      const std::size_t stop = std::min(order.size(), start + opt.batch_size);
      for (auto& g : grad_w) std::fill(g.values().begin(), g.values().end(), 0.0);
      for (auto& g : grad_b) std::fill(g.values().begin(), g.values().end(), 0.0);

      for (std::size_t s = start; s < stop; ++s) {
        const std::size_t idx = order[s];
        const ForwardTrace trace = forward(model, data.inputs[idx]);
        Tensor delta;
        const double loss = detail::cross_entropy(trace.logits, data.labels[idx], &delta);
        if (!std::isfinite(loss)) {
          throw Error(ErrorKind::Numeric, "training diverged at epoch " + std::to_string(epoch) +
                                              " (non-finite loss)");
        }
        for (std::size_t d = dense_at.size(); d-- > 0;) {
          const std::size_t li = dense_at[d];
          const auto& layer = std::get<DenseLayer>(model.layers[li]);
          const Tensor& a = trace.inputs[li];
          const std::size_t n = layer.weights.shape()[0], m = layer.weights.shape()[1];
          for (std::size_t j = 0; j < n; ++j) {
            for (std::size_t k = 0; k < m; ++k) grad_w[d][j * m + k] += a[j] * delta[k];
          }
          for (std::size_t k = 0; k < m; ++k) grad_b[d][k] += delta[k];
          if (d == 0) break;
          Tensor prev({n});
          for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < m; ++k) acc += layer.weights[j * m + k] * delta[k];
            // the ReLU between this Dense and the previous one
            prev[j] = a[j] > 0.0 ? acc : 0.0;
          }
          delta = std::move(prev);
        }
      }

      const double step = opt.learning_rate / static_cast<double>(stop - start);
      for (std::size_t d = 0; d < dense_at.size(); ++d) {
        auto& layer = std::get<DenseLayer>(model.layers[dense_at[d]]);
        for (std::size_t i = 0; i < layer.weights.size(); ++i) layer.weights[i] -= step * grad_w[d][i];
        if (arch.bias) {
          for (std::size_t i = 0; i < layer.bias.size(); ++i) layer.bias[i] -= step * grad_b[d][i];
        }
      }
    }
    const double loss = detail::mean_loss(model, data);
    if (!std::isfinite(loss)) {
      throw Error(ErrorKind::Numeric, "training diverged at epoch " + std::to_string(epoch) +
                                          " (non-finite loss)");
    }
    result.epoch_losses.push_back(loss);
  }
  result.train_accuracy = detail::accuracy(model, data);
  return result;
}

}  // namespace relprop
