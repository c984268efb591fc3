#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <type_traits>
#include <utility>
#include <variant>
#include <vector>

#include "relprop/error.hpp"
#include "relprop/layers.hpp"
#include "relprop/tensor.hpp"

namespace relprop {

struct DenseLayer {
  Tensor weights;  // in x out
  Tensor bias;     // out
};

struct ConvLayer {
  ConvSpec spec;
};

struct PoolLayer {
  PoolKind kind = PoolKind::Max;
  Extent2 window{2, 2};
  Extent2 stride{2, 2};
};

struct ReluLayer {};

struct FlattenLayer {};

/// Maps a sequence of token ids (rank-1 input) to a tokens x dim matrix.
/// Row 0 is the padding / unknown token and must be all zeros.
struct EmbeddingLayer {
  Tensor table;  // vocab x dim
};

using Layer = std::variant<DenseLayer, ConvLayer, PoolLayer, ReluLayer, FlattenLayer, EmbeddingLayer>;

inline std::string layer_kind(const Layer& layer) {
  return std::visit(
      [](const auto& l) -> std::string {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, DenseLayer>) return "Dense";
        else if constexpr (std::is_same_v<T, ConvLayer>) return "Conv";
        else if constexpr (std::is_same_v<T, PoolLayer>) return l.kind == PoolKind::Max ? "MaxPool" : "AvgPool";
        else if constexpr (std::is_same_v<T, ReluLayer>) return "ReLU";
        else if constexpr (std::is_same_v<T, FlattenLayer>) return "Flatten";
        else return "Embedding";
      },
      layer);
}

inline Shape layer_output_shape(const Layer& layer, const Shape& in) {
  return std::visit(
      [&](const auto& l) -> Shape {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, DenseLayer>) {
          if (l.weights.rank() != 2 || l.bias.rank() != 1 || l.bias.size() != l.weights.shape()[1]) {
            throw Error(ErrorKind::Shape, "Dense weights " + shape_string(l.weights.shape()) +
                                              " and bias " + shape_string(l.bias.shape()) +
                                              " disagree");
          }
          if (in.size() != 1 || in[0] != l.weights.shape()[0]) {
            throw Error(ErrorKind::Shape, "Dense expects input [" +
                                              std::to_string(l.weights.shape()[0]) + "], got " +
                                              shape_string(in));
          }
          return {l.weights.shape()[1]};
        } else if constexpr (std::is_same_v<T, ConvLayer>) {
          return conv_output_shape(in, l.spec);
        } else if constexpr (std::is_same_v<T, PoolLayer>) {
          return pool_output_shape(in, l.window, l.stride);
        } else if constexpr (std::is_same_v<T, ReluLayer>) {
          return in;
        } else if constexpr (std::is_same_v<T, FlattenLayer>) {
          return {shape_size(in)};
        } else {
          if (l.table.rank() != 2) {
            throw Error(ErrorKind::Shape, "Embedding table must be rank 2, got " +
                                              shape_string(l.table.shape()));
          }
          if (in.size() != 1) {
            throw Error(ErrorKind::Shape, "Embedding expects a rank-1 token sequence, got " +
                                              shape_string(in));
          }
          return {in[0], l.table.shape()[1]};
        }
      },
      layer);
}

struct Model {
  Shape input_shape;
  std::vector<Layer> layers;
  std::vector<std::string> class_names;

  std::size_t num_classes() const { return class_names.size(); }

  bool embeds_tokens() const {
    return !layers.empty() && std::holds_alternative<EmbeddingLayer>(layers.front());
  }

  /// Shapes flowing between layers: entry i is layer i's input, the last
  /// entry is the logit shape.
  std::vector<Shape> layer_shapes() const {
    std::vector<Shape> shapes{input_shape};
    for (std::size_t i = 0; i < layers.size(); ++i) {
      try {
        shapes.push_back(layer_output_shape(layers[i], shapes.back()));
      } catch (const Error& e) {
        throw Error(e.kind(), "layer " + std::to_string(i) + " (" + layer_kind(layers[i]) +
                                  "): " + e.what());
      }
    }
    return shapes;
  }

  /// Checks the layer chain against input_shape and the class list.
  void validate() const {
    if (layers.empty()) throw Error(ErrorKind::Shape, "model has no layers");
    if (class_names.size() < 2) {
      throw Error(ErrorKind::Shape, "model needs at least 2 class names, got " +
                                        std::to_string(class_names.size()));
    }
    for (std::size_t i = 1; i < layers.size(); ++i) {
      if (std::holds_alternative<EmbeddingLayer>(layers[i])) {
        throw Error(ErrorKind::Shape, "Embedding is only supported as the first layer");
      }
    }
    if (embeds_tokens()) {
      const Tensor& table = std::get<EmbeddingLayer>(layers.front()).table;
      if (table.rank() == 2) {
        for (std::size_t d = 0; d < table.shape()[1]; ++d) {
          if (table[d] != 0.0) {
            throw Error(ErrorKind::Shape, "Embedding row 0 (padding) must be all zeros");
          }
        }
      }
    }
    const auto shapes = layer_shapes();
    const Shape& out = shapes.back();
    if (out.size() != 1 || out[0] != class_names.size()) {
      throw Error(ErrorKind::Shape, "final layer yields " + shape_string(out) + " but model has " +
                                        std::to_string(class_names.size()) + " class names");
    }
  }
};

struct ForwardTrace {
  std::vector<Tensor> inputs;   // inputs[i] fed layer i
  std::vector<Tensor> outputs;  // outputs[i] produced by layer i
  std::vector<std::vector<std::size_t>> argmax;  // per layer, non-empty for max-pool
  Tensor logits;
  std::size_t predicted_class = 0;
};

/// Index of the largest value; ties go to the smallest index.
inline std::size_t argmax_index(const Tensor& t) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < t.size(); ++i) {
    if (t[i] > t[best]) best = i;
  }
  return best;
}

namespace detail {

inline Tensor embed(const EmbeddingLayer& layer, const Tensor& ids) {
  const std::size_t vocab = layer.table.shape()[0];
  const std::size_t dim = layer.table.shape()[1];
  Tensor out({ids.size(), dim});
  for (std::size_t t = 0; t < ids.size(); ++t) {
    const double id = ids[t];
    if (!(id >= 0.0) || id != std::floor(id) || id >= static_cast<double>(vocab)) {
      throw Error(ErrorKind::Shape, "token id " + std::to_string(id) + " at position " +
                                        std::to_string(t) + " outside vocabulary of " +
                                        std::to_string(vocab));
    }
    const auto row = static_cast<std::size_t>(id);
    for (std::size_t d = 0; d < dim; ++d) out[t * dim + d] = layer.table[row * dim + d];
  }
  return out;
}

}  // namespace detail

/// Applies one layer. `argmax` receives the winner indices of a max-pool.
inline Tensor apply_layer(const Layer& layer, const Tensor& x,
                          std::vector<std::size_t>* argmax = nullptr) {
  return std::visit(
      [&](const auto& l) -> Tensor {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, DenseLayer>) {
          return dense_forward(x, l.weights, l.bias);
        } else if constexpr (std::is_same_v<T, ConvLayer>) {
          return conv_forward(x, l.spec);
        } else if constexpr (std::is_same_v<T, PoolLayer>) {
          PoolResult r = pool_forward(x, l.kind, l.window, l.stride);
          if (argmax) *argmax = std::move(r.argmax);
          return std::move(r.output);
        } else if constexpr (std::is_same_v<T, ReluLayer>) {
          return relu_forward(x);
        } else if constexpr (std::is_same_v<T, FlattenLayer>) {
          return x.reshaped({x.size()});
        } else {
          return detail::embed(l, x);
        }
      },
      layer);
}

inline ForwardTrace forward(const Model& model, const Tensor& input) {
  if (input.shape() != model.input_shape) {
    throw Error(ErrorKind::Shape, "input " + shape_string(input.shape()) +
                                      " does not match model input " +
                                      shape_string(model.input_shape));
  }
  const std::size_t n = model.layers.size();
  ForwardTrace trace;
  trace.inputs.reserve(n);
  trace.outputs.reserve(n);
  trace.argmax.resize(n);
  Tensor current = input;
  for (std::size_t i = 0; i < n; ++i) {
    trace.inputs.push_back(current);
    current = apply_layer(model.layers[i], current, &trace.argmax[i]);
    trace.outputs.push_back(current);
  }
  trace.logits = current;
  trace.predicted_class = argmax_index(current);
  return trace;
}

/// Logit of `target_class` for a given value of the explained variables
/// (the input itself, or the embedding output for token models).
inline double logit_at(const Model& model, const Tensor& explained, std::size_t target_class) {
  const std::size_t first = model.embeds_tokens() ? 1 : 0;
  Tensor current = explained;
  for (std::size_t i = first; i < model.layers.size(); ++i) current = apply_layer(model.layers[i], current);
  return current.at(target_class);
}

/// The tensor that explanations are expressed over: the model input, or the
/// embedding output when the model starts with an Embedding layer.
inline const Tensor& explained_variables(const Model& model, const ForwardTrace& trace) {
  return model.embeds_tokens() ? trace.outputs.front() : trace.inputs.front();
}

}  // namespace relprop
