#pragma once

#include <openssl/evp.h>

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "relprop/error.hpp"
#include "relprop/model.hpp"

namespace relprop {

namespace fs = std::filesystem;

inline constexpr int kModelFormatVersion = 1;
inline constexpr const char* kManifestName = "model.json";
inline constexpr const char* kWeightsName = "weights.bin";

inline std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorKind::Io, "sha256 computation failed");
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xf]);
  }
  return out;
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Writes `bytes` to a sibling temp file, then renames over `path`.
inline void write_file_atomic(const fs::path& path, std::string_view bytes) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::Io, "cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorKind::Io, "write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot replace " + path.string() + ": " + ec.message());
}

namespace detail {

inline void append_f32(std::string& blob, double value) {
  const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(value));
  for (int shift = 0; shift < 32; shift += 8) blob.push_back(static_cast<char>((bits >> shift) & 0xff));
}

inline double read_f32(const std::string& blob, std::size_t index) {
  std::uint32_t bits = 0;
  for (int b = 0; b < 4; ++b) {
    bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(blob[4 * index + b])) << (8 * b);
  }
  return static_cast<double>(std::bit_cast<float>(bits));
}

inline nlohmann::json extent_json(Extent2 e) { return nlohmann::json::array({e[0], e[1]}); }

inline Extent2 extent_from(const nlohmann::json& j, const char* key) {
  const auto& v = j.at(key);
  if (!v.is_array() || v.size() != 2) {
    throw Error(ErrorKind::Format, std::string("expected [h, w] for ") + key);
  }
  return {v[0].get<std::size_t>(), v[1].get<std::size_t>()};
}

// Parameter tensors of a layer in blob order.
template <typename L>
auto layer_params(L& layer) {
  using TensorPtr = std::conditional_t<std::is_const_v<L>, const Tensor*, Tensor*>;
  std::vector<TensorPtr> out;
  if (auto* d = std::get_if<DenseLayer>(&layer)) out = {&d->weights, &d->bias};
  else if (auto* c = std::get_if<ConvLayer>(&layer)) out = {&c->spec.kernel, &c->spec.bias};
  else if (auto* e = std::get_if<EmbeddingLayer>(&layer)) out = {&e->table};
  return out;
}

inline nlohmann::json layer_to_json(const Layer& layer) {
  nlohmann::json params = nlohmann::json::object();
  if (auto* d = std::get_if<DenseLayer>(&layer)) {
    params["in"] = d->weights.shape()[0];
    params["out"] = d->weights.shape()[1];
  } else if (auto* c = std::get_if<ConvLayer>(&layer)) {
    params["in_channels"] = c->spec.in_channels();
    params["out_channels"] = c->spec.out_channels();
    params["kernel"] = extent_json({c->spec.kernel_h(), c->spec.kernel_w()});
    params["stride"] = extent_json(c->spec.stride);
    params["padding"] = extent_json(c->spec.padding);
  } else if (auto* p = std::get_if<PoolLayer>(&layer)) {
    params["window"] = extent_json(p->window);
    params["stride"] = extent_json(p->stride);
  } else if (auto* e = std::get_if<EmbeddingLayer>(&layer)) {
    params["vocab"] = e->table.shape()[0];
    params["dim"] = e->table.shape()[1];
  }
  return {{"kind", layer_kind(layer)}, {"params", params}};
}

// Builds a layer with zero-filled parameter tensors of the declared shapes.
inline Layer layer_skeleton(const nlohmann::json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  const nlohmann::json params = j.value("params", nlohmann::json::object());
  if (kind == "Dense") {
    const auto n = params.at("in").get<std::size_t>(), m = params.at("out").get<std::size_t>();
    return DenseLayer{Tensor({n, m}), Tensor({m})};
  }
  if (kind == "Conv") {
    const auto k = extent_from(params, "kernel");
    const auto cout = params.at("out_channels").get<std::size_t>();
    ConvSpec spec{Tensor({cout, params.at("in_channels").get<std::size_t>(), k[0], k[1]}),
                  Tensor({cout}), extent_from(params, "stride"), extent_from(params, "padding")};
    return ConvLayer{std::move(spec)};
  }
  if (kind == "MaxPool" || kind == "AvgPool") {
    return PoolLayer{kind == "MaxPool" ? PoolKind::Max : PoolKind::Avg, extent_from(params, "window"),
                     extent_from(params, "stride")};
  }
  if (kind == "ReLU") return ReluLayer{};
  if (kind == "Flatten") return FlattenLayer{};
  if (kind == "Embedding") {
    return EmbeddingLayer{Tensor({params.at("vocab").get<std::size_t>(), params.at("dim").get<std::size_t>()})};
  }
  throw Error(ErrorKind::Format, "unknown layer kind '" + kind + "'");
}

inline std::string describe_params(const Layer& layer) {
  if (auto* d = std::get_if<DenseLayer>(&layer)) {
    return "Dense " + std::to_string(d->weights.shape()[0]) + "->" + std::to_string(d->weights.shape()[1]);
  }
  return layer_kind(layer);
}

// A path ending in ".json" names the manifest itself; anything else is a
// model directory holding model.json and weights.bin.
inline fs::path manifest_path(const fs::path& path) {
  return path.extension() == ".json" ? path : path / kManifestName;
}

}  // namespace detail

/// Saves `model` as `<dir>/model.json` plus `<dir>/weights.bin`. A `path`
/// ending in .json names the manifest directly; the blob goes next to it.
inline void save_model(const Model& model, const fs::path& path) {
  model.validate();
  const fs::path manifest = detail::manifest_path(path);
  const fs::path dir = manifest.parent_path();
  if (!dir.empty()) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw Error(ErrorKind::Io, "cannot create " + dir.string() + ": " + ec.message());
  }
  const std::string weights_name = manifest.stem().string() == "model"
                                       ? std::string(kWeightsName)
                                       : manifest.stem().string() + ".weights.bin";

  std::string blob;
  nlohmann::json layers = nlohmann::json::array();
  for (const Layer& layer : model.layers) {
    layers.push_back(detail::layer_to_json(layer));
    for (const Tensor* t : detail::layer_params(layer)) {
      for (double v : t->values()) detail::append_f32(blob, v);
    }
  }
  nlohmann::json j;
  j["format_version"] = kModelFormatVersion;
  j["input_shape"] = model.input_shape;
  j["layers"] = std::move(layers);
  j["class_names"] = model.class_names;
  j["weights_file"] = weights_name;
  j["weights_sha256"] = sha256_hex(blob);

  write_file_atomic(dir / weights_name, blob);
  write_file_atomic(manifest, j.dump(2) + "\n");
}

/// Loads a model saved by save_model. Weights are widened from float32.
inline Model load_model(const fs::path& path) {
  const fs::path manifest = detail::manifest_path(path);
  if (!fs::exists(manifest)) throw Error(ErrorKind::Io, "model manifest not found: " + manifest.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(manifest));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Format, "invalid model manifest " + manifest.string() + ": " + e.what());
  }

  Model model;
  std::string weights_name, expected_hash;
  try {
    if (j.at("format_version").get<int>() != kModelFormatVersion) {
      throw Error(ErrorKind::Format, "unsupported format_version " + j.at("format_version").dump());
    }
    model.input_shape = j.at("input_shape").get<Shape>();
    model.class_names = j.at("class_names").get<std::vector<std::string>>();
    for (const auto& lj : j.at("layers")) model.layers.push_back(detail::layer_skeleton(lj));
    weights_name = j.at("weights_file").get<std::string>();
    expected_hash = j.at("weights_sha256").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Format, "malformed model manifest: " + std::string(e.what()));
  }

  const fs::path blob_path = manifest.parent_path() / weights_name;
  if (!fs::exists(blob_path)) throw Error(ErrorKind::Io, "weights file not found: " + blob_path.string());
  const std::string blob = read_file(blob_path);
  if (blob.size() % 4 != 0) {
    throw Error(ErrorKind::Format, "weights blob size " + std::to_string(blob.size()) +
                                       " is not a multiple of 4 bytes");
  }
  const std::size_t available = blob.size() / 4;

  std::size_t cursor = 0;
  for (std::size_t li = 0; li < model.layers.size(); ++li) {
    Layer& layer = model.layers[li];
    const auto params = detail::layer_params(layer);
    std::size_t need = 0;
    for (const Tensor* t : params) need += t->size();
    if (cursor + need > available) {
      std::string what = "layer " + std::to_string(li) + " (" + detail::describe_params(layer) + "): expected ";
      if (params.size() == 2) {
        what += std::to_string(params[0]->size()) + " weight floats (+" +
                std::to_string(params[1]->size()) + " bias)";
      } else {
        what += std::to_string(need) + " weight floats";
      }
      what += ", blob has " + std::to_string(available - cursor) + " remaining";
      throw Error(ErrorKind::Shape, what);
    }
    for (Tensor* t : params) {
      for (double& v : t->values()) v = detail::read_f32(blob, cursor++);
    }
  }
  if (cursor != available) {
    throw Error(ErrorKind::Shape, "weights blob has " + std::to_string(available - cursor) +
                                      " trailing floats beyond the declared layers");
  }
  if (sha256_hex(blob) != expected_hash) {
    throw Error(ErrorKind::Checksum, "weights checksum mismatch for " + blob_path.string());
  }
  model.validate();
  return model;
}

/// Rounds every parameter to float32, i.e. what a save/load cycle preserves.
inline Model rounded_to_f32(Model model) {
  for (Layer& layer : model.layers) {
    for (Tensor* t : detail::layer_params(layer)) {
      for (double& v : t->values()) v = static_cast<double>(static_cast<float>(v));
    }
  }
  return model;
}

}  // namespace relprop
