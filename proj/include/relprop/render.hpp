#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "relprop/error.hpp"
#include "relprop/model_io.hpp"
#include "relprop/tensor.hpp"

namespace relprop {

enum class ColorMapKind { DivergingSigned, SequentialMagnitude };

struct ColorMapSpec {
  ColorMapKind kind = ColorMapKind::DivergingSigned;
  std::optional<double> saturation;  // defaults to the map's max |R|
};

using Rgb = std::array<std::uint8_t, 3>;

namespace detail {

// round half away from zero, for non-negative inputs
inline std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0));
}

}  // namespace detail

inline double resolve_saturation(std::span<const double> values, const ColorMapSpec& spec) {
  if (spec.saturation) {
    if (!(*spec.saturation > 0.0)) throw Error(ErrorKind::Config, "saturation must be positive");
    return *spec.saturation;
  }
  double sat = 0.0;
  for (double v : values) sat = std::max(sat, std::abs(v));
  return sat;  // 0 only for an all-zero map
}

/// Diverging: +sat -> red, 0 -> white, -sat -> blue. Magnitude: 0 -> black,
/// sat -> red. Linear in between, clamped beyond sat. `sat` == 0 maps
/// everything to the zero color.
inline Rgb map_color(double r, double sat, ColorMapKind kind) {
  const double t = sat > 0.0 ? std::clamp(r / sat, -1.0, 1.0) : 0.0;
  if (kind == ColorMapKind::SequentialMagnitude) return {detail::to_byte(255.0 * std::abs(t)), 0, 0};
  const std::uint8_t fade = detail::to_byte(255.0 * (1.0 - std::abs(t)));
  if (t >= 0.0) return {255, fade, fade};
  return {fade, fade, 255};
}

/// Binary PPM (P6) bytes for a rank-2 map, one pixel per cell.
inline std::string encode_heatmap_ppm(const Tensor& map, const ColorMapSpec& spec) {
  if (map.rank() != 2) {
    throw Error(ErrorKind::Shape, "heatmap needs a rank-2 map (sum channels first), got " + shape_string(map.shape()));
  }
  const double sat = resolve_saturation(map.values(), spec);
  const std::size_t h = map.shape()[0], w = map.shape()[1];
  std::string out = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  out.reserve(out.size() + 3 * h * w);
  for (double r : map.values()) {
    for (std::uint8_t b : map_color(r, sat, spec.kind)) out.push_back(static_cast<char>(b));
  }
  return out;
}

inline void render_heatmap_image(const Tensor& map, const ColorMapSpec& spec, const std::filesystem::path& path) {
  write_file_atomic(path, encode_heatmap_ppm(map, spec));
}

inline std::string html_escape(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  for (char c : text) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&#39;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

/// Self-contained HTML with one background-colored span per token. The
/// diverging map is always used here; only the saturation is taken from spec.
inline std::string encode_text_html(const std::vector<std::string>& tokens, const std::vector<double>& relevance,
                                    const ColorMapSpec& spec) {
  if (tokens.size() != relevance.size()) {
    throw Error(ErrorKind::Shape, std::to_string(tokens.size()) + " tokens but " + std::to_string(relevance.size()) +
                                      " relevance values");
  }
  const double sat = resolve_saturation(relevance, spec);
  std::string out =
      "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n<title>token relevance</title>\n</head>\n"
      "<body>\n<p style=\"font-family:monospace;line-height:1.8\">\n";
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const Rgb c = map_color(relevance[i], sat, ColorMapKind::DivergingSigned);
    char style[64];
    std::snprintf(style, sizeof style, "background-color:rgb(%d,%d,%d)", c[0], c[1], c[2]);
    char title[48];
    std::snprintf(title, sizeof title, "%.6g", relevance[i]);
    out += "<span style=\"" + std::string(style) + "\" title=\"R=" + title + "\">" + html_escape(tokens[i]) + "</span>";
    out += i + 1 < tokens.size() ? " " : "\n";
  }
  out += "</p>\n</body>\n</html>\n";
  return out;
}

inline void render_text_html(const std::vector<std::string>& tokens, const std::vector<double>& relevance,
                             const ColorMapSpec& spec, const std::filesystem::path& path) {
  write_file_atomic(path, encode_text_html(tokens, relevance, spec));
}

}  // namespace relprop
