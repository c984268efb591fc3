#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "relprop/error.hpp"
#include "relprop/model_io.hpp"
#include "relprop/tensor.hpp"

namespace relprop {

/// Per-feature affine normalization: stored = (raw - offset) / scale.
struct Normalization {
  std::vector<double> offset;
  std::vector<double> scale;

  bool empty() const { return offset.empty(); }

  double raw(std::size_t feature, double stored) const {
    return stored * scale[feature] + offset[feature];
  }
};

struct Dataset {
  std::vector<Tensor> inputs;
  std::vector<std::size_t> labels;  // empty for unlabeled sets
  std::vector<std::string> class_names;
  Normalization normalization;
  std::vector<std::string> feature_names;              // CSV only
  std::vector<std::vector<std::string>> tokens;        // token files only
  std::vector<std::size_t> dropped_tokens;             // token files only

  std::size_t size() const { return inputs.size(); }
  bool labeled() const { return !labels.empty(); }

  Shape input_shape() const {
    if (inputs.empty()) throw Error(ErrorKind::Shape, "empty dataset has no input shape");
    return inputs.front().shape();
  }

  void validate() const {
    if (labeled() && labels.size() != inputs.size()) {
      throw Error(ErrorKind::Shape, std::to_string(inputs.size()) + " inputs but " +
                                        std::to_string(labels.size()) + " labels");
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] >= class_names.size()) {
        throw Error(ErrorKind::Shape, "label " + std::to_string(labels[i]) + " of sample " +
                                          std::to_string(i) + " exceeds class count " +
                                          std::to_string(class_names.size()));
      }
    }
    for (const Tensor& t : inputs) {
      if (t.shape() != inputs.front().shape()) {
        throw Error(ErrorKind::Shape, "dataset inputs have mixed shapes " +
                                          shape_string(inputs.front().shape()) + " and " +
                                          shape_string(t.shape()));
      }
    }
  }
};

namespace detail {

inline std::vector<std::string> numbered_classes(const std::vector<std::size_t>& labels) {
  std::size_t count = 2;
  for (std::size_t l : labels) count = std::max(count, l + 1);
  std::vector<std::string> names;
  for (std::size_t i = 0; i < count; ++i) names.push_back(std::to_string(i));
  return names;
}

inline std::uint32_t read_be32(const std::string& bytes, std::size_t offset) {
  std::uint32_t v = 0;
  for (std::size_t i = 0; i < 4; ++i) v = (v << 8) | static_cast<unsigned char>(bytes[offset + i]);
  return v;
}

inline void append_be32(std::string& out, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<char>((v >> shift) & 0xff));
}

struct IdxFile {
  std::vector<std::size_t> dims;
  std::string bytes;
  std::size_t data_offset = 0;
};

// Unsigned-byte IDX files only; that is what image and label sets use.
inline IdxFile read_idx(const std::filesystem::path& path, std::size_t expected_rank) {
  IdxFile f;
  f.bytes = read_file(path);
  if (f.bytes.size() < 4) throw Error(ErrorKind::Truncated, path.string() + ": shorter than the IDX magic");
  const auto b = [&](std::size_t i) { return static_cast<unsigned char>(f.bytes[i]); };
  if (b(0) != 0 || b(1) != 0 || b(2) != 0x08 || b(3) != expected_rank) {
    std::ostringstream os;
    os << path.string() << ": bad IDX magic 0x" << std::hex << read_be32(f.bytes, 0)
       << ", expected 0x" << (0x0800 | expected_rank);
    throw Error(ErrorKind::BadMagic, os.str());
  }
  f.data_offset = 4 + 4 * expected_rank;
  if (f.bytes.size() < f.data_offset) throw Error(ErrorKind::Truncated, path.string() + ": truncated IDX header");
  std::size_t count = 1;
  for (std::size_t d = 0; d < expected_rank; ++d) {
    f.dims.push_back(read_be32(f.bytes, 4 + 4 * d));
    count *= f.dims.back();
  }
  if (f.bytes.size() < f.data_offset + count) {
    throw Error(ErrorKind::Truncated, path.string() + ": expected " + std::to_string(count) +
                                          " data bytes, found " +
                                          std::to_string(f.bytes.size() - f.data_offset));
  }
  return f;
}

inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> cells;
  std::string cell;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cell.push_back('"');
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cell.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      cells.push_back(std::move(cell));
      cell.clear();
    } else {
      cell.push_back(c);
    }
  }
  cells.push_back(std::move(cell));
  return cells;
}

inline std::optional<double> parse_double(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

inline std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

inline std::vector<std::string> split_whitespace(std::string_view s) {
  std::vector<std::string> out;
  std::istringstream in{std::string(s)};
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

}  // namespace detail

/// Reads an IDX image file (magic 0x00000803) as 1 x h x w tensors scaled to
/// [0, 1]. Unlabeled.
inline Dataset load_idx_images(const std::filesystem::path& images_path,
                               std::optional<std::size_t> limit = std::nullopt) {
  const auto f = detail::read_idx(images_path, 3);
  const std::size_t n = std::min(f.dims[0], limit.value_or(f.dims[0]));
  const std::size_t h = f.dims[1], w = f.dims[2];
  Dataset ds;
  ds.inputs.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Tensor t({1, h, w});
    for (std::size_t p = 0; p < h * w; ++p) {
      t[p] = static_cast<unsigned char>(f.bytes[f.data_offset + i * h * w + p]) / 255.0;
    }
    ds.inputs.push_back(std::move(t));
  }
  return ds;
}

/// IDX image + label pair (label magic 0x00000801).
inline Dataset load_idx(const std::filesystem::path& images_path,
                        const std::filesystem::path& labels_path,
                        std::optional<std::size_t> limit = std::nullopt) {
  Dataset ds = load_idx_images(images_path, limit);
  const auto images_header = detail::read_idx(images_path, 3);
  const auto lf = detail::read_idx(labels_path, 1);
  if (lf.dims[0] < images_header.dims[0]) {
    throw Error(ErrorKind::Truncated, labels_path.string() + ": " + std::to_string(lf.dims[0]) +
                                          " labels for " + std::to_string(images_header.dims[0]) +
                                          " images");
  }
  for (std::size_t i = 0; i < ds.inputs.size(); ++i) {
    ds.labels.push_back(static_cast<unsigned char>(lf.bytes[lf.data_offset + i]));
  }
  ds.class_names = detail::numbered_classes(ds.labels);
  ds.validate();
  return ds;
}

/// Serializes rank-2 byte images (values in [0, 1], rounded) as IDX.
inline std::string encode_idx_images(const std::vector<Tensor>& images) {
  if (images.empty()) throw Error(ErrorKind::Shape, "no images to encode");
  const Shape& s = images.front().shape();
  const std::size_t h = s[s.size() - 2], w = s.back();
  std::string out;
  detail::append_be32(out, 0x00000803);
  detail::append_be32(out, static_cast<std::uint32_t>(images.size()));
  detail::append_be32(out, static_cast<std::uint32_t>(h));
  detail::append_be32(out, static_cast<std::uint32_t>(w));
  for (const Tensor& img : images) {
    if (img.size() != h * w) throw Error(ErrorKind::Shape, "IDX images must share one h x w shape");
    for (double v : img.values()) {
      out.push_back(static_cast<char>(static_cast<unsigned char>(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5)));
    }
  }
  return out;
}

inline std::string encode_idx_labels(const std::vector<std::size_t>& labels) {
  std::string out;
  detail::append_be32(out, 0x00000801);
  detail::append_be32(out, static_cast<std::uint32_t>(labels.size()));
  for (std::size_t l : labels) out.push_back(static_cast<char>(l));
  return out;
}

/// Numeric CSV with a header row. Features keep header order minus the label
/// column. With `normalize`, each feature is min-max scaled and the
/// (offset, scale) pair recorded; a constant column gets scale 1.
inline Dataset load_csv(const std::filesystem::path& path,
                        const std::optional<std::string>& label_column,
                        bool normalize = false) {
  const auto lines = detail::read_lines(path);
  if (lines.empty()) throw Error(ErrorKind::Format, path.string() + ": missing CSV header");
  const auto header = detail::split_csv_line(lines.front());

  std::optional<std::size_t> label_idx;
  if (label_column) {
    const auto it = std::find(header.begin(), header.end(), *label_column);
    if (it == header.end()) {
      std::string available;
      for (const auto& h : header) available += (available.empty() ? "" : ", ") + h;
      throw Error(ErrorKind::Format, path.string() + ": no label column '" + *label_column +
                                         "'; available columns: " + available);
    }
    label_idx = static_cast<std::size_t>(it - header.begin());
  }

  Dataset ds;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (c != label_idx) ds.feature_names.push_back(header[c]);
  }
  if (ds.feature_names.empty()) throw Error(ErrorKind::Format, path.string() + ": no feature columns");

  for (std::size_t row = 1; row < lines.size(); ++row) {
    if (lines[row].empty()) continue;
    const auto cells = detail::split_csv_line(lines[row]);
    if (cells.size() != header.size()) {
      throw Error(ErrorKind::Format, path.string() + ": row " + std::to_string(row) + " has " +
                                         std::to_string(cells.size()) + " cells, header has " +
                                         std::to_string(header.size()));
    }
    Tensor x({ds.feature_names.size()});
    std::size_t f = 0;
    for (std::size_t c = 0; c < cells.size(); ++c) {
      const auto v = detail::parse_double(cells[c]);
      if (!v) {
        throw Error(ErrorKind::Format, path.string() + ": row " + std::to_string(row) +
                                           ", column '" + header[c] + "': non-numeric cell '" +
                                           cells[c] + "'");
      }
      if (c == label_idx) {
        if (*v < 0 || *v != static_cast<double>(static_cast<std::size_t>(*v))) {
          throw Error(ErrorKind::Format, path.string() + ": row " + std::to_string(row) +
                                             ": label must be a non-negative integer, got '" +
                                             cells[c] + "'");
        }
        ds.labels.push_back(static_cast<std::size_t>(*v));
      } else {
        x[f++] = *v;
      }
    }
    ds.inputs.push_back(std::move(x));
  }

  if (normalize && !ds.inputs.empty()) {
    const std::size_t d = ds.feature_names.size();
    ds.normalization.offset.assign(d, 0.0);
    ds.normalization.scale.assign(d, 1.0);
    for (std::size_t f = 0; f < d; ++f) {
      double lo = ds.inputs.front()[f], hi = lo;
      for (const Tensor& x : ds.inputs) {
        lo = std::min(lo, x[f]);
        hi = std::max(hi, x[f]);
      }
      ds.normalization.offset[f] = lo;
      ds.normalization.scale[f] = hi > lo ? hi - lo : 1.0;
    }
    for (Tensor& x : ds.inputs) {
      for (std::size_t f = 0; f < d; ++f) {
        x[f] = (x[f] - ds.normalization.offset[f]) / ds.normalization.scale[f];
      }
    }
  }
  if (label_idx) ds.class_names = detail::numbered_classes(ds.labels);
  ds.validate();
  return ds;
}

/// Vocabulary TSV: one `token<TAB>id` per line. Id 0 is reserved for
/// padding and unknown tokens.
inline std::map<std::string, std::size_t> load_vocabulary(const std::filesystem::path& path) {
  std::map<std::string, std::size_t> vocab;
  const auto lines = detail::read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto tab = lines[i].find('\t');
    const auto id = tab == std::string::npos ? std::nullopt
                                             : detail::parse_double(std::string_view(lines[i]).substr(tab + 1));
    if (!id || *id < 0 || *id != static_cast<double>(static_cast<std::size_t>(*id))) {
      throw Error(ErrorKind::Format, path.string() + ": line " + std::to_string(i + 1) +
                                         ": expected token<TAB>id");
    }
    vocab[lines[i].substr(0, tab)] = static_cast<std::size_t>(*id);
  }
  if (vocab.empty()) throw Error(ErrorKind::Config, path.string() + ": empty vocabulary");
  return vocab;
}

/// One whitespace-tokenized document per line, optionally prefixed by an
/// integer label and a TAB. Sequences are truncated or zero-padded to
/// `max_len`; unknown tokens map to id 0.
inline Dataset load_tokens(const std::filesystem::path& path,
                           const std::filesystem::path& vocabulary_path, std::size_t max_len) {
  if (max_len == 0) throw Error(ErrorKind::Config, "max_len must be positive");
  const auto vocab = load_vocabulary(vocabulary_path);
  Dataset ds;
  const auto lines = detail::read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    std::string_view text = lines[i];
    if (text.empty()) continue;
    if (const auto tab = text.find('\t'); tab != std::string_view::npos) {
      const auto label = detail::parse_double(text.substr(0, tab));
      if (!label || *label < 0) {
        throw Error(ErrorKind::Format, path.string() + ": line " + std::to_string(i + 1) + ": bad label");
      }
      ds.labels.push_back(static_cast<std::size_t>(*label));
      text = text.substr(tab + 1);
    } else if (!ds.labels.empty()) {
      throw Error(ErrorKind::Format, path.string() + ": line " + std::to_string(i + 1) + ": missing label");
    }
    auto words = detail::split_whitespace(text);
    const std::size_t dropped = words.size() > max_len ? words.size() - max_len : 0;
    words.resize(std::min(words.size(), max_len));
    Tensor ids({max_len});
    for (std::size_t t = 0; t < words.size(); ++t) {
      const auto it = vocab.find(words[t]);
      ids[t] = it == vocab.end() ? 0.0 : static_cast<double>(it->second);
    }
    ds.inputs.push_back(std::move(ids));
    ds.tokens.push_back(std::move(words));
    ds.dropped_tokens.push_back(dropped);
  }
  if (ds.labeled()) ds.class_names = detail::numbered_classes(ds.labels);
  ds.validate();
  return ds;
}

}  // namespace relprop
