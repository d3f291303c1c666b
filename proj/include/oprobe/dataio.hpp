// Copyright 2026 The oprobe Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
#pragma once

// Activation datasets (OPAC1 binary + JSON manifest) and taxonomy TSV files.
//
// OPAC1 layout, all integers and floats little-endian:
//
//   offset  size        field
//   0       4           magic "OPAC"
//   4       1           version (1)
//   5       8           u64 n_samples
//   13      8           u64 dim
//   21      4           u32 layer_id
//   25      1           u8 split (0 train, 1 val)
//   26      4·N·dim     f32 activations, row-major
//   ...     4·N         u32 labels
//
// The manifest `<file>.json` holds {source_model, n_classes, layer_id, split,
// crc32}, where crc32 covers every byte after the 26-byte header.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "oprobe/binary.hpp"
#include "oprobe/error.hpp"
#include "oprobe/numerics.hpp"

namespace oprobe {

namespace fs = std::filesystem;

enum class Split : std::uint8_t { train = 0, val = 1 };

inline std::string to_string(Split s) { return s == Split::train ? "train" : "val"; }

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  throw FormatError("unknown split '" + std::string(s) + "'");
}

/// Class-token activations of one encoder layer with one label per row.
struct ActivationDataset {
  MatrixF features;                  // n_samples × dim
  std::vector<std::uint32_t> labels;  // one per row
  std::uint32_t n_classes = 0;
  std::uint32_t layer_id = 0;
  Split split = Split::train;
  std::string source_model;

  std::size_t n_samples() const noexcept { return features.rows(); }
  std::size_t dim() const noexcept { return features.cols(); }

  void validate() const {
    if (labels.size() != features.rows()) {
      throw ValidationError("dataset has " + std::to_string(features.rows()) +
                            " rows but " + std::to_string(labels.size()) +
                            " labels");
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] >= n_classes) {
        throw ValidationError("label " + std::to_string(labels[i]) + " at row " +
                              std::to_string(i) + " exceeds class count " +
                              std::to_string(n_classes));
      }
    }
    const auto& v = features.buffer();
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!std::isfinite(v[i])) {
        throw ValidationError("non-finite activation at row " +
                              std::to_string(i / std::max<std::size_t>(dim(), 1)) +
                              ", column " +
                              std::to_string(i % std::max<std::size_t>(dim(), 1)));
      }
    }
  }
};

inline constexpr std::string_view kActivationMagic = "OPAC";
inline constexpr std::uint8_t kActivationVersion = 1;
inline constexpr std::size_t kActivationHeaderBytes = 26;

inline fs::path manifest_path(const fs::path& data_path) {
  fs::path p = data_path;
  p += ".json";
  return p;
}

inline binary::Bytes encode_activations(const ActivationDataset& ds) {
  binary::Writer w;
  w.put_bytes(kActivationMagic);
  w.put_u8(kActivationVersion);
  w.put_u64(ds.n_samples());
  w.put_u64(ds.dim());
  w.put_u32(ds.layer_id);
  w.put_u8(static_cast<std::uint8_t>(ds.split));
  w.put_f32s(ds.features.values());
  for (std::uint32_t label : ds.labels) w.put_u32(label);
  return w.take();
}

inline nlohmann::json activation_manifest(const ActivationDataset& ds,
                                          std::uint32_t crc) {
  return {{"source_model", ds.source_model},
          {"n_classes", ds.n_classes},
          {"layer_id", ds.layer_id},
          {"split", to_string(ds.split)},
          {"crc32", crc}};
}

/// Writes `path` and its manifest `path.json`.
inline void write_activations(const ActivationDataset& ds, const fs::path& path) {
  ds.validate();
  const binary::Bytes bytes = encode_activations(ds);
  const std::uint32_t crc = binary::crc32(
      std::span(bytes).subspan(kActivationHeaderBytes));
  binary::write_file(path, bytes);
  binary::write_text(manifest_path(path),
                     activation_manifest(ds, crc).dump(2) + "\n");
}

/// Parses an OPAC1 byte image. `manifest` may be null, in which case the
/// checksum is not verified and the class count is inferred from the labels.
inline ActivationDataset decode_activations(std::span<const std::uint8_t> bytes,
                                            const nlohmann::json* manifest,
                                            const std::string& what = "OPAC1") {
  binary::Reader r(bytes, what);
  if (r.remaining() < kActivationHeaderBytes) {
    throw FormatError(what + ": truncated header (" +
                      std::to_string(r.remaining()) + " bytes)");
  }
  if (r.bytes(4) != kActivationMagic) throw FormatError(what + ": bad magic");
  const std::uint8_t version = r.u8();
  if (version != kActivationVersion) {
    throw FormatError(what + ": unsupported version " + std::to_string(version));
  }
  const std::uint64_t n = r.u64();
  const std::uint64_t dim = r.u64();
  const std::uint32_t layer = r.u32();
  const std::uint8_t split = r.u8();
  if (split > 1) throw FormatError(what + ": bad split byte " + std::to_string(split));

  constexpr std::uint64_t kMax = std::numeric_limits<std::uint64_t>::max();
  if (dim != 0 && n > kMax / dim / 4) throw FormatError(what + ": absurd shape");
  const std::uint64_t payload = 4 * n * dim + 4 * n;
  if (payload != r.remaining()) {
    throw FormatError(what + ": payload is " + std::to_string(r.remaining()) +
                      " bytes, header implies " + std::to_string(payload) +
                      (payload > r.remaining() ? " (truncated)" : " (trailing bytes)"));
  }
  if (manifest) {
    const auto crc = binary::crc32(bytes.subspan(kActivationHeaderBytes));
    const auto expected = manifest->at("crc32").get<std::uint32_t>();
    if (crc != expected) {
      throw FormatError(what + ": checksum mismatch (file " + std::to_string(crc) +
                        ", manifest " + std::to_string(expected) + ")");
    }
  }

  ActivationDataset ds;
  ds.features = MatrixF(n, dim);
  r.f32s(ds.features.values());
  ds.labels.resize(n);
  for (auto& label : ds.labels) label = r.u32();
  ds.layer_id = layer;
  ds.split = static_cast<Split>(split);
  if (manifest) {
    ds.n_classes = manifest->at("n_classes").get<std::uint32_t>();
    ds.source_model = manifest->at("source_model").get<std::string>();
    if (manifest->at("layer_id").get<std::uint32_t>() != layer ||
        parse_split(manifest->at("split").get<std::string>()) != ds.split) {
      throw ValidationError(what + ": manifest layer/split disagree with header");
    }
  } else {
    std::uint32_t hi = 0;
    for (auto label : ds.labels) hi = std::max(hi, label + 1);
    ds.n_classes = hi;
  }
  ds.validate();
  return ds;
}

inline ActivationDataset read_activations(const fs::path& path) {
  const binary::Bytes bytes = binary::read_file(path);
  const fs::path mpath = manifest_path(path);
  if (!fs::exists(mpath)) {
    return decode_activations(bytes, nullptr, path.string());
  }
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(binary::read_text(mpath));
    for (const char* key : {"source_model", "n_classes", "layer_id", "split", "crc32"}) {
      if (!manifest.contains(key)) {
        throw FormatError(mpath.string() + ": missing key '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(mpath.string() + ": " + e.what());
  }
  try {
    return decode_activations(bytes, &manifest, path.string());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(mpath.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Taxonomy TSV
// ---------------------------------------------------------------------------

/// Raw contents of a taxonomy file.
///
/// Text format (tab separated, '#' starts a comment line):
///
///   [synsets]            optional; id<TAB>name, authoritative when present
///   [edges]              child_id<TAB>parent_id; lines before any header
///                        are also edges
///   [leaves]             label_index<TAB>leaf_id, indices 0..L-1
struct TaxonomyFile {
  std::vector<std::pair<std::string, std::string>> synsets;  // (id, name)
  std::vector<std::pair<std::string, std::string>> edges;    // (child, parent)
  std::vector<std::string> leaves;                           // by label index
};

namespace detail {

inline std::vector<std::string> split_tabs(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    out.emplace_back(line.substr(start, tab - start));
    if (tab == std::string_view::npos) break;
    start = tab + 1;
  }
  return out;
}

// Returns one cycle as "a -> b -> ... -> a", or empty when the graph is a DAG.
inline std::string find_cycle(
    const std::vector<std::string>& ids,
    const std::vector<std::vector<std::size_t>>& parents) {
  enum Color : std::uint8_t { white, grey, black };
  std::vector<Color> color(ids.size(), white);
  std::vector<std::size_t> path;
  std::vector<std::pair<std::size_t, std::size_t>> stack;  // (node, next edge)
  for (std::size_t root = 0; root < ids.size(); ++root) {
    if (color[root] != white) continue;
    stack.push_back({root, 0});
    color[root] = grey;
    path.push_back(root);
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < parents[node].size()) {
        const std::size_t p = parents[node][next++];
        if (color[p] == grey) {
          auto it = std::find(path.begin(), path.end(), p);
          std::string cycle;
          for (; it != path.end(); ++it) cycle += ids[*it] + " -> ";
          return cycle + ids[p];
        }
        if (color[p] == white) {
          color[p] = grey;
          path.push_back(p);
          stack.push_back({p, 0});
        }
      } else {
        color[node] = black;
        path.pop_back();
        stack.pop_back();
      }
    }
  }
  return {};
}

}  // namespace detail

/// Checks ids, leaf indexing and acyclicity. Throws ValidationError.
inline void validate_taxonomy(const TaxonomyFile& tf) {
  if (tf.leaves.empty()) throw ValidationError("taxonomy declares no leaves");
  std::unordered_map<std::string, std::size_t> index;
  std::vector<std::string> ids;
  for (const auto& [id, name] : tf.synsets) {
    if (id.empty()) throw ValidationError("empty synset id");
    if (!index.emplace(id, ids.size()).second) {
      throw ValidationError("duplicate synset id '" + id + "'");
    }
    ids.push_back(id);
  }
  std::vector<std::vector<std::size_t>> parents(ids.size());
  for (const auto& [child, parent] : tf.edges) {
    const auto c = index.find(child);
    const auto p = index.find(parent);
    if (c == index.end() || p == index.end()) {
      throw ValidationError("edge " + child + " -> " + parent +
                            " references unknown id '" +
                            (c == index.end() ? child : parent) + "'");
    }
    parents[c->second].push_back(p->second);
  }
  std::set<std::string> seen;
  for (const auto& leaf : tf.leaves) {
    if (!index.count(leaf)) throw ValidationError("unknown leaf id '" + leaf + "'");
    if (!seen.insert(leaf).second) throw ValidationError("duplicate leaf id '" + leaf + "'");
  }
  if (const std::string cycle = detail::find_cycle(ids, parents); !cycle.empty()) {
    throw ValidationError("hypernym cycle: " + cycle);
  }
}

/// Parses taxonomy TSV text. Syntax problems raise FormatError, semantic ones
/// (unknown ids, cycles, bad leaf indexing) raise ValidationError.
inline TaxonomyFile parse_taxonomy(std::string_view text,
                                   const std::string& what = "taxonomy") {
  enum class Section { edges, synsets, leaves };
  Section section = Section::edges;
  bool have_synsets = false;
  TaxonomyFile tf;
  std::map<std::uint64_t, std::string> leaves;

  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    std::string_view line = text.substr(pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty() || line.front() == '#') continue;
    const auto where = [&] { return what + ":" + std::to_string(line_no) + ": "; };

    if (line.front() == '[') {
      if (line == "[edges]") section = Section::edges;
      else if (line == "[synsets]") section = Section::synsets, have_synsets = true;
      else if (line == "[leaves]") section = Section::leaves;
      else throw FormatError(where() + "unknown section " + std::string(line));
      continue;
    }
    auto fields = detail::split_tabs(line);
    if (fields.size() != 2) {
      throw FormatError(where() + "expected 2 tab-separated fields, got " +
                        std::to_string(fields.size()));
    }
    switch (section) {
      case Section::edges:
        if (fields[0].empty() || fields[1].empty()) throw FormatError(where() + "empty id");
        tf.edges.emplace_back(std::move(fields[0]), std::move(fields[1]));
        break;
      case Section::synsets:
        tf.synsets.emplace_back(std::move(fields[0]), std::move(fields[1]));
        break;
      case Section::leaves: {
        std::uint64_t idx = 0;
        try {
          std::size_t used = 0;
          idx = std::stoull(fields[0], &used);
          if (used != fields[0].size()) throw std::invalid_argument("junk");
        } catch (const std::exception&) {
          throw FormatError(where() + "bad leaf index '" + fields[0] + "'");
        }
        if (!leaves.emplace(idx, std::move(fields[1])).second) {
          throw ValidationError(where() + "duplicate leaf index " + std::to_string(idx));
        }
        break;
      }
    }
  }

  std::uint64_t expect = 0;
  for (auto& [idx, id] : leaves) {
    if (idx != expect) {
      throw ValidationError(what + ": leaf indices must be 0.." +
                            std::to_string(leaves.size() - 1) + ", missing " +
                            std::to_string(expect));
    }
    tf.leaves.push_back(std::move(id));
    ++expect;
  }
  if (!have_synsets) {
    // Synsets are every id mentioned, in order of first appearance.
    std::set<std::string> seen;
    auto add = [&](const std::string& id) {
      if (seen.insert(id).second) tf.synsets.emplace_back(id, id);
    };
    for (const auto& [c, p] : tf.edges) add(c), add(p);
    for (const auto& leaf : tf.leaves) add(leaf);
  }
  validate_taxonomy(tf);
  return tf;
}

inline TaxonomyFile read_taxonomy(const fs::path& path) {
  return parse_taxonomy(binary::read_text(path), path.string());
}

inline std::string format_taxonomy(const TaxonomyFile& tf) {
  std::ostringstream o;
  o << "# oprobe taxonomy\n[synsets]\n";
  for (const auto& [id, name] : tf.synsets) o << id << '\t' << name << '\n';
  o << "[edges]\n";
  for (const auto& [c, p] : tf.edges) o << c << '\t' << p << '\n';
  o << "[leaves]\n";
  for (std::size_t i = 0; i < tf.leaves.size(); ++i) o << i << '\t' << tf.leaves[i] << '\n';
  return o.str();
}

inline void write_taxonomy(const TaxonomyFile& tf, const fs::path& path) {
  validate_taxonomy(tf);
  binary::write_text(path, format_taxonomy(tf));
}

}  // namespace oprobe
