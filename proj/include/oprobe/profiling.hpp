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

// Per-head class profiles (which classes each SAE hidden unit fires on) and
// the LCH-height × coverage report built from them.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "oprobe/dataio.hpp"
#include "oprobe/error.hpp"
#include "oprobe/log.hpp"
#include "oprobe/sae.hpp"
#include "oprobe/taxonomy.hpp"

namespace oprobe {

struct ProfileConfig {
  /// A head "fires" on a row when z_k > activation_epsilon × max_k, where
  /// max_k is the head's largest activation over the validation set.
  double activation_epsilon = 1e-6;
  /// C_k = classes whose firing fraction is at least this.
  double class_threshold = 0.5;
  /// Classes with fewer validation rows are left out of every C_k.
  std::size_t min_images_per_class = 10;

  void validate() const {
    if (!(class_threshold > 0.0 && class_threshold <= 1.0)) {
      throw ArgumentError("class_threshold must lie in (0, 1]");
    }
    if (!(activation_epsilon >= 0.0) || !std::isfinite(activation_epsilon)) {
      throw ArgumentError("activation_epsilon must be >= 0");
    }
  }
};

inline nlohmann::json to_json(const ProfileConfig& c) {
  return {{"activation_epsilon", c.activation_epsilon},
          {"class_threshold", c.class_threshold},
          {"min_images_per_class", c.min_images_per_class}};
}

struct HeadProfile {
  std::size_t head_index = 0;
  ClassSet class_set;
  std::vector<double> activation_freq;  // per class
  std::vector<double> mean_activation;  // per class, mean of z_k over its rows
  std::optional<std::string> lch_id;
  std::optional<double> lch_height;
  std::optional<double> coverage;
};

struct ProfileSet {
  std::vector<HeadProfile> heads;
  std::size_t n_classes = 0;
  std::vector<std::uint32_t> excluded_classes;  // too few validation rows
};

/// Fills LCH id, height and coverage for every head with a non-empty class
/// set. Heads whose classes share no hypernym keep empty metrics.
inline void attach_hierarchy(ProfileSet& profiles, const Taxonomy& t) {
  if (profiles.n_classes != t.num_leaves()) {
    throw ValidationError("profiles cover " + std::to_string(profiles.n_classes) +
                          " classes but the taxonomy has " + std::to_string(t.num_leaves()) +
                          " leaves");
  }
  for (auto& h : profiles.heads) {
    h.lch_id.reset();
    h.lch_height.reset();
    h.coverage.reset();
    if (h.class_set.empty()) continue;
    try {
      const HierarchyMetrics m = t.metrics(h.class_set);
      h.lch_id = t.id(m.lch);
      h.lch_height = m.height;
      h.coverage = m.coverage;
    } catch (const NoCommonHypernymError&) {
      log::info("head ", h.head_index, " spans disconnected roots; no LCH");
    }
  }
}

template <typename T>
ProfileSet compute_profiles(const SAEModel<T>& m, const ActivationDataset& val,
                            const ProfileConfig& cfg, const Taxonomy* taxonomy = nullptr) {
  cfg.validate();
  if (val.n_samples() == 0) throw ArgumentError("compute_profiles: empty validation set");
  if (val.dim() != m.n) {
    throw ShapeError("compute_profiles: dataset width " + std::to_string(val.dim()) +
                     ", model expects " + std::to_string(m.n));
  }
  const std::size_t classes = val.n_classes;
  const std::size_t d = m.d;

  std::vector<std::size_t> rows_per_class(classes, 0);
  for (auto l : val.labels) ++rows_per_class[l];
  ProfileSet out;
  out.n_classes = classes;
  for (std::size_t c = 0; c < classes; ++c) {
    if (rows_per_class[c] < cfg.min_images_per_class) {
      out.excluded_classes.push_back(static_cast<std::uint32_t>(c));
    }
  }
  if (!out.excluded_classes.empty()) {
    log::warn(out.excluded_classes.size(), " of ", classes, " classes have fewer than ",
              cfg.min_images_per_class, " validation rows and are excluded from profiles");
  }

  constexpr std::size_t kChunk = 256;
  std::vector<std::size_t> idx;
  auto for_each_chunk = [&](auto&& fn) {
    for (std::size_t start = 0; start < val.n_samples(); start += kChunk) {
      const std::size_t count = std::min(kChunk, val.n_samples() - start);
      idx.resize(count);
      std::iota(idx.begin(), idx.end(), start);
      fn(start, encode_batch(m, detail::gather_rows<T>(val.features, idx, 1.0)));
    }
  };

  std::vector<double> head_max(d, 0.0);
  for_each_chunk([&](std::size_t, const Matrix<T>& z) {
    for (std::size_t r = 0; r < z.rows(); ++r) {
      const T* zr = z.row(r).data();
      for (std::size_t k = 0; k < d; ++k) head_max[k] = std::max(head_max[k], double(zr[k]));
    }
  });
  std::vector<double> eps(d);
  for (std::size_t k = 0; k < d; ++k) eps[k] = cfg.activation_epsilon * head_max[k];

  std::vector<std::uint32_t> fires(d * classes, 0);  // head-major
  std::vector<double> sums(d * classes, 0.0);
  for_each_chunk([&](std::size_t start, const Matrix<T>& z) {
    for (std::size_t r = 0; r < z.rows(); ++r) {
      const std::size_t label = val.labels[start + r];
      const T* zr = z.row(r).data();
      for (std::size_t k = 0; k < d; ++k) {
        const double v = zr[k];
        if (v > eps[k]) ++fires[k * classes + label];
        sums[k * classes + label] += v;
      }
    }
  });

  out.heads.resize(d);
  for (std::size_t k = 0; k < d; ++k) {
    HeadProfile& h = out.heads[k];
    h.head_index = k;
    h.class_set = ClassSet(classes);
    h.activation_freq.assign(classes, 0.0);
    h.mean_activation.assign(classes, 0.0);
    for (std::size_t c = 0; c < classes; ++c) {
      if (rows_per_class[c] == 0 || rows_per_class[c] < cfg.min_images_per_class) continue;
      const double count = static_cast<double>(rows_per_class[c]);
      h.activation_freq[c] = fires[k * classes + c] / count;
      h.mean_activation[c] = sums[k * classes + c] / count;
      if (h.activation_freq[c] >= cfg.class_threshold) h.class_set.insert(c);
    }
  }
  if (taxonomy) attach_hierarchy(out, *taxonomy);
  return out;
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

struct HistogramConfig {
  std::size_t height_bins = 20;
  std::size_t coverage_bins = 20;
  double height_max = 0.0;  // 0 selects the taxonomy's largest leaf depth
};

struct HeadRow {
  std::size_t head_index = 0;
  std::size_t n_classes = 0;
  std::optional<std::string> lch_id;
  std::optional<std::string> lch_name;
  std::optional<double> height;
  std::optional<double> coverage;
};

struct ReportSummary {
  std::size_t heads = 0;
  std::size_t empty_heads = 0;  // C_k = ∅
  std::size_t single_class_heads = 0;
  std::size_t multi_class_heads = 0;
  std::size_t coverage_one_heads = 0;
  std::size_t multi_class_coverage_one_heads = 0;
  std::size_t no_lch_heads = 0;
};

struct HeadReport {
  std::vector<HeadRow> rows;  // one per head, by head index
  std::vector<double> height_edges;
  std::vector<double> coverage_edges;
  std::vector<std::vector<std::size_t>> histogram;  // [height bin][coverage bin]
  ReportSummary summary;
};

namespace detail {
inline std::size_t bin_of(double v, double hi, std::size_t bins) {
  if (!(hi > 0.0) || v <= 0.0) return 0;
  const auto b = static_cast<std::size_t>(std::floor(v / hi * static_cast<double>(bins)));
  return std::min(b, bins - 1);
}
}  // namespace detail

/// Per-head LCH, height and coverage, the 2-D (height, coverage) histogram
/// and summary counts. Metrics are recomputed from each head's class set.
inline HeadReport hierarchical_report(const ProfileSet& profiles, const Taxonomy& t,
                                      const HistogramConfig& hist = {}) {
  if (hist.height_bins == 0 || hist.coverage_bins == 0) {
    throw ArgumentError("histogram needs at least one bin per axis");
  }
  ProfileSet ps = profiles;
  attach_hierarchy(ps, t);

  HeadReport rep;
  const double hmax = hist.height_max > 0.0 ? hist.height_max
                                            : std::max(1.0, double(t.max_distance()));
  for (std::size_t i = 0; i <= hist.height_bins; ++i) {
    rep.height_edges.push_back(hmax * double(i) / double(hist.height_bins));
  }
  for (std::size_t i = 0; i <= hist.coverage_bins; ++i) {
    rep.coverage_edges.push_back(double(i) / double(hist.coverage_bins));
  }
  rep.histogram.assign(hist.height_bins, std::vector<std::size_t>(hist.coverage_bins, 0));

  auto& s = rep.summary;
  s.heads = ps.heads.size();
  for (const auto& h : ps.heads) {
    HeadRow row;
    row.head_index = h.head_index;
    row.n_classes = h.class_set.count();
    if (row.n_classes == 0) {
      ++s.empty_heads;
    } else if (row.n_classes == 1) {
      ++s.single_class_heads;
    } else {
      ++s.multi_class_heads;
    }
    if (h.lch_id) {
      row.lch_id = h.lch_id;
      row.lch_name = t.name(t.index_of(*h.lch_id));
      row.height = h.lch_height;
      row.coverage = h.coverage;
      if (*h.coverage == 1.0) {
        ++s.coverage_one_heads;
        if (row.n_classes > 1) ++s.multi_class_coverage_one_heads;
      }
      ++rep.histogram[detail::bin_of(*h.lch_height, hmax, hist.height_bins)]
                     [detail::bin_of(*h.coverage, 1.0, hist.coverage_bins)];
    } else if (row.n_classes > 0) {
      ++s.no_lch_heads;
    }
    rep.rows.push_back(std::move(row));
  }
  return rep;
}

/// Heads with |C_k| ≥ min_classes and coverage ≥ min_coverage, ordered by
/// |C_k| descending, coverage descending, head index ascending.
inline std::vector<HeadRow> top_activating_heads(const HeadReport& report,
                                                 std::size_t min_classes,
                                                 double min_coverage) {
  std::vector<HeadRow> out;
  for (const auto& r : report.rows) {
    if (r.coverage && r.n_classes >= min_classes && *r.coverage >= min_coverage) {
      out.push_back(r);
    }
  }
  std::sort(out.begin(), out.end(), [](const HeadRow& a, const HeadRow& b) {
    if (a.n_classes != b.n_classes) return a.n_classes > b.n_classes;
    if (*a.coverage != *b.coverage) return *a.coverage > *b.coverage;
    return a.head_index < b.head_index;
  });
  return out;
}

inline std::vector<HeadRow> top_activating_heads(const ProfileSet& profiles, const Taxonomy& t,
                                                 std::size_t min_classes,
                                                 double min_coverage) {
  return top_activating_heads(hierarchical_report(profiles, t), min_classes, min_coverage);
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

/// Shortest round-trip decimal form of a double.
inline std::string format_number(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

inline std::string head_report_csv(const std::vector<HeadRow>& rows) {
  std::ostringstream o;
  o << "head_index,n_classes,lch_id,lch_name,height,coverage\n";
  for (const auto& r : rows) {
    o << r.head_index << ',' << r.n_classes << ',' << csv_field(r.lch_id.value_or("")) << ','
      << csv_field(r.lch_name.value_or("")) << ','
      << (r.height ? format_number(*r.height) : "") << ','
      << (r.coverage ? format_number(*r.coverage) : "") << '\n';
  }
  return o.str();
}

inline nlohmann::json to_json(const ReportSummary& s) {
  return {{"heads", s.heads},
          {"empty_heads", s.empty_heads},
          {"single_class_heads", s.single_class_heads},
          {"multi_class_heads", s.multi_class_heads},
          {"coverage_one_heads", s.coverage_one_heads},
          {"multi_class_coverage_one_heads", s.multi_class_coverage_one_heads},
          {"no_lch_heads", s.no_lch_heads}};
}

inline nlohmann::json head_report_json(const HeadReport& rep) {
  return {{"summary", to_json(rep.summary)},
          {"histogram",
           {{"height_edges", rep.height_edges},
            {"coverage_edges", rep.coverage_edges},
            {"counts", rep.histogram}}}};
}

/// head_index, n_classes, then the member class indices separated by spaces.
inline std::string profiles_csv(const ProfileSet& ps) {
  std::ostringstream o;
  o << "head_index,n_classes,classes\n";
  for (const auto& h : ps.heads) {
    o << h.head_index << ',' << h.class_set.count() << ',';
    bool first = true;
    for (auto c : h.class_set.indices()) {
      o << (first ? "" : " ") << c;
      first = false;
    }
    o << '\n';
  }
  return o.str();
}

}  // namespace oprobe
