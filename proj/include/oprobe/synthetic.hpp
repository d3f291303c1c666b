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

// Synthetic activation generators with known ground truth, plus the greedy
// atom-matching score used to check dictionary recovery.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <tuple>
#include <vector>

#include "oprobe/dataio.hpp"
#include "oprobe/numerics.hpp"
#include "oprobe/sae.hpp"

namespace oprobe::synthetic {

inline std::vector<double> random_unit_vector(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  double norm2 = 0.0;
  do {
    norm2 = 0.0;
    for (auto& x : v) {
      x = rng.normal();
      norm2 += x * x;
    }
  } while (norm2 == 0.0);
  const double inv = 1.0 / std::sqrt(norm2);
  for (auto& x : v) x *= inv;
  return v;
}

/// Unit-norm atoms as rows.
inline MatrixD random_dictionary(std::size_t n_atoms, std::size_t dim, Rng& rng) {
  MatrixD atoms(n_atoms, dim);
  for (std::size_t a = 0; a < n_atoms; ++a) {
    const auto v = random_unit_vector(dim, rng);
    std::copy(v.begin(), v.end(), atoms.row(a).begin());
  }
  return atoms;
}

/// Generator streams are keyed by a tag so that a dataset seed never replays
/// the stream an SAE initialized with the same seed would draw.
inline Rng generator_rng(std::uint64_t seed, std::uint64_t tag) {
  return Rng(seed ^ (tag * 0x9E3779B97F4A7C15ULL));
}

/// Draws `k` distinct indices from [0, n).
inline std::vector<std::size_t> sample_distinct(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<std::size_t> out;
  out.reserve(k);
  while (out.size() < k) {
    const std::size_t i = rng.below(n);
    if (std::find(out.begin(), out.end(), i) == out.end()) out.push_back(i);
  }
  return out;
}

struct PlantedDictionaryConfig {
  std::size_t dim = 16;
  std::size_t n_atoms = 32;
  std::size_t active = 3;  // nonzero code entries per sample
  std::size_t n_samples = 20000;
  double coef_min = 1.0;
  double coef_max = 3.0;
  double noise = 0.0;  // i.i.d. Gaussian std per coordinate
  std::uint64_t seed = 1;
};

struct PlantedDictionary {
  MatrixD atoms;  // n_atoms × dim
  ActivationDataset data;
};

/// x = Σ_k c_k·atom_k over `active` random atoms with c_k ~ U[coef_min,
/// coef_max], plus optional noise. The label is the atom with the largest
/// coefficient.
inline PlantedDictionary planted_dictionary(const PlantedDictionaryConfig& cfg) {
  Rng rng = generator_rng(cfg.seed, 1);
  PlantedDictionary out;
  out.atoms = random_dictionary(cfg.n_atoms, cfg.dim, rng);
  auto& ds = out.data;
  ds.features = MatrixF(cfg.n_samples, cfg.dim);
  ds.labels.resize(cfg.n_samples);
  ds.n_classes = static_cast<std::uint32_t>(cfg.n_atoms);
  ds.source_model = "synthetic:planted-dictionary";
  std::vector<double> x(cfg.dim);
  for (std::size_t r = 0; r < cfg.n_samples; ++r) {
    std::fill(x.begin(), x.end(), 0.0);
    double best = -1.0;
    for (auto a : sample_distinct(cfg.n_atoms, cfg.active, rng)) {
      const double c = rng.uniform(cfg.coef_min, cfg.coef_max);
      if (c > best) best = c, ds.labels[r] = static_cast<std::uint32_t>(a);
      for (std::size_t i = 0; i < cfg.dim; ++i) x[i] += c * out.atoms(a, i);
    }
    for (std::size_t i = 0; i < cfg.dim; ++i) {
      ds.features(r, i) = static_cast<float>(x[i] + cfg.noise * rng.normal());
    }
  }
  return out;
}

/// Greedy one-to-one matching of true atoms (rows of `atoms`) to decoder
/// columns by descending signed cosine (codes are non-negative, so a flipped
/// column does not count). Returns the matched cosine for every atom, 0 when
/// no column is left.
template <typename T>
std::vector<double> greedy_atom_matching(const MatrixD& atoms, const SAEModel<T>& m) {
  const std::size_t n_atoms = atoms.rows();
  const auto norms = m.decoder_column_norms();
  std::vector<std::tuple<double, std::size_t, std::size_t>> pairs;
  pairs.reserve(n_atoms * m.d);
  for (std::size_t a = 0; a < n_atoms; ++a) {
    double an = 0.0;
    for (std::size_t i = 0; i < m.n; ++i) an += atoms(a, i) * atoms(a, i);
    an = std::sqrt(an);
    for (std::size_t j = 0; j < m.d; ++j) {
      if (norms[j] == 0.0 || an == 0.0) continue;
      double dot = 0.0;
      for (std::size_t i = 0; i < m.n; ++i) dot += atoms(a, i) * double(m.w_dec(i, j));
      pairs.emplace_back(dot / (an * norms[j]), a, j);
    }
  }
  std::sort(pairs.begin(), pairs.end(), [](const auto& x, const auto& y) {
    if (std::get<0>(x) != std::get<0>(y)) return std::get<0>(x) > std::get<0>(y);
    return std::tie(std::get<1>(x), std::get<2>(x)) < std::tie(std::get<1>(y), std::get<2>(y));
  });
  std::vector<double> matched(n_atoms, 0.0);
  std::vector<bool> atom_used(n_atoms, false), col_used(m.d, false);
  for (const auto& [cos, a, j] : pairs) {
    if (atom_used[a] || col_used[j]) continue;
    atom_used[a] = col_used[j] = true;
    matched[a] = cos;
  }
  return matched;
}

/// Fraction of atoms whose greedy match has cosine >= threshold.
template <typename T>
double recovery_rate(const MatrixD& atoms, const SAEModel<T>& m, double threshold = 0.9) {
  const auto matched = greedy_atom_matching(atoms, m);
  const auto hits = std::count_if(matched.begin(), matched.end(),
                                  [&](double c) { return c >= threshold; });
  return static_cast<double>(hits) / static_cast<double>(atoms.rows());
}

// ---------------------------------------------------------------------------
// Layer progression
// ---------------------------------------------------------------------------

/// Parameters for one synthetic "layer": class signal strength and the number
/// of active latent factors per sample.
struct LayerSpec {
  double class_separation = 0.0;
  std::size_t active_factors = 0;
};

struct LayerProgressionConfig {
  std::size_t dim = 32;
  std::size_t n_classes = 10;
  std::size_t n_factors = 64;
  std::size_t n_train = 4000;
  std::size_t n_val = 2000;
  double coef_min = 1.0;
  double coef_max = 2.0;
  double noise = 0.05;
  std::vector<LayerSpec> layers = {{0.0, 0}, {0.5, 1}, {1.0, 2}, {2.0, 3}};
  std::uint64_t seed = 7;
};

struct LayerData {
  ActivationDataset train;
  ActivationDataset val;
};

/// Layer ℓ rows: separation_ℓ·μ_y + Σ c_k·factor_k (active_factors_ℓ of them)
/// + noise, where μ_y are fixed random unit class directions. Labels are
/// shared across layers, as they are for real encoder taps.
inline std::vector<LayerData> layer_progression(const LayerProgressionConfig& cfg) {
  Rng rng = generator_rng(cfg.seed, 2);
  const MatrixD class_dirs = random_dictionary(cfg.n_classes, cfg.dim, rng);
  const MatrixD factors = random_dictionary(cfg.n_factors, cfg.dim, rng);
  auto make_labels = [&](std::size_t count) {
    std::vector<std::uint32_t> labels(count);
    for (auto& l : labels) l = static_cast<std::uint32_t>(rng.below(cfg.n_classes));
    return labels;
  };
  const auto train_labels = make_labels(cfg.n_train);
  const auto val_labels = make_labels(cfg.n_val);

  std::vector<LayerData> out;
  for (std::size_t layer = 0; layer < cfg.layers.size(); ++layer) {
    const LayerSpec& spec = cfg.layers[layer];
    auto fill = [&](const std::vector<std::uint32_t>& labels, Split split) {
      ActivationDataset ds;
      ds.features = MatrixF(labels.size(), cfg.dim);
      ds.labels = labels;
      ds.n_classes = static_cast<std::uint32_t>(cfg.n_classes);
      ds.layer_id = static_cast<std::uint32_t>(layer);
      ds.split = split;
      ds.source_model = "synthetic:layer-progression";
      std::vector<double> x(cfg.dim);
      for (std::size_t r = 0; r < labels.size(); ++r) {
        for (std::size_t i = 0; i < cfg.dim; ++i) {
          x[i] = spec.class_separation * class_dirs(labels[r], i) + cfg.noise * rng.normal();
        }
        for (auto f : sample_distinct(cfg.n_factors, spec.active_factors, rng)) {
          const double c = rng.uniform(cfg.coef_min, cfg.coef_max);
          for (std::size_t i = 0; i < cfg.dim; ++i) x[i] += c * factors(f, i);
        }
        for (std::size_t i = 0; i < cfg.dim; ++i) ds.features(r, i) = static_cast<float>(x[i]);
      }
      return ds;
    };
    LayerData ld;
    ld.train = fill(train_labels, Split::train);
    ld.val = fill(val_labels, Split::val);
    out.push_back(std::move(ld));
  }
  return out;
}

}  // namespace oprobe::synthetic
