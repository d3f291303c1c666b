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

// Hierarchical metrics over a hypernym DAG: leaf sets, lowest common
// hypernym (LCH), LCH height and ontological coverage.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <deque>
#include <initializer_list>
#include <limits>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "oprobe/dataio.hpp"
#include "oprobe/error.hpp"

namespace oprobe {

/// A subset of the leaf classes, stored as a bitset over label indices.
class ClassSet {
 public:
  ClassSet() = default;
  explicit ClassSet(std::size_t universe)
      : universe_(universe), words_((universe + 63) / 64, 0) {}
  ClassSet(std::size_t universe, std::initializer_list<std::size_t> members)
      : ClassSet(universe) {
    for (auto m : members) insert(m);
  }

  static ClassSet from_indices(std::size_t universe,
                               const std::vector<std::size_t>& members) {
    ClassSet s(universe);
    for (auto m : members) s.insert(m);
    return s;
  }

  std::size_t universe() const noexcept { return universe_; }

  void insert(std::size_t i) {
    check(i);
    words_[i / 64] |= std::uint64_t{1} << (i % 64);
  }
  void erase(std::size_t i) {
    check(i);
    words_[i / 64] &= ~(std::uint64_t{1} << (i % 64));
  }
  bool contains(std::size_t i) const {
    return i < universe_ && (words_[i / 64] >> (i % 64)) & 1u;
  }

  std::size_t count() const noexcept {
    std::size_t n = 0;
    for (auto w : words_) n += static_cast<std::size_t>(std::popcount(w));
    return n;
  }
  bool empty() const noexcept {
    return std::all_of(words_.begin(), words_.end(),
                       [](std::uint64_t w) { return w == 0; });
  }

  bool is_subset_of(const ClassSet& other) const {
    if (other.universe_ != universe_) return false;
    for (std::size_t i = 0; i < words_.size(); ++i) {
      if (words_[i] & ~other.words_[i]) return false;
    }
    return true;
  }

  ClassSet& operator|=(const ClassSet& other) {
    if (other.universe_ != universe_) throw ShapeError("ClassSet universe mismatch");
    for (std::size_t i = 0; i < words_.size(); ++i) words_[i] |= other.words_[i];
    return *this;
  }

  std::vector<std::size_t> indices() const {
    std::vector<std::size_t> out;
    for (std::size_t w = 0; w < words_.size(); ++w) {
      std::uint64_t bits = words_[w];
      while (bits) {
        out.push_back(w * 64 + static_cast<std::size_t>(std::countr_zero(bits)));
        bits &= bits - 1;
      }
    }
    return out;
  }

  std::optional<std::size_t> first() const {
    for (std::size_t w = 0; w < words_.size(); ++w) {
      if (words_[w]) return w * 64 + static_cast<std::size_t>(std::countr_zero(words_[w]));
    }
    return std::nullopt;
  }

  friend bool operator==(const ClassSet&, const ClassSet&) = default;

 private:
  void check(std::size_t i) const {
    if (i >= universe_) {
      throw RangeError("class index " + std::to_string(i) + " outside universe of " +
                       std::to_string(universe_));
    }
  }

  std::size_t universe_ = 0;
  std::vector<std::uint64_t> words_;
};

/// LCH together with its height and coverage for one class set.
struct HierarchyMetrics {
  std::size_t lch = 0;  // synset index
  double height = 0.0;
  double coverage = 0.0;
};

/// Immutable hypernym DAG restricted to the ancestors (including self) of the
/// leaf classes. Synset indices follow lexicographic id order, so "smallest
/// index" and "lexicographically smallest id" coincide.
class Taxonomy {
 public:
  explicit Taxonomy(const TaxonomyFile& file) {
    validate_taxonomy(file);

    std::unordered_map<std::string, std::size_t> raw_index;
    for (std::size_t i = 0; i < file.synsets.size(); ++i) {
      raw_index.emplace(file.synsets[i].first, i);
    }
    std::vector<std::vector<std::size_t>> raw_parents(file.synsets.size());
    for (const auto& [c, p] : file.edges) {
      auto& ps = raw_parents[raw_index.at(c)];
      const std::size_t pi = raw_index.at(p);
      if (std::find(ps.begin(), ps.end(), pi) == ps.end()) ps.push_back(pi);
    }

    // Keep only synsets reachable upward from some leaf.
    std::vector<bool> keep(file.synsets.size(), false);
    std::vector<std::size_t> todo;
    for (const auto& leaf : file.leaves) {
      const std::size_t i = raw_index.at(leaf);
      if (!keep[i]) keep[i] = true, todo.push_back(i);
    }
    while (!todo.empty()) {
      const std::size_t i = todo.back();
      todo.pop_back();
      for (auto p : raw_parents[i]) {
        if (!keep[p]) keep[p] = true, todo.push_back(p);
      }
    }
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < keep.size(); ++i) {
      if (keep[i]) order.push_back(i);
    }
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return file.synsets[a].first < file.synsets[b].first;
    });
    std::vector<std::size_t> remap(file.synsets.size(), kNone);
    for (std::size_t k = 0; k < order.size(); ++k) {
      remap[order[k]] = k;
      ids_.push_back(file.synsets[order[k]].first);
      names_.push_back(file.synsets[order[k]].second);
      index_.emplace(ids_.back(), k);
    }
    parents_.resize(order.size());
    children_.resize(order.size());
    for (std::size_t k = 0; k < order.size(); ++k) {
      for (auto p : raw_parents[order[k]]) {
        parents_[k].push_back(remap[p]);
        children_[remap[p]].push_back(k);
      }
      std::sort(parents_[k].begin(), parents_[k].end());
    }
    for (auto& ch : children_) std::sort(ch.begin(), ch.end());

    leaf_synset_.reserve(file.leaves.size());
    leaf_of_synset_.assign(order.size(), kNone);
    for (std::size_t j = 0; j < file.leaves.size(); ++j) {
      const std::size_t s = index_.at(file.leaves[j]);
      leaf_synset_.push_back(s);
      leaf_of_synset_[s] = j;
    }

    // Minimum hypernym-path length from each leaf to each of its ancestors.
    const std::size_t n_leaves = leaf_synset_.size();
    const std::size_t n_syn = ids_.size();
    dist_.assign(n_leaves * n_syn, -1);
    leaf_sets_.assign(n_syn, ClassSet(n_leaves));
    std::deque<std::size_t> queue;
    for (std::size_t j = 0; j < n_leaves; ++j) {
      std::int32_t* row = dist_.data() + j * n_syn;
      row[leaf_synset_[j]] = 0;
      queue.push_back(leaf_synset_[j]);
      while (!queue.empty()) {
        const std::size_t s = queue.front();
        queue.pop_front();
        leaf_sets_[s].insert(j);
        max_distance_ = std::max(max_distance_, row[s]);
        for (auto p : parents_[s]) {
          if (row[p] < 0) {
            row[p] = row[s] + 1;
            queue.push_back(p);
          }
        }
      }
    }
    for (std::size_t j = 0; j < n_leaves; ++j) {
      const ClassSet& own = leaf_sets_[leaf_synset_[j]];
      if (own.count() != 1) {
        const auto other = own.indices();
        const std::size_t below = other[0] == j ? other[1] : other[0];
        throw ValidationError("leaf '" + ids_[leaf_synset_[j]] +
                              "' is a hypernym of leaf '" +
                              ids_[leaf_synset_[below]] + "'");
      }
    }
  }

  static constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();

  std::size_t num_synsets() const noexcept { return ids_.size(); }
  std::size_t num_leaves() const noexcept { return leaf_synset_.size(); }

  const std::string& id(std::size_t s) const { return ids_.at(s); }
  const std::string& name(std::size_t s) const { return names_.at(s); }

  std::optional<std::size_t> find(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }
  std::size_t index_of(const std::string& id) const {
    auto s = find(id);
    if (!s) throw LookupError("unknown synset '" + id + "'");
    return *s;
  }

  std::size_t leaf_synset(std::size_t leaf) const { return leaf_synset_.at(leaf); }
  const std::string& leaf_id(std::size_t leaf) const { return ids_[leaf_synset(leaf)]; }
  std::optional<std::size_t> leaf_index(std::size_t s) const {
    const std::size_t j = leaf_of_synset_.at(s);
    if (j == kNone) return std::nullopt;
    return j;
  }
  std::size_t leaf_index_of(const std::string& id) const {
    auto j = leaf_index(index_of(id));
    if (!j) throw LookupError("'" + id + "' is not a leaf");
    return *j;
  }

  const std::vector<std::size_t>& parents(std::size_t s) const { return parents_.at(s); }
  const std::vector<std::size_t>& children(std::size_t s) const { return children_.at(s); }

  /// L(h): the leaves with a hypernym path to h; {ω} for a leaf ω.
  const ClassSet& leaf_set(std::size_t s) const { return leaf_sets_.at(s); }
  const ClassSet& leaf_set(const std::string& id) const { return leaf_sets_[index_of(id)]; }

  /// Minimum number of hypernym edges from the leaf to synset s, or -1 when
  /// s is not an ancestor of the leaf.
  int distance(std::size_t leaf, std::size_t s) const {
    if (leaf >= num_leaves() || s >= num_synsets()) throw RangeError("distance: index out of range");
    return dist_[leaf * ids_.size() + s];
  }

  /// Largest leaf-to-ancestor distance in the taxonomy.
  int max_distance() const noexcept { return max_distance_; }

  ClassSet make_class_set(const std::vector<std::string>& leaf_ids) const {
    ClassSet c(num_leaves());
    for (const auto& id : leaf_ids) c.insert(leaf_index_of(id));
    return c;
  }

  /// Synset index h with C ⊆ L(h) minimizing |L(h)|. Equal leaf sets are
  /// broken by the smaller total distance from C, then by the smallest id, so
  /// a singleton {ω} maps to ω itself.
  std::size_t lch_index(const ClassSet& c) const {
    check_set(c);
    const auto members = c.indices();
    const std::size_t n_syn = ids_.size();
    const std::int32_t* row = dist_.data() + members.front() * n_syn;
    auto total_distance = [&](std::size_t s) {
      std::int64_t sum = 0;
      for (auto leaf : members) sum += dist_[leaf * n_syn + s];
      return sum;
    };
    std::size_t best = kNone;
    std::size_t best_size = std::numeric_limits<std::size_t>::max();
    std::int64_t best_dist = 0;
    for (std::size_t s = 0; s < n_syn; ++s) {
      if (row[s] < 0) continue;
      const ClassSet& ls = leaf_sets_[s];
      const std::size_t size = ls.count();
      if (size > best_size || !c.is_subset_of(ls)) continue;
      const std::int64_t dist = total_distance(s);
      if (size < best_size || dist < best_dist) {
        best = s;
        best_size = size;
        best_dist = dist;
      }
    }
    if (best == kNone) {
      throw NoCommonHypernymError("class set of " + std::to_string(c.count()) +
                                  " leaves has no common hypernym");
    }
    return best;
  }

  const std::string& lch(const ClassSet& c) const { return ids_[lch_index(c)]; }

  /// Mean minimum path length from the members of C to LCH(C).
  double lch_height(const ClassSet& c) const { return metrics(c).height; }

  /// |C| / |L(LCH(C))|.
  double coverage(const ClassSet& c) const { return metrics(c).coverage; }

  HierarchyMetrics metrics(const ClassSet& c) const {
    HierarchyMetrics out;
    out.lch = lch_index(c);
    const auto members = c.indices();
    double total = 0.0;
    for (auto leaf : members) total += dist_[leaf * ids_.size() + out.lch];
    out.height = total / static_cast<double>(members.size());
    out.coverage = static_cast<double>(members.size()) /
                   static_cast<double>(leaf_sets_[out.lch].count());
    return out;
  }

 private:
  void check_set(const ClassSet& c) const {
    if (c.universe() != num_leaves()) {
      throw ShapeError("class set over " + std::to_string(c.universe()) +
                       " classes, taxonomy has " + std::to_string(num_leaves()) +
                       " leaves");
    }
    if (c.empty()) throw ArgumentError("empty class set has no LCH");
  }

  std::vector<std::string> ids_;
  std::vector<std::string> names_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<std::vector<std::size_t>> parents_;
  std::vector<std::vector<std::size_t>> children_;
  std::vector<std::size_t> leaf_synset_;
  std::vector<std::size_t> leaf_of_synset_;
  std::vector<std::int32_t> dist_;  // num_leaves × num_synsets
  std::vector<ClassSet> leaf_sets_;
  std::int32_t max_distance_ = 0;
};

}  // namespace oprobe
