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

// Linear (softmax regression) probes on frozen activations. Trained with the
// same optimizer, learning-rate schedule, epochs and batch size as the SAE.
//
// OPLP checkpoint: "OPLP", version byte 1, u64 n_classes, u64 dim, then W
// (n_classes × dim, row-major) and b as little-endian f32.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <set>
#include <span>
#include <vector>

#include "oprobe/binary.hpp"
#include "oprobe/dataio.hpp"
#include "oprobe/error.hpp"
#include "oprobe/numerics.hpp"
#include "oprobe/sae.hpp"

namespace oprobe {

template <typename T>
struct LinearProbe {
  Matrix<T> w;  // n_classes × dim
  std::vector<T> b;

  std::size_t n_classes() const noexcept { return w.rows(); }
  std::size_t dim() const noexcept { return w.cols(); }

  friend bool operator==(const LinearProbe&, const LinearProbe&) = default;
};

/// Batch logits, one row per input row.
template <typename T>
Matrix<T> probe_logits(const LinearProbe<T>& p, const Matrix<T>& x) {
  Matrix<T> logits = matmul_bt(x, p.w);
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    for (std::size_t c = 0; c < p.n_classes(); ++c) logits(r, c) += p.b[c];
  }
  return logits;
}

/// Index of the largest entry; the lowest index wins ties.
template <typename T>
std::size_t argmax(std::span<const T> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

template <typename T = float>
LinearProbe<T> train_probe(const ActivationDataset& ds, const TrainConfig& cfg) {
  cfg.validate();
  if (ds.n_samples() == 0 || ds.dim() == 0) throw ArgumentError("train_probe: empty dataset");
  ds.validate();
  if (std::set<std::uint32_t>(ds.labels.begin(), ds.labels.end()).size() < 2) {
    throw ArgumentError("train_probe: needs at least two classes present");
  }
  const std::size_t classes = ds.n_classes;
  const std::size_t rows = ds.n_samples();

  LinearProbe<T> probe{Matrix<T>(classes, ds.dim()), std::vector<T>(classes, T{0})};
  AdamState<T> s_w(probe.w.size()), s_b(classes);
  Rng rng(cfg.seed);
  const std::int64_t total = steps_for(rows, cfg.batch_size, cfg.epochs);
  const ScheduleSpec lr_sched{cfg.lr, total, cfg.lr_warmup_frac, cfg.lr_decay_frac};

  std::vector<std::size_t> order(rows);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::int64_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(std::span(order));
    for (std::size_t start = 0; start < rows; start += cfg.batch_size) {
      const std::size_t count = std::min(cfg.batch_size, rows - start);
      const auto idx = std::span(order).subspan(start, count);
      const Matrix<T> x = detail::gather_rows<T>(ds.features, idx, 1.0);
      Matrix<T> grad = probe_logits(probe, x);  // becomes (softmax − onehot) / B
      double loss = 0.0;
      const T inv_b = static_cast<T>(1.0 / static_cast<double>(count));
      for (std::size_t r = 0; r < count; ++r) {
        auto row = grad.row(r);
        const T hi = *std::max_element(row.begin(), row.end());
        double denom = 0.0;
        for (auto& v : row) {
          v = std::exp(v - hi);
          denom += double(v);
        }
        const std::uint32_t label = ds.labels[idx[r]];
        loss -= std::log(double(row[label]) / denom);
        for (auto& v : row) v = static_cast<T>(double(v) / denom) * inv_b;
        row[label] -= inv_b;
      }
      if (!std::isfinite(loss)) {
        throw TrainingError("probe training diverged at step " + std::to_string(step), step);
      }
      const Matrix<T> g_w = matmul_at(grad, x);
      std::vector<T> g_b(classes, T{0});
      for (std::size_t r = 0; r < count; ++r) {
        for (std::size_t c = 0; c < classes; ++c) g_b[c] += grad(r, c);
      }
      const double lr = schedule_value(lr_sched, step);
      adam_step(probe.w, g_w, s_w, lr);
      adam_step(std::span<T>(probe.b), std::span<const T>(g_b), s_b, lr);
      ++step;
    }
  }
  return probe;
}

template <typename T>
std::vector<std::size_t> predict(const LinearProbe<T>& p, const ActivationDataset& ds) {
  if (ds.dim() != p.dim()) {
    throw ShapeError("probe expects width " + std::to_string(p.dim()) + ", dataset has " +
                     std::to_string(ds.dim()));
  }
  std::vector<std::size_t> out(ds.n_samples());
  constexpr std::size_t kChunk = 512;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < ds.n_samples(); start += kChunk) {
    const std::size_t count = std::min(kChunk, ds.n_samples() - start);
    idx.resize(count);
    std::iota(idx.begin(), idx.end(), start);
    const Matrix<T> logits = probe_logits(p, detail::gather_rows<T>(ds.features, idx, 1.0));
    for (std::size_t r = 0; r < count; ++r) out[start + r] = argmax(logits.row(r));
  }
  return out;
}

/// Top-1 accuracy.
template <typename T>
double eval_probe(const LinearProbe<T>& p, const ActivationDataset& ds) {
  if (ds.n_samples() == 0) throw ArgumentError("eval_probe: empty dataset");
  const auto pred = predict(p, ds);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == ds.labels[i];
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

inline constexpr std::string_view kProbeMagic = "OPLP";
inline constexpr std::uint8_t kProbeVersion = 1;

template <typename T>
binary::Bytes encode_probe(const LinearProbe<T>& p) {
  binary::Writer w;
  w.put_bytes(kProbeMagic);
  w.put_u8(kProbeVersion);
  w.put_u64(p.n_classes());
  w.put_u64(p.dim());
  w.put_f32s(p.w.values());
  w.put_f32s(std::span<const T>(p.b));
  return w.take();
}

inline LinearProbe<float> decode_probe(std::span<const std::uint8_t> bytes,
                                       const std::string& what = "OPLP") {
  binary::Reader r(bytes, what);
  r.need(21);
  if (r.bytes(4) != kProbeMagic) throw FormatError(what + ": bad magic");
  if (const auto v = r.u8(); v != kProbeVersion) {
    throw FormatError(what + ": unsupported version " + std::to_string(v));
  }
  const std::uint64_t classes = r.u64();
  const std::uint64_t dim = r.u64();
  if (classes == 0 || dim == 0 || classes > (1ull << 24) || dim > (1ull << 24) ||
      (classes * dim + classes) * 4 != r.remaining()) {
    throw FormatError(what + ": size does not match header");
  }
  LinearProbe<float> p{MatrixF(classes, dim), std::vector<float>(classes)};
  r.f32s(p.w.values());
  r.f32s(std::span<float>(p.b));
  if (!p.w.all_finite() ||
      !std::all_of(p.b.begin(), p.b.end(), [](float v) { return std::isfinite(v); })) {
    throw ValidationError(what + ": non-finite probe weights");
  }
  return p;
}

template <typename T>
void write_probe(const LinearProbe<T>& p, const std::filesystem::path& path) {
  binary::write_file(path, encode_probe(p));
}

inline LinearProbe<float> read_probe(const std::filesystem::path& path) {
  return decode_probe(binary::read_file(path), path.string());
}

}  // namespace oprobe
