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

// Dense row-major matrices, a deterministic RNG, the Adam optimizer and the
// piecewise-linear warm-up/plateau/decay schedule shared by all trainers.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <type_traits>
#include <utility>
#include <vector>

#include "oprobe/error.hpp"

namespace oprobe {

// ---------------------------------------------------------------------------
// Threading
// ---------------------------------------------------------------------------

namespace detail {
inline std::atomic<unsigned>& thread_count_slot() {
  static std::atomic<unsigned> n{1};
  return n;
}
}  // namespace detail

/// Worker count used by the parallel kernels. 0 selects all hardware threads.
/// Results never depend on this value: work is split over output rows and
/// every reduction runs in a fixed order inside one worker.
inline void set_num_threads(unsigned n) {
  if (n == 0) n = std::max(1u, std::thread::hardware_concurrency());
  detail::thread_count_slot() = n;
}
inline unsigned num_threads() { return detail::thread_count_slot(); }

/// Calls fn(lo, hi) over disjoint chunks of [begin, end). Small ranges (fewer
/// than `grain` items per worker) run inline.
template <typename Fn>
void parallel_for(std::size_t begin, std::size_t end, std::size_t grain,
                  Fn&& fn) {
  if (end <= begin) return;
  const std::size_t n = end - begin;
  std::size_t workers = std::min<std::size_t>(num_threads(), n / std::max<std::size_t>(grain, 1));
  if (workers <= 1) {
    fn(begin, end);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 1; w < workers; ++w) {
    const std::size_t lo = begin + w * chunk;
    const std::size_t hi = std::min(end, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([&fn, lo, hi] { fn(lo, hi); });
  }
  fn(begin, std::min(end, begin + chunk));
  for (auto& t : pool) t.join();
}

// ---------------------------------------------------------------------------
// Matrix
// ---------------------------------------------------------------------------

template <typename T>
class Matrix {
  static_assert(std::is_floating_point_v<T>);

 public:
  using value_type = T;

  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T fill = T{0})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw ShapeError("matrix buffer has " + std::to_string(data_.size()) +
                       " entries, expected " + std::to_string(rows_ * cols_));
    }
  }
  Matrix(std::initializer_list<std::initializer_list<T>> rows) {
    rows_ = rows.size();
    cols_ = rows_ ? rows.begin()->size() : 0;
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw ShapeError("ragged matrix literal");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = T{1};
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const {
    return data_[r * cols_ + c];
  }

  std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  std::vector<T>& buffer() noexcept { return data_; }
  const std::vector<T>& buffer() const noexcept { return data_; }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(),
                       [](T v) { return std::isfinite(v); });
  }

  Matrix transposed() const {
    Matrix t(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r)
      for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
    return t;
  }

  template <typename U>
  Matrix<U> cast() const {
    Matrix<U> out(rows_, cols_);
    std::transform(data_.begin(), data_.end(), out.buffer().begin(),
                   [](T v) { return static_cast<U>(v); });
    return out;
  }

  friend bool operator==(const Matrix& a, const Matrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

using MatrixF = Matrix<float>;
using MatrixD = Matrix<double>;

namespace detail {
inline std::string shape_str(std::size_t r, std::size_t c) {
  std::ostringstream o;
  o << r << 'x' << c;
  return o.str();
}

// Rows of output per worker below which the kernels stay single-threaded.
constexpr std::size_t kRowGrain = 8;
}  // namespace detail

/// a·b. Each output entry accumulates over k in increasing order.
template <typename T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + detail::shape_str(a.rows(), a.cols()) +
                     " times " + detail::shape_str(b.rows(), b.cols()));
  }
  Matrix<T> c(a.rows(), b.cols());
  const std::size_t inner = a.cols();
  const std::size_t m = b.cols();
  parallel_for(0, a.rows(), detail::kRowGrain, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      T* out = c.row(i).data();
      const T* ai = a.row(i).data();
      for (std::size_t k = 0; k < inner; ++k) {
        const T aik = ai[k];
        const T* bk = b.row(k).data();
        for (std::size_t j = 0; j < m; ++j) out[j] += aik * bk[j];
      }
    }
  });
  return c;
}

/// a·bᵀ, i.e. row-by-row dot products.
template <typename T>
Matrix<T> matmul_bt(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_bt: " + detail::shape_str(a.rows(), a.cols()) +
                     " times transpose of " +
                     detail::shape_str(b.rows(), b.cols()));
  }
  Matrix<T> c(a.rows(), b.rows());
  const std::size_t inner = a.cols();
  parallel_for(0, a.rows(), detail::kRowGrain, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      const T* ai = a.row(i).data();
      for (std::size_t j = 0; j < b.rows(); ++j) {
        const T* bj = b.row(j).data();
        T acc{0};
        for (std::size_t k = 0; k < inner; ++k) acc += ai[k] * bj[k];
        c(i, j) = acc;
      }
    }
  });
  return c;
}

/// aᵀ·b. Each output entry accumulates over the shared row index in
/// increasing order.
template <typename T>
Matrix<T> matmul_at(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.rows() != b.rows()) {
    throw ShapeError("matmul_at: transpose of " +
                     detail::shape_str(a.rows(), a.cols()) + " times " +
                     detail::shape_str(b.rows(), b.cols()));
  }
  Matrix<T> c(a.cols(), b.cols());
  const std::size_t m = b.cols();
  parallel_for(0, a.cols(), detail::kRowGrain, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t k = 0; k < a.rows(); ++k) {
      const T* ak = a.row(k).data();
      const T* bk = b.row(k).data();
      for (std::size_t i = lo; i < hi; ++i) {
        const T aki = ak[i];
        if (aki == T{0}) continue;
        T* out = c.row(i).data();
        for (std::size_t j = 0; j < m; ++j) out[j] += aki * bk[j];
      }
    }
  });
  return c;
}

// ---------------------------------------------------------------------------
// Random numbers
// ---------------------------------------------------------------------------

/// Seeded generator whose output is identical on every platform: the engine
/// sequence is fixed by the standard and the distributions are written out
/// here instead of using the implementation-defined <random> ones.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw ArgumentError("Rng::below(0)");
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t r;
    do {
      r = engine_();
    } while (r >= limit);
    return r % n;
  }

  /// Standard normal via Box-Muller.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    constexpr double kTwoPi = 6.283185307179586476925;
    spare_ = r * std::sin(kTwoPi * u2);
    has_spare_ = true;
    return r * std::cos(kTwoPi * u2);
  }

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[below(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

template <typename T>
struct AdamState {
  std::vector<T> m;
  std::vector<T> v;
  std::int64_t t = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  AdamState() = default;
  explicit AdamState(std::size_t n) : m(n, T{0}), v(n, T{0}) {}
};

/// One bias-corrected Adam update of `params` in place; increments state.t.
///
/// Entries whose gradient is exactly zero are left untouched and their
/// moments are not decayed (lazy update), so a zero gradient is a no-op on
/// the parameters regardless of the accumulated state.
template <typename T>
void adam_step(std::span<T> params, std::span<const T> grads,
               AdamState<T>& state, double lr) {
  if (params.size() != grads.size() || state.m.size() != params.size() ||
      state.v.size() != params.size()) {
    throw ShapeError("adam_step: params " + std::to_string(params.size()) +
                     ", grads " + std::to_string(grads.size()) + ", state " +
                     std::to_string(state.m.size()));
  }
  if (!(lr >= 0.0)) throw ArgumentError("adam_step: negative learning rate");
  if (!(state.beta1 >= 0.0 && state.beta1 < 1.0 && state.beta2 >= 0.0 &&
        state.beta2 < 1.0)) {
    throw ArgumentError("adam_step: betas must lie in [0, 1)");
  }
  state.t += 1;
  const double t = static_cast<double>(state.t);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  const T b1 = static_cast<T>(state.beta1);
  const T b2 = static_cast<T>(state.beta2);
  const T one_b1 = static_cast<T>(1.0 - state.beta1);
  const T one_b2 = static_cast<T>(1.0 - state.beta2);
  // lr * m̂ / (sqrt(v̂) + eps) = (lr / bc1) * m / (sqrt(v / bc2) + eps)
  const T step = static_cast<T>(lr / bc1);
  const T inv_bc2 = static_cast<T>(1.0 / bc2);
  const T eps = static_cast<T>(state.eps);
  T* p = params.data();
  const T* g = grads.data();
  T* m = state.m.data();
  T* v = state.v.data();
  for (std::size_t i = 0, n = params.size(); i < n; ++i) {
    const T gi = g[i];
    if (gi == T{0}) continue;
    m[i] = b1 * m[i] + one_b1 * gi;
    v[i] = b2 * v[i] + one_b2 * gi * gi;
    p[i] -= step * m[i] / (std::sqrt(v[i] * inv_bc2) + eps);
  }
}

template <typename T>
void adam_step(Matrix<T>& params, const Matrix<T>& grads, AdamState<T>& state,
               double lr) {
  if (params.rows() != grads.rows() || params.cols() != grads.cols()) {
    throw ShapeError("adam_step: params " +
                     detail::shape_str(params.rows(), params.cols()) +
                     " vs grads " +
                     detail::shape_str(grads.rows(), grads.cols()));
  }
  adam_step(params.values(), grads.values(), state, lr);
}

// ---------------------------------------------------------------------------
// Schedules
// ---------------------------------------------------------------------------

/// Linear 0→base over the first warmup_frac·T steps, flat, then linear
/// base→0 over the last decay_frac·T steps.
struct ScheduleSpec {
  double base_value = 1.0;
  std::int64_t total_steps = 1;
  double warmup_frac = 0.05;
  double decay_frac = 0.20;

  void validate() const {
    if (total_steps < 1) throw ArgumentError("schedule: total_steps < 1");
    if (!(base_value >= 0.0)) throw ArgumentError("schedule: base_value < 0");
    if (!(warmup_frac >= 0.0 && decay_frac >= 0.0 &&
          warmup_frac + decay_frac <= 1.0)) {
      throw ArgumentError("schedule: fractions must be >= 0 and sum to <= 1");
    }
  }
};

inline double schedule_value(const ScheduleSpec& spec, std::int64_t step) {
  spec.validate();
  if (step < 0 || step > spec.total_steps) {
    throw RangeError("schedule step " + std::to_string(step) +
                     " outside [0, " + std::to_string(spec.total_steps) + "]");
  }
  const double total = static_cast<double>(spec.total_steps);
  const double s = static_cast<double>(step);
  const double warmup_end = spec.warmup_frac * total;
  const double decay_len = spec.decay_frac * total;
  const double decay_start = total - decay_len;
  if (s < warmup_end) return spec.base_value * (s / warmup_end);
  if (s <= decay_start || decay_len <= 0.0) return spec.base_value;
  return spec.base_value * ((total - s) / decay_len);
}

/// Optimizer steps for `epochs` passes over `n_samples` rows, counting the
/// final partial minibatch.
inline std::int64_t steps_for(std::size_t n_samples, std::size_t batch_size,
                              std::size_t epochs) {
  if (batch_size == 0) throw ArgumentError("batch_size must be >= 1");
  return static_cast<std::int64_t>(((n_samples + batch_size - 1) / batch_size) *
                                   epochs);
}

}  // namespace oprobe
