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

// ReLU sparse autoencoder:
//
//   z  = ReLU(W_enc x + b_enc)          W_enc: d×n, b_enc: d
//   x̂  = W_dec z + b_dec                W_dec: n×d, b_dec: n
//   L  = ‖x − x̂‖² + λ‖z‖₁               averaged over the minibatch
//
// The OPSA checkpoint is "OPSA", version byte 1, u64 n, u64 d, then W_enc,
// b_enc, W_dec, b_dec as little-endian f32 in that order.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "oprobe/binary.hpp"
#include "oprobe/dataio.hpp"
#include "oprobe/error.hpp"
#include "oprobe/log.hpp"
#include "oprobe/numerics.hpp"

namespace oprobe {

enum class InputScaling { none, unit_mean_square };

inline std::string to_string(InputScaling s) {
  return s == InputScaling::none ? "none" : "unit-mean-square";
}

inline InputScaling parse_input_scaling(const std::string& s) {
  if (s == "none") return InputScaling::none;
  if (s == "unit-mean-square") return InputScaling::unit_mean_square;
  throw ArgumentError("input_scaling must be 'none' or 'unit-mean-square', got '" + s + "'");
}

/// Hyperparameters shared by the SAE and probe trainers.
struct TrainConfig {
  double lambda = 10.0;
  double lr = 1e-4;
  std::size_t epochs = 3;
  std::size_t batch_size = 64;
  std::size_t expansion_factor = 8;
  double lr_warmup_frac = 0.05;
  double lr_decay_frac = 0.20;
  double lambda_warmup_frac = 0.05;
  std::uint64_t seed = 0;
  bool normalize_decoder = true;
  InputScaling input_scaling = InputScaling::none;
  std::size_t log_every = 100;  // training-log interval in steps

  void validate() const {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ArgumentError("lambda must be >= 0");
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw ArgumentError("lr must be >= 0");
    if (batch_size < 1) throw ArgumentError("batch_size must be >= 1");
    if (epochs < 1) throw ArgumentError("epochs must be >= 1");
    if (expansion_factor < 1) throw ArgumentError("expansion_factor must be >= 1");
    if (log_every < 1) throw ArgumentError("log_every must be >= 1");
    ScheduleSpec{lr, 1, lr_warmup_frac, lr_decay_frac}.validate();
    ScheduleSpec{lambda, 1, lambda_warmup_frac, 0.0}.validate();
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"lambda", c.lambda},
          {"lr", c.lr},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"expansion_factor", c.expansion_factor},
          {"lr_warmup_frac", c.lr_warmup_frac},
          {"lr_decay_frac", c.lr_decay_frac},
          {"lambda_warmup_frac", c.lambda_warmup_frac},
          {"seed", c.seed},
          {"normalize_decoder", c.normalize_decoder},
          {"input_scaling", to_string(c.input_scaling)},
          {"log_every", c.log_every}};
}

template <typename T>
struct SAEModel {
  std::size_t n = 0;  // input width
  std::size_t d = 0;  // hidden width
  Matrix<T> w_enc;    // d × n
  std::vector<T> b_enc;
  Matrix<T> w_dec;    // n × d
  std::vector<T> b_dec;

  static SAEModel zeros(std::size_t n, std::size_t d) {
    SAEModel m;
    m.n = n;
    m.d = d;
    m.w_enc = Matrix<T>(d, n);
    m.b_enc.assign(d, T{0});
    m.w_dec = Matrix<T>(n, d);
    m.b_dec.assign(n, T{0});
    return m;
  }

  /// Decoder columns uniform on the unit sphere, W_enc = W_decᵀ, zero biases.
  static SAEModel initialized(std::size_t n, std::size_t d, Rng& rng) {
    SAEModel m = zeros(n, d);
    for (std::size_t j = 0; j < d; ++j) {
      double norm2 = 0.0;
      std::vector<double> col(n);
      do {
        norm2 = 0.0;
        for (auto& v : col) {
          v = rng.normal();
          norm2 += v * v;
        }
      } while (norm2 == 0.0);
      const double inv = 1.0 / std::sqrt(norm2);
      for (std::size_t i = 0; i < n; ++i) {
        m.w_dec(i, j) = static_cast<T>(col[i] * inv);
        m.w_enc(j, i) = m.w_dec(i, j);
      }
    }
    return m;
  }

  void validate() const {
    if (w_enc.rows() != d || w_enc.cols() != n || b_enc.size() != d ||
        w_dec.rows() != n || w_dec.cols() != d || b_dec.size() != n) {
      throw ShapeError("SAE parameter shapes inconsistent with n=" +
                       std::to_string(n) + ", d=" + std::to_string(d));
    }
    auto finite = [](std::span<const T> v) {
      return std::all_of(v.begin(), v.end(), [](T x) { return std::isfinite(x); });
    };
    if (!finite(w_enc.values()) || !finite(b_enc) || !finite(w_dec.values()) ||
        !finite(b_dec)) {
      throw ValidationError("SAE parameters contain NaN or Inf");
    }
  }

  std::vector<double> decoder_column_norms() const {
    std::vector<double> norms(d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const T* row = w_dec.row(i).data();
      for (std::size_t j = 0; j < d; ++j) norms[j] += double(row[j]) * double(row[j]);
    }
    for (auto& v : norms) v = std::sqrt(v);
    return norms;
  }

  /// Rescales every nonzero decoder column to unit L2 norm.
  void normalize_decoder_columns() {
    const auto norms = decoder_column_norms();
    std::vector<T> inv(d);
    for (std::size_t j = 0; j < d; ++j) {
      inv[j] = norms[j] > 0.0 ? static_cast<T>(1.0 / norms[j]) : T{1};
    }
    for (std::size_t i = 0; i < n; ++i) {
      T* row = w_dec.row(i).data();
      for (std::size_t j = 0; j < d; ++j) row[j] *= inv[j];
    }
  }

  template <typename U>
  SAEModel<U> cast() const {
    SAEModel<U> m;
    m.n = n;
    m.d = d;
    m.w_enc = w_enc.template cast<U>();
    m.w_dec = w_dec.template cast<U>();
    m.b_enc.assign(b_enc.begin(), b_enc.end());
    m.b_dec.assign(b_dec.begin(), b_dec.end());
    return m;
  }

  friend bool operator==(const SAEModel&, const SAEModel&) = default;
};

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

template <typename T>
std::vector<T> encode(const SAEModel<T>& m, std::type_identity_t<std::span<const T>> x) {
  if (x.size() != m.n) {
    throw ShapeError("encode: input length " + std::to_string(x.size()) +
                     ", model expects " + std::to_string(m.n));
  }
  std::vector<T> z(m.d);
  for (std::size_t j = 0; j < m.d; ++j) {
    const T* w = m.w_enc.row(j).data();
    T acc{0};
    for (std::size_t i = 0; i < m.n; ++i) acc += w[i] * x[i];
    acc += m.b_enc[j];
    z[j] = acc > T{0} ? acc : T{0};
  }
  return z;
}

template <typename T>
std::vector<T> decode(const SAEModel<T>& m, std::type_identity_t<std::span<const T>> z) {
  if (z.size() != m.d) {
    throw ShapeError("decode: code length " + std::to_string(z.size()) +
                     ", model expects " + std::to_string(m.d));
  }
  std::vector<T> x(m.n);
  for (std::size_t i = 0; i < m.n; ++i) {
    const T* w = m.w_dec.row(i).data();
    T acc{0};
    for (std::size_t j = 0; j < m.d; ++j) acc += w[j] * z[j];
    x[i] = acc + m.b_dec[i];
  }
  return x;
}

/// Row-wise encode of a batch (rows are inputs).
template <typename T>
Matrix<T> encode_batch(const SAEModel<T>& m, const Matrix<T>& x) {
  if (x.cols() != m.n) {
    throw ShapeError("encode_batch: input width " + std::to_string(x.cols()) +
                     ", model expects " + std::to_string(m.n));
  }
  Matrix<T> z = matmul_bt(x, m.w_enc);
  for (std::size_t r = 0; r < z.rows(); ++r) {
    T* row = z.row(r).data();
    for (std::size_t j = 0; j < m.d; ++j) {
      const T v = row[j] + m.b_enc[j];
      row[j] = v > T{0} ? v : T{0};
    }
  }
  return z;
}

template <typename T>
Matrix<T> decode_batch(const SAEModel<T>& m, const Matrix<T>& z) {
  if (z.cols() != m.d) {
    throw ShapeError("decode_batch: code width " + std::to_string(z.cols()) +
                     ", model expects " + std::to_string(m.d));
  }
  Matrix<T> x = matmul_bt(z, m.w_dec);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    T* row = x.row(r).data();
    for (std::size_t i = 0; i < m.n; ++i) row[i] += m.b_dec[i];
  }
  return x;
}

// ---------------------------------------------------------------------------
// Loss and gradients
// ---------------------------------------------------------------------------

/// Batch-mean loss terms. `recon` is the unnormalized squared error and
/// `sparsity` already includes the λ factor.
struct LossTerms {
  double total = 0.0;
  double recon = 0.0;
  double sparsity = 0.0;
};

template <typename T>
struct SAEGradients {
  Matrix<T> w_enc;
  std::vector<T> b_enc;
  Matrix<T> w_dec;
  std::vector<T> b_dec;
  LossTerms terms;
  double mean_l0 = 0.0;
};

namespace detail {

template <typename T>
LossTerms loss_from(const Matrix<T>& x, const Matrix<T>& z, const Matrix<T>& x_hat,
                    double lambda) {
  double recon = 0.0;
  double l1 = 0.0;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const T* a = x.row(r).data();
    const T* b = x_hat.row(r).data();
    for (std::size_t i = 0; i < x.cols(); ++i) {
      const double e = double(b[i]) - double(a[i]);
      recon += e * e;
    }
    for (T v : z.row(r)) l1 += double(v);
  }
  const double inv_b = 1.0 / static_cast<double>(x.rows());
  LossTerms t;
  t.recon = recon * inv_b;
  t.sparsity = lambda * l1 * inv_b;
  t.total = t.recon + t.sparsity;
  return t;
}

template <typename T>
void check_batch(const SAEModel<T>& m, const Matrix<T>& batch, const char* op) {
  if (batch.cols() != m.n) {
    throw ShapeError(std::string(op) + ": batch width " + std::to_string(batch.cols()) +
                     ", model expects " + std::to_string(m.n));
  }
  if (batch.rows() == 0) throw ShapeError(std::string(op) + ": empty batch");
}

}  // namespace detail

template <typename T>
LossTerms loss(const SAEModel<T>& m, const Matrix<T>& batch, double lambda) {
  detail::check_batch(m, batch, "loss");
  const Matrix<T> z = encode_batch(m, batch);
  const Matrix<T> x_hat = decode_batch(m, z);
  return detail::loss_from(batch, z, x_hat, lambda);
}

/// Analytic gradients of the batch-mean loss. The ReLU derivative and the L1
/// subgradient are both taken as 0 at exactly 0.
template <typename T>
SAEGradients<T> loss_gradients(const SAEModel<T>& m, const Matrix<T>& batch,
                               double lambda) {
  detail::check_batch(m, batch, "loss_gradients");
  const std::size_t rows = batch.rows();
  const Matrix<T> z = encode_batch(m, batch);
  const Matrix<T> x_hat = decode_batch(m, z);

  SAEGradients<T> g;
  g.terms = detail::loss_from(batch, z, x_hat, lambda);

  // dL/dx̂ = 2 (x̂ − x) / B
  const T scale = static_cast<T>(2.0 / static_cast<double>(rows));
  Matrix<T> dx_hat(rows, m.n);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t i = 0; i < m.n; ++i) {
      dx_hat(r, i) = scale * (x_hat(r, i) - batch(r, i));
    }
  }
  g.w_dec = matmul_at(dx_hat, z);
  g.b_dec.assign(m.n, T{0});
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t i = 0; i < m.n; ++i) g.b_dec[i] += dx_hat(r, i);
  }

  Matrix<T> dpre = matmul(dx_hat, m.w_dec);
  const T l1_grad = static_cast<T>(lambda / static_cast<double>(rows));
  std::size_t active = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    T* dp = dpre.row(r).data();
    const T* zr = z.row(r).data();
    for (std::size_t j = 0; j < m.d; ++j) {
      if (zr[j] > T{0}) {
        dp[j] += l1_grad;
        ++active;
      } else {
        dp[j] = T{0};
      }
    }
  }
  g.mean_l0 = static_cast<double>(active) / static_cast<double>(rows);
  g.w_enc = matmul_at(dpre, batch);
  g.b_enc.assign(m.d, T{0});
  for (std::size_t r = 0; r < rows; ++r) {
    const T* dp = dpre.row(r).data();
    for (std::size_t j = 0; j < m.d; ++j) g.b_enc[j] += dp[j];
  }
  return g;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainLogEntry {
  std::int64_t step = 0;
  double lr = 0.0;
  double lambda = 0.0;
  double total = 0.0;
  double recon = 0.0;
  double sparsity = 0.0;
  double l0 = 0.0;
  double decoder_norm_error = 0.0;  // max |‖W_dec[:,j]‖ − 1| after the step
};

template <typename T>
struct SAETrainResult {
  SAEModel<T> model;
  std::vector<TrainLogEntry> log;
  std::int64_t steps = 0;
  double input_scale = 1.0;
};

/// Multiplier that gives the rows unit mean squared entry.
inline double unit_mean_square_scale(const MatrixF& x) {
  double acc = 0.0;
  for (float v : x.values()) acc += double(v) * double(v);
  const double ms = acc / static_cast<double>(std::max<std::size_t>(x.size(), 1));
  return ms > 0.0 ? 1.0 / std::sqrt(ms) : 1.0;
}

namespace detail {

template <typename T>
Matrix<T> gather_rows(const MatrixF& src, std::span<const std::size_t> rows,
                      double scale) {
  Matrix<T> out(rows.size(), src.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const float* in = src.row(rows[r]).data();
    T* o = out.row(r).data();
    for (std::size_t c = 0; c < src.cols(); ++c) {
      o[c] = static_cast<T>(static_cast<double>(in[c]) * scale);
    }
  }
  return out;
}

template <typename T>
double max_norm_error(const SAEModel<T>& m) {
  double worst = 0.0;
  for (double v : m.decoder_column_norms()) worst = std::max(worst, std::abs(v - 1.0));
  return worst;
}

}  // namespace detail

/// Trains an SAE with Adam, the warm-up/decay learning-rate schedule and a
/// warm-up on λ. Deterministic for a given (dataset, config).
template <typename T = float>
SAETrainResult<T> train_sae(const ActivationDataset& ds, const TrainConfig& cfg) {
  cfg.validate();
  if (ds.n_samples() == 0 || ds.dim() == 0) {
    throw ArgumentError("train_sae: empty dataset");
  }
  const std::size_t n = ds.dim();
  const std::size_t d = cfg.expansion_factor * n;
  const std::size_t rows = ds.n_samples();

  Rng rng(cfg.seed);
  SAETrainResult<T> result;
  result.model = SAEModel<T>::initialized(n, d, rng);
  SAEModel<T>& model = result.model;
  result.input_scale = cfg.input_scaling == InputScaling::unit_mean_square
                           ? unit_mean_square_scale(ds.features)
                           : 1.0;

  const std::int64_t total = steps_for(rows, cfg.batch_size, cfg.epochs);
  const ScheduleSpec lr_sched{cfg.lr, total, cfg.lr_warmup_frac, cfg.lr_decay_frac};
  const ScheduleSpec lambda_sched{cfg.lambda, total, cfg.lambda_warmup_frac, 0.0};

  AdamState<T> s_w_enc(model.w_enc.size()), s_b_enc(d), s_w_dec(model.w_dec.size()),
      s_b_dec(n);
  std::vector<std::size_t> order(rows);
  std::iota(order.begin(), order.end(), std::size_t{0});

  std::int64_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(std::span(order));
    for (std::size_t start = 0; start < rows; start += cfg.batch_size) {
      const std::size_t count = std::min(cfg.batch_size, rows - start);
      const Matrix<T> batch = detail::gather_rows<T>(
          ds.features, std::span(order).subspan(start, count), result.input_scale);
      const double lr = schedule_value(lr_sched, step);
      const double lambda = schedule_value(lambda_sched, step);

      auto g = loss_gradients(model, batch, lambda);
      if (!std::isfinite(g.terms.total)) {
        throw TrainingError("training diverged: non-finite loss at step " +
                                std::to_string(step),
                            step);
      }
      adam_step(model.w_enc, g.w_enc, s_w_enc, lr);
      adam_step(std::span<T>(model.b_enc), std::span<const T>(g.b_enc), s_b_enc, lr);
      adam_step(model.w_dec, g.w_dec, s_w_dec, lr);
      adam_step(std::span<T>(model.b_dec), std::span<const T>(g.b_dec), s_b_dec, lr);
      if (cfg.normalize_decoder) model.normalize_decoder_columns();

      if (step % static_cast<std::int64_t>(cfg.log_every) == 0 || step + 1 == total) {
        TrainLogEntry e;
        e.step = step;
        e.lr = lr;
        e.lambda = lambda;
        e.total = g.terms.total;
        e.recon = g.terms.recon;
        e.sparsity = g.terms.sparsity;
        e.l0 = g.mean_l0;
        e.decoder_norm_error = cfg.normalize_decoder ? detail::max_norm_error(model) : 0.0;
        result.log.push_back(e);
        log::debug("sae step ", step, "/", total, " loss ", e.total, " recon ",
                   e.recon, " l0 ", e.l0);
      }
      ++step;
    }
  }
  result.steps = step;

  // Fold the input scaling into the weights so the model consumes raw inputs.
  if (result.input_scale != 1.0) {
    const T s = static_cast<T>(result.input_scale);
    for (auto& v : model.w_enc.values()) v *= s;
    for (auto& v : model.w_dec.values()) v /= s;
    for (auto& v : model.b_dec) v /= s;
  }
  return result;
}

// ---------------------------------------------------------------------------
// Evaluation metrics
// ---------------------------------------------------------------------------

struct SAEMetrics {
  double mse = 0.0;  // mean of (1/n)‖x − x̂‖²
  double l1 = 0.0;   // mean ‖z‖₁
  double l0 = 0.0;   // mean count of z_j > 0
  std::size_t dead_neuron_count = 0;
  std::size_t n_samples = 0;
};

inline nlohmann::json to_json(const SAEMetrics& m) {
  return {{"mse", m.mse},
          {"l1", m.l1},
          {"l0", m.l0},
          {"dead_neurons", m.dead_neuron_count},
          {"n_samples", m.n_samples}};
}

template <typename T>
SAEMetrics evaluate(const SAEModel<T>& m, const ActivationDataset& ds) {
  if (ds.dim() != m.n) {
    throw ShapeError("evaluate: dataset width " + std::to_string(ds.dim()) +
                     ", model expects " + std::to_string(m.n));
  }
  SAEMetrics out;
  out.n_samples = ds.n_samples();
  if (ds.n_samples() == 0) {
    out.dead_neuron_count = m.d;
    return out;
  }
  std::vector<bool> alive(m.d, false);
  double sq = 0.0, l1 = 0.0, l0 = 0.0;
  constexpr std::size_t kChunk = 256;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < ds.n_samples(); start += kChunk) {
    const std::size_t count = std::min(kChunk, ds.n_samples() - start);
    idx.resize(count);
    std::iota(idx.begin(), idx.end(), start);
    const Matrix<T> x = detail::gather_rows<T>(ds.features, idx, 1.0);
    const Matrix<T> z = encode_batch(m, x);
    const Matrix<T> x_hat = decode_batch(m, z);
    for (std::size_t r = 0; r < count; ++r) {
      double row_sq = 0.0;
      for (std::size_t i = 0; i < m.n; ++i) {
        const double e = double(x_hat(r, i)) - double(x(r, i));
        row_sq += e * e;
      }
      sq += row_sq / static_cast<double>(m.n);
      const T* zr = z.row(r).data();
      for (std::size_t j = 0; j < m.d; ++j) {
        if (zr[j] > T{0}) {
          l1 += double(zr[j]);
          l0 += 1.0;
          alive[j] = true;
        }
      }
    }
  }
  const double inv = 1.0 / static_cast<double>(ds.n_samples());
  out.mse = sq * inv;
  out.l1 = l1 * inv;
  out.l0 = l0 * inv;
  out.dead_neuron_count = static_cast<std::size_t>(std::count(alive.begin(), alive.end(), false));
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline constexpr std::string_view kSaeMagic = "OPSA";
inline constexpr std::uint8_t kSaeVersion = 1;

template <typename T>
binary::Bytes encode_checkpoint(const SAEModel<T>& m) {
  m.validate();
  binary::Writer w;
  w.put_bytes(kSaeMagic);
  w.put_u8(kSaeVersion);
  w.put_u64(m.n);
  w.put_u64(m.d);
  w.put_f32s(m.w_enc.values());
  w.put_f32s(std::span<const T>(m.b_enc));
  w.put_f32s(m.w_dec.values());
  w.put_f32s(std::span<const T>(m.b_dec));
  return w.take();
}

inline SAEModel<float> decode_checkpoint(std::span<const std::uint8_t> bytes,
                                         const std::string& what = "OPSA") {
  binary::Reader r(bytes, what);
  r.need(21);
  if (r.bytes(4) != kSaeMagic) throw FormatError(what + ": bad magic");
  if (const auto v = r.u8(); v != kSaeVersion) {
    throw FormatError(what + ": unsupported version " + std::to_string(v));
  }
  const std::uint64_t n = r.u64();
  const std::uint64_t d = r.u64();
  if (n == 0 || d == 0 || n > (1ull << 24) || d > (1ull << 28) ||
      (2 * n * d + n + d) * 4 != r.remaining()) {
    throw FormatError(what + ": size does not match n=" + std::to_string(n) +
                      ", d=" + std::to_string(d));
  }
  auto m = SAEModel<float>::zeros(n, d);
  r.f32s(m.w_enc.values());
  r.f32s(std::span<float>(m.b_enc));
  r.f32s(m.w_dec.values());
  r.f32s(std::span<float>(m.b_dec));
  m.validate();
  return m;
}

template <typename T>
void write_checkpoint(const SAEModel<T>& m, const std::filesystem::path& path) {
  binary::write_file(path, encode_checkpoint(m));
}

inline SAEModel<float> read_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(binary::read_file(path), path.string());
}

}  // namespace oprobe
