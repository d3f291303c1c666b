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

// Acceptance checks. One PASS/FAIL line per criterion; exit status is the
// number of failures.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "oprobe/oprobe.hpp"
#include "support/oracles.hpp"

using namespace oprobe;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  const char* name;
  double budget_s;  // 0 = no runtime bound
  std::function<Outcome()> run;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

ActivationDataset rows_only(const MatrixF& x) {
  ActivationDataset ds;
  ds.features = x;
  ds.labels.assign(x.rows(), 0);
  ds.n_classes = 1;
  return ds;
}

// ---------------------------------------------------------------------------

Outcome gradients() {
  const int instances = 200;
  double worst = 0.0;
  for (int s = 0; s < instances; ++s) {
    auto g = testing::random_gradient_instance(1000 + s);
    const auto an = loss_gradients(g.model, g.batch, g.lambda);
    worst = std::max(worst, testing::max_gradient_error(g, an, 1e-5));
  }
  return {worst <= 1e-4, fmt("%d instances, max rel error %.3g (tol 1e-4)", instances, worst)};
}

Outcome dictionary_recovery() {
  synthetic::PlantedDictionaryConfig pc;
  pc.dim = 64;
  pc.n_atoms = 128;
  pc.active = 3;
  pc.n_samples = 50000;
  pc.seed = 1;
  const auto planted = synthetic::planted_dictionary(pc);
  double best = 0.0;
  std::string detail;
  for (double lambda : {1.0, 5.0, 10.0}) {
    TrainConfig cfg;  // lr 1e-4, 3 epochs, batch 64, expansion 8
    cfg.lambda = lambda;
    cfg.seed = 1;
    const auto res = train_sae<float>(planted.data, cfg);
    const double rate = synthetic::recovery_rate(planted.atoms, res.model, 0.9);
    const auto met = evaluate(res.model, planted.data);
    detail += fmt("lambda=%g: %.1f%% (mse %.3g, l0 %.3g); ", lambda, 100 * rate, met.mse, met.l0);
    best = std::max(best, rate);
  }
  detail += fmt("best %.1f%% (need >= 90%%)", 100 * best);
  return {best >= 0.9, detail};
}

Outcome taxonomy_oracle() {
  Rng rng(2024);
  int sets = 0, no_lch = 0, mismatches = 0;
  for (int dag = 0; dag < 200; ++dag) {
    const auto file = testing::random_taxonomy(rng, 200, 400);
    const Taxonomy t(file);
    const testing::BruteForceTaxonomy oracle(file);
    if (t.num_synsets() != oracle.synsets().size()) ++mismatches;
    for (int k = 0; k < 50; ++k, ++sets) {
      const auto members = testing::random_members(file, rng);
      const auto want = oracle.evaluate(members);
      const ClassSet c = t.make_class_set(members);
      if (!want) {
        ++no_lch;
        try {
          t.metrics(c);
          ++mismatches;
        } catch (const NoCommonHypernymError&) {
        }
        continue;
      }
      const auto got = t.metrics(c);
      if (t.id(got.lch) != want->lch || got.height != want->height ||
          got.coverage != want->coverage) {
        ++mismatches;
      }
    }
  }
  return {mismatches == 0,
          fmt("200 DAGs x 50 sets = %d (%d without a common hypernym), %d mismatches", sets,
              no_lch, mismatches)};
}

Outcome metric_spot_values() {
  const Taxonomy t(testing::toy_taxonomy_file());
  struct Case {
    std::vector<std::string> members;
    const char* lch;
    double height, coverage;
  };
  const Case cases[] = {{{"corgi", "beagle"}, "dog", 1.0, 1.0},
                        {{"corgi", "tabby"}, "animal", 2.0, 2.0 / 3.0},
                        {{"tabby"}, "tabby", 0.0, 1.0},
                        {{"corgi"}, "corgi", 0.0, 1.0},
                        {{"truck"}, "truck", 0.0, 1.0}};
  int bad = 0;
  std::string detail;
  for (const auto& c : cases) {
    const auto m = t.metrics(t.make_class_set(c.members));
    const bool ok = t.id(m.lch) == c.lch && m.height == c.height && m.coverage == c.coverage;
    if (!ok) {
      ++bad;
      detail += fmt("{%s...} -> %s h=%g c=%g; ", c.members[0].c_str(), t.id(m.lch).c_str(),
                    m.height, m.coverage);
    }
  }
  return {bad == 0, detail + fmt("%d cases, %d wrong", int(std::size(cases)), bad)};
}

// Independent closed form written out segment by segment.
double closed_form(const ScheduleSpec& s, std::int64_t k) {
  const double T = double(s.total_steps), x = double(k);
  const double a = s.warmup_frac * T;
  const double b = T - s.decay_frac * T;
  if (x < a) return s.base_value * x / a;
  if (x <= b || s.decay_frac == 0.0) return s.base_value;
  return s.base_value * (T - x) / (s.decay_frac * T);
}

Outcome schedule() {
  Rng rng(31);
  double worst = 0.0;
  int endpoint_failures = 0;
  for (int i = 0; i < 50; ++i) {
    ScheduleSpec s;
    s.base_value = rng.uniform(1e-5, 20.0);
    s.total_steps = 10 + std::int64_t(rng.below(5000));
    s.warmup_frac = rng.uniform(0.01, 0.3);
    s.decay_frac = i % 10 == 0 ? 0.0 : rng.uniform(0.01, 0.6);
    for (std::int64_t k = 0; k <= s.total_steps; ++k) {
      worst = std::max(worst, std::abs(schedule_value(s, k) - closed_form(s, k)));
    }
    const auto mid = std::int64_t(std::ceil(s.warmup_frac * s.total_steps));
    if (schedule_value(s, 0) != 0.0) ++endpoint_failures;
    if (std::abs(schedule_value(s, mid) - s.base_value) > 1e-12) ++endpoint_failures;
    const double last = schedule_value(s, s.total_steps);
    if (s.decay_frac > 0 ? std::abs(last) > 1e-12 : std::abs(last - s.base_value) > 1e-12) {
      ++endpoint_failures;
    }
  }
  return {worst <= 1e-12 && endpoint_failures == 0,
          fmt("50 specs, max |diff| %.3g, %d endpoint failures", worst, endpoint_failures)};
}

Outcome metric_definitions() {
  // x1 = (2, 3) -> z = (2, 2), err^2 = 1;  x2 = (-1, 0.5) -> z = 0, err^2 = 1.25.
  auto m = SAEModel<float>::zeros(2, 2);
  m.w_enc = MatrixF::identity(2);
  m.w_dec = MatrixF::identity(2);
  m.b_enc = {0.0f, -1.0f};
  const auto met = evaluate(m, rows_only(MatrixF{{2.0f, 3.0f}, {-1.0f, 0.5f}}));
  bool ok = met.mse == (1.0 / 2 + 1.25 / 2) / 2 && met.l1 == 2.0 && met.l0 == 1.0 &&
            met.dead_neuron_count == 0;

  Rng rng(41);
  bool bounded = true;
  for (int i = 0; i < 20; ++i) {
    const std::size_t n = 2 + rng.below(10), d = n * (1 + rng.below(8));
    auto r = SAEModel<float>::initialized(n, d, rng);
    for (auto& b : r.b_enc) b = float(rng.normal() + 2.0);
    const auto e = evaluate(r, rows_only(testing::random_matrix<float>(200, n, rng)));
    bounded = bounded && e.l0 <= double(d);
  }
  auto dead = SAEModel<float>::initialized(6, 48, rng);
  dead.b_enc.assign(48, -1e30f);
  const auto dm = evaluate(dead, rows_only(testing::random_matrix<float>(100, 6, rng)));
  const bool all_dead = dm.dead_neuron_count == 48 && dm.l0 == 0.0;
  return {ok && bounded && all_dead,
          fmt("fixture mse %.6g l1 %g l0 %g; l0<=d %s; all-dead count %zu", met.mse, met.l1,
              met.l0, bounded ? "yes" : "no", dm.dead_neuron_count)};
}

Outcome layer_trend() {
  std::string detail;
  bool ok = true;
  for (std::uint64_t seed : {1, 2, 3}) {
    synthetic::LayerProgressionConfig pc;
    pc.seed = seed;
    const auto layers = synthetic::layer_progression(pc);
    TrainConfig cfg;
    cfg.lr = 1e-3;
    cfg.epochs = 10;
    cfg.seed = seed;
    std::vector<double> acc, l0, mse;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const TrainConfig lc = layer_config(cfg, std::uint32_t(l));
      const auto sae = train_sae<float>(layers[l].train, lc);
      const auto probe = train_probe<float>(layers[l].train, lc);
      const auto met = evaluate(sae.model, layers[l].val);
      acc.push_back(eval_probe(probe, layers[l].val));
      l0.push_back(met.l0);
      mse.push_back(met.mse);
    }
    bool s_ok = true;
    for (std::size_t l = 1; l < acc.size(); ++l) {
      s_ok = s_ok && acc[l] > acc[l - 1] && l0[l] > l0[l - 1] && mse[l] >= mse[l - 1];
    }
    ok = ok && s_ok;
    std::ostringstream o;
    o << "seed " << seed << (s_ok ? " ok" : " BROKEN") << " acc";
    for (double v : acc) o << ' ' << fmt("%.3f", v);
    o << " l0";
    for (double v : l0) o << ' ' << fmt("%.2f", v);
    o << " mse";
    for (double v : mse) o << ' ' << fmt("%.3g", v);
    detail += o.str() + "; ";
  }
  return {ok, detail + "lr 1e-3, 10 epochs, lambda 10"};
}

ActivationDataset blobs(std::size_t rows, std::size_t dim, std::size_t classes,
                        const MatrixD& centers, Rng& rng) {
  ActivationDataset ds;
  ds.features = MatrixF(rows, dim);
  ds.labels.resize(rows);
  ds.n_classes = std::uint32_t(classes);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto y = std::uint32_t(rng.below(classes));
    ds.labels[r] = y;
    for (std::size_t i = 0; i < dim; ++i) ds.features(r, i) = float(centers(y, i) + rng.normal());
  }
  return ds;
}

Outcome probe_sanity() {
  Rng rng(61);
  MatrixD two(2, 8);
  for (std::size_t i = 0; i < 8; ++i) two(0, i) = 4.0, two(1, i) = -4.0;
  const auto sep_train = blobs(4000, 8, 2, two, rng);
  const auto sep_val = blobs(1000, 8, 2, two, rng);
  const double sep = eval_probe(train_probe<float>(sep_train, TrainConfig{}), sep_val);

  const auto centers = testing::random_matrix<double>(10, 16, rng, 3.0);
  auto train = blobs(5000, 16, 10, centers, rng);
  auto val = blobs(2000, 16, 10, centers, rng);
  for (auto* ds : {&train, &val}) {
    for (auto& y : ds->labels) y = std::uint32_t(rng.below(10));
  }
  TrainConfig shuffled_cfg;
  shuffled_cfg.lr = 1e-3;
  const double shuffled = eval_probe(train_probe<float>(train, shuffled_cfg), val);

  TrainConfig seeded;
  seeded.seed = 9;
  const auto a = train_probe<float>(sep_train, seeded);
  const auto b = train_probe<float>(sep_train, seeded);
  const bool same = encode_probe(a) == encode_probe(b);

  return {sep >= 0.99 && std::abs(shuffled - 0.1) <= 0.03 && same,
          fmt("separable %.4f (>= 0.99), shuffled %.4f (0.10 +- 0.03), bit-identical %s", sep,
              shuffled, same ? "yes" : "no")};
}

Outcome formats() {
  const auto dir = testing::data_dir();
  const auto tmp = testing::scratch_dir("acceptance_formats");
  int bad = 0;
  std::string detail;
  auto check = [&](bool ok, const char* what) {
    if (!ok) ++bad, detail += std::string(what) + " failed; ";
  };

  const auto ds = read_activations(dir / "golden.opac");
  check(ds.features == MatrixF{{0.5f, -1.25f}, {3.0f, 0.0f}, {1024.5f, -7.75f}} &&
            ds.labels == std::vector<std::uint32_t>{2, 0, 1} && ds.n_classes == 3 &&
            ds.layer_id == 7 && ds.split == Split::val && ds.source_model == "golden",
        "golden OPAC values");
  check(encode_activations(ds) == binary::read_file(dir / "golden.opac"), "golden OPAC re-encode");

  const auto m = read_checkpoint(dir / "golden.opsa");
  check(m.n == 2 && m.d == 3 &&
            m.w_enc == MatrixF{{0.25f, -0.5f}, {1.0f, 2.0f}, {-3.0f, 0.125f}} &&
            m.b_enc == std::vector<float>{0.0f, -1.0f, 0.5f} &&
            m.w_dec == MatrixF{{1.0f, 0.0f, -0.75f}, {0.0f, 1.0f, 0.25f}} &&
            m.b_dec == std::vector<float>{0.0625f, -2.0f},
        "golden OPSA values");
  check(encode_checkpoint(m) == binary::read_file(dir / "golden.opsa"), "golden OPSA re-encode");

  const auto p = read_probe(dir / "golden.oplp");
  check(encode_probe(p) == binary::read_file(dir / "golden.oplp"), "golden OPLP re-encode");

  Rng rng(71);
  for (int i = 0; i < 20; ++i) {
    ActivationDataset r;
    r.features = testing::random_matrix<float>(1 + rng.below(50), 1 + rng.below(40), rng);
    r.n_classes = 1 + std::uint32_t(rng.below(30));
    for (std::size_t k = 0; k < r.n_samples(); ++k) {
      r.labels.push_back(std::uint32_t(rng.below(r.n_classes)));
    }
    r.layer_id = std::uint32_t(rng.below(40));
    r.split = i % 2 ? Split::train : Split::val;
    r.source_model = "random-" + std::to_string(i);
    write_activations(r, tmp / "r.opac");
    const auto back = read_activations(tmp / "r.opac");
    check(encode_activations(back) == binary::read_file(tmp / "r.opac"), "random OPAC round trip");

    const auto sm = SAEModel<float>::initialized(1 + rng.below(12), 1 + rng.below(48), rng);
    write_checkpoint(sm, tmp / "m.opsa");
    check(read_checkpoint(tmp / "m.opsa") == sm &&
              encode_checkpoint(read_checkpoint(tmp / "m.opsa")) ==
                  binary::read_file(tmp / "m.opsa"),
          "random OPSA round trip");
  }
  return {bad == 0, detail + fmt("golden OPAC/OPSA/OPLP + 20 random round trips, %d failures", bad)};
}

}  // namespace

int main() {
  set_num_threads(0);
  const std::vector<Criterion> criteria = {
      {"gradient_correctness", 30, gradients},
      {"dictionary_recovery", 600, dictionary_recovery},
      {"taxonomy_oracle_equivalence", 60, taxonomy_oracle},
      {"metric_spot_values", 0, metric_spot_values},
      {"schedule_closed_form", 0, schedule},
      {"metric_definitions", 0, metric_definitions},
      {"layer_trend", 300, layer_trend},
      {"probe_sanity", 0, probe_sanity},
      {"format_conformance", 0, formats},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = c.run();
    } catch (const std::exception& e) {
      out = {false, std::string("threw: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.budget_s > 0 && secs > c.budget_s) {
      out.pass = false;
      out.detail += fmt("; over the %.0f s budget", c.budget_s);
    }
    failures += out.pass ? 0 : 1;
    std::printf("%s %s (%.2f s): %s\n", out.pass ? "PASS" : "FAIL", c.name, secs,
                out.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", int(criteria.size()) - failures, criteria.size());
  return failures;
}
