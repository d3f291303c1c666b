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

// oprobe: train and profile sparse autoencoders on per-layer activations.
//
// Exit codes: 0 ok, 1 unexpected, 2 bad config or arguments, 3 bad input
// data, 4 training diverged.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "oprobe/oprobe.hpp"

namespace fs = std::filesystem;
using namespace oprobe;

namespace {

enum Exit { kOk = 0, kUnexpected = 1, kConfig = 2, kData = 3, kDiverged = 4 };

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> threads;
};

RunConfig load_config(const Common& c) {
  RunConfig rc = c.config.empty() ? RunConfig{} : read_run_config(c.config);
  if (c.seed) rc.train.seed = *c.seed;
  if (c.threads) rc.threads = *c.threads;
  if (!c.out.empty()) rc.out_dir = c.out;
  set_num_threads(rc.threads);
  return rc;
}

fs::path require_out(const RunConfig& rc) {
  if (!rc.out_dir) throw ConfigError("no output directory: pass --out or set out_dir");
  fs::create_directories(*rc.out_dir);
  return *rc.out_dir;
}

void emit(const nlohmann::json& j) { std::cout << j.dump(2) << '\n'; }

int cmd_train(const Common& c, const std::string& data) {
  const RunConfig rc = load_config(c);
  const fs::path out = require_out(rc);
  const ActivationDataset ds = read_activations(data);
  log::info("training on ", ds.n_samples(), " x ", ds.dim(), " rows from ", data);
  const auto res = train_sae<float>(ds, rc.train);
  const SAEMetrics m = evaluate(res.model, ds);
  write_checkpoint(res.model, out / "sae.opsa");
  binary::write_text(out / "sae.opsa.json", sae_sidecar(rc.train, res, m).dump(2) + "\n");
  nlohmann::json log = nlohmann::json::array();
  for (const auto& e : res.log) {
    log.push_back({{"step", e.step},     {"lr", e.lr},       {"lambda", e.lambda},
                   {"total", e.total},   {"recon", e.recon}, {"sparsity", e.sparsity},
                   {"l0", e.l0},         {"decoder_norm_error", e.decoder_norm_error}});
  }
  binary::write_text(out / "train_log.json", log.dump(2) + "\n");
  emit(to_json(m));
  return kOk;
}

int cmd_eval(const Common& c, const std::string& ckpt, const std::string& data) {
  const RunConfig rc = load_config(c);
  const auto model = read_checkpoint(ckpt);
  const ActivationDataset ds = read_activations(data);
  const nlohmann::json j = to_json(evaluate(model, ds));
  if (rc.out_dir) {
    fs::create_directories(*rc.out_dir);
    binary::write_text(fs::path(*rc.out_dir) / "metrics.json", j.dump(2) + "\n");
  }
  emit(j);
  return kOk;
}

int cmd_heads(const Common& c, const std::string& ckpt, const std::string& data,
              const std::string& tax_path, std::size_t min_classes, double min_cov,
              bool filter) {
  const RunConfig rc = load_config(c);
  const fs::path out = require_out(rc);
  const auto model = read_checkpoint(ckpt);
  const ActivationDataset val = read_activations(data);
  const Taxonomy tax(read_taxonomy(tax_path));
  const ProfileSet ps = compute_profiles(model, val, rc.profile, &tax);
  const HeadReport rep = hierarchical_report(ps, tax, rc.histogram);
  binary::write_text(out / "profiles.csv", profiles_csv(ps));
  binary::write_text(out / "heads.csv", head_report_csv(rep.rows));
  binary::write_text(out / "heads.json", head_report_json(rep).dump(2) + "\n");
  if (filter) {
    binary::write_text(out / "top_heads.csv",
                       head_report_csv(top_activating_heads(rep, min_classes, min_cov)));
  }
  emit(to_json(rep.summary));
  return kOk;
}

int cmd_probe(const Common& c, const std::string& train, const std::string& val) {
  const RunConfig rc = load_config(c);
  const fs::path out = require_out(rc);
  const ActivationDataset tr = read_activations(train);
  const ActivationDataset va = read_activations(val);
  if (tr.dim() != va.dim()) {
    throw ShapeError("train width " + std::to_string(tr.dim()) + " != val width " +
                     std::to_string(va.dim()));
  }
  const auto probe = train_probe<float>(tr, rc.train);
  const double acc = eval_probe(probe, va);
  write_probe(probe, out / "probe.oplp");
  const nlohmann::json j = {{"accuracy", acc}, {"train_rows", tr.n_samples()},
                            {"val_rows", va.n_samples()}};
  binary::write_text(out / "probe.json", j.dump(2) + "\n");
  emit(j);
  return kOk;
}

int cmd_sweep(const Common& c, const std::string& manifest, const std::string& tax_path) {
  const RunConfig rc = load_config(c);
  const fs::path out = require_out(rc);
  const auto entries = read_sweep_manifest(manifest);
  std::optional<Taxonomy> tax;
  if (!tax_path.empty()) tax.emplace(read_taxonomy(tax_path));
  SweepOptions opts;
  opts.out_dir = out;
  opts.taxonomy = tax ? &*tax : nullptr;
  opts.histogram = rc.histogram;
  const auto rows = run_sweep(entries, rc.train, rc.profile, opts);
  binary::write_text(out / "sweep.csv", sweep_csv(rows));
  binary::write_text(out / "sweep_status.json", sweep_status_json(rows).dump(2) + "\n");
  std::size_t failed = 0;
  for (const auto& r : rows) failed += r.ok ? 0 : 1;
  if (failed) log::warn(failed, " of ", rows.size(), " layers failed; see sweep_status.json");
  std::cout << sweep_csv(rows);
  return kOk;
}

int cmd_taxonomy(const std::string& tax_path) {
  const TaxonomyFile tf = read_taxonomy(tax_path);
  const Taxonomy tax(tf);
  emit({{"synsets", tax.num_synsets()},
        {"edges", tf.edges.size()},
        {"leaves", tax.num_leaves()},
        {"max_distance", tax.max_distance()}});
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse autoencoder probing of per-layer activations"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "oprobe 1.0");

  Common common;
  auto add_common = [&](CLI::App* sub, bool with_out) {
    sub->add_option("--config", common.config, "JSON run config")->check(CLI::ExistingFile);
    if (with_out) sub->add_option("--out", common.out, "output directory");
    sub->add_option("--seed", common.seed, "override the config seed");
    sub->add_option("--threads", common.threads, "worker threads (0 = all cores)");
  };

  std::string data, ckpt, tax, train, val, manifest;
  std::size_t min_classes = 2;
  double min_cov = 0.0;

  auto* train_cmd = app.add_subcommand("train-sae", "train an SAE on one activation file");
  train_cmd->add_option("--data", data, "OPAC training activations")->required();
  add_common(train_cmd, true);

  auto* eval_cmd = app.add_subcommand("eval-sae", "reconstruction and sparsity metrics");
  eval_cmd->add_option("--checkpoint", ckpt, "OPSA checkpoint")->required();
  eval_cmd->add_option("--data", data, "OPAC activations")->required();
  add_common(eval_cmd, true);

  auto* heads_cmd = app.add_subcommand("heads", "per-head class sets and hierarchy report");
  heads_cmd->add_option("--checkpoint", ckpt, "OPSA checkpoint")->required();
  heads_cmd->add_option("--data", data, "OPAC validation activations")->required();
  heads_cmd->add_option("--taxonomy", tax, "taxonomy TSV")->required();
  auto* mc = heads_cmd->add_option("--min-classes", min_classes,
                                   "top_heads.csv: minimum class-set size");
  auto* mv = heads_cmd->add_option("--min-coverage", min_cov,
                                   "top_heads.csv: minimum coverage")->check(CLI::Range(0.0, 1.0));
  add_common(heads_cmd, true);

  auto* probe_cmd = app.add_subcommand("probe", "train and score a linear probe");
  probe_cmd->add_option("--train", train, "OPAC training activations")->required();
  probe_cmd->add_option("--val", val, "OPAC validation activations")->required();
  add_common(probe_cmd, true);

  auto* sweep_cmd = app.add_subcommand("sweep", "SAE and probe for every layer in a manifest");
  sweep_cmd->add_option("--manifest", manifest, "JSON list of layer files")->required();
  sweep_cmd->add_option("--taxonomy", tax, "adds a heads report per layer");
  add_common(sweep_cmd, true);

  auto* tax_cmd = app.add_subcommand("taxonomy-check", "validate a taxonomy TSV");
  tax_cmd->add_option("--taxonomy", tax, "taxonomy TSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    if (*train_cmd) return cmd_train(common, data);
    if (*eval_cmd) return cmd_eval(common, ckpt, data);
    if (*heads_cmd) {
      return cmd_heads(common, ckpt, data, tax, min_classes, min_cov,
                       mc->count() > 0 || mv->count() > 0);
    }
    if (*probe_cmd) return cmd_probe(common, train, val);
    if (*sweep_cmd) return cmd_sweep(common, manifest, tax);
    if (*tax_cmd) return cmd_taxonomy(tax);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "oprobe: config: %s\n", e.what());
    return kConfig;
  } catch (const ArgumentError& e) {
    std::fprintf(stderr, "oprobe: %s\n", e.what());
    return kConfig;
  } catch (const TrainingError& e) {
    std::fprintf(stderr, "oprobe: training diverged: %s\n", e.what());
    return kDiverged;
  } catch (const Error& e) {
    std::fprintf(stderr, "oprobe: %s\n", e.what());
    return kData;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "oprobe: %s\n", e.what());
    return kUnexpected;
  }
  return kUnexpected;
}
