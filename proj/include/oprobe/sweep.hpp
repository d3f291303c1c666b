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

// Layer sweep: for every layer's activation files train an SAE and a linear
// probe, evaluate both on the validation split and profile the SAE heads.

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "oprobe/dataio.hpp"
#include "oprobe/error.hpp"
#include "oprobe/log.hpp"
#include "oprobe/probe.hpp"
#include "oprobe/profiling.hpp"
#include "oprobe/sae.hpp"
#include "oprobe/taxonomy.hpp"

namespace oprobe {

/// Every layer of a sweep failed.
class SweepError : public Error { using Error::Error; };

struct SweepEntry {
  std::uint32_t layer_id = 0;
  fs::path train_path;
  fs::path val_path;
};

/// Parses `[{"layer_id": 0, "train_path": "...", "val_path": "..."}, ...]`.
/// Relative paths resolve against `base_dir`. Malformed manifests raise
/// ArgumentError.
inline std::vector<SweepEntry> parse_sweep_manifest(const nlohmann::json& j,
                                                    const fs::path& base_dir = {}) {
  if (!j.is_array()) throw ArgumentError("sweep manifest must be a JSON list");
  if (j.empty()) throw ArgumentError("sweep manifest is empty");
  std::vector<SweepEntry> out;
  std::set<std::uint32_t> seen;
  for (const auto& item : j) {
    if (!item.is_object()) throw ArgumentError("sweep manifest entries must be objects");
    for (const auto& [key, _] : item.items()) {
      if (key != "layer_id" && key != "train_path" && key != "val_path") {
        throw ArgumentError("unknown sweep manifest key '" + key + "'");
      }
    }
    SweepEntry e;
    try {
      e.layer_id = item.at("layer_id").get<std::uint32_t>();
      e.train_path = item.at("train_path").get<std::string>();
      e.val_path = item.at("val_path").get<std::string>();
    } catch (const nlohmann::json::exception& ex) {
      throw ArgumentError(std::string("bad sweep manifest entry: ") + ex.what());
    }
    if (e.train_path.is_relative()) e.train_path = base_dir / e.train_path;
    if (e.val_path.is_relative()) e.val_path = base_dir / e.val_path;
    if (!seen.insert(e.layer_id).second) {
      throw ArgumentError("duplicate layer_id " + std::to_string(e.layer_id));
    }
    out.push_back(std::move(e));
  }
  std::sort(out.begin(), out.end(),
            [](const SweepEntry& a, const SweepEntry& b) { return a.layer_id < b.layer_id; });
  return out;
}

inline std::vector<SweepEntry> read_sweep_manifest(const fs::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(binary::read_text(path));
  } catch (const nlohmann::json::exception& e) {
    throw ArgumentError(path.string() + ": " + e.what());
  }
  return parse_sweep_manifest(j, path.parent_path());
}

struct LayerSweepResult {
  std::uint32_t layer_id = 0;
  bool ok = false;
  std::string error;  // set when !ok
  double probe_accuracy = 0.0;
  double sae_mse = 0.0;
  double sae_l0 = 0.0;
  double sae_l1 = 0.0;
  std::size_t dead_neuron_count = 0;
  double train_seconds = 0.0;
};

struct SweepOptions {
  std::optional<fs::path> out_dir;   // per-layer artifacts when set
  const Taxonomy* taxonomy = nullptr;  // adds a heads report per layer
  HistogramConfig histogram;
};

/// The per-layer config: identical to `cfg` except seed = cfg.seed + layer_id.
inline TrainConfig layer_config(const TrainConfig& cfg, std::uint32_t layer_id) {
  TrainConfig c = cfg;
  c.seed = cfg.seed + layer_id;
  return c;
}

inline nlohmann::json sae_sidecar(const TrainConfig& cfg, const SAETrainResult<float>& res,
                                  const SAEMetrics& metrics) {
  nlohmann::json j = {{"config", to_json(cfg)},
                      {"input_scale", res.input_scale},
                      {"steps", res.steps},
                      {"metrics", to_json(metrics)}};
  if (!res.log.empty()) {
    const auto& e = res.log.back();
    j["final_step"] = {{"step", e.step},     {"lr", e.lr},       {"lambda", e.lambda},
                       {"total", e.total},   {"recon", e.recon}, {"sparsity", e.sparsity},
                       {"l0", e.l0}};
  }
  return j;
}

inline LayerSweepResult run_layer(const SweepEntry& entry, const TrainConfig& cfg,
                                  const ProfileConfig& pcfg, const SweepOptions& opts) {
  LayerSweepResult row;
  row.layer_id = entry.layer_id;
  const ActivationDataset train = read_activations(entry.train_path);
  const ActivationDataset val = read_activations(entry.val_path);
  if (train.dim() != val.dim()) {
    throw ValidationError("train width " + std::to_string(train.dim()) + " != val width " +
                          std::to_string(val.dim()));
  }
  const TrainConfig lcfg = layer_config(cfg, entry.layer_id);

  const auto t0 = std::chrono::steady_clock::now();
  const auto sae = train_sae<float>(train, lcfg);
  const auto probe = train_probe<float>(train, lcfg);
  const auto t1 = std::chrono::steady_clock::now();
  row.train_seconds = std::chrono::duration<double>(t1 - t0).count();

  const SAEMetrics metrics = evaluate(sae.model, val);
  row.probe_accuracy = eval_probe(probe, val);
  row.sae_mse = metrics.mse;
  row.sae_l0 = metrics.l0;
  row.sae_l1 = metrics.l1;
  row.dead_neuron_count = metrics.dead_neuron_count;
  const ProfileSet profiles = compute_profiles(sae.model, val, pcfg, opts.taxonomy);

  if (opts.out_dir) {
    const fs::path dir = *opts.out_dir / ("layer_" + std::to_string(entry.layer_id));
    fs::create_directories(dir);
    write_checkpoint(sae.model, dir / "sae.opsa");
    binary::write_text(dir / "sae.opsa.json", sae_sidecar(lcfg, sae, metrics).dump(2) + "\n");
    write_probe(probe, dir / "probe.oplp");
    binary::write_text(dir / "profiles.csv", profiles_csv(profiles));
    if (opts.taxonomy) {
      const HeadReport rep = hierarchical_report(profiles, *opts.taxonomy, opts.histogram);
      binary::write_text(dir / "heads.csv", head_report_csv(rep.rows));
      binary::write_text(dir / "heads.json", head_report_json(rep).dump(2) + "\n");
    }
  }
  row.ok = true;
  return row;
}

/// Runs every layer in layer_id order. A failing layer becomes a failed row;
/// SweepError only when no layer succeeds.
inline std::vector<LayerSweepResult> run_sweep(const std::vector<SweepEntry>& entries,
                                               const TrainConfig& cfg,
                                               const ProfileConfig& pcfg,
                                               const SweepOptions& opts = {}) {
  if (entries.empty()) throw ArgumentError("sweep has no layers");
  cfg.validate();
  pcfg.validate();
  std::vector<SweepEntry> sorted = entries;
  std::sort(sorted.begin(), sorted.end(),
            [](const SweepEntry& a, const SweepEntry& b) { return a.layer_id < b.layer_id; });
  std::vector<LayerSweepResult> rows;
  for (const auto& e : sorted) {
    try {
      rows.push_back(run_layer(e, cfg, pcfg, opts));
      log::info("layer ", e.layer_id, ": probe accuracy ", rows.back().probe_accuracy,
                ", sae l0 ", rows.back().sae_l0);
    } catch (const std::exception& ex) {
      log::warn("layer ", e.layer_id, " failed: ", ex.what());
      LayerSweepResult failed;
      failed.layer_id = e.layer_id;
      failed.error = ex.what();
      rows.push_back(std::move(failed));
    }
  }
  if (std::none_of(rows.begin(), rows.end(), [](const auto& r) { return r.ok; })) {
    throw SweepError("all " + std::to_string(rows.size()) + " sweep layers failed; first: " +
                     rows.front().error);
  }
  return rows;
}

/// Failed layers keep their layer_id and leave every metric cell empty.
inline std::string sweep_csv(const std::vector<LayerSweepResult>& rows) {
  std::ostringstream o;
  o << "layer_id,probe_accuracy,sae_mse,sae_l0,sae_l1,dead_neurons,train_seconds\n";
  for (const auto& r : rows) {
    o << r.layer_id;
    if (r.ok) {
      o << ',' << format_number(r.probe_accuracy) << ',' << format_number(r.sae_mse) << ','
        << format_number(r.sae_l0) << ',' << format_number(r.sae_l1) << ','
        << r.dead_neuron_count << ',' << format_number(r.train_seconds);
    } else {
      o << ",,,,,,";
    }
    o << '\n';
  }
  return o.str();
}

inline nlohmann::json sweep_status_json(const std::vector<LayerSweepResult>& rows) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json j = {{"layer_id", r.layer_id}, {"status", r.ok ? "ok" : "failed"}};
    if (!r.ok) j["error"] = r.error;
    layers.push_back(j);
  }
  return {{"layers", layers}};
}

}  // namespace oprobe
