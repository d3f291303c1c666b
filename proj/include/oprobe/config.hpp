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

// JSON run configuration shared by the command-line subcommands. Unknown keys
// are rejected so that typos ("lamda") fail loudly instead of silently
// falling back to a default.

#include <filesystem>
#include <optional>
#include <set>
#include <string>

#include <json.hpp>

#include "oprobe/binary.hpp"
#include "oprobe/error.hpp"
#include "oprobe/profiling.hpp"
#include "oprobe/sae.hpp"

namespace oprobe {

/// A malformed or unreadable run configuration.
class ConfigError : public Error { using Error::Error; };

struct RunConfig {
  TrainConfig train;
  ProfileConfig profile;
  HistogramConfig histogram;
  std::optional<std::string> out_dir;
  unsigned threads = 0;  // 0 = all cores
};

inline const std::set<std::string>& run_config_keys() {
  static const std::set<std::string> keys = {
      "lambda",          "lr",
      "epochs",          "batch_size",
      "expansion_factor", "lr_warmup_frac",
      "lr_decay_frac",   "lambda_warmup_frac",
      "seed",            "normalize_decoder",
      "input_scaling",   "log_every",
      "activation_epsilon", "class_threshold",
      "min_images_per_class", "height_bins",
      "coverage_bins",   "height_max",
      "out_dir",         "threads"};
  return keys;
}

inline RunConfig parse_run_config(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!run_config_keys().count(key)) throw ConfigError("unknown config key '" + key + "'");
  }
  RunConfig rc;
  auto get = [&](const char* key, auto& dst) {
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(dst);
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(std::string("config key '") + key + "' has the wrong type");
    }
  };
  auto& t = rc.train;
  get("lambda", t.lambda);
  get("lr", t.lr);
  get("epochs", t.epochs);
  get("batch_size", t.batch_size);
  get("expansion_factor", t.expansion_factor);
  get("lr_warmup_frac", t.lr_warmup_frac);
  get("lr_decay_frac", t.lr_decay_frac);
  get("lambda_warmup_frac", t.lambda_warmup_frac);
  get("seed", t.seed);
  get("normalize_decoder", t.normalize_decoder);
  get("log_every", t.log_every);
  if (j.contains("input_scaling")) {
    std::string s;
    get("input_scaling", s);
    try {
      t.input_scaling = parse_input_scaling(s);
    } catch (const ArgumentError& e) {
      throw ConfigError(e.what());
    }
  }
  get("activation_epsilon", rc.profile.activation_epsilon);
  get("class_threshold", rc.profile.class_threshold);
  get("min_images_per_class", rc.profile.min_images_per_class);
  get("height_bins", rc.histogram.height_bins);
  get("coverage_bins", rc.histogram.coverage_bins);
  get("height_max", rc.histogram.height_max);
  if (j.contains("out_dir")) {
    std::string s;
    get("out_dir", s);
    rc.out_dir = s;
  }
  get("threads", rc.threads);
  try {
    rc.train.validate();
    rc.profile.validate();
  } catch (const ArgumentError& e) {
    throw ConfigError(e.what());
  }
  if (rc.histogram.height_bins == 0 || rc.histogram.coverage_bins == 0) {
    throw ConfigError("histogram bins must be >= 1");
  }
  return rc;
}

inline RunConfig read_run_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = binary::read_text(path);
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
  try {
    return parse_run_config(nlohmann::json::parse(text));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

inline nlohmann::json to_json(const RunConfig& rc) {
  nlohmann::json j = to_json(rc.train);
  j.update(to_json(rc.profile));
  j["height_bins"] = rc.histogram.height_bins;
  j["coverage_bins"] = rc.histogram.coverage_bins;
  j["height_max"] = rc.histogram.height_max;
  j["threads"] = rc.threads;
  if (rc.out_dir) j["out_dir"] = *rc.out_dir;
  return j;
}

}  // namespace oprobe
