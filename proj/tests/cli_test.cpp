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

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <set>
#include <sstream>

#include "oprobe/oprobe.hpp"
#include "support/oracles.hpp"

namespace oprobe {
namespace {

using testing::scratch_dir;

struct CliRun {
  int code = -1;
  std::string output;  // stdout and stderr
};

CliRun oprobe(const std::string& args) {
  const std::string cmd = std::string(OPROBE_CLI_PATH) + " " + args + " 2>&1";
  CliRun r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  std::array<char, 4096> buf;
  std::size_t got;
  while ((got = fread(buf.data(), 1, buf.size(), p)) > 0) r.output.append(buf.data(), got);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

// Two small layers whose labels line up with the five toy-taxonomy leaves.
struct Fixture {
  fs::path dir;
  fs::path config;
  fs::path manifest;
  fs::path taxonomy = testing::data_dir() / "toy_taxonomy.tsv";
  fs::path train(int l) const { return dir / ("l" + std::to_string(l) + "_train.opac"); }
  fs::path val(int l) const { return dir / ("l" + std::to_string(l) + "_val.opac"); }
};

Fixture make_fixture(const std::string& name) {
  Fixture f;
  f.dir = scratch_dir("cli_" + name);
  synthetic::LayerProgressionConfig pc;
  pc.dim = 8;
  pc.n_classes = 5;
  pc.n_factors = 16;
  pc.n_train = 600;
  pc.n_val = 300;
  pc.layers = {{0.5, 1}, {2.0, 2}};
  auto layers = synthetic::layer_progression(pc);
  nlohmann::json m = nlohmann::json::array();
  for (int l = 0; l < 2; ++l) {
    write_activations(layers[l].train, f.train(l));
    write_activations(layers[l].val, f.val(l));
    m.push_back({{"layer_id", l},
                 {"train_path", f.train(l).filename().string()},
                 {"val_path", f.val(l).filename().string()}});
  }
  f.manifest = f.dir / "manifest.json";
  binary::write_text(f.manifest, m.dump());
  f.config = f.dir / "config.json";
  binary::write_text(f.config, R"({"lr": 1e-3, "epochs": 2, "expansion_factor": 4,
                                   "lambda": 1, "seed": 5, "threads": 1})");
  return f;
}

TEST(Cli, HelpListsSubcommandsAndFlags) {
  const CliRun top = oprobe("--help");
  EXPECT_EQ(top.code, 0);
  for (const char* s : {"train-sae", "eval-sae", "heads", "probe", "sweep", "taxonomy-check"}) {
    EXPECT_NE(top.output.find(s), std::string::npos) << s;
  }
  const CliRun heads = oprobe("heads --help");
  EXPECT_EQ(heads.code, 0);
  for (const char* s : {"--checkpoint", "--taxonomy", "--min-coverage", "--min-classes",
                        "--config", "--seed", "--threads", "--out"}) {
    EXPECT_NE(heads.output.find(s), std::string::npos) << s;
  }
}

TEST(Cli, MissingSubcommandOrFlagIsAConfigError) {
  EXPECT_EQ(oprobe("").code, 2);
  EXPECT_EQ(oprobe("train-sae").code, 2);
  EXPECT_EQ(oprobe("train-sae --data x --bogus").code, 2);
}

TEST(Cli, UnknownConfigKeyNamesTheKey) {
  const Fixture f = make_fixture("typo");
  const fs::path bad = f.dir / "bad.json";
  binary::write_text(bad, R"({"lamda": 5})");
  const CliRun r = oprobe("train-sae --data " + q(f.train(0)) + " --out " + q(f.dir / "o") +
                       " --config " + q(bad));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("lamda"), std::string::npos) << r.output;
}

TEST(Cli, TruncatedDataExitsThree) {
  const Fixture f = make_fixture("trunc");
  auto bytes = binary::read_file(f.train(0));
  bytes.resize(bytes.size() - 7);
  const fs::path cut = f.dir / "cut.opac";
  binary::write_file(cut, bytes);
  const CliRun r = oprobe("train-sae --data " + q(cut) + " --out " + q(f.dir / "o") +
                       " --config " + q(f.config));
  EXPECT_EQ(r.code, 3) << r.output;
  EXPECT_NE(r.output.find("truncated"), std::string::npos) << r.output;
}

TEST(Cli, DivergenceExitsFour) {
  const Fixture f = make_fixture("diverge");
  const fs::path cfg = f.dir / "hot.json";
  binary::write_text(cfg, R"({"lr": 1e30, "epochs": 1})");
  const CliRun r = oprobe("train-sae --data " + q(f.train(1)) + " --out " + q(f.dir / "o") +
                       " --config " + q(cfg));
  EXPECT_EQ(r.code, 4) << r.output;
}

TEST(Cli, TrainEvalHeadsProbeRoundTrip) {
  const Fixture f = make_fixture("pipeline");
  const fs::path out = f.dir / "run";
  CliRun r = oprobe("train-sae --data " + q(f.train(1)) + " --out " + q(out) + " --config " +
                 q(f.config));
  ASSERT_EQ(r.code, 0) << r.output;
  for (const char* name : {"sae.opsa", "sae.opsa.json", "train_log.json"}) {
    EXPECT_TRUE(fs::exists(out / name)) << name;
  }
  const auto model = read_checkpoint(out / "sae.opsa");
  EXPECT_EQ(model.n, 8u);
  EXPECT_EQ(model.d, 32u);

  r = oprobe("eval-sae --checkpoint " + q(out / "sae.opsa") + " --data " + q(f.val(1)));
  ASSERT_EQ(r.code, 0) << r.output;
  const auto metrics = nlohmann::json::parse(r.output);
  const auto want = to_json(evaluate(model, read_activations(f.val(1))));
  EXPECT_DOUBLE_EQ(metrics.at("mse").get<double>(), want.at("mse").get<double>());
  EXPECT_DOUBLE_EQ(metrics.at("l0").get<double>(), want.at("l0").get<double>());

  r = oprobe("heads --checkpoint " + q(out / "sae.opsa") + " --data " + q(f.val(1)) +
             " --taxonomy " + q(f.taxonomy) + " --out " + q(out) +
             " --min-classes 2 --min-coverage 0.3");
  ASSERT_EQ(r.code, 0) << r.output;
  const auto full = lines(binary::read_text(out / "heads.csv"));
  const auto top = lines(binary::read_text(out / "top_heads.csv"));
  ASSERT_EQ(full.size(), 33u);
  ASSERT_GE(top.size(), 1u);
  EXPECT_EQ(top[0], full[0]);
  const std::set<std::string> all(full.begin() + 1, full.end());
  for (std::size_t i = 1; i < top.size(); ++i) {
    EXPECT_TRUE(all.count(top[i])) << top[i];
  }
  const auto summary = nlohmann::json::parse(r.output);
  EXPECT_EQ(summary.at("heads").get<int>(), 32);
  EXPECT_TRUE(fs::exists(out / "heads.json"));
  EXPECT_TRUE(fs::exists(out / "profiles.csv"));

  r = oprobe("probe --train " + q(f.train(1)) + " --val " + q(f.val(1)) + " --out " + q(out) +
             " --config " + q(f.config));
  ASSERT_EQ(r.code, 0) << r.output;
  const double acc = nlohmann::json::parse(r.output).at("accuracy").get<double>();
  EXPECT_GT(acc, 0.5);
  EXPECT_DOUBLE_EQ(eval_probe(read_probe(out / "probe.oplp"), read_activations(f.val(1))), acc);
}

TEST(Cli, DeadModelReportsOnlyEmptyHeads) {
  const Fixture f = make_fixture("dead");
  auto m = SAEModel<float>::zeros(8, 16);
  for (auto& b : m.b_enc) b = -1.0f;
  write_checkpoint(m, f.dir / "dead.opsa");
  const CliRun r = oprobe("heads --checkpoint " + q(f.dir / "dead.opsa") + " --data " +
                       q(f.val(0)) + " --taxonomy " + q(f.taxonomy) + " --out " +
                       q(f.dir / "o"));
  ASSERT_EQ(r.code, 0) << r.output;
  const auto s = nlohmann::json::parse(r.output);
  EXPECT_EQ(s.at("heads").get<int>(), 16);
  EXPECT_EQ(s.at("empty_heads").get<int>(), 16);
  for (const char* k : {"single_class_heads", "multi_class_heads", "coverage_one_heads",
                        "no_lch_heads"}) {
    EXPECT_EQ(s.at(k).get<int>(), 0) << k;
  }
  const auto j = nlohmann::json::parse(binary::read_text(f.dir / "o" / "heads.json"));
  for (const auto& row : j.at("histogram").at("counts")) {
    for (const auto& c : row) EXPECT_EQ(c.get<int>(), 0);
  }
}

TEST(Cli, MisalignedTaxonomyExitsThree) {
  const Fixture f = make_fixture("misaligned");
  write_checkpoint(SAEModel<float>::zeros(8, 8), f.dir / "m.opsa");
  const fs::path tax = f.dir / "tiny.tsv";
  binary::write_text(tax, "a\tr\n[leaves]\n0\ta\n");
  const CliRun r = oprobe("heads --checkpoint " + q(f.dir / "m.opsa") + " --data " +
                       q(f.val(0)) + " --taxonomy " + q(tax) + " --out " + q(f.dir / "o"));
  EXPECT_EQ(r.code, 3) << r.output;
}

TEST(Cli, EmptyManifestExitsTwo) {
  const Fixture f = make_fixture("empty");
  const fs::path m = f.dir / "empty.json";
  binary::write_text(m, "[]");
  EXPECT_EQ(oprobe("sweep --manifest " + q(m) + " --out " + q(f.dir / "o")).code, 2);
}

TEST(Cli, SweepKeepsGoingPastAnUnreadableLayer) {
  const Fixture f = make_fixture("partial");
  auto m = nlohmann::json::parse(binary::read_text(f.manifest));
  m.push_back({{"layer_id", 7}, {"train_path", "missing.opac"}, {"val_path", "missing.opac"}});
  binary::write_text(f.manifest, m.dump());
  const fs::path out = f.dir / "o";
  const CliRun r = oprobe("sweep --manifest " + q(f.manifest) + " --out " + q(out) +
                       " --config " + q(f.config) + " --taxonomy " + q(f.taxonomy));
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("1 of 3 layers failed"), std::string::npos) << r.output;
  const auto rows = lines(binary::read_text(out / "sweep.csv"));
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[3], "7,,,,,,");
  const auto status = nlohmann::json::parse(binary::read_text(out / "sweep_status.json"));
  EXPECT_EQ(status["layers"][2]["status"], "failed");
  EXPECT_TRUE(fs::exists(out / "layer_1" / "heads.csv"));
}

TEST(Cli, AllLayersFailingExitsThree) {
  const Fixture f = make_fixture("allfail");
  binary::write_text(f.manifest,
                     R"([{"layer_id": 0, "train_path": "nope.opac", "val_path": "nope.opac"}])");
  EXPECT_EQ(oprobe("sweep --manifest " + q(f.manifest) + " --out " + q(f.dir / "o")).code, 3);
}

// Everything but the wall-clock column must repeat byte for byte.
TEST(Cli, SweepIsIdempotent) {
  const Fixture f = make_fixture("idem");
  const fs::path a = f.dir / "a", b = f.dir / "b";
  for (const auto& out : {a, b}) {
    const CliRun r = oprobe("sweep --manifest " + q(f.manifest) + " --out " + q(out) +
                         " --config " + q(f.config) + " --taxonomy " + q(f.taxonomy));
    ASSERT_EQ(r.code, 0) << r.output;
  }
  std::size_t compared = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const fs::path rel = fs::relative(e.path(), a);
    ASSERT_TRUE(fs::exists(b / rel)) << rel;
    std::string x = binary::read_text(a / rel), y = binary::read_text(b / rel);
    if (rel == "sweep.csv") {
      auto strip = [](const std::string& s) {
        std::string out;
        for (const auto& l : lines(s)) out += l.substr(0, l.rfind(',')) + "\n";
        return out;
      };
      x = strip(x);
      y = strip(y);
    }
    EXPECT_EQ(x, y) << rel;
    ++compared;
  }
  EXPECT_GE(compared, 12u);
}

TEST(Cli, SeedFlagOverridesConfig) {
  const Fixture f = make_fixture("seed");
  for (int seed : {5, 6}) {
    ASSERT_EQ(oprobe("train-sae --data " + q(f.train(0)) + " --out " +
                     q(f.dir / std::to_string(seed)) + " --config " + q(f.config) +
                     " --seed " + std::to_string(seed)).code, 0);
  }
  ASSERT_EQ(oprobe("train-sae --data " + q(f.train(0)) + " --out " + q(f.dir / "cfg") +
                   " --config " + q(f.config)).code, 0);
  const auto s5 = binary::read_file(f.dir / "5" / "sae.opsa");
  EXPECT_EQ(s5, binary::read_file(f.dir / "cfg" / "sae.opsa"));
  EXPECT_NE(s5, binary::read_file(f.dir / "6" / "sae.opsa"));
}

TEST(Cli, TaxonomyCheck) {
  const CliRun ok = oprobe("taxonomy-check --taxonomy " +
                        q(testing::data_dir() / "toy_taxonomy.tsv"));
  ASSERT_EQ(ok.code, 0) << ok.output;
  const auto j = nlohmann::json::parse(ok.output);
  EXPECT_EQ(j.at("leaves").get<int>(), 5);
  const fs::path dir = scratch_dir("cli_taxcycle");
  binary::write_text(dir / "cycle.tsv",
                     "a\tb\nb\ta\n[leaves]\n0\ta\n");
  EXPECT_EQ(oprobe("taxonomy-check --taxonomy " + q(dir / "cycle.tsv")).code, 3);
}

}  // namespace
}  // namespace oprobe
