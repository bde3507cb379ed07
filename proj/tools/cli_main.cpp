// Copyright 2026 The scaprune Authors
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

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "scaprune/scaprune.h"

namespace {

// Overrides travel to the library as a small JSON object; values here are
// known-safe (numbers and escaped strings).
std::string json_escape(const std::string& s) {
  std::ostringstream out;
  for (char c : s) {
    switch (c) {
      case '"': out << "\\\""; break;
      case '\\': out << "\\\\"; break;
      case '\n': out << "\\n"; break;
      case '\t': out << "\\t"; break;
      default: out << c;
    }
  }
  return out.str();
}

// Prints the aligned companion of a delimiter-separated artifact when the
// verb produced one.
void print_text_sibling(const std::string& artifact) {
  namespace fs = std::filesystem;
  fs::path p(artifact);
  if (p.extension() != ".csv") return;
  p.replace_extension(".txt");
  std::ifstream in(p);
  if (!in) return;
  std::cout << in.rdbuf();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"channel pruning pipeline: train, collect, prune, finetune, eval, report, sweep"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  int64_t seed = 0;
  bool seed_set = false;
  int64_t subset = 0;
  bool subset_set = false;
  double ratio = 0.0;
  bool ratio_set = false;
  std::string ratios_file;
  std::string scorer;
  std::vector<std::string> runs;

  const std::vector<std::string> verbs{"train",    "collect", "prune", "finetune",
                                       "eval",     "report",  "sweep"};
  for (const std::string& verb : verbs) {
    CLI::App* sub = app.add_subcommand(verb);
    sub->add_option("--config", config_path, "experiment config file (JSON)");
    sub->add_option("--out", out_dir, "output directory for run artifacts");
    sub->add_option("--seed", seed, "seed overriding the config")->each([&](const std::string&) {
      seed_set = true;
    });
    sub->add_option("--subset", subset, "per-class train subset size")
        ->each([&](const std::string&) { subset_set = true; });
    CLI::Option* ratio_opt =
        sub->add_option("--ratio", ratio, "uniform pruning ratio in [0,1)")
            ->each([&](const std::string&) { ratio_set = true; });
    CLI::Option* ratios_opt =
        sub->add_option("--ratios", ratios_file, "JSON file mapping layer ids to ratios");
    ratio_opt->excludes(ratios_opt);
    ratios_opt->excludes(ratio_opt);
    sub->add_option("--scorer", scorer, "cpsca, cpse, l1 or slimming")
        ->check(CLI::IsMember({"cpsca", "cpse", "l1", "slimming"}));
    if (verb == "report") {
      sub->add_option("runs", runs, "completed run directories to tabulate");
    }
  }

  CLI11_PARSE(app, argc, argv);
  const std::string verb = app.get_subcommands().front()->get_name();

  std::ostringstream overrides;
  overrides << "{";
  bool first = true;
  auto add = [&](const std::string& fragment) {
    if (!first) overrides << ",";
    overrides << fragment;
    first = false;
  };
  if (!out_dir.empty()) add("\"out\":\"" + json_escape(out_dir) + "\"");
  if (seed_set) add("\"seed\":" + std::to_string(seed));
  if (subset_set) add("\"subset\":" + std::to_string(subset));
  if (ratio_set) add("\"ratio\":" + std::to_string(ratio));
  if (!ratios_file.empty()) add("\"ratios_file\":\"" + json_escape(ratios_file) + "\"");
  if (!scorer.empty()) add("\"scorer\":\"" + json_escape(scorer) + "\"");
  if (!runs.empty()) {
    std::string list = "\"runs\":[";
    for (size_t i = 0; i < runs.size(); ++i) {
      if (i > 0) list += ",";
      list += "\"" + json_escape(runs[i]) + "\"";
    }
    list += "]";
    add(list);
  }
  overrides << "}";

  char* artifact = nullptr;
  const scap_status status =
      scap_run(verb.c_str(), config_path.empty() ? nullptr : config_path.c_str(),
               overrides.str().c_str(), &artifact);
  if (status != SCAP_OK) {
    std::cerr << "error: " << scap_last_error() << "\n";
    return static_cast<int>(status);
  }
  std::cout << artifact << "\n";
  print_text_sibling(artifact);
  scap_string_free(artifact);
  return 0;
}
