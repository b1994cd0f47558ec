/* Copyright 2026 The cprlite Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cpr/pipeline.hpp"

namespace {

using namespace cpr::tools;

enum ExitCode { kOk = 0, kFailure = 1, kConfig = 2, kMissingInput = 3, kPartial = 4 };

// Flags shared by every subcommand.
struct Options {
  std::string config;
  std::string workspace;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<double> sigma, delta1, delta2, gamma, alpha_ann, alpha_neg, lr;
  std::optional<int> radius, u0, epochs;
  std::optional<std::string> extractor, region;
  std::vector<double> taus;
  std::string supervision = "both";
};

std::string num(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

std::vector<std::string> overrides(const Options& o) {
  std::vector<std::string> out;
  if (!o.workspace.empty()) out.push_back("workspace=\"" + o.workspace + "\"");
  if (o.seed) {
    for (const char* key : {"scene.seed", "annotate.seed", "cpr.train.seed", "localizer.train.seed"})
      out.push_back(std::string(key) + "=" + std::to_string(*o.seed));
  }
  if (o.sigma) out.push_back("annotate.sigma=" + num(*o.sigma));
  if (o.radius) out.push_back("sampling.radius=" + std::to_string(*o.radius));
  if (o.u0) out.push_back("sampling.u0=" + std::to_string(*o.u0));
  if (o.region) out.push_back("sampling.region=" + *o.region);
  if (o.delta1) out.push_back("refine.delta1=" + num(*o.delta1));
  if (o.delta2) out.push_back("refine.delta2=" + num(*o.delta2));
  if (o.gamma) out.push_back("cpr.train.gamma=" + num(*o.gamma));
  if (o.alpha_ann) out.push_back("cpr.train.alpha_ann=" + num(*o.alpha_ann));
  if (o.alpha_neg) out.push_back("cpr.train.alpha_neg=" + num(*o.alpha_neg));
  if (o.epochs) out.push_back("cpr.train.epochs=" + std::to_string(*o.epochs));
  if (o.lr) out.push_back("cpr.train.learning_rate=" + num(*o.lr));
  if (o.extractor) {
    out.push_back("cpr.extractor.kind=" + *o.extractor);
    out.push_back("localizer.extractor.kind=" + *o.extractor);
  }
  if (!o.taus.empty()) {
    std::string list = "eval.taus=[";
    for (std::size_t i = 0; i < o.taus.size(); ++i) list += (i ? "," : "") + num(o.taus[i]);
    out.push_back(list + "]");
  }
  out.insert(out.end(), o.sets.begin(), o.sets.end());
  return out;
}

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("-c,--config", o.config, "JSON run config")->check(CLI::ExistingFile);
  cmd->add_option("-w,--workspace", o.workspace, "Workspace root (all paths are relative to it)");
  cmd->add_option("--set", o.sets, "Override a config key: dotted.key=value")->take_all();
  cmd->add_option("--seed", o.seed, "Set every seed");
  cmd->add_option("--sigma", o.sigma, "Annotation noise (fraction of box size)");
  cmd->add_option("--radius", o.radius, "Bag radius R in feature cells");
  cmd->add_option("--u0", o.u0, "Points on the first ring");
  cmd->add_option("--region", o.region, "Bag ring shape")->check(CLI::IsMember({"circle", "rectangle"}));
  cmd->add_option("--delta1", o.delta1, "Absolute score floor");
  cmd->add_option("--delta2", o.delta2, "Score floor relative to the annotated point");
  cmd->add_option("--gamma", o.gamma, "Focal loss exponent");
  cmd->add_option("--alpha-ann", o.alpha_ann, "Annotation loss weight");
  cmd->add_option("--alpha-neg", o.alpha_neg, "Negative loss weight");
  cmd->add_option("--epochs", o.epochs, "CPR training epochs");
  cmd->add_option("--lr", o.lr, "CPR learning rate");
  cmd->add_option("--extractor", o.extractor, "Feature extractor")->check(CLI::IsMember({"fixed", "conv"}));
  cmd->add_option("--taus", o.taus, "Evaluation thresholds");
}

std::vector<Supervision> supervision(const std::string& s) {
  if (s == "coarse") return {Supervision::kCoarse};
  if (s == "refined") return {Supervision::kRefined};
  return {Supervision::kCoarse, Supervision::kRefined};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cpr: coarse point refinement pipeline"};
  app.require_subcommand(1);
  Options o;
  struct Command {
    const char* name;
    const char* help;
  };
  const std::vector<Command> commands = {
      {"synth", "Generate the synthetic dataset and oracle centers"},
      {"annotate", "Sample coarse point annotations"},
      {"train", "Train CPRNet on coarse points"},
      {"refine", "Refine coarse points with the trained CPRNet"},
      {"localize", "Train point localizers and predict on the eval split"},
      {"eval", "Score predictions and point sets"},
      {"render", "Draw overlays and relative-position heatmaps"},
      {"pipeline", "Run every stage in order"},
      {"config", "Print the resolved config"}};
  std::vector<CLI::App*> subs;
  for (const auto& c : commands) {
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    add_common(sub, o);
    if (std::string(c.name) == "localize")
      sub->add_option("--supervision", o.supervision, "Which point set to train on")
          ->check(CLI::IsMember({"coarse", "refined", "both"}));
    subs.push_back(sub);
  }
  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig config = load_run_config(o.config, overrides(o));
    const std::string name = app.get_subcommands().front()->get_name();
    if (name == "config") {
      std::cout << dump_run_config(config) << '\n';
      return kOk;
    }
    std::vector<StageSummary> summaries;
    if (name == "synth") summaries.push_back(cmd_synth(config));
    else if (name == "annotate") summaries.push_back(cmd_annotate(config));
    else if (name == "train") summaries.push_back(cmd_train(config));
    else if (name == "refine") summaries.push_back(cmd_refine(config));
    else if (name == "localize") summaries.push_back(cmd_localize(config, supervision(o.supervision)));
    else if (name == "eval") summaries.push_back(cmd_eval(config));
    else if (name == "render") summaries.push_back(cmd_render(config));
    else summaries = run_pipeline(config);
    int failed = 0;
    for (const auto& s : summaries) {
      print_summary(std::cout, s);
      failed += s.failed_records;
    }
    return failed > 0 ? kPartial : kOk;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const MissingArtifact& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kMissingInput;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
}
