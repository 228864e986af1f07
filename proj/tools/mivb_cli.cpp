// mivb: train target models, run the inversion attacks, score them and
// write the report tables for an experiment spec.
//
// Exit codes: 0 success, 1 a stage failed, 2 bad configuration.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "mivb/harness.hpp"

namespace {

struct Common {
  std::string config;
  std::string preset;
  std::optional<std::uint64_t> seed;
  std::string output_dir;
  bool resume = false;
  bool quiet = false;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "Experiment spec (JSON)");
  sub->add_option("--preset", c.preset, "Experiment preset used when no --config is given");
  sub->add_option("--seed", c.seed, "Override the spec's global seed");
  sub->add_option("--output-dir", c.output_dir, "Override the spec's output directory");
  sub->add_flag("--resume", c.resume, "Reuse stages whose config hash and artifacts match the manifest");
  sub->add_flag("-q,--quiet", c.quiet, "Only print the final summary");
}

mivb::ExperimentSpec load_spec(const Common& c) {
  mivb::ExperimentSpec spec;
  if (!c.config.empty()) {
    spec = mivb::load_experiment(c.config);
  } else if (!c.preset.empty()) {
    spec = mivb::parse_experiment({{"preset", c.preset}});
  } else {
    throw mivb::ConfigError("give --config <path> or --preset <name>");
  }
  if (c.seed) spec.seed = *c.seed;
  if (!c.output_dir.empty()) spec.output_dir = c.output_dir;
  return spec;
}

std::ostream& null_stream() {
  static std::ostream s(nullptr);
  return s;
}

int finish(const mivb::RunSummary& s) {
  std::cout << "manifest: " << s.manifest_path.string() << "\n"
            << "status: " << s.manifest.value("status", std::string("?")) << " (executed " << s.executed
            << ", skipped " << s.skipped << ", failed " << s.failed << ", blocked " << s.blocked << ")\n";
  return s.failed || s.blocked ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Model-inversion benchmark for traditionally and adversarially trained classifiers"};
  app.require_subcommand(1);

  Common common;
  struct Cmd {
    const char* name;
    const char* help;
    mivb::StageKind until;
  };
  const Cmd cmds[] = {
      {"train", "Train the declared models", mivb::StageKind::train},
      {"attack", "Train (if needed) and run the inversion attacks", mivb::StageKind::attack},
      {"evaluate", "Everything up to the privacy and robustness metrics", mivb::StageKind::privacy},
      {"run", "The full pipeline including the report", mivb::StageKind::report},
  };
  std::map<CLI::App*, mivb::StageKind> stage_cmds;
  for (const auto& c : cmds) {
    auto* sub = app.add_subcommand(c.name, c.help);
    add_common(sub, common);
    stage_cmds[sub] = c.until;
  }

  std::string report_dir;
  auto* rep = app.add_subcommand("report", "Rebuild the report tables of an existing run");
  rep->add_option("--output-dir", report_dir, "Run directory holding manifest.json")->required();
  rep->add_option("--config", common.config, "Ignored; the spec is read from the manifest");

  Common show;
  auto* cfg = app.add_subcommand("config", "Print the resolved experiment spec");
  cfg->add_option("--config", show.config, "Experiment spec (JSON)");
  cfg->add_option("--preset", show.preset, "Experiment preset");
  cfg->add_option("--seed", show.seed, "Override the global seed");
  cfg->add_option("--output-dir", show.output_dir, "Override the output directory");

  std::string synth_dir;
  std::size_t synth_train = 2000, synth_val = 1000;
  std::uint64_t synth_seed = 0;
  auto* syn = app.add_subcommand("make-synthetic", "Write a synthetic dataset in the CIFAR-10 binary layout");
  syn->add_option("--output-dir", synth_dir, "Destination directory")->required();
  syn->add_option("--train", synth_train, "Training images");
  syn->add_option("--val", synth_val, "Validation images");
  syn->add_option("--seed", synth_seed, "Generator seed");

  app.add_subcommand("presets", "List model and experiment presets");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    for (auto& [sub, until] : stage_cmds) {
      if (!sub->parsed()) continue;
      auto spec = load_spec(common);
      mivb::RunOptions opt;
      opt.until = until;
      opt.resume = common.resume;
      opt.log = common.quiet ? &null_stream() : &std::cerr;
      return finish(mivb::run_experiment(spec, opt));
    }
    if (rep->parsed()) return finish(mivb::report(report_dir));
    if (cfg->parsed()) {
      std::cout << nlohmann::json(load_spec(show)).dump(2) << "\n";
      return 0;
    }
    if (syn->parsed()) {
      mivb::write_synthetic_cifar(synth_dir, synth_train, synth_val, synth_seed);
      std::cout << "wrote " << synth_train << " train / " << synth_val << " validation images to " << synth_dir << "\n";
      return 0;
    }
    std::cout << "model presets:\n";
    for (const auto& n : mivb::model_preset_names()) std::cout << "  " << n << "\n";
    std::cout << "experiment presets:\n";
    for (const auto& n : mivb::experiment_preset_names()) std::cout << "  " << n << "\n";
    return 0;
  } catch (const mivb::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
