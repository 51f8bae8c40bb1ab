// Experiment pipeline CLI. Subcommands run one stage each against a shared
// INI configuration:
//
//   sergan features  --config exp.ini          extract or synthesize features
//   sergan train-aug --config exp.ini          train the augmentation GAN
//   sergan augment   --config exp.ini          materialize augmented copies
//   sergan train-ser --config exp.ini          train the emotion classifier
//   sergan eval      --config exp.ini          evaluate and write a report
//   sergan tsne      --config exp.ini          embedding diagnostics
//   sergan report    --config exp.ini          aggregate report tables
//
// --seed overrides [experiment] seed; --dry-run prints the resolved stage
// plan and writes nothing. SERGAN_OUTPUT_ROOT relocates relative output
// directories. Exit codes: 0 ok, 1 configuration error, 2 runtime error.

#include <cstdlib>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "sergan/pipeline.hpp"

namespace {

void print_plan(const sergan::Pipeline& pipeline) {
  std::cout << "protocol: " << sergan::to_string(pipeline.config().protocol)
            << "\noutput:   " << pipeline.output_dir()
            << "\nconfig:   " << pipeline.config().fingerprint
            << "\nmodel:    " << pipeline.model_label() << "\n\n";
  for (const auto& stage : pipeline.plan()) {
    std::cout << stage.stage << "\n";
    for (const auto& in : stage.inputs) std::cout << "  <- " << in << "\n";
    for (const auto& outp : stage.outputs) std::cout << "  -> " << outp << "\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GAN-based mel-spectrogram augmentation for speech emotion recognition"};
  app.require_subcommand(1);

  std::string config_path;
  long seed_override = -1;
  bool dry_run = false;

  const char* names[] = {"features", "train-aug", "augment", "train-ser",
                         "eval",     "tsne",      "report"};
  for (const char* name : names) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "experiment configuration (INI)")->required();
    sub->add_option("--seed", seed_override, "override [experiment] seed");
    sub->add_flag("--dry-run", dry_run, "print the resolved plan, write nothing");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    auto cfg = sergan::load_config(config_path);
    if (seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(seed_override);
    cfg.validate();

    const char* root = std::getenv("SERGAN_OUTPUT_ROOT");
    sergan::Pipeline pipeline(cfg, root ? root : "");

    if (dry_run) {
      print_plan(pipeline);
      return 0;
    }

    const std::string stage = app.get_subcommands().front()->get_name();
    if (stage == "features") pipeline.run_features();
    else if (stage == "train-aug") pipeline.run_train_aug();
    else if (stage == "augment") pipeline.run_augment();
    else if (stage == "train-ser") pipeline.run_train_ser();
    else if (stage == "eval") pipeline.run_eval();
    else if (stage == "tsne") pipeline.run_tsne();
    else if (stage == "report") pipeline.run_report();
    std::cout << stage << ": done (" << pipeline.output_dir() << ")\n";
    return 0;
  } catch (const sergan::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
