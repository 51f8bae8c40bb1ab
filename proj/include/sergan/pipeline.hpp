#ifndef SERGAN_PIPELINE_HPP_
#define SERGAN_PIPELINE_HPP_

#include <string>
#include <vector>

#include "sergan/config.hpp"

namespace sergan {

struct StagePlan {
  std::string stage;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
};

// Experiment orchestration built on the library modules. Every stage writes
// its artifacts under the output directory and appends content hashes to
// artifacts.jsonl. Stage dependencies are checked by artifact presence: a
// missing prerequisite names the stage that produces it.
class Pipeline {
 public:
  // output_root overrides where relative output_dirs land (the CLI wires the
  // SERGAN_OUTPUT_ROOT environment variable through here).
  Pipeline(ExperimentConfig cfg, std::string output_root = "");

  const ExperimentConfig& config() const { return cfg_; }
  std::string output_dir() const { return out_dir_; }
  std::string out(const std::string& rel) const;

  std::vector<StagePlan> plan() const;

  void run_features();
  void run_train_aug();
  void run_augment();
  void run_train_ser();
  void run_eval();
  void run_tsne();
  void run_report();

  // the row label this run reports under, from config or protocol defaults
  std::string model_label() const;

 private:
  void record_artifact(const std::string& stage, const std::string& path);
  void require_artifact(const std::string& path, const std::string& producing_stage) const;
  void write_text(const std::string& stage, const std::string& rel,
                  const std::string& content);

  ExperimentConfig cfg_;
  std::string out_dir_;
};

}  // namespace sergan

#endif  // SERGAN_PIPELINE_HPP_
