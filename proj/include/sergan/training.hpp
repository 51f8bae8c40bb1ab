#ifndef SERGAN_TRAINING_HPP_
#define SERGAN_TRAINING_HPP_

#include <deque>
#include <iosfwd>
#include <string>
#include <vector>

#include "sergan/dataset.hpp"
#include "sergan/losses.hpp"
#include "sergan/models.hpp"

namespace sergan {

struct OptimizerConfig {
  double learning_rate = 1e-6;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  long total_iterations = 30000;
  int batch_size = 16;  // triplets per cycle
  void validate() const;
};

// Adam with bias correction and per-module state. A frozen module receives
// no parameter or moment updates at all.
class AdamOptimizer {
 public:
  AdamOptimizer(Module& module, OptimizerConfig cfg);
  void step();
  long step_count() const { return t_; }
  Module& module() { return module_; }

  void serialize(std::ostream& out) const;
  void deserialize(std::istream& in);

 private:
  Module& module_;
  OptimizerConfig cfg_;
  long t_ = 0;
  std::vector<Tensor> m_, v_;
};

struct PhaseLosses {
  double rep = 0.0;  // phase 1 triplet loss on originals
  double d = 0.0;    // phase 2 discriminator loss
  double var = 0.0;  // phase 3 augmented-view similarity
  double g = 0.0;    // phase 4 generator loss
  double emo = 0.0;  // phase 4 emotion-preservation triplet
  double bal = 0.0;  // phase 4 balance triplet
};

struct LossRecord {
  long iteration = 0;
  PhaseLosses phases;
  double model = 0.0;  // weighted combination, see combine_losses
  double total = 0.0;
};

struct TrainerOptions {
  LossWeights weights;
  EpsilonDist epsilon;
  bool use_var_phase = true;  // phase 3 (ablation switch)
  bool use_bal_loss = true;   // balance term in phase 4 (ablation switch)
  LabelKind label_kind = LabelKind::Emotion;
  std::size_t history_capacity = 4096;
  // where to drop a diagnostic checkpoint when a loss turns non-finite;
  // empty disables the snapshot (the error is still raised)
  std::string snapshot_dir;
};

// Thrown when a phase produces a non-finite loss.
class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Four-phase alternating optimization:
//   1. representation learner on original triplets
//   2. discriminator on originals vs augmented (augmentor frozen)
//   3. augmentor by the variance objective (representation frozen)
//   4. augmentor by generator + emotion + balance terms (representation and
//      discriminator frozen)
// Each phase updates exactly its designated module; externally frozen
// modules are left untouched even in their own phase.
class Trainer {
 public:
  Trainer(ModelBundle& bundle, OptimizerConfig opt_cfg, TrainerOptions options,
          std::uint64_t master_seed);

  PhaseLosses run_cycle(const TripletBatch& batch);
  // Runs one phase (1-4) in isolation; returns its unweighted loss value.
  double run_phase(int phase, const TripletBatch& batch);

  long iteration() const { return iteration_; }
  const std::deque<LossRecord>& history() const { return history_; }
  RngStream& data_rng() { return data_rng_; }
  const TrainerOptions& options() const { return options_; }
  const OptimizerConfig& optimizer_config() const { return opt_cfg_; }
  ModelBundle& bundle() { return bundle_; }

  void save_checkpoint(const std::string& path, const std::string& fingerprint) const;
  void load_checkpoint(const std::string& path);

 private:
  struct BatchTensors {
    Tensor anchors, positives, negatives;
  };
  BatchTensors prepare(const TripletBatch& batch) const;
  double guard_finite(double loss, int phase);

  ModelBundle& bundle_;
  OptimizerConfig opt_cfg_;
  TrainerOptions options_;
  AdamOptimizer opt_aug_, opt_disc_, opt_rep_;
  long iteration_ = 0;
  RngStream data_rng_, noise_rng_, eps_rng_;
  std::deque<LossRecord> history_;
  double last_phase4_[3] = {0.0, 0.0, 0.0};  // g, emo, bal of the latest phase 4
};

// Appends one JSON object per cycle to a training log.
class TrainLogWriter {
 public:
  explicit TrainLogWriter(const std::string& path);
  ~TrainLogWriter();
  void log(const LossRecord& rec, double wall_ms);

 private:
  struct Impl;
  Impl* impl_;
};

// Samples a batch from the trainer's data stream and runs one cycle,
// `cycles` times.
void train_cycles(Trainer& trainer, const DatasetManifest& manifest,
                  const FeatureProvider& features, long cycles,
                  TrainLogWriter* log = nullptr);

// --- checkpoint archive -------------------------------------------------------
// One binary container serves plain model bundles (kind 1), full train
// states (kind 2) and classifier snapshots (kind 3). All multi-byte values
// little endian; doubles bit-exact.

struct CheckpointInfo {
  int format_version = 0;
  int kind = 0;
  std::string specs_json;
  std::string fingerprint;
};

CheckpointInfo read_checkpoint_info(const std::string& path);

void save_modules_checkpoint(const std::string& path, std::vector<Module*> modules,
                             int kind, const std::string& specs_json,
                             const std::string& fingerprint,
                             const std::string& extra = "");
// Loads parameter arrays into already-constructed modules (shape-checked);
// returns the extra payload.
std::string load_modules_checkpoint(const std::string& path,
                                    std::vector<Module*> modules);

}  // namespace sergan

#endif  // SERGAN_TRAINING_HPP_
