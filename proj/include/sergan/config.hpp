#ifndef SERGAN_CONFIG_HPP_
#define SERGAN_CONFIG_HPP_

#include <map>
#include <string>
#include <vector>

#include "sergan/audio_features.hpp"
#include "sergan/classifier.hpp"
#include "sergan/dataset.hpp"
#include "sergan/losses.hpp"
#include "sergan/models.hpp"
#include "sergan/training.hpp"
#include "sergan/tsne.hpp"

namespace sergan {

// Raised for malformed configuration; the CLI maps it to exit code 1.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Protocol { Toy, Imbalanced, Ablation, CrossLingual };

std::string to_string(Protocol p);

// Typed view of the INI experiment configuration. Sections mirror the
// pipeline modules; unknown sections or keys are hard errors.
struct ExperimentConfig {
  // [experiment]
  Protocol protocol = Protocol::Toy;
  std::string output_dir = "out";
  std::uint64_t seed = 1;
  LabelKind label_kind = LabelKind::Emotion;
  std::string model_label;  // row name in reports ("AUG", "L_Total", "LT", ...)

  // [features]
  FeatureConfig features;
  bool store_float32 = true;

  // [valence_mapping] — emotion name -> Negative|Positive; entries extend or
  // override the default 4-class table
  ValenceMapping valence_mapping = default_valence_mapping();

  // [dataset]
  std::string manifest_path;
  std::string target_manifest_path;
  double keep_fraction = 0.2;
  std::string protected_class = "Neutral";
  double eval_fraction = 0.25;
  double train_fraction = 0.10;
  int fold_index = 0;
  int multiplicity = 4;
  int target_multiplicity = 20;
  int toy_classes = 4;
  int toy_per_class = 25;
  int toy_frames = 64;
  int toy_bands = 128;

  // [models]
  int segment_frames = 512;
  int segment_bands = 128;
  double width_mult = 1.0;
  int noise_planes = 1;

  // [losses]
  LossWeights weights;
  EpsilonDist epsilon;

  // [training]
  OptimizerConfig optimizer;
  bool use_var_phase = true;
  bool use_bal_loss = true;

  // [classifier]
  ClassifierSpec::Arch classifier_arch = ClassifierSpec::Arch::Small4;
  int classifier_frames = 128;
  int classifier_eval_hop = 64;
  std::vector<int> classifier_channels{8, 16, 32, 64};
  ClassifierTrainConfig classifier_train;

  // [tsne]
  TsneConfig tsne;
  int tsne_per_class = 30;
  int tsne_augment_times = 3;

  // resolved at load time
  std::string config_dir;    // directory containing the config file
  std::string fingerprint;   // content hash of the canonical key/value list

  GanSpecs gan_specs() const;
  void validate() const;  // protocol-specific requirements, path existence
};

ExperimentConfig load_config(const std::string& path);
// Parses from a string; base_dir resolves relative paths (tests use this).
ExperimentConfig parse_config(const std::string& text, const std::string& base_dir);

}  // namespace sergan

#endif  // SERGAN_CONFIG_HPP_
