#ifndef SERGAN_CLASSIFIER_HPP_
#define SERGAN_CLASSIFIER_HPP_

#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "sergan/dataset.hpp"
#include "sergan/models.hpp"
#include "sergan/nn.hpp"

namespace sergan {

struct ClassifierSpec {
  enum class Arch { Vgg19, Small4 };

  Arch arch = Arch::Vgg19;
  int input_frames = 128;
  int input_bands = 128;
  std::vector<std::string> class_names;       // sorted label set
  std::vector<int> small_channels{8, 16, 32, 64};  // Small4 widths
  int eval_hop = 64;  // hop between evaluation segments

  int n_classes() const { return static_cast<int>(class_names.size()); }
  void validate() const;
  std::string fingerprint_json() const;
  static ClassifierSpec from_json(const std::string& json_text);
};

// Segment-level emotion classifier. Vgg19 is the full-size layout
// (16 conv layers in 5 pooled blocks plus a 4096-4096 head); Small4 is a
// 4-block net for small-scale runs.
class Classifier : public NetBuilder {
 public:
  Classifier(ClassifierSpec spec, std::uint64_t init_seed);
  const ClassifierSpec& spec() const { return spec_; }

  Var logits(Tape& t, Var x);            // [N,1,H,W] -> [N,K]
  Tensor predict_probs(const Tensor& x);  // softmax rows, inference

 private:
  ClassifierSpec spec_;
  struct ConvEntry {
    Conv2dLayer layer;
    bool pool_after = false;
  };
  std::vector<ConvEntry> convs_;
  std::vector<LinearLayer> fc_;  // hidden layers + output head
};

// --- hybrid original + augmented training data --------------------------------

enum class AugmentScope { All, TargetLanguage };

// Copies every original into the sink and adds `multiplicity` augmented
// copies (fresh noise and intensity per copy) of each in-scope record.
// Augmented records inherit their source labels, get ids "<id>__aug<k>" and
// are flagged synthetic. Out-of-scope records are passed through
// unaugmented.
DatasetManifest build_hybrid_dataset(
    const DatasetManifest& train, Augmentor& augmentor, const FeatureProvider& features,
    const std::function<void(const std::string&, const MelSpectrogram&)>& sink,
    int multiplicity, AugmentScope scope, const std::string& target_language,
    const EpsilonDist& eps_dist, std::uint64_t seed);
DatasetManifest build_hybrid_dataset(const DatasetManifest& train, Augmentor& augmentor,
                                     const FeatureProvider& features,
                                     InMemoryFeatureStore& out, int multiplicity,
                                     AugmentScope scope, const std::string& target_language,
                                     const EpsilonDist& eps_dist, std::uint64_t seed);

// --- training -------------------------------------------------------------------

struct ClassifierTrainConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  int batch_size = 16;
  int max_epochs = 60;
  int patience = 5;          // early stop on the validation slice
  int min_epochs = 10;       // epochs before early stopping may trigger
  double val_fraction = 0.1;
  void validate() const;
};

struct ClassifierTrainResult {
  std::vector<double> epoch_train_loss;  // mean cross entropy per epoch
  std::vector<double> epoch_val_loss;
  int best_epoch = 0;
  double train_accuracy = 0.0;  // utterance-level accuracy on the train set
};

// Trains with one random input_frames-long crop per item per epoch,
// mini-batch Adam, and early stopping on a held-out slice of the training
// data. Deterministic under the seed. The best-validation parameters are
// restored before returning.
ClassifierTrainResult train_classifier(Classifier& clf, const DatasetManifest& train,
                                       const FeatureProvider& features, LabelKind kind,
                                       const ClassifierTrainConfig& cfg,
                                       std::uint64_t seed);

// --- evaluation -------------------------------------------------------------------

struct UtterancePrediction {
  std::string label;
  std::vector<std::string> segment_votes;
};

// Majority vote over per-segment class probabilities [S,K]; ties break
// toward the highest mean class probability across segments.
UtterancePrediction aggregate_votes(const Tensor& segment_probs,
                                    const std::vector<std::string>& class_names);

// Majority vote over fixed-size segments (input_frames long, eval_hop
// apart); ties break toward the highest mean class probability.
UtterancePrediction predict_utterance(const MelSpectrogram& mel, Classifier& clf);

struct EvaluationReport {
  std::vector<std::string> classes;           // row/column order
  std::vector<std::vector<long>> confusion;   // [reference][predicted]
  std::map<std::string, double> per_class_recall;
  double uar = 0.0;
  std::map<std::string, std::string> metadata;

  std::string to_json() const;
  static EvaluationReport from_json(const std::string& text);
  std::string to_csv() const;
};

// Confusion counts, per-class recall and their unweighted mean, over
// (reference, predicted) label pairs. When expected_classes is given, every
// one of them must appear as a reference at least once.
EvaluationReport compute_uar(
    const std::vector<std::pair<std::string, std::string>>& ref_pred_pairs,
    const std::vector<std::string>& expected_classes = {});

}  // namespace sergan

#endif  // SERGAN_CLASSIFIER_HPP_
