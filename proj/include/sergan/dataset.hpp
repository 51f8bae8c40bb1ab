#ifndef SERGAN_DATASET_HPP_
#define SERGAN_DATASET_HPP_

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sergan/audio_features.hpp"
#include "sergan/feature_store.hpp"
#include "sergan/rng.hpp"

namespace sergan {

enum class Valence { Negative, Positive };

std::string to_string(Valence v);
Valence valence_from_string(const std::string& s);

// The four canonical emotion labels; anything else is allowed as long as the
// record carries a valence.
bool is_canonical_emotion(const std::string& emotion);

struct UtteranceRecord {
  std::string id;
  std::string audio_path;
  std::string emotion;  // may be empty when only valence is labeled
  std::optional<Valence> valence;
  std::string speaker;
  std::string session;
  std::string language;
  double duration_s = 0.0;
  bool synthetic = false;
};

enum class LabelKind { Emotion, Valence };

std::string label_of(const UtteranceRecord& r, LabelKind kind);

struct DatasetManifest {
  std::vector<UtteranceRecord> records;  // order is load order and defines RNG use
  std::string source_name;

  std::map<std::string, int> class_counts(LabelKind kind) const;
  std::vector<std::string> class_names(LabelKind kind) const;  // sorted
};

// JSON-lines manifest. One object per line with fields id, audio_path,
// emotion, valence, speaker, session, language, duration_s, synthetic;
// emotion or valence must be present, a non-canonical emotion requires a
// valence. Malformed lines and duplicate ids are hard errors naming the line.
DatasetManifest load_manifest(const std::string& path);
void save_manifest(const DatasetManifest& m, const std::string& path);

// Randomly downsamples every class except the protected one to
// max(1, round(keep_fraction * n)). Record order is preserved.
DatasetManifest simulate_imbalance(const DatasetManifest& m, double keep_fraction,
                                   const std::string& protected_class,
                                   std::uint64_t seed);

// Leave-one-session-out folds, one per distinct session (sorted), as
// (train, test) pairs. Test folds partition the manifest.
std::vector<std::pair<DatasetManifest, DatasetManifest>> make_session_folds(
    const DatasetManifest& m);

using ValenceMapping = std::map<std::string, Valence>;

// Angry/Sad -> Negative, Neutral/Happy -> Positive.
ValenceMapping default_valence_mapping();

// Populates the valence field from the emotion via the mapping; the emotion
// field is retained. Every emotion present must be covered.
DatasetManifest map_to_valence(const DatasetManifest& m, const ValenceMapping& mapping);

// Stratified-by-valence split of a target-language manifest into
// (train_pool, eval). Per-class counts follow largest-remainder allocation
// so proportions hold within one record.
std::pair<DatasetManifest, DatasetManifest> split_target_language(
    const DatasetManifest& m, double eval_fraction, double train_fraction,
    std::uint64_t seed);

struct TripletBatch {
  std::vector<MelSpectrogram> anchors;
  std::vector<MelSpectrogram> positives;
  std::vector<MelSpectrogram> negatives;
  std::vector<std::string> labels;  // anchor class per index

  std::size_t size() const { return anchors.size(); }
};

// Uniform random triplets: anchor uniform over records (redrawn while its
// class has fewer than two records), positive uniform over the anchor class
// excluding the anchor, negative uniform over the other classes. Spectrograms
// are cropped (or loop-padded) to seg_frames frames.
TripletBatch sample_triplet_batch(const DatasetManifest& m, int batch_size,
                                  RngStream& rng, const FeatureProvider& features,
                                  int seg_frames, LabelKind kind = LabelKind::Emotion);
TripletBatch sample_triplet_batch(const DatasetManifest& m, int batch_size,
                                  std::uint64_t seed, const FeatureProvider& features,
                                  int seg_frames, LabelKind kind = LabelKind::Emotion);

// Stacks same-shaped spectrograms into an [N,1,T,B] batch tensor.
Tensor stack_mels(const std::vector<MelSpectrogram>& mels);

struct ToyDatasetParams {
  int n_classes = 4;
  int n_per_class = 25;
  int frames = 64;
  int bands = 128;
  std::uint64_t seed = 1;
  int n_sessions = 5;
  int n_speakers = 10;
  std::string language = "toy";
  // cell value = clamp01(base + noise + boosts); class band group gets
  // signal_amp, one random other group gets signal_amp/2
  double base_level = 0.35;
  double noise_sigma = 0.06;
  double signal_boost = 0.22;
  double signal_sigma = 0.05;
};

// Synthetic normalized spectrograms where class k has elevated energy in mel
// band group k. Class labels use the canonical emotions first (class 0 =
// Angry), then "Class<k>". Sessions and speakers are assigned round-robin,
// valence covers the first half of the classes as Negative. Perfectly
// separable by the band-group energy argmax.
DatasetManifest generate_toy_dataset(
    const ToyDatasetParams& params,
    const std::function<void(const std::string&, const MelSpectrogram&)>& sink);
DatasetManifest generate_toy_dataset(const ToyDatasetParams& params,
                                     InMemoryFeatureStore& store);
DatasetManifest generate_toy_dataset(const ToyDatasetParams& params, FeatureStore& store);

// Class name used by the toy generator for group index k.
std::string toy_class_name(int k);

}  // namespace sergan

#endif  // SERGAN_DATASET_HPP_
