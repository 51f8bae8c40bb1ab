#include "sergan/classifier.hpp"

#include "sergan/training.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

using nlohmann::json;

namespace sergan {

namespace {

const char* arch_name(ClassifierSpec::Arch a) {
  return a == ClassifierSpec::Arch::Vgg19 ? "vgg19" : "small4";
}

int pool_stages(ClassifierSpec::Arch a) {
  return a == ClassifierSpec::Arch::Vgg19 ? 5 : 4;
}

}  // namespace

void ClassifierSpec::validate() const {
  if (class_names.size() < 2)
    throw std::invalid_argument("ClassifierSpec: need at least 2 classes");
  if (!std::is_sorted(class_names.begin(), class_names.end()))
    throw std::invalid_argument("ClassifierSpec: class_names must be sorted");
  const int div = 1 << pool_stages(arch);
  if (input_frames <= 0 || input_frames % div != 0 || input_bands <= 0 ||
      input_bands % div != 0)
    throw std::invalid_argument(std::string("ClassifierSpec: ") + arch_name(arch) +
                                " needs input dimensions divisible by " + std::to_string(div));
  if (arch == Arch::Small4 && small_channels.size() != 4)
    throw std::invalid_argument("ClassifierSpec: small4 takes exactly 4 channel widths");
  if (eval_hop < 1) throw std::invalid_argument("ClassifierSpec: eval_hop must be >= 1");
}

std::string ClassifierSpec::fingerprint_json() const {
  json j{{"arch", arch_name(arch)},
         {"input_frames", input_frames},
         {"input_bands", input_bands},
         {"class_names", class_names},
         {"small_channels", small_channels},
         {"eval_hop", eval_hop}};
  return j.dump();
}

ClassifierSpec ClassifierSpec::from_json(const std::string& json_text) {
  json j = json::parse(json_text);
  ClassifierSpec s;
  std::string arch = j.at("arch").get<std::string>();
  if (arch == "vgg19")
    s.arch = Arch::Vgg19;
  else if (arch == "small4")
    s.arch = Arch::Small4;
  else
    throw std::invalid_argument("ClassifierSpec: unknown arch '" + arch + "'");
  s.input_frames = j.at("input_frames").get<int>();
  s.input_bands = j.at("input_bands").get<int>();
  s.class_names = j.at("class_names").get<std::vector<std::string>>();
  s.small_channels = j.at("small_channels").get<std::vector<int>>();
  s.eval_hop = j.at("eval_hop").get<int>();
  s.validate();
  return s;
}

Classifier::Classifier(ClassifierSpec spec, std::uint64_t init_seed)
    : NetBuilder("classifier"), spec_(std::move(spec)) {
  spec_.validate();
  RngStream rng(init_seed);

  int ci = 1;
  int layer_idx = 0;
  auto add_block = [&](int width, int convs_in_block) {
    for (int k = 0; k < convs_in_block; ++k) {
      ConvEntry e;
      e.layer = conv("conv" + std::to_string(++layer_idx), ci, width, 3, 1, 1, rng);
      e.pool_after = (k == convs_in_block - 1);
      convs_.push_back(e);
      ci = width;
    }
  };

  int flat = 0;
  if (spec_.arch == ClassifierSpec::Arch::Vgg19) {
    add_block(64, 2);
    add_block(128, 2);
    add_block(256, 4);
    add_block(512, 4);
    add_block(512, 4);
    flat = 512 * (spec_.input_frames / 32) * (spec_.input_bands / 32);
    fc_.push_back(linear("fc1", flat, 4096, rng));
    fc_.push_back(linear("fc2", 4096, 4096, rng));
    fc_.push_back(linear("head", 4096, spec_.n_classes(), rng));
  } else {
    for (int w : spec_.small_channels) add_block(w, 1);
    flat = spec_.small_channels[3] * (spec_.input_frames / 16) * (spec_.input_bands / 16);
    fc_.push_back(linear("head", flat, spec_.n_classes(), rng));
  }
}

Var Classifier::logits(Tape& t, Var x) {
  const Tensor& xv = t.value(x);
  if (xv.rank() != 4 || xv.dim(1) != 1 || xv.dim(2) != spec_.input_frames ||
      xv.dim(3) != spec_.input_bands)
    throw std::invalid_argument("Classifier: expected input [N,1," +
                                std::to_string(spec_.input_frames) + "," +
                                std::to_string(spec_.input_bands) + "], got " +
                                Tensor::shape_str(xv.shape()));
  Var h = x;
  for (const auto& e : convs_) {
    h = t.relu(apply(t, e.layer, h));
    if (e.pool_after) h = t.maxpool2(h);
  }
  const Tensor& hv = t.value(h);
  Var flat = t.reshape(h, {hv.dim(0), hv.dim(1) * hv.dim(2) * hv.dim(3)});
  for (std::size_t i = 0; i + 1 < fc_.size(); ++i)
    flat = t.relu(apply(t, fc_[i], flat));
  return apply(t, fc_.back(), flat);
}

Tensor Classifier::predict_probs(const Tensor& x) {
  FreezeGuard guard(*this, true);
  Tape t;
  Var p = t.softmax_rows(logits(t, t.constant(x)));
  return t.value(p);
}

// --- hybrid dataset ---------------------------------------------------------------

DatasetManifest build_hybrid_dataset(
    const DatasetManifest& train, Augmentor& augmentor, const FeatureProvider& features,
    const std::function<void(const std::string&, const MelSpectrogram&)>& sink,
    int multiplicity, AugmentScope scope, const std::string& target_language,
    const EpsilonDist& eps_dist, std::uint64_t seed) {
  if (multiplicity < 0)
    throw std::invalid_argument("build_hybrid_dataset: multiplicity must be >= 0");
  if (scope == AugmentScope::TargetLanguage && target_language.empty())
    throw std::invalid_argument("build_hybrid_dataset: target language scope needs a language");

  RngStream noise_rng(derive_seed(seed, 11));
  RngStream eps_rng(derive_seed(seed, 12));
  RngStream crop_rng(derive_seed(seed, 13));
  const int seg = augmentor.spec().in_frames;

  DatasetManifest out;
  out.source_name = train.source_name + "/hybrid";
  for (const auto& r : train.records) {
    MelSpectrogram mel = features.load(r.id);
    sink(r.id, mel);
    out.records.push_back(r);

    bool in_scope = scope == AugmentScope::All || r.language == target_language;
    if (!in_scope) continue;
    for (int k = 0; k < multiplicity; ++k) {
      // one random segment of the source utterance per augmented copy
      MelSpectrogram segm;
      if (mel.frames() <= seg) {
        segm = segment_mel(mel, seg, seg).front();
      } else {
        int start = static_cast<int>(
            crop_rng.uniform_int(static_cast<std::uint64_t>(mel.frames() - seg) + 1));
        segm.config = mel.config;
        segm.normalized = mel.normalized;
        segm.values = Tensor({seg, mel.bands()});
        std::copy_n(mel.values.data() + static_cast<std::size_t>(start) * mel.bands(),
                    segm.values.numel(), segm.values.data());
      }
      auto res = augmentor.augment(segm, noise_rng, eps_rng, eps_dist);

      UtteranceRecord aug = r;
      aug.id = r.id + "__aug" + std::to_string(k);
      aug.audio_path = "augmented://" + aug.id;
      aug.synthetic = true;
      aug.duration_s = r.duration_s;
      sink(aug.id, res.x_hat);
      out.records.push_back(std::move(aug));
    }
  }
  return out;
}

DatasetManifest build_hybrid_dataset(const DatasetManifest& train, Augmentor& augmentor,
                                     const FeatureProvider& features,
                                     InMemoryFeatureStore& out, int multiplicity,
                                     AugmentScope scope, const std::string& target_language,
                                     const EpsilonDist& eps_dist, std::uint64_t seed) {
  return build_hybrid_dataset(
      train, augmentor, features,
      [&](const std::string& id, const MelSpectrogram& mel) { out.save(id, mel); },
      multiplicity, scope, target_language, eps_dist, seed);
}

// --- training ----------------------------------------------------------------------

void ClassifierTrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("ClassifierTrainConfig: bad learning rate");
  if (batch_size < 1 || max_epochs < 1 || patience < 1)
    throw std::invalid_argument("ClassifierTrainConfig: bad batch/epoch/patience setting");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0))
    throw std::invalid_argument("ClassifierTrainConfig: val_fraction must lie in [0,1)");
}

namespace {

MelSpectrogram random_crop(const MelSpectrogram& mel, int frames, RngStream& rng) {
  if (mel.frames() <= frames) return segment_mel(mel, frames, frames).front();
  int start = static_cast<int>(
      rng.uniform_int(static_cast<std::uint64_t>(mel.frames() - frames) + 1));
  MelSpectrogram out;
  out.config = mel.config;
  out.normalized = mel.normalized;
  out.values = Tensor({frames, mel.bands()});
  std::copy_n(mel.values.data() + static_cast<std::size_t>(start) * mel.bands(),
              out.values.numel(), out.values.data());
  return out;
}

double run_batches(Classifier& clf, AdamOptimizer* opt,
                   const std::vector<std::pair<MelSpectrogram, int>>& items,
                   int batch_size) {
  const auto& spec = clf.spec();
  double total = 0.0;
  long count = 0;
  for (std::size_t at = 0; at < items.size(); at += static_cast<std::size_t>(batch_size)) {
    std::size_t n = std::min<std::size_t>(batch_size, items.size() - at);
    Tensor x({static_cast<int>(n), 1, spec.input_frames, spec.input_bands});
    std::vector<int> targets(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& [mel, label] = items[at + i];
      std::copy_n(mel.values.data(), mel.values.numel(),
                  x.data() + i * mel.values.numel());
      targets[i] = label;
    }
    if (opt) {
      Tape t;
      Var loss = t.cross_entropy_rows(clf.logits(t, t.constant(x)), targets);
      total += t.scalar(loss) * static_cast<double>(n);
      clf.zero_grads();
      t.backward(loss);
      opt->step();
    } else {
      FreezeGuard guard(clf, true);
      Tape t;
      Var loss = t.cross_entropy_rows(clf.logits(t, t.constant(x)), targets);
      total += t.scalar(loss) * static_cast<double>(n);
    }
    count += static_cast<long>(n);
  }
  return total / static_cast<double>(count);
}

}  // namespace

ClassifierTrainResult train_classifier(Classifier& clf, const DatasetManifest& train,
                                       const FeatureProvider& features, LabelKind kind,
                                       const ClassifierTrainConfig& cfg,
                                       std::uint64_t seed) {
  cfg.validate();
  const auto& spec = clf.spec();
  if (train.class_counts(kind).size() < 2)
    throw std::invalid_argument("train_classifier: training data has a single class");

  std::map<std::string, int> class_index;
  for (int i = 0; i < spec.n_classes(); ++i)
    class_index[spec.class_names[static_cast<std::size_t>(i)]] = i;

  std::vector<std::pair<std::string, int>> labeled;  // (id, class index)
  for (const auto& r : train.records) {
    auto it = class_index.find(label_of(r, kind));
    if (it == class_index.end())
      throw std::invalid_argument("train_classifier: label '" + label_of(r, kind) +
                                  "' not covered by the classifier's class set");
    labeled.emplace_back(r.id, it->second);
  }

  // held-out validation slice
  RngStream rng(derive_seed(seed, 21));
  std::vector<std::size_t> order(labeled.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t i = 0; i + 1 < order.size(); ++i) {
    std::size_t j = i + static_cast<std::size_t>(rng.uniform_int(order.size() - i));
    std::swap(order[i], order[j]);
  }
  std::size_t n_val = static_cast<std::size_t>(
      std::floor(cfg.val_fraction * static_cast<double>(labeled.size())));
  if (cfg.val_fraction > 0.0 && n_val == 0 && labeled.size() > 1) n_val = 1;
  std::vector<std::size_t> val_idx(order.begin(), order.begin() + static_cast<long>(n_val));
  std::vector<std::size_t> train_idx(order.begin() + static_cast<long>(n_val), order.end());
  if (train_idx.empty()) throw std::invalid_argument("train_classifier: no training items left");

  OptimizerConfig opt_cfg;
  opt_cfg.learning_rate = cfg.learning_rate;
  opt_cfg.beta1 = cfg.beta1;
  opt_cfg.beta2 = cfg.beta2;
  opt_cfg.batch_size = cfg.batch_size;
  AdamOptimizer opt(clf, opt_cfg);

  RngStream crop_rng(derive_seed(seed, 22));
  RngStream shuffle_rng(derive_seed(seed, 23));

  ClassifierTrainResult result;
  double best_val = std::numeric_limits<double>::infinity();
  int since_best = 0;
  std::vector<DVec> best_params;
  auto snapshot_params = [&]() {
    best_params.clear();
    for (Parameter* p : clf.parameters()) best_params.push_back(p->value.vec());
  };
  snapshot_params();

  // fixed center-start crops for the validation loss
  std::vector<std::pair<MelSpectrogram, int>> val_items;
  for (std::size_t i : val_idx) {
    auto mel = features.load(labeled[i].first);
    val_items.emplace_back(segment_mel(mel, spec.input_frames, spec.input_frames).front(),
                           labeled[i].second);
  }

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    for (std::size_t i = 0; i + 1 < train_idx.size(); ++i) {
      std::size_t j = i + static_cast<std::size_t>(shuffle_rng.uniform_int(train_idx.size() - i));
      std::swap(train_idx[i], train_idx[j]);
    }
    std::vector<std::pair<MelSpectrogram, int>> items;
    items.reserve(train_idx.size());
    for (std::size_t i : train_idx) {
      auto mel = features.load(labeled[i].first);
      items.emplace_back(random_crop(mel, spec.input_frames, crop_rng), labeled[i].second);
    }
    result.epoch_train_loss.push_back(run_batches(clf, &opt, items, cfg.batch_size));

    double val_loss = val_items.empty()
                          ? result.epoch_train_loss.back()
                          : run_batches(clf, nullptr, val_items, cfg.batch_size);
    result.epoch_val_loss.push_back(val_loss);

    if (val_loss < best_val - 1e-12) {
      best_val = val_loss;
      result.best_epoch = epoch;
      since_best = 0;
      snapshot_params();
    } else if (++since_best >= cfg.patience && epoch + 1 >= cfg.min_epochs) {
      break;
    }
  }

  // restore the best validation parameters
  auto params = clf.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value.vec() = best_params[i];

  long hits = 0;
  for (const auto& [id, label] : labeled) {
    auto pred = predict_utterance(features.load(id), clf);
    if (pred.label == spec.class_names[static_cast<std::size_t>(label)]) ++hits;
  }
  result.train_accuracy = static_cast<double>(hits) / static_cast<double>(labeled.size());
  return result;
}

// --- evaluation ----------------------------------------------------------------------

UtterancePrediction aggregate_votes(const Tensor& segment_probs,
                                    const std::vector<std::string>& class_names) {
  if (segment_probs.rank() != 2 ||
      segment_probs.dim(1) != static_cast<int>(class_names.size()))
    throw std::invalid_argument("aggregate_votes: expected [S,K] probabilities");
  const int S = segment_probs.dim(0), K = segment_probs.dim(1);
  if (S == 0) throw std::invalid_argument("aggregate_votes: no segments");

  std::vector<long> votes(static_cast<std::size_t>(K), 0);
  std::vector<double> mean(static_cast<std::size_t>(K), 0.0);
  UtterancePrediction out;
  for (int s = 0; s < S; ++s) {
    const double* row = segment_probs.data() + static_cast<std::size_t>(s) * K;
    int arg = 0;
    for (int k = 1; k < K; ++k)
      if (row[k] > row[arg]) arg = k;
    ++votes[static_cast<std::size_t>(arg)];
    out.segment_votes.push_back(class_names[static_cast<std::size_t>(arg)]);
    for (int k = 0; k < K; ++k) mean[static_cast<std::size_t>(k)] += row[k];
  }
  for (auto& v : mean) v /= static_cast<double>(S);

  long top_votes = *std::max_element(votes.begin(), votes.end());
  int winner = -1;
  for (int k = 0; k < K; ++k) {
    if (votes[static_cast<std::size_t>(k)] != top_votes) continue;
    if (winner < 0 || mean[static_cast<std::size_t>(k)] > mean[static_cast<std::size_t>(winner)])
      winner = k;  // ties break by mean probability
  }
  out.label = class_names[static_cast<std::size_t>(winner)];
  return out;
}

UtterancePrediction predict_utterance(const MelSpectrogram& mel, Classifier& clf) {
  const auto& spec = clf.spec();
  if (mel.values.numel() == 0)
    throw std::invalid_argument("predict_utterance: empty spectrogram");
  auto segments = segment_mel(mel, spec.input_frames, spec.eval_hop);

  Tensor x({static_cast<int>(segments.size()), 1, spec.input_frames, spec.input_bands});
  for (std::size_t i = 0; i < segments.size(); ++i)
    std::copy_n(segments[i].values.data(), segments[i].values.numel(),
                x.data() + i * segments[i].values.numel());
  return aggregate_votes(clf.predict_probs(x), spec.class_names);
}

EvaluationReport compute_uar(
    const std::vector<std::pair<std::string, std::string>>& ref_pred_pairs,
    const std::vector<std::string>& expected_classes) {
  if (ref_pred_pairs.empty()) throw std::invalid_argument("compute_uar: no pairs");

  std::set<std::string> class_set(expected_classes.begin(), expected_classes.end());
  std::set<std::string> ref_set;
  for (const auto& [ref, pred] : ref_pred_pairs) {
    ref_set.insert(ref);
    class_set.insert(ref);
    class_set.insert(pred);
  }
  for (const auto& c : expected_classes)
    if (!ref_set.count(c))
      throw std::invalid_argument("compute_uar: reference class '" + c +
                                  "' has zero instances");

  EvaluationReport rep;
  rep.classes.assign(class_set.begin(), class_set.end());
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < rep.classes.size(); ++i) index[rep.classes[i]] = i;
  rep.confusion.assign(rep.classes.size(), std::vector<long>(rep.classes.size(), 0));
  for (const auto& [ref, pred] : ref_pred_pairs) ++rep.confusion[index[ref]][index[pred]];

  double total = 0.0;
  long n_ref_classes = 0;
  for (const auto& cls : rep.classes) {
    std::size_t i = index[cls];
    long row = 0;
    for (long v : rep.confusion[i]) row += v;
    if (row == 0) continue;  // prediction-only class, no recall defined
    double recall = static_cast<double>(rep.confusion[i][i]) / static_cast<double>(row);
    rep.per_class_recall[cls] = recall;
    total += recall;
    ++n_ref_classes;
  }
  rep.uar = total / static_cast<double>(n_ref_classes);
  return rep;
}

std::string EvaluationReport::to_json() const {
  json j{{"classes", classes},
         {"confusion", confusion},
         {"per_class_recall", per_class_recall},
         {"uar", uar},
         {"metadata", metadata}};
  return j.dump(2);
}

EvaluationReport EvaluationReport::from_json(const std::string& text) {
  json j = json::parse(text);
  EvaluationReport rep;
  rep.classes = j.at("classes").get<std::vector<std::string>>();
  rep.confusion = j.at("confusion").get<std::vector<std::vector<long>>>();
  rep.per_class_recall = j.at("per_class_recall").get<std::map<std::string, double>>();
  rep.uar = j.at("uar").get<double>();
  rep.metadata = j.at("metadata").get<std::map<std::string, std::string>>();
  return rep;
}

std::string EvaluationReport::to_csv() const {
  std::ostringstream out;
  out << "reference";
  for (const auto& c : classes) out << "," << c;
  out << ",recall\n";
  for (std::size_t i = 0; i < classes.size(); ++i) {
    out << classes[i];
    for (std::size_t jx = 0; jx < classes.size(); ++jx) out << "," << confusion[i][jx];
    auto it = per_class_recall.find(classes[i]);
    out << "," << (it == per_class_recall.end() ? std::string("") : std::to_string(it->second));
    out << "\n";
  }
  out << "uar,,," << uar << "\n";
  return out.str();
}

}  // namespace sergan
