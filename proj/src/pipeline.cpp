#include "sergan/pipeline.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "json.hpp"
#include "sergan/pipeline.hpp"
#include "sergan/report.hpp"
#include "sergan/sha256.hpp"
#include "sergan/wav.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace sergan {

namespace {

constexpr const char* kManifest = "manifest.jsonl";
constexpr const char* kTargetManifest = "target_manifest.jsonl";
constexpr const char* kTrainManifest = "train_manifest.jsonl";
constexpr const char* kTestManifest = "test_manifest.jsonl";
constexpr const char* kHybridManifest = "hybrid_manifest.jsonl";
constexpr const char* kMeta = "meta.json";
constexpr const char* kAugState = "aug_state.ckpt";
constexpr const char* kAugLog = "aug_train_log.jsonl";
constexpr const char* kClassifierCkpt = "classifier.ckpt";
constexpr const char* kClassifierLog = "classifier_log.json";
constexpr const char* kFeaturesDir = "features";
constexpr const char* kHybridDir = "hybrid";

std::string dominant_language(const DatasetManifest& m) {
  std::map<std::string, long> counts;
  for (const auto& r : m.records) ++counts[r.language];
  std::string best;
  long best_n = -1;
  for (const auto& [lang, n] : counts)
    if (n > best_n) {
      best = lang;
      best_n = n;
    }
  return best;
}

}  // namespace

Pipeline::Pipeline(ExperimentConfig cfg, std::string output_root) : cfg_(std::move(cfg)) {
  fs::path dir(cfg_.output_dir);
  if (!output_root.empty() && dir.is_relative()) dir = fs::path(output_root) / dir;
  out_dir_ = dir.string();
}

std::string Pipeline::out(const std::string& rel) const {
  return (fs::path(out_dir_) / rel).string();
}

std::string Pipeline::model_label() const {
  if (!cfg_.model_label.empty()) return cfg_.model_label;
  switch (cfg_.protocol) {
    case Protocol::Ablation:
      if (cfg_.multiplicity == 0) return "NoAUG";
      if (!cfg_.use_var_phase) return "L_Model";
      if (!cfg_.use_bal_loss) return "L_Model+L_VAR";
      return "L_Total";
    case Protocol::CrossLingual: {
      std::string base = cfg_.train_fraction >= 0.5 ? "FT" : "LT";
      return cfg_.target_multiplicity > 0 ? base + "_AUG" : base;
    }
    case Protocol::Toy:
    case Protocol::Imbalanced:
      return cfg_.multiplicity == 0 ? "NoAUG" : "AUG";
  }
  return "model";
}

void Pipeline::record_artifact(const std::string& stage, const std::string& path) {
  fs::create_directories(out_dir_);
  std::ofstream log_out(out("artifacts.jsonl"), std::ios::app);
  json j{{"stage", stage},
         {"path", fs::relative(path, out_dir_).string()},
         {"sha256", sha256_file_hex(path)},
         {"config_fingerprint", cfg_.fingerprint},
         {"timestamp", static_cast<long>(std::chrono::duration_cast<std::chrono::seconds>(
                           std::chrono::system_clock::now().time_since_epoch())
                           .count())}};
  log_out << j.dump() << "\n";
}

void Pipeline::require_artifact(const std::string& path,
                                const std::string& producing_stage) const {
  if (!fs::exists(path))
    throw std::runtime_error("missing artifact " + path + ": run the '" + producing_stage +
                             "' stage first");
}

void Pipeline::write_text(const std::string& stage, const std::string& rel,
                          const std::string& content) {
  fs::path p = out(rel);
  fs::create_directories(p.parent_path());
  std::ofstream o(p);
  if (!o) throw std::runtime_error("cannot write " + p.string());
  o << content;
  o.close();
  record_artifact(stage, p.string());
}

std::vector<StagePlan> Pipeline::plan() const {
  std::vector<StagePlan> stages;
  std::vector<std::string> feat_in;
  if (cfg_.protocol != Protocol::Toy) feat_in.push_back(cfg_.manifest_path);
  if (cfg_.protocol == Protocol::CrossLingual) feat_in.push_back(cfg_.target_manifest_path);
  stages.push_back({"features", feat_in, {out(kFeaturesDir), out(kManifest)}});
  stages.push_back({"train-aug",
                    {out(kManifest), out(kFeaturesDir)},
                    {out(kAugState), out(kAugLog), out(kTrainManifest), out(kTestManifest),
                     out(kMeta)}});
  stages.push_back({"augment",
                    {out(kAugState), out(kTrainManifest)},
                    {out(kHybridDir), out(kHybridManifest)}});
  stages.push_back({"train-ser",
                    {out(kHybridManifest), out(kHybridDir)},
                    {out(kClassifierCkpt), out(kClassifierLog)}});
  stages.push_back({"eval",
                    {out(kClassifierCkpt), out(kTestManifest), out(kFeaturesDir)},
                    {out("reports/eval_" + model_label() + "_fold" +
                         std::to_string(cfg_.fold_index) + ".json")}});
  stages.push_back({"tsne",
                    {out(kAugState), out(kTrainManifest)},
                    {out("tsne/points.csv"), out("tsne/plot.svg"), out("tsne/silhouette.json")}});
  stages.push_back({"report", {out("reports")}, {out("report/table.csv"), out("report/table.md")}});
  return stages;
}

// --- features -----------------------------------------------------------------

void Pipeline::run_features() {
  cfg_.validate();
  fs::create_directories(out(kFeaturesDir));
  FeatureStore store(out(kFeaturesDir));

  if (cfg_.protocol == Protocol::Toy) {
    ToyDatasetParams params;
    params.n_classes = cfg_.toy_classes;
    params.n_per_class = cfg_.toy_per_class;
    params.frames = cfg_.toy_frames;
    params.bands = cfg_.toy_bands;
    params.seed = derive_seed(cfg_.seed, 301);
    auto manifest = generate_toy_dataset(params, store);
    save_manifest(manifest, out(kManifest));
    record_artifact("features", out(kManifest));
    return;
  }

  if (cfg_.features.n_mels != cfg_.segment_bands)
    throw ConfigError("config: features.n_mels must equal models.segment_bands");

  auto extract = [&](const DatasetManifest& m) {
    for (const auto& r : m.records) {
      auto wave = load_audio_mono(r.audio_path, cfg_.features.sample_rate_hz);
      auto mel = normalize_mel(compute_mel_spectrogram(wave, cfg_.features));
      store.save(r.id, mel, cfg_.store_float32);
    }
  };

  auto manifest = load_manifest(cfg_.manifest_path);
  if (cfg_.protocol == Protocol::CrossLingual) {
    auto target = load_manifest(cfg_.target_manifest_path);
    std::set<std::string> ids;
    for (const auto& r : manifest.records) ids.insert(r.id);
    for (const auto& r : target.records)
      if (!ids.insert(r.id).second)
        throw std::runtime_error("features: id '" + r.id +
                                 "' appears in both source and target manifests");
    manifest = map_to_valence(manifest, cfg_.valence_mapping);
    target = map_to_valence(target, cfg_.valence_mapping);
    extract(manifest);
    extract(target);
    save_manifest(target, out(kTargetManifest));
    record_artifact("features", out(kTargetManifest));
  } else {
    extract(manifest);
  }
  save_manifest(manifest, out(kManifest));
  record_artifact("features", out(kManifest));
}

// --- train-aug ----------------------------------------------------------------

void Pipeline::run_train_aug() {
  cfg_.validate();
  require_artifact(out(kManifest), "features");
  auto manifest = load_manifest(out(kManifest));
  FeatureStore store(out(kFeaturesDir));

  DatasetManifest train, test;
  std::string target_language;
  if (cfg_.protocol == Protocol::CrossLingual) {
    require_artifact(out(kTargetManifest), "features");
    auto target = load_manifest(out(kTargetManifest));
    target_language = dominant_language(target);
    auto [t_train, t_eval] = split_target_language(target, cfg_.eval_fraction,
                                                   cfg_.train_fraction,
                                                   derive_seed(cfg_.seed, 302));
    train = manifest;
    train.source_name += "+target";
    for (const auto& r : t_train.records) train.records.push_back(r);
    test = t_eval;
  } else {
    auto folds = make_session_folds(manifest);
    if (cfg_.fold_index < 0 || cfg_.fold_index >= static_cast<int>(folds.size()))
      throw ConfigError("config: fold_index " + std::to_string(cfg_.fold_index) +
                        " out of range for " + std::to_string(folds.size()) + " folds");
    auto& [fold_train, fold_test] = folds[static_cast<std::size_t>(cfg_.fold_index)];
    train = simulate_imbalance(fold_train, cfg_.keep_fraction, cfg_.protected_class,
                               derive_seed(cfg_.seed, 303));
    test = fold_test;
  }
  save_manifest(train, out(kTrainManifest));
  save_manifest(test, out(kTestManifest));
  record_artifact("train-aug", out(kTrainManifest));
  record_artifact("train-aug", out(kTestManifest));

  json meta{{"target_language", target_language},
            {"model_label", model_label()},
            {"protocol", to_string(cfg_.protocol)}};
  write_text("train-aug", kMeta, meta.dump(2) + "\n");

  auto bundle = make_bundle(cfg_.gan_specs(), derive_seed(cfg_.seed, 304));
  TrainerOptions options;
  options.weights = cfg_.weights;
  options.epsilon = cfg_.epsilon;
  options.use_var_phase = cfg_.use_var_phase;
  options.use_bal_loss = cfg_.use_bal_loss;
  options.label_kind = cfg_.label_kind;
  options.snapshot_dir = out("diagnostics");
  Trainer trainer(bundle, cfg_.optimizer, options, derive_seed(cfg_.seed, 305));

  TrainLogWriter log(out(kAugLog));
  train_cycles(trainer, train, store, cfg_.optimizer.total_iterations, &log);
  trainer.save_checkpoint(out(kAugState), cfg_.fingerprint);
  record_artifact("train-aug", out(kAugState));
  record_artifact("train-aug", out(kAugLog));
}

// --- augment -------------------------------------------------------------------

void Pipeline::run_augment() {
  cfg_.validate();
  require_artifact(out(kAugState), "train-aug");
  require_artifact(out(kTrainManifest), "train-aug");

  auto info = read_checkpoint_info(out(kAugState));
  auto specs = GanSpecs::from_json(info.specs_json);
  auto bundle = make_bundle(specs, 1);
  load_modules_checkpoint(out(kAugState), bundle.modules());

  auto train = load_manifest(out(kTrainManifest));
  FeatureStore store(out(kFeaturesDir));
  FeatureStore hybrid_store(out(kHybridDir));

  AugmentScope scope = AugmentScope::All;
  int multiplicity = cfg_.multiplicity;
  std::string target_language;
  if (cfg_.protocol == Protocol::CrossLingual) {
    scope = AugmentScope::TargetLanguage;
    multiplicity = cfg_.target_multiplicity;
    std::ifstream meta_in(out(kMeta));
    if (meta_in) target_language = json::parse(meta_in).value("target_language", "");
  }

  auto hybrid = build_hybrid_dataset(
      train, *bundle.augmentor, store,
      [&](const std::string& id, const MelSpectrogram& mel) {
        hybrid_store.save(id, mel, cfg_.store_float32);
      },
      multiplicity, scope, target_language, cfg_.epsilon, derive_seed(cfg_.seed, 306));
  save_manifest(hybrid, out(kHybridManifest));
  record_artifact("augment", out(kHybridManifest));
}

// --- train-ser -----------------------------------------------------------------

void Pipeline::run_train_ser() {
  cfg_.validate();
  require_artifact(out(kHybridManifest), "augment");
  auto hybrid = load_manifest(out(kHybridManifest));
  FeatureStore store(out(kHybridDir));

  ClassifierSpec spec;
  spec.arch = cfg_.classifier_arch;
  spec.input_frames = cfg_.classifier_frames;
  spec.input_bands = cfg_.segment_bands;
  spec.class_names = hybrid.class_names(cfg_.label_kind);
  spec.small_channels = cfg_.classifier_channels;
  spec.eval_hop = cfg_.classifier_eval_hop;

  Classifier clf(spec, derive_seed(cfg_.seed, 307));
  auto result = train_classifier(clf, hybrid, store, cfg_.label_kind,
                                 cfg_.classifier_train, derive_seed(cfg_.seed, 308));

  std::vector<Module*> mods{&clf};
  save_modules_checkpoint(out(kClassifierCkpt), mods, 3, spec.fingerprint_json(),
                          cfg_.fingerprint);
  record_artifact("train-ser", out(kClassifierCkpt));

  json log{{"epoch_train_loss", result.epoch_train_loss},
           {"epoch_val_loss", result.epoch_val_loss},
           {"best_epoch", result.best_epoch},
           {"train_accuracy", result.train_accuracy}};
  write_text("train-ser", kClassifierLog, log.dump(2) + "\n");
}

// --- eval ----------------------------------------------------------------------

void Pipeline::run_eval() {
  cfg_.validate();
  require_artifact(out(kClassifierCkpt), "train-ser");
  require_artifact(out(kTestManifest), "train-aug");

  auto info = read_checkpoint_info(out(kClassifierCkpt));
  if (info.kind != 3)
    throw std::runtime_error("eval: " + out(kClassifierCkpt) + " is not a classifier checkpoint");
  auto spec = ClassifierSpec::from_json(info.specs_json);
  Classifier clf(spec, 1);
  std::vector<Module*> mods{&clf};
  load_modules_checkpoint(out(kClassifierCkpt), mods);

  auto test = load_manifest(out(kTestManifest));
  FeatureStore store(out(kFeaturesDir));

  std::vector<std::pair<std::string, std::string>> pairs;
  for (const auto& r : test.records) {
    auto pred = predict_utterance(store.load(r.id), clf);
    pairs.emplace_back(label_of(r, cfg_.label_kind), pred.label);
  }
  auto report = compute_uar(pairs, spec.class_names);
  report.metadata["model"] = model_label();
  report.metadata["fold"] = std::to_string(cfg_.fold_index);
  report.metadata["protocol"] = to_string(cfg_.protocol);
  report.metadata["config_fingerprint"] = cfg_.fingerprint;
  if (cfg_.protocol == Protocol::CrossLingual) {
    std::ifstream meta_in(out(kMeta));
    if (meta_in) report.metadata["target"] = json::parse(meta_in).value("target_language", "");
    auto manifest = load_manifest(out(kManifest));
    report.metadata["source"] = dominant_language(manifest);
  }

  std::string base = "reports/eval_" + model_label() + "_fold" +
                     std::to_string(cfg_.fold_index);
  write_text("eval", base + ".json", report.to_json() + "\n");
  write_text("eval", base + ".csv", report.to_csv());
}

// --- tsne ----------------------------------------------------------------------

void Pipeline::run_tsne() {
  cfg_.validate();
  require_artifact(out(kAugState), "train-aug");
  require_artifact(out(kTrainManifest), "train-aug");

  auto info = read_checkpoint_info(out(kAugState));
  auto bundle = make_bundle(GanSpecs::from_json(info.specs_json), 1);
  load_modules_checkpoint(out(kAugState), bundle.modules());

  auto train = load_manifest(out(kTrainManifest));
  FeatureStore store(out(kFeaturesDir));
  const int seg = bundle.augmentor->spec().in_frames;

  // Pick up to per_class utterances per class, augment each augment_times
  // with fresh noise and intensity, and embed every representation.
  RngStream pick_rng(derive_seed(cfg_.seed, 309));
  RngStream noise_rng(derive_seed(cfg_.seed, 310));
  RngStream eps_rng(derive_seed(cfg_.seed, 311));

  std::map<std::string, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < train.records.size(); ++i)
    by_class[label_of(train.records[i], cfg_.label_kind)].push_back(i);

  std::vector<std::string> ids, labels;
  std::vector<bool> augmented;
  std::vector<Tensor> reps;
  for (const auto& [cls, indices] : by_class) {
    std::vector<std::size_t> chosen = indices;
    for (std::size_t i = 0; i + 1 < chosen.size(); ++i) {
      std::size_t j = i + static_cast<std::size_t>(pick_rng.uniform_int(chosen.size() - i));
      std::swap(chosen[i], chosen[j]);
    }
    if (chosen.size() > static_cast<std::size_t>(cfg_.tsne_per_class))
      chosen.resize(static_cast<std::size_t>(cfg_.tsne_per_class));

    for (std::size_t idx : chosen) {
      const auto& rec = train.records[idx];
      auto mel = store.load(rec.id);
      auto segd = segment_mel(mel, seg, seg).front();
      reps.push_back(Tensor({1, kRepresentationDim},
                            bundle.representation->represent(segd)));
      ids.push_back(rec.id);
      labels.push_back(label_of(rec, cfg_.label_kind));
      augmented.push_back(false);
      for (int k = 0; k < cfg_.tsne_augment_times; ++k) {
        auto res = bundle.augmentor->augment(segd, noise_rng, eps_rng, cfg_.epsilon);
        reps.push_back(Tensor({1, kRepresentationDim},
                              bundle.representation->represent(res.x_hat)));
        ids.push_back(rec.id + "#aug" + std::to_string(k));
        labels.push_back(label_of(rec, cfg_.label_kind));
        augmented.push_back(true);
      }
    }
  }

  Tensor all({static_cast<int>(reps.size()), kRepresentationDim});
  for (std::size_t i = 0; i < reps.size(); ++i)
    std::copy_n(reps[i].data(), kRepresentationDim,
                all.data() + i * static_cast<std::size_t>(kRepresentationDim));

  auto result = project_representations(all, labels, augmented, ids, cfg_.tsne,
                                        derive_seed(cfg_.seed, 312));
  write_text("tsne", "tsne/points.csv", tsne_points_csv(result));
  write_text("tsne", "tsne/plot.svg", tsne_svg(result));
  json sil{{"silhouette_2d", result.silhouette_2d},
           {"silhouette_highdim", result.silhouette_highdim},
           {"points", result.points.size()}};
  write_text("tsne", "tsne/silhouette.json", sil.dump(2) + "\n");
}

// --- report --------------------------------------------------------------------

void Pipeline::run_report() {
  cfg_.validate();
  fs::path reports_dir = out("reports");
  if (!fs::exists(reports_dir))
    throw std::runtime_error("missing artifact " + reports_dir.string() +
                             ": run the 'eval' stage first");

  std::vector<EvaluationReport> reports;
  std::vector<std::string> paths;
  for (const auto& e : fs::directory_iterator(reports_dir))
    if (e.path().extension() == ".json") paths.push_back(e.path().string());
  std::sort(paths.begin(), paths.end());
  for (const auto& p : paths) {
    std::ifstream in(p);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    reports.push_back(EvaluationReport::from_json(text));
  }

  ReportLayout layout = ReportLayout::Imbalanced;
  if (cfg_.protocol == Protocol::Ablation) layout = ReportLayout::Ablation;
  if (cfg_.protocol == Protocol::CrossLingual) layout = ReportLayout::CrossLingual;
  auto tables = emit_report(reports, layout);
  write_text("report", "report/table.csv", tables.csv);
  write_text("report", "report/table.md", tables.markdown);
}

}  // namespace sergan
