#include "sergan/config.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

#include <set>

#include "sergan/sha256.hpp"

namespace fs = std::filesystem;

namespace sergan {

namespace {

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

struct KeyHandler {
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

double parse_real(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument("");
    return out;
  } catch (...) {
    throw ConfigError("config: key '" + key + "' expects a number, got '" + v + "'");
  }
}

long parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    long out = std::stol(v, &used);
    if (used != v.size()) throw std::invalid_argument("");
    return out;
  } catch (...) {
    throw ConfigError("config: key '" + key + "' expects an integer, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config: key '" + key + "' expects a boolean, got '" + v + "'");
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(static_cast<int>(parse_int(key, trim(item))));
  if (out.empty()) throw ConfigError("config: key '" + key + "' expects a list of integers");
  return out;
}

// the full key schema; lookup by "<section>.<key>"
const std::map<std::string, KeyHandler>& schema() {
  static const std::map<std::string, KeyHandler> kSchema = {
      {"experiment.protocol",
       {[](ExperimentConfig& c, const std::string& v) {
         if (v == "toy") c.protocol = Protocol::Toy;
         else if (v == "imbalanced") c.protocol = Protocol::Imbalanced;
         else if (v == "ablation") c.protocol = Protocol::Ablation;
         else if (v == "cross_lingual") c.protocol = Protocol::CrossLingual;
         else throw ConfigError("config: unknown protocol '" + v + "'");
       }}},
      {"experiment.output_dir",
       {[](ExperimentConfig& c, const std::string& v) { c.output_dir = v; }}},
      {"experiment.seed",
       {[](ExperimentConfig& c, const std::string& v) {
         c.seed = static_cast<std::uint64_t>(parse_int("experiment.seed", v));
       }}},
      {"experiment.label_kind",
       {[](ExperimentConfig& c, const std::string& v) {
         if (v == "emotion") c.label_kind = LabelKind::Emotion;
         else if (v == "valence") c.label_kind = LabelKind::Valence;
         else throw ConfigError("config: unknown label_kind '" + v + "'");
       }}},
      {"experiment.model_label",
       {[](ExperimentConfig& c, const std::string& v) { c.model_label = v; }}},

      {"features.sample_rate_hz",
       {[](ExperimentConfig& c, const std::string& v) {
         c.features.sample_rate_hz = static_cast<int>(parse_int("features.sample_rate_hz", v));
       }}},
      {"features.window_ms",
       {[](ExperimentConfig& c, const std::string& v) {
         c.features.window_ms = parse_real("features.window_ms", v);
       }}},
      {"features.overlap_ratio",
       {[](ExperimentConfig& c, const std::string& v) {
         c.features.overlap_ratio = parse_real("features.overlap_ratio", v);
       }}},
      {"features.n_mels",
       {[](ExperimentConfig& c, const std::string& v) {
         c.features.n_mels = static_cast<int>(parse_int("features.n_mels", v));
       }}},
      {"features.log_floor_db",
       {[](ExperimentConfig& c, const std::string& v) {
         c.features.log_floor_db = parse_real("features.log_floor_db", v);
       }}},
      {"features.store_dtype",
       {[](ExperimentConfig& c, const std::string& v) {
         if (v == "f32") c.store_float32 = true;
         else if (v == "f64") c.store_float32 = false;
         else throw ConfigError("config: store_dtype must be f32 or f64, got '" + v + "'");
       }}},

      {"dataset.manifest",
       {[](ExperimentConfig& c, const std::string& v) { c.manifest_path = v; }}},
      {"dataset.target_manifest",
       {[](ExperimentConfig& c, const std::string& v) { c.target_manifest_path = v; }}},
      {"dataset.keep_fraction",
       {[](ExperimentConfig& c, const std::string& v) {
         c.keep_fraction = parse_real("dataset.keep_fraction", v);
       }}},
      {"dataset.protected_class",
       {[](ExperimentConfig& c, const std::string& v) { c.protected_class = v; }}},
      {"dataset.eval_fraction",
       {[](ExperimentConfig& c, const std::string& v) {
         c.eval_fraction = parse_real("dataset.eval_fraction", v);
       }}},
      {"dataset.train_fraction",
       {[](ExperimentConfig& c, const std::string& v) {
         c.train_fraction = parse_real("dataset.train_fraction", v);
       }}},
      {"dataset.fold_index",
       {[](ExperimentConfig& c, const std::string& v) {
         c.fold_index = static_cast<int>(parse_int("dataset.fold_index", v));
       }}},
      {"dataset.multiplicity",
       {[](ExperimentConfig& c, const std::string& v) {
         c.multiplicity = static_cast<int>(parse_int("dataset.multiplicity", v));
       }}},
      {"dataset.target_multiplicity",
       {[](ExperimentConfig& c, const std::string& v) {
         c.target_multiplicity = static_cast<int>(parse_int("dataset.target_multiplicity", v));
       }}},
      {"dataset.toy_classes",
       {[](ExperimentConfig& c, const std::string& v) {
         c.toy_classes = static_cast<int>(parse_int("dataset.toy_classes", v));
       }}},
      {"dataset.toy_per_class",
       {[](ExperimentConfig& c, const std::string& v) {
         c.toy_per_class = static_cast<int>(parse_int("dataset.toy_per_class", v));
       }}},
      {"dataset.toy_frames",
       {[](ExperimentConfig& c, const std::string& v) {
         c.toy_frames = static_cast<int>(parse_int("dataset.toy_frames", v));
       }}},
      {"dataset.toy_bands",
       {[](ExperimentConfig& c, const std::string& v) {
         c.toy_bands = static_cast<int>(parse_int("dataset.toy_bands", v));
       }}},

      {"models.segment_frames",
       {[](ExperimentConfig& c, const std::string& v) {
         c.segment_frames = static_cast<int>(parse_int("models.segment_frames", v));
       }}},
      {"models.segment_bands",
       {[](ExperimentConfig& c, const std::string& v) {
         c.segment_bands = static_cast<int>(parse_int("models.segment_bands", v));
       }}},
      {"models.width_mult",
       {[](ExperimentConfig& c, const std::string& v) {
         c.width_mult = parse_real("models.width_mult", v);
       }}},
      {"models.noise_planes",
       {[](ExperimentConfig& c, const std::string& v) {
         c.noise_planes = static_cast<int>(parse_int("models.noise_planes", v));
       }}},

      {"losses.w_g",
       {[](ExperimentConfig& c, const std::string& v) { c.weights.w_g = parse_real("losses.w_g", v); }}},
      {"losses.w_r",
       {[](ExperimentConfig& c, const std::string& v) { c.weights.w_r = parse_real("losses.w_r", v); }}},
      {"losses.w_e",
       {[](ExperimentConfig& c, const std::string& v) { c.weights.w_e = parse_real("losses.w_e", v); }}},
      {"losses.w_v",
       {[](ExperimentConfig& c, const std::string& v) { c.weights.w_v = parse_real("losses.w_v", v); }}},
      {"losses.w_b",
       {[](ExperimentConfig& c, const std::string& v) { c.weights.w_b = parse_real("losses.w_b", v); }}},
      {"losses.beta",
       {[](ExperimentConfig& c, const std::string& v) { c.weights.beta = parse_real("losses.beta", v); }}},
      {"losses.var_normalized",
       {[](ExperimentConfig& c, const std::string& v) {
         c.weights.var_normalized = parse_bool("losses.var_normalized", v);
       }}},
      {"losses.eps_low",
       {[](ExperimentConfig& c, const std::string& v) { c.epsilon.low = parse_real("losses.eps_low", v); }}},
      {"losses.eps_high",
       {[](ExperimentConfig& c, const std::string& v) { c.epsilon.high = parse_real("losses.eps_high", v); }}},

      {"training.learning_rate",
       {[](ExperimentConfig& c, const std::string& v) {
         c.optimizer.learning_rate = parse_real("training.learning_rate", v);
       }}},
      {"training.beta1",
       {[](ExperimentConfig& c, const std::string& v) { c.optimizer.beta1 = parse_real("training.beta1", v); }}},
      {"training.beta2",
       {[](ExperimentConfig& c, const std::string& v) { c.optimizer.beta2 = parse_real("training.beta2", v); }}},
      {"training.total_iterations",
       {[](ExperimentConfig& c, const std::string& v) {
         c.optimizer.total_iterations = parse_int("training.total_iterations", v);
       }}},
      {"training.batch_size",
       {[](ExperimentConfig& c, const std::string& v) {
         c.optimizer.batch_size = static_cast<int>(parse_int("training.batch_size", v));
       }}},
      {"training.use_var_phase",
       {[](ExperimentConfig& c, const std::string& v) {
         c.use_var_phase = parse_bool("training.use_var_phase", v);
       }}},
      {"training.use_bal_loss",
       {[](ExperimentConfig& c, const std::string& v) {
         c.use_bal_loss = parse_bool("training.use_bal_loss", v);
       }}},

      {"classifier.arch",
       {[](ExperimentConfig& c, const std::string& v) {
         if (v == "vgg19") c.classifier_arch = ClassifierSpec::Arch::Vgg19;
         else if (v == "small4") c.classifier_arch = ClassifierSpec::Arch::Small4;
         else throw ConfigError("config: classifier.arch must be vgg19 or small4, got '" + v + "'");
       }}},
      {"classifier.input_frames",
       {[](ExperimentConfig& c, const std::string& v) {
         c.classifier_frames = static_cast<int>(parse_int("classifier.input_frames", v));
       }}},
      {"classifier.eval_hop",
       {[](ExperimentConfig& c, const std::string& v) {
         c.classifier_eval_hop = static_cast<int>(parse_int("classifier.eval_hop", v));
       }}},
      {"classifier.channels",
       {[](ExperimentConfig& c, const std::string& v) {
         c.classifier_channels = parse_int_list("classifier.channels", v);
       }}},
      {"classifier.learning_rate",
       {[](ExperimentConfig& c, const std::string& v) {
         c.classifier_train.learning_rate = parse_real("classifier.learning_rate", v);
       }}},
      {"classifier.batch_size",
       {[](ExperimentConfig& c, const std::string& v) {
         c.classifier_train.batch_size = static_cast<int>(parse_int("classifier.batch_size", v));
       }}},
      {"classifier.max_epochs",
       {[](ExperimentConfig& c, const std::string& v) {
         c.classifier_train.max_epochs = static_cast<int>(parse_int("classifier.max_epochs", v));
       }}},
      {"classifier.patience",
       {[](ExperimentConfig& c, const std::string& v) {
         c.classifier_train.patience = static_cast<int>(parse_int("classifier.patience", v));
       }}},
      {"classifier.min_epochs",
       {[](ExperimentConfig& c, const std::string& v) {
         c.classifier_train.min_epochs = static_cast<int>(parse_int("classifier.min_epochs", v));
       }}},
      {"classifier.val_fraction",
       {[](ExperimentConfig& c, const std::string& v) {
         c.classifier_train.val_fraction = parse_real("classifier.val_fraction", v);
       }}},

      {"tsne.perplexity",
       {[](ExperimentConfig& c, const std::string& v) { c.tsne.perplexity = parse_real("tsne.perplexity", v); }}},
      {"tsne.iterations",
       {[](ExperimentConfig& c, const std::string& v) {
         c.tsne.iterations = static_cast<int>(parse_int("tsne.iterations", v));
       }}},
      {"tsne.learning_rate",
       {[](ExperimentConfig& c, const std::string& v) {
         c.tsne.learning_rate = parse_real("tsne.learning_rate", v);
       }}},
      {"tsne.per_class",
       {[](ExperimentConfig& c, const std::string& v) {
         c.tsne_per_class = static_cast<int>(parse_int("tsne.per_class", v));
       }}},
      {"tsne.augment_times",
       {[](ExperimentConfig& c, const std::string& v) {
         c.tsne_augment_times = static_cast<int>(parse_int("tsne.augment_times", v));
       }}},
  };
  return kSchema;
}

const std::set<std::string>& known_sections() {
  static const std::set<std::string> kSections{"experiment", "features", "dataset",
                                               "models",     "losses",   "training",
                                               "classifier", "tsne",     "valence_mapping"};
  return kSections;
}

}  // namespace

std::string to_string(Protocol p) {
  switch (p) {
    case Protocol::Toy: return "toy";
    case Protocol::Imbalanced: return "imbalanced";
    case Protocol::Ablation: return "ablation";
    case Protocol::CrossLingual: return "cross_lingual";
  }
  return "?";
}

ExperimentConfig parse_config(const std::string& text, const std::string& base_dir) {
  ExperimentConfig cfg;
  cfg.config_dir = base_dir;

  std::istringstream in(text);
  std::string line, section;
  std::size_t lineno = 0;
  std::vector<std::pair<std::string, std::string>> canonical;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']')
        throw ConfigError("config line " + std::to_string(lineno) + ": malformed section header");
      section = trim(t.substr(1, t.size() - 2));
      if (!known_sections().count(section))
        throw ConfigError("config line " + std::to_string(lineno) + ": unknown section [" +
                          section + "]");
      continue;
    }
    auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    if (section.empty())
      throw ConfigError("config line " + std::to_string(lineno) + ": key outside any section");
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    std::string full = section + "." + key;
    if (section == "valence_mapping") {
      // free-form emotion names mapping onto the two valence labels
      try {
        cfg.valence_mapping[key] = valence_from_string(value);
      } catch (const std::invalid_argument&) {
        throw ConfigError("config line " + std::to_string(lineno) + ": key '" + full +
                          "' expects Negative or Positive, got '" + value + "'");
      }
      canonical.emplace_back(full, value);
      continue;
    }
    auto it = schema().find(full);
    if (it == schema().end())
      throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + full + "'");
    it->second.set(cfg, value);
    canonical.emplace_back(full, value);
  }

  std::sort(canonical.begin(), canonical.end());
  std::string joined;
  for (const auto& [k, v] : canonical) joined += k + "=" + v + "\n";
  cfg.fingerprint = sha256_hex(joined).substr(0, 16);

  // resolve relative paths against the config location
  auto resolve = [&](std::string& p) {
    if (!p.empty() && !fs::path(p).is_absolute() && !base_dir.empty())
      p = (fs::path(base_dir) / p).string();
  };
  resolve(cfg.manifest_path);
  resolve(cfg.target_manifest_path);
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_config(text, fs::path(path).parent_path().string());
}

GanSpecs ExperimentConfig::gan_specs() const {
  GanSpecs specs = GanSpecs::for_input(segment_frames, segment_bands, width_mult);
  specs.augmentor.noise_planes = noise_planes;
  return specs;
}

void ExperimentConfig::validate() const {
  features.validate();
  weights.validate();
  epsilon.validate();
  optimizer.validate();
  classifier_train.validate();
  gan_specs().validate();
  if (output_dir.empty()) throw ConfigError("config: output_dir must not be empty");

  if (protocol == Protocol::Toy) {
    if (toy_classes < 2) throw ConfigError("config: toy_classes must be >= 2");
    if (toy_bands != segment_bands)
      throw ConfigError("config: toy_bands must equal models.segment_bands");
  } else {
    if (manifest_path.empty())
      throw ConfigError("config: protocol " + to_string(protocol) +
                        " requires dataset.manifest");
    if (!fs::exists(manifest_path))
      throw ConfigError("config: dataset.manifest path does not exist: " + manifest_path);
  }
  if (protocol == Protocol::CrossLingual) {
    if (target_manifest_path.empty())
      throw ConfigError("config: cross_lingual requires dataset.target_manifest");
    if (!fs::exists(target_manifest_path))
      throw ConfigError("config: dataset.target_manifest path does not exist: " +
                        target_manifest_path);
    if (label_kind != LabelKind::Valence)
      throw ConfigError("config: cross_lingual runs on valence labels; set "
                        "experiment.label_kind = valence");
  }
  if (!(keep_fraction > 0.0 && keep_fraction <= 1.0))
    throw ConfigError("config: dataset.keep_fraction must lie in (0,1]");
  if (multiplicity < 0 || target_multiplicity < 0)
    throw ConfigError("config: augmentation multiplicities must be >= 0");
  if (tsne_per_class < 1 || tsne_augment_times < 0)
    throw ConfigError("config: bad tsne sampling parameters");
}

}  // namespace sergan
