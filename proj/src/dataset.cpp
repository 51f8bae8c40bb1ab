#include "sergan/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <stdexcept>

#include "json.hpp"

using nlohmann::json;

namespace sergan {

namespace {

bool valid_id(const std::string& id) {
  if (id.empty()) return false;
  for (char c : id) {
    bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
              (c >= '0' && c <= '9') || c == '.' || c == '_' || c == '-';
    if (!ok) return false;
  }
  return true;
}

[[noreturn]] void line_error(const std::string& path, std::size_t line,
                             const std::string& what) {
  throw std::runtime_error(path + ":" + std::to_string(line) + ": " + what);
}

// Fisher-Yates prefix shuffle: uniformly picks k of n indices. Consumes a
// bounded, size-dependent number of RNG draws.
std::vector<std::size_t> choose_k(std::vector<std::size_t> idx, std::size_t k,
                                  RngStream& rng) {
  for (std::size_t i = 0; i < k && i + 1 < idx.size(); ++i) {
    std::size_t j = i + static_cast<std::size_t>(rng.uniform_int(idx.size() - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(std::min(k, idx.size()));
  return idx;
}

}  // namespace

std::string to_string(Valence v) {
  return v == Valence::Negative ? "Negative" : "Positive";
}

Valence valence_from_string(const std::string& s) {
  if (s == "Negative") return Valence::Negative;
  if (s == "Positive") return Valence::Positive;
  throw std::invalid_argument("valence_from_string: unknown valence '" + s + "'");
}

bool is_canonical_emotion(const std::string& emotion) {
  return emotion == "Angry" || emotion == "Sad" || emotion == "Neutral" ||
         emotion == "Happy";
}

std::string label_of(const UtteranceRecord& r, LabelKind kind) {
  if (kind == LabelKind::Emotion) {
    if (r.emotion.empty())
      throw std::runtime_error("label_of: record '" + r.id + "' has no emotion label");
    return r.emotion;
  }
  if (!r.valence)
    throw std::runtime_error("label_of: record '" + r.id + "' has no valence label");
  return to_string(*r.valence);
}

std::map<std::string, int> DatasetManifest::class_counts(LabelKind kind) const {
  std::map<std::string, int> counts;
  for (const auto& r : records) ++counts[label_of(r, kind)];
  return counts;
}

std::vector<std::string> DatasetManifest::class_names(LabelKind kind) const {
  std::vector<std::string> names;
  for (const auto& [name, cnt] : class_counts(kind)) names.push_back(name);
  return names;
}

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_manifest: cannot open " + path);

  DatasetManifest m;
  {
    auto slash = path.find_last_of("/\\");
    std::string base = slash == std::string::npos ? path : path.substr(slash + 1);
    auto dot = base.find_last_of('.');
    m.source_name = dot == std::string::npos ? base : base.substr(0, dot);
  }

  std::set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;

    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      line_error(path, lineno, std::string("malformed JSON: ") + e.what());
    }
    if (!j.is_object()) line_error(path, lineno, "expected a JSON object");

    UtteranceRecord r;
    if (!j.contains("id") || !j["id"].is_string())
      line_error(path, lineno, "missing field 'id'");
    r.id = j["id"].get<std::string>();
    if (!valid_id(r.id))
      line_error(path, lineno, "id '" + r.id + "' must be non-empty [A-Za-z0-9._-]");
    if (!seen.insert(r.id).second)
      line_error(path, lineno, "duplicate id '" + r.id + "'");

    if (!j.contains("audio_path") || !j["audio_path"].is_string())
      line_error(path, lineno, "missing field 'audio_path'");
    r.audio_path = j["audio_path"].get<std::string>();
    if (r.audio_path.empty()) line_error(path, lineno, "empty audio_path");

    if (j.contains("emotion")) r.emotion = j["emotion"].get<std::string>();
    if (j.contains("valence"))
      r.valence = valence_from_string(j["valence"].get<std::string>());
    if (r.emotion.empty() && !r.valence)
      line_error(path, lineno, "record needs an emotion or a valence");
    if (!r.emotion.empty() && !is_canonical_emotion(r.emotion) && !r.valence)
      line_error(path, lineno,
                 "unknown emotion '" + r.emotion + "' without a valence label");

    for (const char* field : {"speaker", "session", "language"})
      if (!j.contains(field) || !j[field].is_string())
        line_error(path, lineno, std::string("missing field '") + field + "'");
    r.speaker = j["speaker"].get<std::string>();
    r.session = j["session"].get<std::string>();
    r.language = j["language"].get<std::string>();

    if (!j.contains("duration_s") || !j["duration_s"].is_number())
      line_error(path, lineno, "missing field 'duration_s'");
    r.duration_s = j["duration_s"].get<double>();
    if (!(r.duration_s > 0.0)) line_error(path, lineno, "duration_s must be positive");

    r.synthetic = j.value("synthetic", false);
    m.records.push_back(std::move(r));
  }
  return m;
}

void save_manifest(const DatasetManifest& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_manifest: cannot open " + path);
  for (const auto& r : m.records) {
    json j{{"id", r.id},           {"audio_path", r.audio_path},
           {"speaker", r.speaker}, {"session", r.session},
           {"language", r.language}, {"duration_s", r.duration_s}};
    if (!r.emotion.empty()) j["emotion"] = r.emotion;
    if (r.valence) j["valence"] = to_string(*r.valence);
    if (r.synthetic) j["synthetic"] = true;
    out << j.dump() << "\n";
  }
}

DatasetManifest simulate_imbalance(const DatasetManifest& m, double keep_fraction,
                                   const std::string& protected_class,
                                   std::uint64_t seed) {
  if (!(keep_fraction > 0.0 && keep_fraction <= 1.0))
    throw std::invalid_argument("simulate_imbalance: keep_fraction must be in (0,1]");

  std::map<std::string, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < m.records.size(); ++i)
    by_class[label_of(m.records[i], LabelKind::Emotion)].push_back(i);
  if (!by_class.count(protected_class))
    throw std::invalid_argument("simulate_imbalance: protected class '" +
                                protected_class + "' not present");

  RngStream rng(seed);
  std::vector<bool> keep(m.records.size(), false);
  for (const auto& [cls, indices] : by_class) {  // map iteration is sorted
    if (cls == protected_class) {
      for (auto i : indices) keep[i] = true;
      continue;
    }
    auto n_keep = static_cast<std::size_t>(std::max<long>(
        1, std::lround(keep_fraction * static_cast<double>(indices.size()))));
    for (auto i : choose_k(indices, n_keep, rng)) keep[i] = true;
  }

  DatasetManifest out;
  out.source_name = m.source_name;
  for (std::size_t i = 0; i < m.records.size(); ++i)
    if (keep[i]) out.records.push_back(m.records[i]);
  return out;
}

std::vector<std::pair<DatasetManifest, DatasetManifest>> make_session_folds(
    const DatasetManifest& m) {
  std::set<std::string> sessions;
  for (const auto& r : m.records) sessions.insert(r.session);
  if (sessions.size() < 2)
    throw std::invalid_argument("make_session_folds: need at least 2 distinct sessions, got " +
                                std::to_string(sessions.size()));

  std::vector<std::pair<DatasetManifest, DatasetManifest>> folds;
  for (const auto& test_session : sessions) {
    DatasetManifest train, test;
    train.source_name = m.source_name + "/train-not-" + test_session;
    test.source_name = m.source_name + "/test-" + test_session;
    for (const auto& r : m.records)
      (r.session == test_session ? test : train).records.push_back(r);
    folds.emplace_back(std::move(train), std::move(test));
  }
  return folds;
}

ValenceMapping default_valence_mapping() {
  return {{"Angry", Valence::Negative},
          {"Sad", Valence::Negative},
          {"Neutral", Valence::Positive},
          {"Happy", Valence::Positive}};
}

DatasetManifest map_to_valence(const DatasetManifest& m, const ValenceMapping& mapping) {
  std::set<std::string> missing;
  for (const auto& r : m.records)
    if (!r.emotion.empty() && !mapping.count(r.emotion)) missing.insert(r.emotion);
  if (!missing.empty()) {
    std::string list;
    for (const auto& e : missing) list += (list.empty() ? "" : ", ") + e;
    throw std::invalid_argument("map_to_valence: mapping does not cover: " + list);
  }

  DatasetManifest out = m;
  for (auto& r : out.records)
    if (!r.emotion.empty()) r.valence = mapping.at(r.emotion);
  return out;
}

std::pair<DatasetManifest, DatasetManifest> split_target_language(
    const DatasetManifest& m, double eval_fraction, double train_fraction,
    std::uint64_t seed) {
  if (!(eval_fraction >= 0.0 && eval_fraction <= 1.0) ||
      !(train_fraction >= 0.0 && train_fraction <= 1.0) ||
      eval_fraction + train_fraction > 1.0 + 1e-12)
    throw std::invalid_argument(
        "split_target_language: fractions must lie in [0,1] and sum to at most 1");

  std::map<std::string, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < m.records.size(); ++i)
    by_class[label_of(m.records[i], LabelKind::Valence)].push_back(i);

  // largest-remainder allocation of round(fraction * N) across classes
  auto allocate = [&](double fraction,
                      const std::map<std::string, std::size_t>& available)
      -> std::map<std::string, std::size_t> {
    std::size_t total_avail = 0;
    for (const auto& [c, n] : available) total_avail += n;
    auto target = static_cast<std::size_t>(
        std::lround(fraction * static_cast<double>(m.records.size())));
    target = std::min(target, total_avail);

    std::map<std::string, std::size_t> quota;
    std::vector<std::pair<double, std::string>> remainders;
    std::size_t assigned = 0;
    for (const auto& [cls, indices] : by_class) {
      double exact = fraction * static_cast<double>(indices.size());
      auto q = static_cast<std::size_t>(std::floor(exact));
      q = std::min(q, available.at(cls));
      quota[cls] = q;
      assigned += q;
      remainders.emplace_back(-(exact - std::floor(exact)), cls);  // sort desc
    }
    std::sort(remainders.begin(), remainders.end());
    for (const auto& [neg_rem, cls] : remainders) {
      if (assigned >= target) break;
      if (quota[cls] < available.at(cls)) {
        ++quota[cls];
        ++assigned;
      }
    }
    return quota;
  };

  RngStream rng(seed);
  std::map<std::string, std::vector<std::size_t>> shuffled;
  for (const auto& [cls, indices] : by_class)
    shuffled[cls] = choose_k(indices, indices.size(), rng);

  std::map<std::string, std::size_t> avail;
  for (const auto& [cls, indices] : by_class) avail[cls] = indices.size();
  auto eval_quota = allocate(eval_fraction, avail);
  for (const auto& [cls, q] : eval_quota) avail[cls] -= q;
  auto train_quota = allocate(train_fraction, avail);

  std::vector<int> assign(m.records.size(), 0);  // 0 = drop, 1 = train, 2 = eval
  for (const auto& [cls, indices] : shuffled) {
    std::size_t e = eval_quota[cls], t = train_quota[cls];
    for (std::size_t k = 0; k < indices.size(); ++k) {
      if (k < e)
        assign[indices[k]] = 2;
      else if (k < e + t)
        assign[indices[k]] = 1;
    }
  }

  DatasetManifest train, eval;
  train.source_name = m.source_name + "/train";
  eval.source_name = m.source_name + "/eval";
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    if (assign[i] == 1) train.records.push_back(m.records[i]);
    if (assign[i] == 2) eval.records.push_back(m.records[i]);
  }
  return {std::move(train), std::move(eval)};
}

namespace {

MelSpectrogram crop_to_frames(const MelSpectrogram& mel, int seg_frames,
                              RngStream& rng) {
  const int T = mel.frames();
  if (T <= seg_frames) {
    auto segs = segment_mel(mel, seg_frames, seg_frames);
    return segs.front();
  }
  int start = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(T - seg_frames) + 1));
  MelSpectrogram out;
  out.config = mel.config;
  out.normalized = mel.normalized;
  out.values = Tensor({seg_frames, mel.bands()});
  std::copy_n(mel.values.data() + static_cast<std::size_t>(start) * mel.bands(),
              out.values.numel(), out.values.data());
  return out;
}

}  // namespace

TripletBatch sample_triplet_batch(const DatasetManifest& m, int batch_size,
                                  RngStream& rng, const FeatureProvider& features,
                                  int seg_frames, LabelKind kind) {
  if (batch_size < 1) throw std::invalid_argument("sample_triplet_batch: batch_size < 1");
  if (m.records.empty()) throw std::invalid_argument("sample_triplet_batch: empty manifest");

  std::map<std::string, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < m.records.size(); ++i)
    by_class[label_of(m.records[i], kind)].push_back(i);
  if (by_class.size() < 2)
    throw std::invalid_argument("sample_triplet_batch: manifest has a single class");
  bool any_pair = false;
  for (const auto& [cls, idx] : by_class) any_pair |= idx.size() >= 2;
  if (!any_pair)
    throw std::invalid_argument(
        "sample_triplet_batch: no class has at least 2 records to anchor on");

  TripletBatch batch;
  for (int b = 0; b < batch_size; ++b) {
    // anchor: uniform over records, redrawn while its class cannot provide a
    // distinct positive
    std::size_t a_idx = 0;
    const std::vector<std::size_t>* a_cls = nullptr;
    std::string a_label;
    for (int tries = 0;; ++tries) {
      a_idx = static_cast<std::size_t>(rng.uniform_int(m.records.size()));
      a_label = label_of(m.records[a_idx], kind);
      a_cls = &by_class.at(a_label);
      if (a_cls->size() >= 2) break;
      if (tries > 10000)
        throw std::runtime_error("sample_triplet_batch: could not draw an anchor class");
    }

    // positive: uniform over the anchor class minus the anchor itself
    std::size_t p_idx;
    do {
      p_idx = (*a_cls)[static_cast<std::size_t>(rng.uniform_int(a_cls->size()))];
    } while (p_idx == a_idx);

    // negative: uniform over records of the other classes
    std::size_t n_other = m.records.size() - a_cls->size();
    std::size_t pick = static_cast<std::size_t>(rng.uniform_int(n_other));
    std::size_t n_idx = 0;
    for (std::size_t i = 0, seen = 0; i < m.records.size(); ++i) {
      if (label_of(m.records[i], kind) == a_label) continue;
      if (seen++ == pick) {
        n_idx = i;
        break;
      }
    }

    batch.anchors.push_back(crop_to_frames(features.load(m.records[a_idx].id), seg_frames, rng));
    batch.positives.push_back(crop_to_frames(features.load(m.records[p_idx].id), seg_frames, rng));
    batch.negatives.push_back(crop_to_frames(features.load(m.records[n_idx].id), seg_frames, rng));
    batch.labels.push_back(a_label);
  }
  return batch;
}

TripletBatch sample_triplet_batch(const DatasetManifest& m, int batch_size,
                                  std::uint64_t seed, const FeatureProvider& features,
                                  int seg_frames, LabelKind kind) {
  RngStream rng(seed);
  return sample_triplet_batch(m, batch_size, rng, features, seg_frames, kind);
}

Tensor stack_mels(const std::vector<MelSpectrogram>& mels) {
  if (mels.empty()) throw std::invalid_argument("stack_mels: empty batch");
  const int T = mels[0].frames(), B = mels[0].bands();
  Tensor out({static_cast<int>(mels.size()), 1, T, B});
  for (std::size_t n = 0; n < mels.size(); ++n) {
    if (mels[n].frames() != T || mels[n].bands() != B)
      throw std::invalid_argument("stack_mels: inconsistent shapes in batch");
    std::copy_n(mels[n].values.data(), mels[n].values.numel(),
                out.data() + n * mels[n].values.numel());
  }
  return out;
}

std::string toy_class_name(int k) {
  static const char* canonical[4] = {"Angry", "Sad", "Neutral", "Happy"};
  if (k >= 0 && k < 4) return canonical[k];
  return "Class" + std::to_string(k);
}

DatasetManifest generate_toy_dataset(
    const ToyDatasetParams& params,
    const std::function<void(const std::string&, const MelSpectrogram&)>& sink) {
  if (params.n_classes < 2)
    throw std::invalid_argument("generate_toy_dataset: need at least 2 classes");
  if (params.bands % params.n_classes != 0)
    throw std::invalid_argument("generate_toy_dataset: bands must divide evenly into class groups");

  RngStream rng(params.seed);
  FeatureConfig cfg;
  cfg.n_mels = params.bands;

  DatasetManifest m;
  m.source_name = "toy";
  const int group = params.bands / params.n_classes;
  int counter = 0;
  for (int cls = 0; cls < params.n_classes; ++cls) {
    for (int i = 0; i < params.n_per_class; ++i, ++counter) {
      // per-utterance signal level; floor keeps the oracle margin intact
      double amp = std::max(0.12, params.signal_boost + params.signal_sigma * rng.normal());
      int confuser = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(params.n_classes - 1)));
      if (confuser >= cls) ++confuser;

      MelSpectrogram mel;
      mel.config = cfg;
      mel.normalized = true;
      mel.values = Tensor({params.frames, params.bands});
      for (int t = 0; t < params.frames; ++t) {
        for (int b = 0; b < params.bands; ++b) {
          double v = params.base_level + params.noise_sigma * rng.normal();
          if (b / group == cls) v += amp;
          if (b / group == confuser) v += 0.5 * amp;
          mel.values[static_cast<std::size_t>(t) * params.bands + b] =
              std::clamp(v, 0.0, 1.0);
        }
      }

      UtteranceRecord r;
      r.id = "toy-" + std::to_string(counter);
      r.audio_path = "synthetic://" + r.id;
      r.emotion = toy_class_name(cls);
      r.valence = cls < (params.n_classes + 1) / 2 ? Valence::Negative : Valence::Positive;
      r.speaker = "spk" + std::to_string(counter % params.n_speakers);
      r.session = "s" + std::to_string(counter % params.n_sessions);
      r.language = params.language;
      r.duration_s =
          (params.frames - 1) * (cfg.window_ms / 1000.0) * (1.0 - cfg.overlap_ratio) +
          cfg.window_ms / 1000.0;
      r.synthetic = true;

      sink(r.id, mel);
      m.records.push_back(std::move(r));
    }
  }
  return m;
}

DatasetManifest generate_toy_dataset(const ToyDatasetParams& params,
                                     InMemoryFeatureStore& store) {
  return generate_toy_dataset(
      params, [&](const std::string& id, const MelSpectrogram& mel) { store.save(id, mel); });
}

DatasetManifest generate_toy_dataset(const ToyDatasetParams& params, FeatureStore& store) {
  return generate_toy_dataset(params, [&](const std::string& id, const MelSpectrogram& mel) {
    store.save(id, mel, /*as_float32=*/false);
  });
}

}  // namespace sergan
