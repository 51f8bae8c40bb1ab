#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "doctest.h"
#include "oracles.hpp"
#include "sergan/classifier.hpp"
#include "sergan/dataset.hpp"
#include "test_helpers.hpp"

using namespace sergan;

namespace {

ClassifierSpec small_spec(std::vector<std::string> classes, int frames = 32,
                          int bands = 32) {
  ClassifierSpec spec;
  spec.arch = ClassifierSpec::Arch::Small4;
  spec.input_frames = frames;
  spec.input_bands = bands;
  spec.class_names = std::move(classes);
  spec.small_channels = {4, 8, 8, 16};
  spec.eval_hop = frames / 2;
  return spec;
}

}  // namespace

TEST_CASE("vote aggregation: majority, single segment, tie-break") {
  std::vector<std::string> classes{"A", "B"};

  // votes [A, A, B] -> A
  Tensor maj({3, 2}, {0.9, 0.1, 0.8, 0.2, 0.3, 0.7});
  auto r = aggregate_votes(maj, classes);
  CHECK(r.label == "A");
  CHECK(r.segment_votes == std::vector<std::string>{"A", "A", "B"});

  // single segment: its argmax wins
  Tensor one({1, 2}, {0.2, 0.8});
  CHECK(aggregate_votes(one, classes).label == "B");

  // tie [A, B]: mean prob A = 0.6 beats mean prob B = 0.55... rows sum to 1,
  // so express the example with a third class absorbing the remainder
  std::vector<std::string> classes3{"A", "B", "C"};
  Tensor tie({2, 3}, {0.60, 0.35, 0.05,   // votes A
                      0.45, 0.55, 0.00}); // votes B; means: A 0.525 > B 0.45
  auto t = aggregate_votes(tie, classes3);
  CHECK(t.segment_votes == std::vector<std::string>{"A", "B"});
  CHECK(t.label == "A");

  // same ties, reversed means
  Tensor tie2({2, 3}, {0.52, 0.43, 0.05,
                       0.05, 0.90, 0.05});
  CHECK(aggregate_votes(tie2, classes3).label == "B");

  // every segment agreeing returns that class regardless of count
  for (int s : {1, 2, 5, 9}) {
    Tensor all({s, 2});
    for (int i = 0; i < s; ++i) {
      all[static_cast<std::size_t>(i) * 2] = 0.1;
      all[static_cast<std::size_t>(i) * 2 + 1] = 0.9;
    }
    CHECK(aggregate_votes(all, classes).label == "B");
  }
}

TEST_CASE("compute_uar hand values") {
  // per-class recalls 0.5, 1.0, 0.75 -> UAR 0.75
  std::vector<std::pair<std::string, std::string>> pairs;
  pairs.emplace_back("a", "a");
  pairs.emplace_back("a", "b");  // a: 1/2
  pairs.emplace_back("b", "b");  // b: 1/1
  for (int i = 0; i < 3; ++i) pairs.emplace_back("c", "c");
  pairs.emplace_back("c", "a");  // c: 3/4
  auto rep = compute_uar(pairs);
  CHECK(rep.uar == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(rep.per_class_recall["a"] == doctest::Approx(0.5));
  CHECK(rep.per_class_recall["c"] == doctest::Approx(0.75));

  // perfect predictions
  std::vector<std::pair<std::string, std::string>> perfect{{"x", "x"}, {"y", "y"}};
  CHECK(compute_uar(perfect).uar == doctest::Approx(1.0));

  // 90/10 split, everything predicted as the majority class -> UAR 0.5
  std::vector<std::pair<std::string, std::string>> skew;
  for (int i = 0; i < 90; ++i) skew.emplace_back("big", "big");
  for (int i = 0; i < 10; ++i) skew.emplace_back("small", "big");
  CHECK(compute_uar(skew).uar == doctest::Approx(0.5));

  CHECK_THROWS_AS(compute_uar({}), std::invalid_argument);
  CHECK_THROWS_WITH_AS(compute_uar(perfect, {"x", "y", "z"}),
                       doctest::Contains("zero instances"), std::invalid_argument);
}

TEST_CASE("compute_uar matches the brute-force oracle on random configurations") {
  RngStream rng(61);
  for (int trial = 0; trial < 300; ++trial) {
    int n_classes = 2 + static_cast<int>(rng.uniform_int(4));
    int n = 5 + static_cast<int>(rng.uniform_int(60));
    std::vector<std::pair<std::string, std::string>> pairs;
    std::set<std::string> used;
    for (int i = 0; i < n; ++i) {
      std::string ref = "c" + std::to_string(rng.uniform_int(static_cast<std::uint64_t>(n_classes)));
      std::string pred = "c" + std::to_string(rng.uniform_int(static_cast<std::uint64_t>(n_classes)));
      pairs.emplace_back(ref, pred);
      used.insert(ref);
    }
    auto rep = compute_uar(pairs);
    CHECK(rep.uar == doctest::Approx(oracles::brute_force_uar(pairs)).epsilon(1e-12));

    // confusion row sums equal reference counts
    std::map<std::string, long> ref_counts;
    for (const auto& [ref, pred] : pairs) ++ref_counts[ref];
    for (std::size_t i = 0; i < rep.classes.size(); ++i) {
      long row = 0;
      for (long v : rep.confusion[i]) row += v;
      CHECK(row == (ref_counts.count(rep.classes[i]) ? ref_counts[rep.classes[i]] : 0));
    }
  }
}

TEST_CASE("UAR invariances: relabeling and per-class duplication") {
  RngStream rng(62);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::pair<std::string, std::string>> pairs;
    for (int i = 0; i < 30; ++i)
      pairs.emplace_back("c" + std::to_string(rng.uniform_int(3)),
                         "c" + std::to_string(rng.uniform_int(3)));
    double base = compute_uar(pairs).uar;

    // permuting class names leaves the UAR unchanged
    auto relabel = [](const std::string& c) {
      return c == "c0" ? "z2" : (c == "c1" ? "z0" : "z1");
    };
    std::vector<std::pair<std::string, std::string>> renamed;
    for (const auto& [r, p] : pairs) renamed.emplace_back(relabel(r), relabel(p));
    CHECK(compute_uar(renamed).uar == doctest::Approx(base).epsilon(1e-12));

    // duplicating every sample of one class k times leaves the UAR unchanged
    std::vector<std::pair<std::string, std::string>> dup = pairs;
    for (const auto& [r, p] : pairs)
      if (r == "c1")
        for (int k = 0; k < 3; ++k) dup.emplace_back(r, p);
    CHECK(compute_uar(dup).uar == doctest::Approx(base).epsilon(1e-12));
  }
}

TEST_CASE("evaluation report serialization round trip") {
  auto rep = compute_uar({{"a", "a"}, {"a", "b"}, {"b", "b"}});
  rep.metadata["fold"] = "2";
  rep.metadata["model"] = "AUG";
  auto back = EvaluationReport::from_json(rep.to_json());
  CHECK(back.uar == rep.uar);
  CHECK(back.classes == rep.classes);
  CHECK(back.confusion == rep.confusion);
  CHECK(back.metadata.at("model") == "AUG");
  CHECK(rep.to_csv().find("uar") != std::string::npos);
}

TEST_CASE("hybrid dataset: counts, flags, scoping") {
  ToyDatasetParams params;
  params.n_classes = 2;
  params.n_per_class = 5;
  params.frames = 32;
  params.bands = 32;
  params.seed = 3;
  InMemoryFeatureStore store;
  auto manifest = generate_toy_dataset(params, store);

  auto specs = GanSpecs::for_input(32, 32, 0.125);
  Augmentor aug(specs.augmentor, 7);
  EpsilonDist dist;

  // multiplicity 4, scope all: 10 originals -> 50 items
  InMemoryFeatureStore out;
  auto hybrid = build_hybrid_dataset(manifest, aug, store, out, 4, AugmentScope::All,
                                     "", dist, 5);
  CHECK(hybrid.records.size() == 50);
  long synth = 0;
  for (const auto& r : hybrid.records) {
    CHECK(out.has(r.id));
    if (r.synthetic && r.id.find("__aug") != std::string::npos) {
      ++synth;
      auto mel = out.load(r.id);
      CHECK(mel.frames() == 32);  // augmented copies are segment sized
      CHECK(mel.normalized);
    }
  }
  CHECK(synth == 40);

  // multiplicity 0: originals only
  InMemoryFeatureStore out0;
  auto plain = build_hybrid_dataset(manifest, aug, store, out0, 0, AugmentScope::All,
                                    "", dist, 5);
  CHECK(plain.records.size() == 10);

  // language scoping: only target-language records receive copies
  auto two_lang = manifest;
  for (std::size_t i = 0; i < two_lang.records.size(); ++i)
    two_lang.records[i].language = i < 4 ? "tgt" : "src";
  InMemoryFeatureStore out2;
  auto scoped = build_hybrid_dataset(two_lang, aug, store, out2, 20,
                                     AugmentScope::TargetLanguage, "tgt", dist, 5);
  CHECK(scoped.records.size() == 10 + 4 * 20);
  for (const auto& r : scoped.records)
    if (r.id.find("__aug") != std::string::npos) CHECK(r.language == "tgt");

  CHECK_THROWS_AS(build_hybrid_dataset(manifest, aug, store, out0, -1,
                                       AugmentScope::All, "", dist, 5),
                  std::invalid_argument);
}

TEST_CASE("hybrid size formula over random multiplicities") {
  ToyDatasetParams params;
  params.n_classes = 2;
  params.n_per_class = 4;
  params.frames = 32;
  params.bands = 32;
  InMemoryFeatureStore store;
  auto manifest = generate_toy_dataset(params, store);
  auto specs = GanSpecs::for_input(32, 32, 0.125);
  Augmentor aug(specs.augmentor, 7);
  EpsilonDist dist;

  RngStream rng(63);
  for (int trial = 0; trial < 5; ++trial) {
    int mult = static_cast<int>(rng.uniform_int(4));
    InMemoryFeatureStore out;
    auto hybrid = build_hybrid_dataset(manifest, aug, store, out, mult,
                                       AugmentScope::All, "", dist, trial);
    CHECK(hybrid.records.size() ==
          manifest.records.size() + static_cast<std::size_t>(mult) * manifest.records.size());
  }
}

TEST_CASE("classifier trains to high accuracy on separable toy data") {
  ToyDatasetParams params;
  params.n_classes = 4;
  params.n_per_class = 6;
  params.frames = 32;
  params.bands = 32;
  params.seed = 9;
  InMemoryFeatureStore store;
  auto manifest = generate_toy_dataset(params, store);

  auto spec = small_spec(manifest.class_names(LabelKind::Emotion));
  Classifier clf(spec, 13);
  ClassifierTrainConfig cfg;
  cfg.learning_rate = 3e-3;
  cfg.batch_size = 8;
  cfg.max_epochs = 60;
  cfg.patience = 10;

  auto result = train_classifier(clf, manifest, store, LabelKind::Emotion, cfg, 17);

  CHECK(result.train_accuracy >= 0.95);
  REQUIRE(result.epoch_train_loss.size() >= 2);
  CHECK(result.epoch_train_loss.back() < result.epoch_train_loss.front());

  // determinism: a fresh classifier trained with the same seed matches
  Classifier clf2(spec, 13);
  auto result2 = train_classifier(clf2, manifest, store, LabelKind::Emotion, cfg, 17);
  auto pa = clf.parameters();
  auto pb = clf2.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i)
    CHECK(pa[i]->value.vec() == pb[i]->value.vec());

  // single-class data is rejected
  DatasetManifest single;
  for (const auto& r : manifest.records)
    if (r.emotion == "Angry") single.records.push_back(r);
  Classifier clf3(spec, 13);
  CHECK_THROWS_AS(train_classifier(clf3, single, store, LabelKind::Emotion, cfg, 17),
                  std::invalid_argument);
}

TEST_CASE("predict_utterance works end to end and rejects empty input") {
  ToyDatasetParams params;
  params.n_classes = 2;
  params.n_per_class = 6;
  params.frames = 48;  // longer than the 32-frame classifier input
  params.bands = 32;
  InMemoryFeatureStore store;
  auto manifest = generate_toy_dataset(params, store);

  auto spec = small_spec(manifest.class_names(LabelKind::Emotion));
  Classifier clf(spec, 3);
  ClassifierTrainConfig cfg;
  cfg.learning_rate = 3e-3;
  cfg.batch_size = 6;
  cfg.max_epochs = 20;
  cfg.patience = 6;
  train_classifier(clf, manifest, store, LabelKind::Emotion, cfg, 11);

  auto pred = predict_utterance(store.load(manifest.records[0].id), clf);
  CHECK(pred.segment_votes.size() == 2);  // (48-32)/16+1
  CHECK((pred.label == "Angry" || pred.label == "Sad"));

  CHECK_THROWS_AS(predict_utterance(MelSpectrogram{}, clf), std::invalid_argument);
}

TEST_CASE("vgg19 layout constructs with the documented shape") {
  ClassifierSpec spec;
  spec.arch = ClassifierSpec::Arch::Vgg19;
  spec.input_frames = 32;  // smallest multiple of 32
  spec.input_bands = 32;
  spec.class_names = {"a", "b"};
  Classifier clf(spec, 1);
  // 16 conv layers (2+2+4+4+4) and 3 fully connected layers
  std::size_t conv_params = 0, fc_params = 0;
  for (Parameter* p : clf.parameters()) {
    if (p->name.find(".conv") != std::string::npos) ++conv_params;
    if (p->name.find(".fc") != std::string::npos || p->name.find(".head") != std::string::npos)
      ++fc_params;
  }
  CHECK(conv_params == 32);  // 16 layers x (w, b)
  CHECK(fc_params == 6);     // 3 layers x (w, b)

  Tensor x({1, 1, 32, 32});
  for (std::size_t i = 0; i < x.numel(); ++i) x[i] = 0.3;
  auto probs = clf.predict_probs(x);
  CHECK(probs.shape() == std::vector<int>{1, 2});
  CHECK(probs[0] + probs[1] == doctest::Approx(1.0).epsilon(1e-9));
}
