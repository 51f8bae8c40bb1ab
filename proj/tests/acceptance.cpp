// Acceptance suite. Runs one pass/fail check per numbered criterion and
// prints a single line for each:
//
//   ./acceptance          run all criteria
//   ./acceptance 3        run only criterion 3
//
// The exit status is the number of failed criteria.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "oracles.hpp"
#include "sergan/classifier.hpp"
#include "sergan/dataset.hpp"
#include "sergan/losses.hpp"
#include "sergan/models.hpp"
#include "sergan/report.hpp"
#include "sergan/training.hpp"
#include "sergan/tsne.hpp"
#include "test_helpers.hpp"

using namespace sergan;

namespace {

// ----------------------------------------------------------------------------
// shared toy-scale experiment settings (criteria 6 and 7)
// ----------------------------------------------------------------------------

struct ToyScale {
  int frames = 64;
  int bands = 128;
  double width_mult = 0.125;
  int batch_size = 8;
  double gan_lr = 1e-3;
  long gan_cycles = 2000;
  int n_seeds = 3;
};

ToyDatasetParams toy_params(const ToyScale& s, std::uint64_t seed) {
  ToyDatasetParams p;
  p.n_classes = 4;
  p.n_per_class = 25;
  p.frames = s.frames;
  p.bands = s.bands;
  p.seed = seed;
  return p;
}

TrainerOptions trainer_options(bool use_var, bool use_bal) {
  TrainerOptions o;
  o.use_var_phase = use_var;
  o.use_bal_loss = use_bal;
  return o;
}

OptimizerConfig gan_optimizer(const ToyScale& s) {
  OptimizerConfig cfg;
  cfg.learning_rate = s.gan_lr;
  cfg.batch_size = s.batch_size;
  cfg.total_iterations = s.gan_cycles;
  return cfg;
}

// Runs jobs on two workers; each job owns all of its state.
void run_parallel(std::vector<std::function<void()>> jobs) {
  std::size_t next = 0;
  std::mutex mu;
  auto worker = [&]() {
    for (;;) {
      std::size_t mine;
      {
        std::lock_guard<std::mutex> lock(mu);
        if (next >= jobs.size()) return;
        mine = next++;
      }
      jobs[mine]();
    }
  };
  std::thread a(worker), b(worker);
  a.join();
  b.join();
}

bool close_abs(double a, double b, double tol = 1e-6) { return std::abs(a - b) <= tol; }

// ----------------------------------------------------------------------------
// criterion 1: loss oracle suite
// ----------------------------------------------------------------------------

bool criterion1(std::string& detail) {
  std::ostringstream why;

  // hand-computed example values
  std::vector<double> x{0.5, -1.5, 2.0}, a{1.0, 2.0}, b{0.0, 0.0};
  bool ok = close_abs(l1_distance(x, x), 0.0) && close_abs(l1_distance(a, b), 3.0);

  std::vector<double> rA{0.0}, rP{5.0}, rN{3.0};
  ok = ok && close_abs(triplet_loss(rA, rP, rN, 7.0), 9.0);
  std::vector<double> rP2{0.0}, rN2{10.0};
  ok = ok && close_abs(triplet_loss(rA, rP2, rN2, 7.0), 0.0);
  std::vector<double> rP3{2.0}, rN3{9.0};
  ok = ok && close_abs(triplet_loss(rA, rP3, rN3, 7.0), 0.0);

  auto [d_half, g_half] = gan_losses({0.5}, {0.5});
  ok = ok && close_abs(d_half, 2.0 * std::log(2.0)) && close_abs(g_half, std::log(2.0));
  auto [d_limit, g_limit] = gan_losses({1.0 - 1e-12}, {1e-12});
  (void)g_limit;
  ok = ok && close_abs(d_limit, 0.0, 1e-6);

  std::vector<double> r{1.0, 2.0, -3.0}, nr{-1.0, -2.0, 3.0}, e1{1.0, 0.0}, e2{0.0, 4.0};
  ok = ok && close_abs(var_loss(r, r), 1.0) && close_abs(var_loss(e1, e2), 0.0) &&
       close_abs(var_loss(r, nr), -1.0);

  LossWeights w;
  auto [model, total] = combine_losses({1, 2, 3, 4, 5}, w);
  ok = ok && close_abs(model, 33.0) && close_abs(total, 77.0);
  LossWeights zero;
  zero.w_g = zero.w_r = zero.w_e = zero.w_v = zero.w_b = 0.0;
  auto [m0, t0] = combine_losses({1, 2, 3, 4, 5}, zero);
  ok = ok && close_abs(m0, 0.0) && close_abs(t0, 0.0);
  auto [m2, t2] = combine_losses({2, 4, 6, 8, 10}, w);
  ok = ok && close_abs(m2, 2 * model) && close_abs(t2, 2 * total);
  if (!ok) {
    detail = "hand-computed loss examples disagree";
    return false;
  }

  // gradients vs central differences, 100 random small inputs per loss
  RngStream rng(404);
  const int dim = 6;
  long max_checked = 0;
  auto check_grad = [&](const char* name, auto&& value_fn, auto&& tape_fn,
                        auto&& sample_fn) -> bool {
    int accepted = 0;
    long attempts = 0;
    while (accepted < 100 && attempts < 100000) {
      ++attempts;
      auto inputs = sample_fn();
      if (inputs.empty()) continue;

      std::vector<Parameter> params;
      for (std::size_t i = 0; i < inputs.size(); ++i)
        params.emplace_back("in" + std::to_string(i),
                            Tensor({1, static_cast<int>(inputs[i].size())}, inputs[i]));
      Tape t;
      std::vector<Var> leaves;
      for (auto& p : params) leaves.push_back(t.param(p, true));
      Var loss = tape_fn(t, leaves);
      if (!std::isfinite(t.scalar(loss))) continue;
      t.backward(loss);

      bool all_match = true;
      for (std::size_t i = 0; i < inputs.size(); ++i) {
        auto fd = oracles::fd_gradient(
            [&](const std::vector<double>& v) {
              auto probe = inputs;
              probe[i] = v;
              return value_fn(probe);
            },
            inputs[i]);
        for (std::size_t k = 0; k < fd.size(); ++k)
          if (oracles::rel_err(fd[k], params[i].grad[k]) >= 1e-4) all_match = false;
      }
      if (!all_match) {
        why << name << ": gradient mismatch on input " << accepted << "; ";
        return false;
      }
      ++accepted;
      ++max_checked;
    }
    if (accepted < 100) {
      why << name << ": only " << accepted << " usable random inputs; ";
      return false;
    }
    return true;
  };

  // away-from-kink sampler for absolute-value based losses
  auto sample_sep = [&](int n_vecs) {
    return [&rng, n_vecs]() {
      std::vector<std::vector<double>> out(static_cast<std::size_t>(n_vecs));
      for (auto& v : out) {
        v.resize(dim);
        for (auto& c : v) {
          double m = rng.uniform(0.15, 1.0);
          c = rng.uniform() < 0.5 ? m : -m;
        }
      }
      // reject coordinate pairs too close for the finite-difference step
      for (std::size_t i = 0; i < out.size(); ++i)
        for (std::size_t j = i + 1; j < out.size(); ++j)
          for (int k = 0; k < dim; ++k)
            if (std::abs(out[i][static_cast<std::size_t>(k)] -
                         out[j][static_cast<std::size_t>(k)]) < 1e-3)
              return std::vector<std::vector<double>>{};
      return out;
    };
  };

  ok = check_grad(
      "l1_distance", [](const auto& in) { return l1_distance(in[0], in[1]); },
      [](Tape& t, const std::vector<Var>& v) {
        return t.mean_all(t.l1_dist_rows(v[0], v[1]));
      },
      sample_sep(2));

  double beta = 2.0;
  ok = ok && check_grad(
                 "triplet_loss",
                 [&](const auto& in) { return triplet_loss(in[0], in[1], in[2], beta); },
                 [&](Tape& t, const std::vector<Var>& v) {
                   return triplet_loss_rows(t, v[0], v[1], v[2], beta);
                 },
                 [&]() {
                   auto s = sample_sep(3)();
                   if (s.empty()) return s;
                   // keep the hinge comfortably away from its corner
                   double margin = l1_distance(s[0], s[1]) - l1_distance(s[0], s[2]) + beta;
                   if (std::abs(margin) < 1e-2) return std::vector<std::vector<double>>{};
                   return s;
                 });

  ok = ok && check_grad(
                 "var_loss", [](const auto& in) { return var_loss(in[0], in[1]); },
                 [](Tape& t, const std::vector<Var>& v) {
                   return var_loss_rows(t, v[0], v[1], true);
                 },
                 [&]() {
                   std::vector<std::vector<double>> out(2);
                   for (auto& v : out) {
                     v.resize(dim);
                     for (auto& c : v) c = rng.uniform(-1.0, 1.0);
                     double norm = 0.0;
                     for (double c : v) norm += c * c;
                     if (norm < 0.1) return std::vector<std::vector<double>>{};
                   }
                   return out;
                 });

  auto sigmoid = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  ok = ok && check_grad(
                 "gan_d_loss",
                 [&](const auto& in) {
                   return gan_losses({sigmoid(in[0][0])}, {sigmoid(in[1][0])}).first;
                 },
                 [](Tape& t, const std::vector<Var>& v) {
                   return gan_d_loss_from_logits(t, v[0], v[1]);
                 },
                 [&]() {
                   std::vector<std::vector<double>> out(2);
                   for (auto& v : out) v = {rng.uniform(-3.0, 3.0)};
                   return out;
                 });

  ok = ok && check_grad(
                 "gan_g_loss",
                 [&](const auto& in) { return gan_losses({0.5}, {sigmoid(in[0][0])}).second; },
                 [](Tape& t, const std::vector<Var>& v) {
                   return gan_g_loss_from_logits(t, v[0]);
                 },
                 [&]() {
                   std::vector<std::vector<double>> out(1);
                   out[0] = {rng.uniform(-3.0, 3.0)};
                   return out;
                 });

  // combine_losses is linear: its gradient wrt each component is the weight
  for (int i = 0; i < 100 && ok; ++i) {
    LossWeights lw;
    lw.w_g = rng.uniform(0.0, 2.0);
    lw.w_r = rng.uniform(0.0, 2.0);
    lw.w_e = rng.uniform(0.0, 12.0);
    lw.w_v = rng.uniform(0.0, 2.0);
    lw.w_b = rng.uniform(0.0, 9.0);
    LossComponents c{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1),
                     rng.uniform(-1, 1), rng.uniform(-1, 1)};
    auto f = [&](double LossComponents::*field, double weight) {
      auto cp = c;
      double h = 1e-6;
      cp.*field = c.*field + h;
      double up = combine_losses(cp, lw).second;
      cp.*field = c.*field - h;
      double dn = combine_losses(cp, lw).second;
      return oracles::rel_err((up - dn) / (2 * h), weight) < 1e-4;
    };
    ok = f(&LossComponents::gan_g, lw.w_g) && f(&LossComponents::rep, lw.w_r) &&
         f(&LossComponents::emo, lw.w_e) && f(&LossComponents::var, lw.w_v) &&
         f(&LossComponents::bal, lw.w_b);
    if (!ok) why << "combine_losses: weight gradient mismatch; ";
  }

  detail = ok ? "examples to 1e-6, gradients vs central differences on 100 inputs per loss"
              : why.str();
  return ok;
}

// ----------------------------------------------------------------------------
// criterion 2: perturbation budget invariant
// ----------------------------------------------------------------------------

bool criterion2(std::string& detail) {
  RngStream rng(405);

  // projection norm identity on 1000 random perturbations
  for (int trial = 0; trial < 1000; ++trial) {
    Tensor p({6, 9});
    for (std::size_t i = 0; i < p.numel(); ++i) p[i] = rng.uniform(-2.0, 2.0);
    double eps = rng.uniform(0.05, 0.3);
    auto out = project_l1(p, eps);
    double norm = 0.0;
    for (std::size_t i = 0; i < out.numel(); ++i) norm += std::abs(out[i]);
    double target = eps * static_cast<double>(p.numel());
    if (std::abs(norm - target) / target >= 1e-5) {
      detail = "projection norm identity violated";
      return false;
    }
  }

  // budget bound through the full augmentation path, 1000 random (X, eps)
  auto specs = GanSpecs::for_input(32, 32, 0.125);
  Augmentor aug(specs.augmentor, 406);
  EpsilonDist dist;
  RngStream noise(407), eps_stream(408), data(409);
  for (int trial = 0; trial < 1000; ++trial) {
    MelSpectrogram x;
    x.config.n_mels = 32;
    x.normalized = true;
    x.values = Tensor({32, 32});
    for (std::size_t i = 0; i < x.values.numel(); ++i) x.values[i] = data.uniform();
    auto res = aug.augment(x, noise, eps_stream, dist);
    double l1 = 0.0;
    for (std::size_t i = 0; i < x.values.numel(); ++i)
      l1 += std::abs(res.x_hat.values[i] - x.values[i]);
    double numel = static_cast<double>(x.values.numel());
    if (l1 > res.epsilon * numel + 1e-5 * numel) {
      detail = "budget bound violated: ||x_hat - x||_1 = " + std::to_string(l1);
      return false;
    }
  }
  detail = "1000 projections + 1000 augment calls within budget";
  return true;
}

// ----------------------------------------------------------------------------
// criterion 3: freeze / phase contract
// ----------------------------------------------------------------------------

using Snapshot = std::map<std::string, DVec>;

Snapshot snapshot_params(ModelBundle& b) {
  Snapshot s;
  for (Module* m : b.modules())
    for (Parameter* p : m->parameters()) s[p->name] = p->value.vec();
  return s;
}

bool criterion3(std::string& detail) {
  ToyDatasetParams params;
  params.n_classes = 4;
  params.n_per_class = 4;
  params.frames = 32;
  params.bands = 32;
  params.seed = 410;
  InMemoryFeatureStore store;
  auto manifest = generate_toy_dataset(params, store);

  auto specs = GanSpecs::for_input(32, 32, 0.125);
  auto bundle = make_bundle(specs, 411);
  OptimizerConfig cfg;
  cfg.learning_rate = 1e-3;
  cfg.batch_size = 4;
  Trainer trainer(bundle, cfg, TrainerOptions{}, 412);

  const std::map<int, std::set<std::string>> designated{{1, {"representation"}},
                                                        {2, {"discriminator"}},
                                                        {3, {"augmentor"}},
                                                        {4, {"augmentor"}}};
  RngStream batch_rng(413);
  for (int cycle = 0; cycle < 50; ++cycle) {
    for (int phase = 1; phase <= 4; ++phase) {
      auto batch = sample_triplet_batch(manifest, 4, batch_rng, store, 32);
      auto before = snapshot_params(bundle);
      trainer.run_phase(phase, batch);
      auto after = snapshot_params(bundle);

      std::set<std::string> changed;
      for (const auto& [name, vals] : before)
        if (after.at(name) != vals) changed.insert(name.substr(0, name.find('.')));
      if (changed != designated.at(phase)) {
        std::string got;
        for (const auto& c : changed) got += c + " ";
        detail = "cycle " + std::to_string(cycle) + " phase " + std::to_string(phase) +
                 ": changed modules [" + got + "]";
        return false;
      }
    }
  }
  detail = "50 cycles x 4 phases, bit-level parameter comparison";
  return true;
}

// ----------------------------------------------------------------------------
// criterion 4: determinism and checkpoint resume
// ----------------------------------------------------------------------------

bool criterion4(std::string& detail) {
  namespace fs = std::filesystem;
  ToyDatasetParams params;
  params.n_classes = 4;
  params.n_per_class = 4;
  params.frames = 32;
  params.bands = 32;
  params.seed = 414;
  InMemoryFeatureStore store;
  auto manifest = generate_toy_dataset(params, store);

  auto specs = GanSpecs::for_input(32, 32, 0.125);
  OptimizerConfig cfg;
  cfg.learning_rate = 1e-3;
  cfg.batch_size = 4;

  auto collect = [](Trainer& t) {
    std::vector<double> out;
    for (const auto& rec : t.history()) {
      out.push_back(rec.total);
      out.push_back(rec.model);
      out.push_back(rec.phases.rep);
      out.push_back(rec.phases.d);
      out.push_back(rec.phases.var);
    }
    return out;
  };

  // identical seeds, identical histories
  std::vector<double> first, second;
  for (int run = 0; run < 2; ++run) {
    auto bundle = make_bundle(specs, 415);
    Trainer trainer(bundle, cfg, TrainerOptions{}, 416);
    train_cycles(trainer, manifest, store, 20);
    (run == 0 ? first : second) = collect(trainer);
  }
  if (first != second) {
    detail = "identical seeds produced different loss histories";
    return false;
  }

  // 10 + checkpoint + 10 matches 20 straight within 1e-7
  fs::path ckpt = fs::temp_directory_path() / "sergan_acceptance_resume.ckpt";
  std::vector<double> split;
  {
    auto bundle = make_bundle(specs, 415);
    Trainer trainer(bundle, cfg, TrainerOptions{}, 416);
    train_cycles(trainer, manifest, store, 10);
    trainer.save_checkpoint(ckpt.string(), "acceptance");
  }
  {
    auto bundle = make_bundle(specs, 999);
    Trainer trainer(bundle, cfg, TrainerOptions{}, 999);
    trainer.load_checkpoint(ckpt.string());
    train_cycles(trainer, manifest, store, 10);
    split = collect(trainer);
  }
  fs::remove(ckpt);
  if (split.size() != first.size()) {
    detail = "resumed run recorded a different history length";
    return false;
  }
  for (std::size_t i = 0; i < first.size(); ++i)
    if (std::abs(first[i] - split[i]) > 1e-7 * std::max(1.0, std::abs(first[i]))) {
      detail = "resumed losses diverge at entry " + std::to_string(i);
      return false;
    }
  detail = "20-cycle straight run == 10+10 resume to 1e-7; seed determinism holds";
  return true;
}

// ----------------------------------------------------------------------------
// criterion 5: dataset property tests
// ----------------------------------------------------------------------------

bool criterion5(std::string& detail) {
  RngStream rng(417);

  // imbalance simulation, 500 cases
  for (int trial = 0; trial < 500; ++trial) {
    auto m = test_helpers::make_random_manifest(
        10 + static_cast<int>(rng.uniform_int(120)), 4, 4, rng);
    std::string prot = toy_class_name(static_cast<int>(rng.uniform_int(4)));
    auto counts = m.class_counts(LabelKind::Emotion);
    if (!counts.count(prot)) continue;
    double keep = 0.05 + 0.9 * rng.uniform();
    std::uint64_t seed = rng.uniform_int(10000);
    auto red = simulate_imbalance(m, keep, prot, seed);

    std::multiset<std::string> prot_before, prot_after;
    for (const auto& r : m.records)
      if (r.emotion == prot) prot_before.insert(r.id);
    for (const auto& r : red.records)
      if (r.emotion == prot) prot_after.insert(r.id);
    if (prot_before != prot_after) {
      detail = "imbalance simulation touched the protected class";
      return false;
    }
    auto after = red.class_counts(LabelKind::Emotion);
    for (const auto& [cls, n] : counts) {
      long expect = cls == prot ? n : std::max<long>(1, std::lround(keep * n));
      if (after[cls] != expect) {
        detail = "imbalance count rule violated for " + cls;
        return false;
      }
    }
  }

  // session folds partition, 500 cases
  for (int trial = 0; trial < 500; ++trial) {
    int n_sessions = 2 + static_cast<int>(rng.uniform_int(6));
    auto m = test_helpers::make_random_manifest(
        n_sessions * 2 + static_cast<int>(rng.uniform_int(80)), 3, n_sessions, rng);
    std::set<std::string> sessions;
    for (const auto& r : m.records) sessions.insert(r.session);
    auto folds = make_session_folds(m);
    if (folds.size() != sessions.size()) {
      detail = "fold count != session count";
      return false;
    }
    std::multiset<std::string> test_union, all;
    for (const auto& r : m.records) all.insert(r.id);
    for (const auto& [train, test] : folds) {
      for (const auto& r : test.records) test_union.insert(r.id);
      if (train.records.size() + test.records.size() != m.records.size()) {
        detail = "fold does not partition the manifest";
        return false;
      }
    }
    if (test_union != all) {
      detail = "test folds are not a disjoint exhaustive partition";
      return false;
    }
  }

  // stratified split, 500 cases
  for (int trial = 0; trial < 500; ++trial) {
    auto m = test_helpers::make_random_manifest(
        20 + static_cast<int>(rng.uniform_int(150)), 4, 3, rng);
    double ef = 0.05 + 0.4 * rng.uniform();
    double tf = 0.05 + 0.4 * rng.uniform();
    auto [train, eval] = split_target_language(m, ef, tf, rng.uniform_int(10000));
    std::set<std::string> ti, ei;
    for (const auto& r : train.records) ti.insert(r.id);
    for (const auto& r : eval.records) ei.insert(r.id);
    for (const auto& id : ti)
      if (ei.count(id)) {
        detail = "split outputs overlap";
        return false;
      }
    auto full = m.class_counts(LabelKind::Valence);
    auto ec = eval.class_counts(LabelKind::Valence);
    for (const auto& [cls, n] : full) {
      double exact = ef * n;
      if (ec[cls] < std::floor(exact) - 1 || ec[cls] > std::ceil(exact) + 1) {
        detail = "stratification beyond +-1 for " + cls;
        return false;
      }
    }
  }

  // triplet label invariants, 500 batches over identifiable spectrograms
  for (int trial = 0; trial < 500; ++trial) {
    auto m = test_helpers::make_random_manifest(
        8 + static_cast<int>(rng.uniform_int(40)), 2 + static_cast<int>(rng.uniform_int(3)),
        3, rng);
    auto counts = m.class_counts(LabelKind::Emotion);
    bool any_pair = false;
    for (const auto& [c, n] : counts) any_pair |= n >= 2;
    if (counts.size() < 2 || !any_pair) continue;

    InMemoryFeatureStore store;
    std::map<double, std::string> tag_to_label;
    std::map<double, std::string> tag_to_id;
    for (std::size_t i = 0; i < m.records.size(); ++i) {
      MelSpectrogram mel;
      mel.config.n_mels = 4;
      mel.normalized = true;
      mel.values = Tensor({4, 4});
      mel.values.fill(static_cast<double>(i + 1) / 1000.0);
      tag_to_label[mel.values[0]] = label_of(m.records[i], LabelKind::Emotion);
      tag_to_id[mel.values[0]] = m.records[i].id;
      store.save(m.records[i].id, std::move(mel));
    }
    std::uint64_t seed = rng.uniform_int(10000);
    auto batch = sample_triplet_batch(m, 4, seed, store, 4);
    auto batch2 = sample_triplet_batch(m, 4, seed, store, 4);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      auto la = tag_to_label.at(batch.anchors[i].values[0]);
      auto lp = tag_to_label.at(batch.positives[i].values[0]);
      auto ln = tag_to_label.at(batch.negatives[i].values[0]);
      if (la != lp || la == ln || la != batch.labels[i]) {
        detail = "triplet label invariant violated";
        return false;
      }
      if (tag_to_id.at(batch.anchors[i].values[0]) ==
          tag_to_id.at(batch.positives[i].values[0])) {
        detail = "anchor and positive are the same record";
        return false;
      }
      if (batch.anchors[i].values[0] != batch2.anchors[i].values[0]) {
        detail = "triplet sampling is not deterministic under the seed";
        return false;
      }
    }
  }

  detail = "imbalance, folds, stratified split, triplets: 500 randomized cases each";
  return true;
}

// ----------------------------------------------------------------------------
// criteria 6 and 7: toy-scale trend reproduction
// ----------------------------------------------------------------------------

struct TrainedRun {
  ModelBundle bundle;
  DatasetManifest train_manifest;
};

// Trains one augmentor variant on the given manifest.
TrainedRun train_variant(const ToyScale& scale, const DatasetManifest& train,
                         const FeatureProvider& store, bool use_var, bool use_bal,
                         std::uint64_t seed) {
  auto specs = GanSpecs::for_input(scale.frames, scale.bands, scale.width_mult);
  TrainedRun run{make_bundle(specs, derive_seed(seed, 1)), train};
  Trainer trainer(run.bundle, gan_optimizer(scale), trainer_options(use_var, use_bal),
                  derive_seed(seed, 2));
  train_cycles(trainer, train, store, scale.gan_cycles);
  return run;
}

// Silhouette of augmented-sample representations, class labels as clusters.
double augmented_silhouette(const ToyScale& scale, TrainedRun& run,
                            const FeatureProvider& store, std::uint64_t seed) {
  RngStream noise(derive_seed(seed, 3)), eps(derive_seed(seed, 4));
  EpsilonDist dist;
  std::vector<Tensor> reps;
  std::vector<int> labels;
  std::map<std::string, int> class_ids;
  for (const auto& rec : run.train_manifest.records) {
    auto mel = store.load(rec.id);
    auto seg = segment_mel(mel, scale.frames, scale.frames).front();
    auto label_it = class_ids.emplace(rec.emotion, static_cast<int>(class_ids.size())).first;
    for (int k = 0; k < 3; ++k) {
      auto res = run.bundle.augmentor->augment(seg, noise, eps, dist);
      reps.push_back(Tensor({1, kRepresentationDim},
                            run.bundle.representation->represent(res.x_hat)));
      labels.push_back(label_it->second);
    }
  }
  Tensor all({static_cast<int>(reps.size()), kRepresentationDim});
  for (std::size_t i = 0; i < reps.size(); ++i)
    std::copy_n(reps[i].data(), kRepresentationDim,
                all.data() + i * static_cast<std::size_t>(kRepresentationDim));
  return silhouette_score(all, labels);
}

bool criterion6(std::string& detail) {
  ToyScale scale;
  double mean_with = 0.0, mean_without = 0.0;
  std::vector<double> with_bal(static_cast<std::size_t>(scale.n_seeds));
  std::vector<double> without_bal(static_cast<std::size_t>(scale.n_seeds));

  std::vector<std::function<void()>> jobs;
  for (int s = 0; s < scale.n_seeds; ++s) {
    for (int variant = 0; variant < 2; ++variant) {
      jobs.push_back([&, s, variant]() {
        std::uint64_t seed = 4200 + static_cast<std::uint64_t>(s);
        InMemoryFeatureStore store;
        auto manifest = generate_toy_dataset(toy_params(scale, derive_seed(seed, 10)), store);
        bool use_bal = variant == 1;
        auto run = train_variant(scale, manifest, store, /*use_var=*/true, use_bal,
                                 derive_seed(seed, 20 + static_cast<std::uint64_t>(variant)));
        double sil = augmented_silhouette(scale, run, store, derive_seed(seed, 30));
        (use_bal ? with_bal : without_bal)[static_cast<std::size_t>(s)] = sil;
      });
    }
  }
  run_parallel(std::move(jobs));

  std::ostringstream summary;
  summary.precision(4);
  for (int s = 0; s < scale.n_seeds; ++s) {
    mean_with += with_bal[static_cast<std::size_t>(s)] / scale.n_seeds;
    mean_without += without_bal[static_cast<std::size_t>(s)] / scale.n_seeds;
    summary << "seed" << s << " bal=" << with_bal[static_cast<std::size_t>(s)]
            << " nobal=" << without_bal[static_cast<std::size_t>(s)] << " ";
  }
  summary << "| mean bal=" << mean_with << " nobal=" << mean_without;
  detail = summary.str();
  return mean_with > mean_without;
}

// Full imbalanced toy protocol for one augmentor variant; returns the UAR.
double ablation_uar(const ToyScale& scale, bool use_var, bool use_bal,
                    std::uint64_t seed) {
  InMemoryFeatureStore store;
  auto manifest = generate_toy_dataset(toy_params(scale, derive_seed(seed, 10)), store);

  auto folds = make_session_folds(manifest);
  auto& [fold_train, fold_test] = folds[0];
  auto reduced = simulate_imbalance(fold_train, 0.2, toy_class_name(0),
                                    derive_seed(seed, 11));

  auto run = train_variant(scale, reduced, store, use_var, use_bal, derive_seed(seed, 12));

  InMemoryFeatureStore hybrid_store;
  EpsilonDist dist;
  auto hybrid = build_hybrid_dataset(reduced, *run.bundle.augmentor, store, hybrid_store,
                                     4, AugmentScope::All, "", dist, derive_seed(seed, 13));

  ClassifierSpec spec;
  spec.arch = ClassifierSpec::Arch::Small4;
  spec.input_frames = scale.frames;
  spec.input_bands = scale.bands;
  spec.class_names = hybrid.class_names(LabelKind::Emotion);
  spec.small_channels = {4, 8, 16, 32};
  spec.eval_hop = scale.frames / 2;
  Classifier clf(spec, derive_seed(seed, 14));

  ClassifierTrainConfig cfg;
  cfg.learning_rate = 1e-3;
  cfg.batch_size = 16;
  cfg.max_epochs = 40;
  cfg.min_epochs = 12;
  cfg.patience = 8;
  train_classifier(clf, hybrid, hybrid_store, LabelKind::Emotion, cfg,
                   derive_seed(seed, 15));

  std::vector<std::pair<std::string, std::string>> pairs;
  for (const auto& r : fold_test.records)
    pairs.emplace_back(r.emotion, predict_utterance(store.load(r.id), clf).label);
  return compute_uar(pairs).uar;
}

bool criterion7(std::string& detail) {
  ToyScale scale;
  // variants: {L_Model, L_Model+L_VAR, L_Total}
  const std::vector<std::pair<bool, bool>> variants{{false, false}, {true, false}, {true, true}};
  std::vector<std::vector<double>> uars(3, std::vector<double>(static_cast<std::size_t>(scale.n_seeds)));

  std::vector<std::function<void()>> jobs;
  for (int s = 0; s < scale.n_seeds; ++s)
    for (std::size_t v = 0; v < variants.size(); ++v)
      jobs.push_back([&, s, v]() {
        uars[v][static_cast<std::size_t>(s)] =
            ablation_uar(scale, variants[v].first, variants[v].second,
                         4300 + static_cast<std::uint64_t>(s));
      });
  run_parallel(std::move(jobs));

  double mean_model = 0.0, mean_var = 0.0, mean_total = 0.0;
  std::ostringstream summary;
  summary.precision(4);
  for (int s = 0; s < scale.n_seeds; ++s) {
    mean_model += uars[0][static_cast<std::size_t>(s)] / scale.n_seeds;
    mean_var += uars[1][static_cast<std::size_t>(s)] / scale.n_seeds;
    mean_total += uars[2][static_cast<std::size_t>(s)] / scale.n_seeds;
    summary << "seed" << s << " model=" << uars[0][static_cast<std::size_t>(s)]
            << " model+var=" << uars[1][static_cast<std::size_t>(s)]
            << " total=" << uars[2][static_cast<std::size_t>(s)] << " ";
  }
  summary << "| means model=" << mean_model << " model+var=" << mean_var
          << " total=" << mean_total;
  detail = summary.str();
  return mean_var < mean_total && mean_model <= mean_total;
}

// ----------------------------------------------------------------------------
// criterion 8: UAR metric vs brute force
// ----------------------------------------------------------------------------

bool criterion8(std::string& detail) {
  RngStream rng(418);
  for (int trial = 0; trial < 1000; ++trial) {
    int n_classes = 2 + static_cast<int>(rng.uniform_int(5));
    int n = 4 + static_cast<int>(rng.uniform_int(80));
    std::vector<std::pair<std::string, std::string>> pairs;
    for (int i = 0; i < n; ++i)
      pairs.emplace_back("c" + std::to_string(rng.uniform_int(static_cast<std::uint64_t>(n_classes))),
                         "c" + std::to_string(rng.uniform_int(static_cast<std::uint64_t>(n_classes))));
    auto rep = compute_uar(pairs);
    double brute = oracles::brute_force_uar(pairs);
    if (rep.uar != brute) {
      detail = "UAR " + std::to_string(rep.uar) + " != brute force " + std::to_string(brute);
      return false;
    }

    // class-size rescaling invariance: duplicate one class's samples k times
    std::string cls = pairs[0].first;
    int k = 1 + static_cast<int>(rng.uniform_int(4));
    auto scaled = pairs;
    for (const auto& [ref, pred] : pairs)
      if (ref == cls)
        for (int j = 0; j < k; ++j) scaled.emplace_back(ref, pred);
    if (std::abs(compute_uar(scaled).uar - rep.uar) > 1e-12) {
      detail = "UAR changed under class-size rescaling";
      return false;
    }
  }
  detail = "1000 random confusion configurations, exact match + rescaling invariance";
  return true;
}

}  // namespace

int main(int argc, char** argv) {
  struct Criterion {
    int number;
    const char* name;
    std::function<bool(std::string&)> fn;
  };
  const std::vector<Criterion> criteria{
      {1, "loss oracle suite", criterion1},
      {2, "perturbation budget invariant", criterion2},
      {3, "freeze/phase contract", criterion3},
      {4, "determinism and checkpoint resume", criterion4},
      {5, "dataset property tests", criterion5},
      {6, "silhouette trend with vs without the balance loss", criterion6},
      {7, "ablation UAR ordering on the imbalanced toy protocol", criterion7},
      {8, "UAR metric vs brute force", criterion8},
  };

  int only = argc > 1 ? std::atoi(argv[1]) : 0;
  int failures = 0;
  for (const auto& c : criteria) {
    if (only != 0 && c.number != only) continue;
    auto start = std::chrono::steady_clock::now();
    std::string detail;
    bool ok = false;
    try {
      ok = c.fn(detail);
    } catch (const std::exception& e) {
      detail = std::string("exception: ") + e.what();
    }
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("criterion %d [%s] %s (%.1fs) %s\n", c.number, ok ? "PASS" : "FAIL",
                c.name, secs, detail.c_str());
    std::fflush(stdout);
    if (!ok) ++failures;
  }
  return failures;
}
