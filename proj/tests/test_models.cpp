#include <cmath>
#include <set>

#include "doctest.h"
#include "sergan/models.hpp"

using namespace sergan;

namespace {

// Tiny geometry that still satisfies every divisibility requirement.
GanSpecs tiny_specs() {
  GanSpecs s = GanSpecs::for_input(32, 32, 0.125);  // widths 4/8/16
  return s;
}

MelSpectrogram random_mel(int frames, int bands, RngStream& rng) {
  MelSpectrogram mel;
  mel.config.n_mels = bands;
  mel.normalized = true;
  mel.values = Tensor({frames, bands});
  for (std::size_t i = 0; i < mel.values.numel(); ++i) mel.values[i] = rng.uniform();
  return mel;
}

}  // namespace

TEST_CASE("epsilon distribution") {
  EpsilonDist dist;  // U(0.05, 0.3)
  RngStream rng(51);
  double sum = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    double e = dist.sample(rng);
    REQUIRE(e >= 0.05);
    REQUIRE(e <= 0.3);
    sum += e;
  }
  CHECK(sum / n == doctest::Approx(0.175).epsilon(0.005 / 0.175));

  // fixed seed reproduces the draw sequence
  RngStream a(7), b(7);
  for (int i = 0; i < 100; ++i) CHECK(dist.sample(a) == dist.sample(b));

  EpsilonDist bad{0.3, 0.05};
  RngStream r2(1);
  CHECK_THROWS_AS(bad.sample(r2), std::invalid_argument);
}

TEST_CASE("project_l1") {
  // all ones at eps 0.1: every element becomes 0.1
  Tensor ones({4, 5});
  ones.fill(1.0);
  auto d = project_l1(ones, 0.1);
  for (std::size_t i = 0; i < d.numel(); ++i) CHECK(d[i] == doctest::Approx(0.1).epsilon(1e-12));

  // zero perturbation stays zero
  Tensor z({3, 3});
  auto dz = project_l1(z, 0.2);
  for (std::size_t i = 0; i < dz.numel(); ++i) CHECK(dz[i] == 0.0);

  // norm identity on random inputs
  RngStream rng(52);
  for (int trial = 0; trial < 100; ++trial) {
    Tensor p({8, 8});
    for (std::size_t i = 0; i < p.numel(); ++i) p[i] = rng.uniform(-2.0, 2.0);
    double eps = rng.uniform(0.05, 0.3);
    auto out = project_l1(p, eps);
    double norm = 0.0;
    for (std::size_t i = 0; i < out.numel(); ++i) norm += std::abs(out[i]);
    double target = eps * static_cast<double>(p.numel());
    CHECK(std::abs(norm - target) / target < 1e-5);
  }
}

TEST_CASE("augment: shape, budget, noise dependence, validation") {
  auto specs = tiny_specs();
  Augmentor aug(specs.augmentor, 99);
  EpsilonDist dist;
  RngStream noise(1), eps(2), data(3);

  auto x = random_mel(32, 32, data);
  auto res = aug.augment(x, noise, eps, dist);

  CHECK(res.x_hat.frames() == 32);
  CHECK(res.x_hat.bands() == 32);
  CHECK(res.x_hat.normalized);
  CHECK(res.epsilon >= 0.05);
  CHECK(res.epsilon <= 0.3);

  // clamping only shrinks the perturbation: ||x_hat - x||_1 <= eps * numel
  double l1 = 0.0;
  for (std::size_t i = 0; i < x.values.numel(); ++i) {
    CHECK(res.x_hat.values[i] >= 0.0);
    CHECK(res.x_hat.values[i] <= 1.0);
    l1 += std::abs(res.x_hat.values[i] - x.values[i]);
  }
  CHECK(l1 <= res.epsilon * static_cast<double>(x.values.numel()) + 1e-9);

  // fresh rng state produces a different augmentation
  auto res2 = aug.augment(x, noise, eps, dist);
  bool any_diff = false;
  for (std::size_t i = 0; i < x.values.numel(); ++i)
    any_diff |= res.x_hat.values[i] != res2.x_hat.values[i];
  CHECK(any_diff);

  // unnormalized input is rejected
  auto raw = x;
  raw.normalized = false;
  CHECK_THROWS_WITH_AS(aug.augment(raw, noise, eps, dist),
                       doctest::Contains("not normalized"), std::invalid_argument);

  // wrong geometry is rejected
  auto wrong = random_mel(64, 32, data);
  CHECK_THROWS_AS(aug.augment(wrong, noise, eps, dist), std::invalid_argument);
}

TEST_CASE("budget invariant over random inputs") {
  auto specs = tiny_specs();
  Augmentor aug(specs.augmentor, 5);
  EpsilonDist dist;
  RngStream noise(11), eps(12), data(13);
  for (int trial = 0; trial < 25; ++trial) {
    auto x = random_mel(32, 32, data);
    auto res = aug.augment(x, noise, eps, dist);
    double l1 = 0.0;
    for (std::size_t i = 0; i < x.values.numel(); ++i)
      l1 += std::abs(res.x_hat.values[i] - x.values[i]);
    double numel = static_cast<double>(x.values.numel());
    CHECK(l1 <= res.epsilon * numel + 1e-5 * numel);
  }
}

TEST_CASE("discriminator: open-interval scores, batching, determinism") {
  auto specs = tiny_specs();
  Discriminator disc(specs.discriminator, 17);
  RngStream data(21);

  auto x = random_mel(32, 32, data);
  double s = disc.discriminate(x);
  CHECK(s > 0.0);
  CHECK(s < 1.0);
  CHECK(disc.discriminate(x) == s);  // evaluation is deterministic

  Tensor batch({3, 1, 32, 32});
  for (std::size_t i = 0; i < batch.numel(); ++i) batch[i] = data.uniform();
  auto scores = disc.discriminate_batch(batch);
  CHECK(scores.size() == 3);
  for (double v : scores) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }

  auto wrong = random_mel(64, 32, data);
  CHECK_THROWS_AS(disc.discriminate(wrong), std::invalid_argument);
}

TEST_CASE("representation learner: 128 dims, batching, determinism") {
  auto specs = tiny_specs();
  RepresentationLearner rep(specs.representation, 23);
  RngStream data(22);

  auto x = random_mel(32, 32, data);
  auto r = rep.represent(x);
  CHECK(r.size() == 128);
  for (double v : r) CHECK(std::isfinite(v));
  CHECK(rep.represent(x) == r);

  Tensor batch({4, 1, 32, 32});
  for (std::size_t i = 0; i < batch.numel(); ++i) batch[i] = data.uniform();
  auto rb = rep.represent_batch(batch);
  CHECK(rb.shape() == std::vector<int>{4, 128});

  auto wrong = random_mel(32, 64, data);
  CHECK_THROWS_AS(rep.represent(wrong), std::invalid_argument);
}

TEST_CASE("parameter registry: unique names, expected totals") {
  auto specs = tiny_specs();
  auto bundle = make_bundle(specs, 31);

  for (Module* m : bundle.modules()) {
    std::set<std::string> names;
    std::set<const Parameter*> ptrs;
    for (Parameter* p : m->parameters()) {
      CHECK(names.insert(p->name).second);  // every parameter appears once
      CHECK(ptrs.insert(p).second);
      CHECK(p->value.numel() == p->grad.numel());
    }
  }

  // hand-computed totals for the tiny geometry (32x32, widths 4/8/16 and
  // decoder 8/4)
  const auto& a = specs.augmentor;
  int tf = 4, bf = 4;
  std::size_t expect_aug = 0;
  expect_aug += static_cast<std::size_t>(a.enc_channels[0]) * 2 * 9 + a.enc_channels[0];
  expect_aug += static_cast<std::size_t>(a.enc_channels[1]) * a.enc_channels[0] * 9 + a.enc_channels[1];
  expect_aug += static_cast<std::size_t>(a.enc_channels[2]) * a.enc_channels[1] * 9 + a.enc_channels[2];
  expect_aug += static_cast<std::size_t>(128) * (a.enc_channels[2] * tf * bf) + 128;
  expect_aug += static_cast<std::size_t>(a.dec_channels[0] * tf * bf) * 128 + a.dec_channels[0] * tf * bf;
  expect_aug += static_cast<std::size_t>(a.dec_channels[0]) * a.dec_channels[1] * 16 + a.dec_channels[1];
  expect_aug += static_cast<std::size_t>(a.dec_channels[1]) * 1 * 16 + 1;
  CHECK(bundle.augmentor->parameter_count() == expect_aug);

  const auto& d = specs.discriminator;
  std::size_t expect_d = 0;
  int ci = 1;
  for (int c : d.channels) {
    expect_d += static_cast<std::size_t>(c) * ci * 9 + c;
    ci = c;
  }
  int feat = d.channels[3] * (32 / 16);
  expect_d += static_cast<std::size_t>(4 * d.lstm_hidden) * feat;
  expect_d += static_cast<std::size_t>(4 * d.lstm_hidden) * d.lstm_hidden;
  expect_d += static_cast<std::size_t>(4 * d.lstm_hidden);
  expect_d += static_cast<std::size_t>(d.attention_dim) * d.lstm_hidden + d.attention_dim + d.attention_dim;
  expect_d += static_cast<std::size_t>(d.lstm_hidden) + 1;
  CHECK(bundle.discriminator->parameter_count() == expect_d);
}

TEST_CASE("gradient flows from an augmented output into the augmentor") {
  auto specs = tiny_specs();
  auto bundle = make_bundle(specs, 41);
  for (Module* m : bundle.modules()) m->set_frozen(false);

  RngStream noise(1), eps(2), data(3);
  Tensor x({2, 1, 32, 32});
  for (std::size_t i = 0; i < x.numel(); ++i) x[i] = data.uniform();

  bundle.augmentor->zero_grads();
  Tape t;
  EpsilonDist dist;
  auto [x_hat, delta] = bundle.augmentor->augment_on_tape(t, x, noise, eps, dist);
  (void)delta;
  t.backward(t.mean_all(x_hat));

  bool any_nonzero = false;
  for (Parameter* p : bundle.augmentor->parameters())
    for (std::size_t i = 0; i < p->grad.numel(); ++i) any_nonzero |= p->grad[i] != 0.0;
  CHECK(any_nonzero);
}

TEST_CASE("shape preservation across supported geometries") {
  RngStream data(61);
  for (int frames : {32, 64}) {
    auto specs = GanSpecs::for_input(frames, 32, 0.125);
    Augmentor aug(specs.augmentor, 7);
    EpsilonDist dist;
    RngStream noise(1), eps(2);
    auto x = random_mel(frames, 32, data);
    auto res = aug.augment(x, noise, eps, dist);
    CHECK(res.x_hat.frames() == frames);
    CHECK(res.x_hat.bands() == 32);
    CHECK(res.delta.shape() == x.values.shape());
  }
}

TEST_CASE("bundle module lookup and freezing") {
  auto bundle = make_bundle(tiny_specs(), 71);
  set_frozen(bundle, "augmentor", true);
  CHECK(bundle.augmentor->frozen());
  set_frozen(bundle, "augmentor", true);  // idempotent
  CHECK(bundle.augmentor->frozen());
  set_frozen(bundle, "augmentor", false);
  CHECK_FALSE(bundle.augmentor->frozen());
  CHECK_THROWS_WITH_AS(set_frozen(bundle, "generator", true),
                       doctest::Contains("unknown module"), std::invalid_argument);
}
