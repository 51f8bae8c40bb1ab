#include "sergan/models.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "json.hpp"

using nlohmann::json;

namespace sergan {

namespace {

void require_divisible(int value, int divisor, const char* what) {
  if (value % divisor != 0 || value <= 0)
    throw std::invalid_argument(std::string(what) + " must be a positive multiple of " +
                                std::to_string(divisor) + ", got " + std::to_string(value));
}

int scaled_width(int base, double mult) {
  return std::max(2, static_cast<int>(std::lround(base * mult)));
}

constexpr double kLeakySlope = 0.2;

}  // namespace

void EpsilonDist::validate() const {
  if (!(low > 0.0 && low < high))
    throw std::invalid_argument("EpsilonDist: requires 0 < low < high");
}

double EpsilonDist::sample(RngStream& rng) const {
  validate();
  return rng.uniform(low, high);
}

Tensor project_l1(const Tensor& p, double eps) {
  for (std::size_t i = 0; i < p.numel(); ++i)
    if (!std::isfinite(p[i])) throw std::invalid_argument("project_l1: non-finite input");
  double s = 0.0;
  for (std::size_t i = 0; i < p.numel(); ++i) s += std::abs(p[i]);
  Tensor out(p.shape());
  if (s == 0.0) return out;
  const double c = eps * static_cast<double>(p.numel()) / s;
  for (std::size_t i = 0; i < p.numel(); ++i) out[i] = c * p[i];
  return out;
}

void AugmentorSpec::validate() const {
  require_divisible(in_frames, 8, "AugmentorSpec.in_frames");
  require_divisible(in_bands, 8, "AugmentorSpec.in_bands");
  if (noise_planes < 1) throw std::invalid_argument("AugmentorSpec: noise_planes must be >= 1");
  if (enc_channels.size() != 3)
    throw std::invalid_argument("AugmentorSpec: encoder has exactly 3 conv stages");
  if (dec_channels.size() != 2)
    throw std::invalid_argument("AugmentorSpec: decoder has exactly 2 deconv stages");
  for (int c : enc_channels)
    if (c < 1) throw std::invalid_argument("AugmentorSpec: bad encoder width");
  for (int c : dec_channels)
    if (c < 1) throw std::invalid_argument("AugmentorSpec: bad decoder width");
}

void DiscriminatorSpec::validate() const {
  require_divisible(in_frames, 16, "DiscriminatorSpec.in_frames");
  require_divisible(in_bands, 16, "DiscriminatorSpec.in_bands");
  if (channels.size() != 4)
    throw std::invalid_argument("DiscriminatorSpec: exactly 4 conv stages");
  if (lstm_hidden < 1 || attention_dim < 1)
    throw std::invalid_argument("DiscriminatorSpec: bad recurrent/attention width");
}

void RepresentationSpec::validate() const {
  require_divisible(in_frames, 32, "RepresentationSpec.in_frames");
  require_divisible(in_bands, 32, "RepresentationSpec.in_bands");
  if (channels.size() != 5)
    throw std::invalid_argument("RepresentationSpec: exactly 5 conv stages");
  if (lstm_hidden < 1 || attention_dim < 1)
    throw std::invalid_argument("RepresentationSpec: bad recurrent/attention width");
}

GanSpecs GanSpecs::for_input(int frames, int bands, double width_mult) {
  GanSpecs s;
  s.augmentor.in_frames = frames;
  s.augmentor.in_bands = bands;
  s.augmentor.enc_channels = {scaled_width(32, width_mult), scaled_width(64, width_mult),
                              scaled_width(128, width_mult)};
  s.augmentor.dec_channels = {scaled_width(64, width_mult), scaled_width(32, width_mult)};
  s.discriminator.in_frames = frames;
  s.discriminator.in_bands = bands;
  s.discriminator.channels = {scaled_width(32, width_mult), scaled_width(64, width_mult),
                              scaled_width(128, width_mult), scaled_width(128, width_mult)};
  s.discriminator.lstm_hidden = scaled_width(128, width_mult);
  s.discriminator.attention_dim = s.discriminator.lstm_hidden;
  s.representation.in_frames = frames;
  s.representation.in_bands = bands;
  s.representation.channels = {scaled_width(32, width_mult), scaled_width(64, width_mult),
                               scaled_width(128, width_mult), scaled_width(128, width_mult),
                               scaled_width(128, width_mult)};
  s.representation.lstm_hidden = scaled_width(128, width_mult);
  s.representation.attention_dim = s.representation.lstm_hidden;
  return s;
}

GanSpecs GanSpecs::from_json(const std::string& json_text) {
  json j = json::parse(json_text);
  GanSpecs s;
  const auto& a = j.at("augmentor");
  s.augmentor.in_frames = a.at("in_frames").get<int>();
  s.augmentor.in_bands = a.at("in_bands").get<int>();
  s.augmentor.noise_planes = a.at("noise_planes").get<int>();
  s.augmentor.enc_channels = a.at("enc_channels").get<std::vector<int>>();
  s.augmentor.dec_channels = a.at("dec_channels").get<std::vector<int>>();
  const auto& d = j.at("discriminator");
  s.discriminator.in_frames = d.at("in_frames").get<int>();
  s.discriminator.in_bands = d.at("in_bands").get<int>();
  s.discriminator.channels = d.at("channels").get<std::vector<int>>();
  s.discriminator.lstm_hidden = d.at("lstm_hidden").get<int>();
  s.discriminator.attention_dim = d.at("attention_dim").get<int>();
  const auto& r = j.at("representation");
  s.representation.in_frames = r.at("in_frames").get<int>();
  s.representation.in_bands = r.at("in_bands").get<int>();
  s.representation.channels = r.at("channels").get<std::vector<int>>();
  s.representation.lstm_hidden = r.at("lstm_hidden").get<int>();
  s.representation.attention_dim = r.at("attention_dim").get<int>();
  s.validate();
  return s;
}

void GanSpecs::validate() const {
  augmentor.validate();
  discriminator.validate();
  representation.validate();
}

std::string GanSpecs::fingerprint_json() const {
  json j;
  j["augmentor"] = {{"in_frames", augmentor.in_frames},
                    {"in_bands", augmentor.in_bands},
                    {"noise_planes", augmentor.noise_planes},
                    {"enc_channels", augmentor.enc_channels},
                    {"dec_channels", augmentor.dec_channels}};
  j["discriminator"] = {{"in_frames", discriminator.in_frames},
                        {"in_bands", discriminator.in_bands},
                        {"channels", discriminator.channels},
                        {"lstm_hidden", discriminator.lstm_hidden},
                        {"attention_dim", discriminator.attention_dim}};
  j["representation"] = {{"in_frames", representation.in_frames},
                         {"in_bands", representation.in_bands},
                         {"channels", representation.channels},
                         {"lstm_hidden", representation.lstm_hidden},
                         {"attention_dim", representation.attention_dim}};
  return j.dump();
}

// --- Augmentor ---------------------------------------------------------------

Augmentor::Augmentor(AugmentorSpec spec, std::uint64_t init_seed)
    : NetBuilder("augmentor"), spec_(std::move(spec)) {
  spec_.validate();
  RngStream rng(init_seed);
  const int tf = spec_.in_frames / 8, bf = spec_.in_bands / 8;
  const auto& ec = spec_.enc_channels;
  const auto& dc = spec_.dec_channels;
  enc1_ = conv("enc1", 1 + spec_.noise_planes, ec[0], 3, 2, 1, rng);
  enc2_ = conv("enc2", ec[0], ec[1], 3, 2, 1, rng);
  enc3_ = conv("enc3", ec[1], ec[2], 3, 2, 1, rng);
  to_latent_ = linear("to_latent", ec[2] * tf * bf, kLatentDim, rng);
  from_latent_ = linear("from_latent", kLatentDim, dc[0] * tf * bf, rng);
  dec1_ = deconv("dec1", dc[0], dc[1], 4, 4, 0, rng);  // x4 upsampling
  dec2_ = deconv("dec2", dc[1], 1, 4, 2, 1, rng);      // x2 upsampling
}

Var Augmentor::perturbation_logits(Tape& t, Var x_with_noise) {
  const Tensor& xv = t.value(x_with_noise);
  if (xv.rank() != 4 || xv.dim(1) != 1 + spec_.noise_planes ||
      xv.dim(2) != spec_.in_frames || xv.dim(3) != spec_.in_bands)
    throw std::invalid_argument("Augmentor: expected input [N," +
                                std::to_string(1 + spec_.noise_planes) + "," +
                                std::to_string(spec_.in_frames) + "," +
                                std::to_string(spec_.in_bands) + "], got " +
                                Tensor::shape_str(xv.shape()));
  const int n = xv.dim(0);
  const int tf = spec_.in_frames / 8, bf = spec_.in_bands / 8;

  Var h = t.leaky_relu(apply(t, enc1_, x_with_noise), kLeakySlope);
  h = t.leaky_relu(apply(t, enc2_, h), kLeakySlope);
  h = t.leaky_relu(apply(t, enc3_, h), kLeakySlope);
  Var z = apply(t, to_latent_, t.reshape(h, {n, spec_.enc_channels[2] * tf * bf}));
  Var d = t.reshape(apply(t, from_latent_, z), {n, spec_.dec_channels[0], tf, bf});
  d = t.relu(apply_deconv(t, dec1_, d));
  return apply_deconv(t, dec2_, d);  // perturbation logits, unactivated
}

std::pair<Var, Var> Augmentor::augment_on_tape(Tape& t, const Tensor& x,
                                               RngStream& noise_rng, RngStream& eps_rng,
                                               const EpsilonDist& dist) {
  if (x.rank() != 4 || x.dim(1) != 1)
    throw std::invalid_argument("augment_on_tape: expected [N,1,T,B] input");
  const int n = x.dim(0), T = x.dim(2), B = x.dim(3);

  Tensor with_noise({n, 1 + spec_.noise_planes, T, B});
  const std::size_t plane = static_cast<std::size_t>(T) * B;
  for (int i = 0; i < n; ++i) {
    std::copy_n(x.data() + static_cast<std::size_t>(i) * plane, plane,
                with_noise.data() + static_cast<std::size_t>(i) * (1 + spec_.noise_planes) * plane);
    for (int p = 0; p < spec_.noise_planes; ++p) {
      double* dst = with_noise.data() +
                    (static_cast<std::size_t>(i) * (1 + spec_.noise_planes) + 1 + p) * plane;
      for (std::size_t k = 0; k < plane; ++k) dst[k] = noise_rng.normal();
    }
  }

  std::vector<double> eps(static_cast<std::size_t>(n));
  for (auto& e : eps) e = dist.sample(eps_rng);

  Var logits = perturbation_logits(t, t.constant(std::move(with_noise)));
  Var delta = t.project_l1_rows(logits, eps);
  Var x_hat = t.clamp01(t.add(t.constant(x), delta));
  return {x_hat, delta};
}

Augmentor::AugmentResult Augmentor::augment(const MelSpectrogram& x, RngStream& noise_rng,
                                            RngStream& eps_rng, const EpsilonDist& dist) {
  if (!x.normalized)
    throw std::invalid_argument("Augmentor::augment: input spectrogram is not normalized");
  if (x.frames() != spec_.in_frames || x.bands() != spec_.in_bands)
    throw std::invalid_argument("Augmentor::augment: expected " +
                                std::to_string(spec_.in_frames) + "x" +
                                std::to_string(spec_.in_bands) + " input, got " +
                                std::to_string(x.frames()) + "x" + std::to_string(x.bands()));

  // remember eps by replaying the stream the graph will consume
  RngStream probe = eps_rng;
  double eps_used = dist.sample(probe);

  FreezeGuard guard(*this, true);  // no backward machinery for plain inference
  Tape t;
  Tensor batch = x.values.reshaped({1, 1, spec_.in_frames, spec_.in_bands});
  auto [x_hat, delta] = augment_on_tape(t, batch, noise_rng, eps_rng, dist);

  AugmentResult res;
  res.x_hat.config = x.config;
  res.x_hat.normalized = true;
  res.x_hat.values = t.value(x_hat).reshaped({spec_.in_frames, spec_.in_bands});
  res.delta = t.value(delta).reshaped({spec_.in_frames, spec_.in_bands});
  res.epsilon = eps_used;
  return res;
}

// --- Discriminator -----------------------------------------------------------

Discriminator::Discriminator(DiscriminatorSpec spec, std::uint64_t init_seed)
    : NetBuilder("discriminator"), spec_(std::move(spec)) {
  spec_.validate();
  RngStream rng(init_seed);
  int ci = 1;
  for (int i = 0; i < 4; ++i) {
    conv_[i] = conv("conv" + std::to_string(i + 1), ci, spec_.channels[static_cast<std::size_t>(i)], 3, 2, 1, rng);
    ci = spec_.channels[static_cast<std::size_t>(i)];
  }
  const int feat = spec_.channels[3] * (spec_.in_bands / 16);
  lstm_ = lstm("lstm", feat, spec_.lstm_hidden, rng);
  attn_ = attention("attn", spec_.lstm_hidden, spec_.attention_dim, rng);
  head_ = linear("head", spec_.lstm_hidden, 1, rng);
}

Var Discriminator::logits(Tape& t, Var x) {
  const Tensor& xv = t.value(x);
  if (xv.rank() != 4 || xv.dim(1) != 1 || xv.dim(2) != spec_.in_frames ||
      xv.dim(3) != spec_.in_bands)
    throw std::invalid_argument("Discriminator: expected input [N,1," +
                                std::to_string(spec_.in_frames) + "," +
                                std::to_string(spec_.in_bands) + "], got " +
                                Tensor::shape_str(xv.shape()));
  Var h = x;
  for (int i = 0; i < 4; ++i) h = t.leaky_relu(apply(t, conv_[i], h), kLeakySlope);
  auto steps = apply(t, lstm_, h);
  Var pooled = apply(t, attn_, steps);
  return apply(t, head_, pooled);
}

std::vector<double> Discriminator::discriminate_batch(const Tensor& x) {
  FreezeGuard guard(*this, true);
  Tape t;
  Var lg = logits(t, t.constant(x));
  Var score = t.sigmoid(lg);
  const Tensor& sv = t.value(score);
  std::vector<double> out(sv.numel());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = std::clamp(sv[i], 1e-12, 1.0 - 1e-12);  // keep the interval open
  return out;
}

double Discriminator::discriminate(const MelSpectrogram& x) {
  if (x.frames() != spec_.in_frames || x.bands() != spec_.in_bands)
    throw std::invalid_argument("Discriminator::discriminate: expected " +
                                std::to_string(spec_.in_frames) + "x" +
                                std::to_string(spec_.in_bands) + " input, got " +
                                std::to_string(x.frames()) + "x" + std::to_string(x.bands()));
  return discriminate_batch(x.values.reshaped({1, 1, spec_.in_frames, spec_.in_bands}))[0];
}

// --- RepresentationLearner -----------------------------------------------------

RepresentationLearner::RepresentationLearner(RepresentationSpec spec,
                                             std::uint64_t init_seed)
    : NetBuilder("representation"), spec_(std::move(spec)) {
  spec_.validate();
  RngStream rng(init_seed);
  int ci = 1;
  for (int i = 0; i < 5; ++i) {
    conv_[i] = conv("conv" + std::to_string(i + 1), ci, spec_.channels[static_cast<std::size_t>(i)], 3, 2, 1, rng);
    ci = spec_.channels[static_cast<std::size_t>(i)];
  }
  const int feat = spec_.channels[4] * (spec_.in_bands / 32);
  lstm_ = lstm("lstm", feat, spec_.lstm_hidden, rng);
  attn_ = attention("attn", spec_.lstm_hidden, spec_.attention_dim, rng);
  head_ = linear("head", spec_.lstm_hidden, kRepresentationDim, rng);
}

Var RepresentationLearner::forward(Tape& t, Var x) {
  const Tensor& xv = t.value(x);
  if (xv.rank() != 4 || xv.dim(1) != 1 || xv.dim(2) != spec_.in_frames ||
      xv.dim(3) != spec_.in_bands)
    throw std::invalid_argument("RepresentationLearner: expected input [N,1," +
                                std::to_string(spec_.in_frames) + "," +
                                std::to_string(spec_.in_bands) + "], got " +
                                Tensor::shape_str(xv.shape()));
  Var h = x;
  for (int i = 0; i < 5; ++i) h = t.leaky_relu(apply(t, conv_[i], h), kLeakySlope);
  auto steps = apply(t, lstm_, h);
  Var pooled = apply(t, attn_, steps);
  return apply(t, head_, pooled);
}

Tensor RepresentationLearner::represent_batch(const Tensor& x) {
  FreezeGuard guard(*this, true);
  Tape t;
  Var r = forward(t, t.constant(x));
  return t.value(r);
}

std::vector<double> RepresentationLearner::represent(const MelSpectrogram& x) {
  if (x.frames() != spec_.in_frames || x.bands() != spec_.in_bands)
    throw std::invalid_argument("RepresentationLearner::represent: expected " +
                                std::to_string(spec_.in_frames) + "x" +
                                std::to_string(spec_.in_bands) + " input, got " +
                                std::to_string(x.frames()) + "x" + std::to_string(x.bands()));
  Tensor r = represent_batch(x.values.reshaped({1, 1, spec_.in_frames, spec_.in_bands}));
  return r.to_std();
}

// --- bundle -------------------------------------------------------------------

std::vector<Module*> ModelBundle::modules() {
  std::vector<Module*> out;
  if (augmentor) out.push_back(augmentor.get());
  if (discriminator) out.push_back(discriminator.get());
  if (representation) out.push_back(representation.get());
  return out;
}

Module& ModelBundle::find_module(const std::string& name) {
  for (Module* m : modules())
    if (m->name() == name) return *m;
  throw std::invalid_argument("ModelBundle: unknown module '" + name +
                              "' (expected augmentor, discriminator or representation)");
}

ModelBundle make_bundle(const GanSpecs& specs, std::uint64_t seed) {
  specs.validate();
  ModelBundle b;
  b.augmentor = std::make_unique<Augmentor>(specs.augmentor, derive_seed(seed, 1));
  b.discriminator = std::make_unique<Discriminator>(specs.discriminator, derive_seed(seed, 2));
  b.representation =
      std::make_unique<RepresentationLearner>(specs.representation, derive_seed(seed, 3));
  return b;
}

void set_frozen(ModelBundle& bundle, const std::string& module_name, bool frozen) {
  bundle.find_module(module_name).set_frozen(frozen);
}

}  // namespace sergan
