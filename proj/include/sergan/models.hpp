#ifndef SERGAN_MODELS_HPP_
#define SERGAN_MODELS_HPP_

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "sergan/audio_features.hpp"
#include "sergan/losses.hpp"
#include "sergan/nn.hpp"
#include "sergan/rng.hpp"

namespace sergan {

// Embedding width of the representation learner and of the augmentor's
// latent bottleneck.
constexpr int kLatentDim = 128;
constexpr int kRepresentationDim = 128;

// Augmentation intensity, drawn fresh for every augmented sample.
struct EpsilonDist {
  double low = 0.05;
  double high = 0.3;

  void validate() const;
  double sample(RngStream& rng) const;
};

// Scales a perturbation to a fixed l1 budget:
//   out = eps * numel(p) * p / ||p||_1   (zero input stays zero)
// so that ||out||_1 == eps * numel(p).
Tensor project_l1(const Tensor& p, double eps);

// --- architecture descriptions ----------------------------------------------
// Frames and bands must divide by the total conv downsampling (8 for the
// augmentor, 16 for the discriminator, 32 for the representation learner).
// Channel widths are configurable; the defaults target full-size 512x128
// inputs, small runs shrink them via configuration.

struct AugmentorSpec {
  int in_frames = 512;
  int in_bands = 128;
  int noise_planes = 1;                       // appended standard-normal planes
  std::vector<int> enc_channels{32, 64, 128};  // 3 stride-2 convs, LeakyReLU
  std::vector<int> dec_channels{64, 32};       // 2 deconv stages, ReLU between
  void validate() const;
};

struct DiscriminatorSpec {
  int in_frames = 512;
  int in_bands = 128;
  std::vector<int> channels{32, 64, 128, 128};  // 4 stride-2 convs, LeakyReLU
  int lstm_hidden = 128;
  int attention_dim = 128;
  void validate() const;
};

struct RepresentationSpec {
  int in_frames = 512;
  int in_bands = 128;
  std::vector<int> channels{32, 64, 128, 128, 128};  // 5 stride-2 convs
  int lstm_hidden = 128;
  int attention_dim = 128;
  void validate() const;
};

struct GanSpecs {
  AugmentorSpec augmentor;
  DiscriminatorSpec discriminator;
  RepresentationSpec representation;

  // Builds all three specs for a shared input geometry, scaling widths by
  // width_mult (1.0 = paper-size defaults).
  static GanSpecs for_input(int frames, int bands, double width_mult = 1.0);
  static GanSpecs from_json(const std::string& json_text);
  void validate() const;
  std::string fingerprint_json() const;
};

// --- models ------------------------------------------------------------------

class Augmentor : public NetBuilder {
 public:
  Augmentor(AugmentorSpec spec, std::uint64_t init_seed);
  const AugmentorSpec& spec() const { return spec_; }

  // Raw decoder output P for an encoder input [N, 1+noise_planes, T, B].
  Var perturbation_logits(Tape& t, Var x_with_noise);

  // Builds the full augmentation graph on the tape: draws noise planes and
  // per-item eps from the streams, returns (x_hat, delta) where
  // x_hat = clamp01(x + project_l1(P, eps)). x is [N,1,T,B] and must hold
  // normalized values.
  std::pair<Var, Var> augment_on_tape(Tape& t, const Tensor& x, RngStream& noise_rng,
                                      RngStream& eps_rng, const EpsilonDist& dist);

  struct AugmentResult {
    MelSpectrogram x_hat;
    Tensor delta;
    double epsilon = 0.0;
  };
  // Gradient-free convenience form over a single spectrogram.
  AugmentResult augment(const MelSpectrogram& x, RngStream& noise_rng,
                        RngStream& eps_rng, const EpsilonDist& dist);

 private:
  AugmentorSpec spec_;
  Conv2dLayer enc1_, enc2_, enc3_;
  LinearLayer to_latent_, from_latent_;
  Conv2dLayer dec1_, dec2_;
};

class Discriminator : public NetBuilder {
 public:
  Discriminator(DiscriminatorSpec spec, std::uint64_t init_seed);
  const DiscriminatorSpec& spec() const { return spec_; }

  Var logits(Tape& t, Var x);  // x [N,1,T,B] -> [N,1]

  // Score in the open interval (0,1); deterministic given the parameters.
  double discriminate(const MelSpectrogram& x);
  std::vector<double> discriminate_batch(const Tensor& x);

 private:
  DiscriminatorSpec spec_;
  Conv2dLayer conv_[4];
  LstmLayer lstm_;
  AttentionPool attn_;
  LinearLayer head_;
};

class RepresentationLearner : public NetBuilder {
 public:
  RepresentationLearner(RepresentationSpec spec, std::uint64_t init_seed);
  const RepresentationSpec& spec() const { return spec_; }

  Var forward(Tape& t, Var x);  // x [N,1,T,B] -> [N,128]

  std::vector<double> represent(const MelSpectrogram& x);
  Tensor represent_batch(const Tensor& x);  // [N,128]

 private:
  RepresentationSpec spec_;
  Conv2dLayer conv_[5];
  LstmLayer lstm_;
  AttentionPool attn_;
  LinearLayer head_;
};

// The three GAN-side networks. Each is independently freezable through its
// Module flag; the classifier lives in classifier.hpp and checkpoints through
// the same archive format.
struct ModelBundle {
  std::unique_ptr<Augmentor> augmentor;
  std::unique_ptr<Discriminator> discriminator;
  std::unique_ptr<RepresentationLearner> representation;

  std::vector<Module*> modules();
  Module& find_module(const std::string& name);
};

ModelBundle make_bundle(const GanSpecs& specs, std::uint64_t seed);

void set_frozen(ModelBundle& bundle, const std::string& module_name, bool frozen);

// Temporarily forces a frozen flag, restoring the previous value on scope
// exit.
class FreezeGuard {
 public:
  FreezeGuard(Module& m, bool frozen) : m_(m), prev_(m.frozen()) { m_.set_frozen(frozen); }
  ~FreezeGuard() { m_.set_frozen(prev_); }
  FreezeGuard(const FreezeGuard&) = delete;
  FreezeGuard& operator=(const FreezeGuard&) = delete;

 private:
  Module& m_;
  bool prev_;
};

}  // namespace sergan

#endif  // SERGAN_MODELS_HPP_
