#include "sergan/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace sergan {

namespace {

constexpr char kCkptMagic[8] = {'S', 'G', 'A', 'N', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCkptVersion = 1;
constexpr std::uint64_t kCkptSentinel = 0x53474154454E4421ULL;

[[noreturn]] void corrupt(const std::string& path, const std::string& what) {
  throw std::runtime_error("corrupt checkpoint " + path + ": " + what);
}

void put_u32(std::ostream& o, std::uint32_t v) { o.write(reinterpret_cast<const char*>(&v), 4); }
void put_u64(std::ostream& o, std::uint64_t v) { o.write(reinterpret_cast<const char*>(&v), 8); }
void put_f64(std::ostream& o, double v) { o.write(reinterpret_cast<const char*>(&v), 8); }
void put_str(std::ostream& o, const std::string& s) {
  put_u32(o, static_cast<std::uint32_t>(s.size()));
  o.write(s.data(), static_cast<std::streamsize>(s.size()));
}
void put_f64_array(std::ostream& o, const Tensor& t) {
  o.write(reinterpret_cast<const char*>(t.data()),
          static_cast<std::streamsize>(t.numel() * sizeof(double)));
}

struct Reader {
  std::istream& in;
  std::string path;
  std::uint32_t u32() {
    std::uint32_t v;
    in.read(reinterpret_cast<char*>(&v), 4);
    if (!in) corrupt(path, "unexpected end of file");
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    in.read(reinterpret_cast<char*>(&v), 8);
    if (!in) corrupt(path, "unexpected end of file");
    return v;
  }
  double f64() {
    double v;
    in.read(reinterpret_cast<char*>(&v), 8);
    if (!in) corrupt(path, "unexpected end of file");
    return v;
  }
  std::string str() {
    std::uint32_t n = u32();
    if (n > (1u << 30)) corrupt(path, "implausible string length");
    std::string s(n, '\0');
    in.read(s.data(), n);
    if (!in) corrupt(path, "unexpected end of file");
    return s;
  }
  void f64_array(Tensor& t) {
    in.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.numel() * sizeof(double)));
    if (!in) corrupt(path, "unexpected end of file");
  }
};

void read_header(Reader& r, CheckpointInfo& info) {
  char magic[8];
  r.in.read(magic, 8);
  if (!r.in || std::memcmp(magic, kCkptMagic, 8) != 0) corrupt(r.path, "bad magic");
  info.format_version = static_cast<int>(r.u32());
  if (static_cast<std::uint32_t>(info.format_version) != kCkptVersion)
    throw std::runtime_error("checkpoint " + r.path + " has format version " +
                             std::to_string(info.format_version) + ", this build expects " +
                             std::to_string(kCkptVersion));
  info.kind = static_cast<int>(r.u32());
  info.specs_json = r.str();
  info.fingerprint = r.str();
}

}  // namespace

// --- optimizer ----------------------------------------------------------------

void OptimizerConfig::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("OptimizerConfig: learning_rate must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw std::invalid_argument("OptimizerConfig: betas must lie in [0,1)");
  if (total_iterations < 1) throw std::invalid_argument("OptimizerConfig: total_iterations must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("OptimizerConfig: batch_size must be >= 1");
}

AdamOptimizer::AdamOptimizer(Module& module, OptimizerConfig cfg)
    : module_(module), cfg_(cfg) {
  cfg_.validate();
  for (Parameter* p : module_.parameters()) {
    m_.emplace_back(p->value.shape());
    v_.emplace_back(p->value.shape());
  }
}

void AdamOptimizer::step() {
  if (module_.frozen()) return;
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  auto params = module_.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& val = params[i]->value;
    const Tensor& g = params[i]->grad;
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    for (std::size_t k = 0; k < val.numel(); ++k) {
      m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g[k];
      v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g[k] * g[k];
      val[k] -= cfg_.learning_rate * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + cfg_.adam_eps);
    }
  }
}

void AdamOptimizer::serialize(std::ostream& out) const {
  put_u64(out, static_cast<std::uint64_t>(t_));
  for (std::size_t i = 0; i < m_.size(); ++i) {
    put_f64_array(out, m_[i]);
    put_f64_array(out, v_[i]);
  }
}

void AdamOptimizer::deserialize(std::istream& in) {
  Reader r{in, "optimizer state"};
  t_ = static_cast<long>(r.u64());
  for (std::size_t i = 0; i < m_.size(); ++i) {
    r.f64_array(m_[i]);
    r.f64_array(v_[i]);
  }
}

// --- checkpoint archive ---------------------------------------------------------

void save_modules_checkpoint(const std::string& path, std::vector<Module*> modules,
                             int kind, const std::string& specs_json,
                             const std::string& fingerprint, const std::string& extra) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save checkpoint: cannot open " + path);
  out.write(kCkptMagic, 8);
  put_u32(out, kCkptVersion);
  put_u32(out, static_cast<std::uint32_t>(kind));
  put_str(out, specs_json);
  put_str(out, fingerprint);
  put_u32(out, static_cast<std::uint32_t>(modules.size()));
  for (Module* m : modules) {
    put_str(out, m->name());
    auto params = m->parameters();
    put_u32(out, static_cast<std::uint32_t>(params.size()));
    for (Parameter* p : params) {
      put_str(out, p->name);
      const auto& shape = p->value.shape();
      put_u32(out, static_cast<std::uint32_t>(shape.size()));
      for (int d : shape) put_u32(out, static_cast<std::uint32_t>(d));
      put_f64_array(out, p->value);
    }
  }
  put_str(out, extra);
  put_u64(out, kCkptSentinel);
  if (!out) throw std::runtime_error("save checkpoint: write failed for " + path);
}

CheckpointInfo read_checkpoint_info(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  Reader r{in, path};
  CheckpointInfo info;
  read_header(r, info);
  return info;
}

std::string load_modules_checkpoint(const std::string& path,
                                    std::vector<Module*> modules) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  Reader r{in, path};
  CheckpointInfo info;
  read_header(r, info);

  std::uint32_t n_modules = r.u32();
  if (n_modules != modules.size())
    corrupt(path, "expected " + std::to_string(modules.size()) + " modules, found " +
                      std::to_string(n_modules));
  for (Module* m : modules) {
    std::string name = r.str();
    if (name != m->name())
      corrupt(path, "module '" + name + "' does not match expected '" + m->name() + "'");
    auto params = m->parameters();
    std::uint32_t n_params = r.u32();
    if (n_params != params.size()) corrupt(path, "parameter count mismatch in " + name);
    for (Parameter* p : params) {
      std::string pname = r.str();
      if (pname != p->name) corrupt(path, "parameter '" + pname + "' does not match '" + p->name + "'");
      std::uint32_t ndims = r.u32();
      std::vector<int> dims(ndims);
      for (auto& d : dims) d = static_cast<int>(r.u32());
      if (dims != p->value.shape()) corrupt(path, "shape mismatch for " + pname);
      r.f64_array(p->value);
    }
  }
  std::string extra = r.str();
  if (r.u64() != kCkptSentinel) corrupt(path, "missing end sentinel");
  return extra;
}

// --- trainer -------------------------------------------------------------------

Trainer::Trainer(ModelBundle& bundle, OptimizerConfig opt_cfg, TrainerOptions options,
                 std::uint64_t master_seed)
    : bundle_(bundle),
      opt_cfg_(opt_cfg),
      options_(std::move(options)),
      opt_aug_(*bundle.augmentor, opt_cfg),
      opt_disc_(*bundle.discriminator, opt_cfg),
      opt_rep_(*bundle.representation, opt_cfg),
      data_rng_(derive_seed(master_seed, 101)),
      noise_rng_(derive_seed(master_seed, 102)),
      eps_rng_(derive_seed(master_seed, 103)) {
  opt_cfg_.validate();
  options_.weights.validate();
  options_.epsilon.validate();
}

Trainer::BatchTensors Trainer::prepare(const TripletBatch& batch) const {
  if (batch.size() == 0) throw std::invalid_argument("Trainer: empty batch");
  const auto& spec = bundle_.augmentor->spec();
  auto check = [&](const std::vector<MelSpectrogram>& mels) {
    for (const auto& m : mels) {
      if (!m.normalized)
        throw std::invalid_argument("Trainer: batch contains unnormalized spectrograms");
      if (m.frames() != spec.in_frames || m.bands() != spec.in_bands)
        throw std::invalid_argument("Trainer: batch spectrogram is " +
                                    std::to_string(m.frames()) + "x" + std::to_string(m.bands()) +
                                    ", models expect " + std::to_string(spec.in_frames) + "x" +
                                    std::to_string(spec.in_bands));
    }
  };
  check(batch.anchors);
  check(batch.positives);
  check(batch.negatives);
  return {stack_mels(batch.anchors), stack_mels(batch.positives), stack_mels(batch.negatives)};
}

double Trainer::guard_finite(double loss, int phase) {
  if (std::isfinite(loss)) return loss;
  if (!options_.snapshot_dir.empty()) {
    fs::create_directories(options_.snapshot_dir);
    std::string snap = (fs::path(options_.snapshot_dir) /
                        ("diagnostic_iter" + std::to_string(iteration_) + "_phase" +
                         std::to_string(phase) + ".ckpt"))
                           .string();
    save_checkpoint(snap, "diagnostic");
  }
  throw TrainingDiverged("non-finite loss in phase " + std::to_string(phase) +
                         " at iteration " + std::to_string(iteration_));
}

double Trainer::run_phase(int phase, const TripletBatch& batch) {
  auto bt = prepare(batch);
  auto& aug = *bundle_.augmentor;
  auto& disc = *bundle_.discriminator;
  auto& rep = *bundle_.representation;
  const auto& w = options_.weights;

  switch (phase) {
    case 1: {
      FreezeGuard fa(aug, true), fd(disc, true);
      Tape t;
      Var ra = rep.forward(t, t.constant(bt.anchors));
      Var rp = rep.forward(t, t.constant(bt.positives));
      Var rn = rep.forward(t, t.constant(bt.negatives));
      Var loss = triplet_loss_rows(t, ra, rp, rn, w.beta);
      double val = t.scalar(loss);
      if (!rep.frozen()) {
        rep.zero_grads();
        t.backward(t.scale(loss, w.w_r));
        opt_rep_.step();
      }
      return val;
    }
    case 2: {
      FreezeGuard fa(aug, true), fr(rep, true);
      Tape t;
      auto [x_hat, delta] = aug.augment_on_tape(t, bt.anchors, noise_rng_, eps_rng_,
                                                options_.epsilon);
      (void)delta;
      Var logit_fake = disc.logits(t, x_hat);
      Var logit_real = disc.logits(t, t.constant(bt.positives));
      Var loss = gan_d_loss_from_logits(t, logit_real, logit_fake);
      double val = t.scalar(loss);
      if (!disc.frozen()) {
        disc.zero_grads();
        t.backward(loss);
        opt_disc_.step();
      }
      return val;
    }
    case 3: {
      FreezeGuard fr(rep, true), fd(disc, true);
      Tape t;
      auto [x1, d1] = aug.augment_on_tape(t, bt.anchors, noise_rng_, eps_rng_, options_.epsilon);
      auto [x2, d2] = aug.augment_on_tape(t, bt.anchors, noise_rng_, eps_rng_, options_.epsilon);
      (void)d1;
      (void)d2;
      Var r1 = rep.forward(t, x1);
      Var r2 = rep.forward(t, x2);
      Var loss = var_loss_rows(t, r1, r2, w.var_normalized);
      double val = t.scalar(loss);
      if (!aug.frozen()) {
        aug.zero_grads();
        t.backward(t.scale(loss, w.w_v));
        opt_aug_.step();
      }
      return val;
    }
    case 4: {
      FreezeGuard fr(rep, true), fd(disc, true);
      Tape t;
      auto [xp, dp] = aug.augment_on_tape(t, bt.positives, noise_rng_, eps_rng_, options_.epsilon);
      auto [xn, dn] = aug.augment_on_tape(t, bt.negatives, noise_rng_, eps_rng_, options_.epsilon);
      (void)dp;
      (void)dn;
      Var ra = rep.forward(t, t.constant(bt.anchors));
      Var rn = rep.forward(t, t.constant(bt.negatives));
      Var rp_hat = rep.forward(t, xp);
      Var rn_hat = rep.forward(t, xn);
      Var emo = triplet_loss_rows(t, ra, rp_hat, rn, w.beta);
      Var bal = triplet_loss_rows(t, ra, rp_hat, rn_hat, w.beta);
      // both augmented views of this phase count as generated samples
      Var g = t.scale(t.add(gan_g_loss_from_logits(t, disc.logits(t, xp)),
                            gan_g_loss_from_logits(t, disc.logits(t, xn))),
                      0.5);
      Var objective = t.add(t.scale(g, w.w_g), t.scale(emo, w.w_e));
      if (options_.use_bal_loss) objective = t.add(objective, t.scale(bal, w.w_b));
      last_phase4_[0] = t.scalar(g);
      last_phase4_[1] = t.scalar(emo);
      last_phase4_[2] = t.scalar(bal);
      double val = t.scalar(objective);
      if (!aug.frozen()) {
        aug.zero_grads();
        t.backward(objective);
        opt_aug_.step();
      }
      return val;
    }
    default:
      throw std::invalid_argument("Trainer::run_phase: phase must be 1..4");
  }
}

PhaseLosses Trainer::run_cycle(const TripletBatch& batch) {
  PhaseLosses pl;
  pl.rep = guard_finite(run_phase(1, batch), 1);
  pl.d = guard_finite(run_phase(2, batch), 2);
  if (options_.use_var_phase) pl.var = guard_finite(run_phase(3, batch), 3);
  guard_finite(run_phase(4, batch), 4);
  pl.g = last_phase4_[0];
  pl.emo = last_phase4_[1];
  pl.bal = last_phase4_[2];
  ++iteration_;

  LossComponents comps{pl.g, pl.rep, pl.emo, pl.var, pl.bal};
  auto [model, total] = combine_losses(comps, options_.weights);
  history_.push_back({iteration_, pl, model, total});
  while (history_.size() > options_.history_capacity) history_.pop_front();
  return pl;
}

void Trainer::save_checkpoint(const std::string& path, const std::string& fingerprint) const {
  GanSpecs specs{bundle_.augmentor->spec(), bundle_.discriminator->spec(),
                 bundle_.representation->spec()};
  std::ostringstream extra(std::ios::binary);
  put_u64(extra, static_cast<std::uint64_t>(iteration_));
  put_str(extra, data_rng_.serialize());
  put_str(extra, noise_rng_.serialize());
  put_str(extra, eps_rng_.serialize());
  opt_aug_.serialize(extra);
  opt_disc_.serialize(extra);
  opt_rep_.serialize(extra);
  put_u32(extra, static_cast<std::uint32_t>(history_.size()));
  for (const auto& rec : history_) {
    put_u64(extra, static_cast<std::uint64_t>(rec.iteration));
    for (double v : {rec.phases.rep, rec.phases.d, rec.phases.var, rec.phases.g,
                     rec.phases.emo, rec.phases.bal, rec.model, rec.total})
      put_f64(extra, v);
  }
  save_modules_checkpoint(path, const_cast<ModelBundle&>(bundle_).modules(), 2,
                          specs.fingerprint_json(), fingerprint, extra.str());
}

void Trainer::load_checkpoint(const std::string& path) {
  CheckpointInfo info = read_checkpoint_info(path);
  if (info.kind != 2)
    throw std::runtime_error("checkpoint " + path + " holds kind " +
                             std::to_string(info.kind) + ", expected a train state (2)");
  std::string extra = load_modules_checkpoint(path, bundle_.modules());

  std::istringstream in(extra, std::ios::binary);
  Reader r{in, path};
  iteration_ = static_cast<long>(r.u64());
  data_rng_.deserialize(r.str());
  noise_rng_.deserialize(r.str());
  eps_rng_.deserialize(r.str());
  opt_aug_.deserialize(in);
  opt_disc_.deserialize(in);
  opt_rep_.deserialize(in);
  history_.clear();
  std::uint32_t n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    LossRecord rec;
    rec.iteration = static_cast<long>(r.u64());
    rec.phases.rep = r.f64();
    rec.phases.d = r.f64();
    rec.phases.var = r.f64();
    rec.phases.g = r.f64();
    rec.phases.emo = r.f64();
    rec.phases.bal = r.f64();
    rec.model = r.f64();
    rec.total = r.f64();
    history_.push_back(rec);
  }
}

// --- log writer / loop ----------------------------------------------------------

struct TrainLogWriter::Impl {
  std::ofstream out;
};

TrainLogWriter::TrainLogWriter(const std::string& path) : impl_(new Impl) {
  impl_->out.open(path, std::ios::app);
  if (!impl_->out) {
    delete impl_;
    throw std::runtime_error("TrainLogWriter: cannot open " + path);
  }
}

TrainLogWriter::~TrainLogWriter() { delete impl_; }

void TrainLogWriter::log(const LossRecord& rec, double wall_ms) {
  json j{{"iteration", rec.iteration},
         {"rep", rec.phases.rep},
         {"d", rec.phases.d},
         {"var", rec.phases.var},
         {"g", rec.phases.g},
         {"emo", rec.phases.emo},
         {"bal", rec.phases.bal},
         {"model", rec.model},
         {"total", rec.total},
         {"wall_ms", wall_ms}};
  impl_->out << j.dump() << "\n";
  impl_->out.flush();
}

void train_cycles(Trainer& trainer, const DatasetManifest& manifest,
                  const FeatureProvider& features, long cycles, TrainLogWriter* log) {
  const int seg = trainer.bundle().augmentor->spec().in_frames;
  for (long c = 0; c < cycles; ++c) {
    auto start = std::chrono::steady_clock::now();
    auto batch = sample_triplet_batch(manifest, trainer.optimizer_config().batch_size,
                                      trainer.data_rng(), features, seg,
                                      trainer.options().label_kind);
    trainer.run_cycle(batch);
    if (log) {
      double ms = std::chrono::duration<double, std::milli>(
                      std::chrono::steady_clock::now() - start)
                      .count();
      log->log(trainer.history().back(), ms);
    }
  }
}

}  // namespace sergan
