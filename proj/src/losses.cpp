#include "sergan/losses.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace sergan {

namespace {

void require_finite(double v, const char* what) {
  if (!std::isfinite(v))
    throw std::invalid_argument(std::string(what) + ": non-finite value");
}

double mean_log(const std::vector<double>& xs, bool one_minus) {
  if (xs.empty()) throw std::invalid_argument("gan_losses: empty score list");
  double s = 0.0;
  for (double x : xs) {
    if (!(x > 0.0 && x < 1.0))
      throw std::invalid_argument("gan_losses: score " + std::to_string(x) +
                                  " outside the open interval (0,1)");
    s += std::log(one_minus ? 1.0 - x : x);
  }
  return s / static_cast<double>(xs.size());
}

}  // namespace

void LossWeights::validate() const {
  for (double v : {w_g, w_r, w_e, w_v, w_b}) {
    if (!std::isfinite(v) || v < 0.0)
      throw std::invalid_argument("LossWeights: weights must be finite and non-negative");
  }
  if (!std::isfinite(beta)) throw std::invalid_argument("LossWeights: beta must be finite");
}

double l1_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    throw std::invalid_argument("l1_distance: dimension mismatch (" +
                                std::to_string(a.size()) + " vs " +
                                std::to_string(b.size()) + ")");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s;
}

double triplet_loss(std::span<const double> r_a, std::span<const double> r_p,
                    std::span<const double> r_n, double beta) {
  double d_ap = l1_distance(r_a, r_p);
  double d_an = l1_distance(r_a, r_n);
  return std::max(d_ap - d_an + beta, 0.0);
}

std::pair<double, double> gan_losses(const std::vector<double>& scores_real,
                                     const std::vector<double>& scores_fake) {
  double d_loss = -mean_log(scores_real, false) - mean_log(scores_fake, true);
  double g_loss = -mean_log(scores_fake, false);
  return {d_loss, g_loss};
}

double var_loss(std::span<const double> r1, std::span<const double> r2, bool normalized) {
  if (r1.size() != r2.size()) throw std::invalid_argument("var_loss: dimension mismatch");
  double dot = 0.0, n1 = 0.0, n2 = 0.0;
  for (std::size_t i = 0; i < r1.size(); ++i) {
    dot += r1[i] * r2[i];
    n1 += r1[i] * r1[i];
    n2 += r2[i] * r2[i];
  }
  if (!normalized) return dot;
  if (n1 == 0.0 || n2 == 0.0) throw std::invalid_argument("var_loss: zero vector");
  return dot / (std::sqrt(n1) * std::sqrt(n2));
}

std::pair<double, double> combine_losses(const LossComponents& c, const LossWeights& w) {
  w.validate();
  require_finite(c.gan_g, "combine_losses gan_g");
  require_finite(c.rep, "combine_losses rep");
  require_finite(c.emo, "combine_losses emo");
  require_finite(c.var, "combine_losses var");
  require_finite(c.bal, "combine_losses bal");
  double model = w.w_g * c.gan_g + w.w_r * c.rep + w.w_e * c.emo;
  double total = model + w.w_v * c.var + w.w_b * c.bal;
  return {model, total};
}

Var triplet_loss_rows(Tape& t, Var r_a, Var r_p, Var r_n, double beta) {
  Var d_ap = t.l1_dist_rows(r_a, r_p);
  Var d_an = t.l1_dist_rows(r_a, r_n);
  Tensor beta_t(t.value(d_ap).shape());
  beta_t.fill(beta);
  Var margin = t.add(t.sub(d_ap, d_an), t.constant(std::move(beta_t)));
  return t.mean_all(t.relu(margin));
}

Var var_loss_rows(Tape& t, Var r1, Var r2, bool normalized) {
  Var sim = normalized ? t.cosine_rows(r1, r2) : t.dot_rows(r1, r2);
  return t.mean_all(sim);
}

Var gan_d_loss_from_logits(Tape& t, Var logit_real, Var logit_fake) {
  Var real_term = t.mean_all(t.softplus(t.scale(logit_real, -1.0)));
  Var fake_term = t.mean_all(t.softplus(logit_fake));
  return t.add(real_term, fake_term);
}

Var gan_g_loss_from_logits(Tape& t, Var logit_fake) {
  return t.mean_all(t.softplus(t.scale(logit_fake, -1.0)));
}

}  // namespace sergan
