#ifndef SERGAN_LOSSES_HPP_
#define SERGAN_LOSSES_HPP_

#include <span>
#include <utility>
#include <vector>

#include "sergan/autograd.hpp"

namespace sergan {

struct LossWeights {
  double w_g = 1.0;
  double w_r = 1.0;
  double w_e = 10.0;
  double w_v = 1.0;
  double w_b = 8.0;
  double beta = 7.0;
  // When true the variance loss is cosine similarity; raw dot product
  // otherwise. Cosine keeps the objective bounded in [-1,1].
  bool var_normalized = true;

  void validate() const;
};

struct LossComponents {
  double gan_g = 0.0;
  double rep = 0.0;
  double emo = 0.0;
  double var = 0.0;
  double bal = 0.0;
};

// --- pure scalar forms -------------------------------------------------------

double l1_distance(std::span<const double> a, std::span<const double> b);

// max(dist(a,p) - dist(a,n) + beta, 0). The same hinge serves the
// representation, emotion-preservation and balance objectives; callers swap
// in augmented representations as needed.
double triplet_loss(std::span<const double> r_a, std::span<const double> r_p,
                    std::span<const double> r_n, double beta);

// Non-saturating GAN objectives from discriminator scores in the open unit
// interval. Returns (d_loss, g_loss):
//   d_loss = -mean log s_real - mean log(1 - s_fake)
//   g_loss = -mean log s_fake
std::pair<double, double> gan_losses(const std::vector<double>& scores_real,
                                     const std::vector<double>& scores_fake);

// Similarity between two augmented-view representations; the augmentor
// minimizes this to diversify its outputs.
double var_loss(std::span<const double> r1, std::span<const double> r2,
                bool normalized = true);

// Returns (L_Model, L_Total):
//   L_Model = w_g*gan_g + w_r*rep + w_e*emo
//   L_Total = L_Model + w_v*var + w_b*bal
std::pair<double, double> combine_losses(const LossComponents& c, const LossWeights& w);

// --- tape forms (batch mean, used by the trainer) ----------------------------
// Values agree with the pure forms above; gradients come from the tape.

Var triplet_loss_rows(Tape& t, Var r_a, Var r_p, Var r_n, double beta);
Var var_loss_rows(Tape& t, Var r1, Var r2, bool normalized);

// Numerically stable equivalents of gan_losses operating on pre-sigmoid
// discriminator outputs [N,1]: -log s = softplus(-logit),
// -log(1-s) = softplus(logit).
Var gan_d_loss_from_logits(Tape& t, Var logit_real, Var logit_fake);
Var gan_g_loss_from_logits(Tape& t, Var logit_fake);

}  // namespace sergan

#endif  // SERGAN_LOSSES_HPP_
