#include "sergan/tsne.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <stdexcept>

#include "sergan/rng.hpp"

namespace sergan {

namespace {

// Squared Euclidean distances between rows, [N,N].
std::vector<double> pairwise_sq(const Tensor& x) {
  const int n = x.dim(0), d = x.dim(1);
  std::vector<double> dist(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      double s = 0.0;
      const double* a = x.data() + static_cast<std::size_t>(i) * d;
      const double* b = x.data() + static_cast<std::size_t>(j) * d;
      for (int k = 0; k < d; ++k) {
        double diff = a[k] - b[k];
        s += diff * diff;
      }
      dist[static_cast<std::size_t>(i) * n + j] = s;
      dist[static_cast<std::size_t>(j) * n + i] = s;
    }
  return dist;
}

}  // namespace

Tensor tsne_embed(const Tensor& x, const TsneConfig& cfg, std::uint64_t seed) {
  if (x.rank() != 2) throw std::invalid_argument("tsne_embed: expected [N,D] input");
  const int n = x.dim(0);
  if (n < 4) throw std::invalid_argument("tsne_embed: need at least 4 points");

  const double perplexity = std::max(2.0, std::min(cfg.perplexity, (n - 1) / 3.0));
  const double target_entropy = std::log(perplexity);
  auto dist = pairwise_sq(x);

  // conditional probabilities via per-row binary search over precision
  std::vector<double> P(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) {
    double beta = 1.0, beta_lo = 0.0, beta_hi = std::numeric_limits<double>::infinity();
    double* prow = P.data() + static_cast<std::size_t>(i) * n;
    const double* drow = dist.data() + static_cast<std::size_t>(i) * n;
    for (int iter = 0; iter < 64; ++iter) {
      double sum = 0.0;
      for (int j = 0; j < n; ++j) {
        prow[j] = j == i ? 0.0 : std::exp(-drow[j] * beta);
        sum += prow[j];
      }
      if (sum <= 0.0) sum = 1e-300;
      double entropy = 0.0;
      for (int j = 0; j < n; ++j) {
        if (prow[j] <= 0.0) continue;
        double pj = prow[j] / sum;
        entropy -= pj * std::log(pj);
      }
      for (int j = 0; j < n; ++j) prow[j] /= sum;
      double diff = entropy - target_entropy;
      if (std::abs(diff) < 1e-7) break;
      if (diff > 0.0) {
        beta_lo = beta;
        beta = std::isinf(beta_hi) ? beta * 2.0 : (beta + beta_hi) / 2.0;
      } else {
        beta_hi = beta;
        beta = (beta + beta_lo) / 2.0;
      }
    }
  }

  // symmetrize
  std::vector<double> Psym(static_cast<std::size_t>(n) * n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      Psym[static_cast<std::size_t>(i) * n + j] =
          std::max((P[static_cast<std::size_t>(i) * n + j] + P[static_cast<std::size_t>(j) * n + i]) /
                       (2.0 * n),
                   1e-12);

  RngStream rng(seed);
  Tensor y({n, 2});
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] = 1e-4 * rng.normal();

  std::vector<double> vel(static_cast<std::size_t>(n) * 2, 0.0);
  std::vector<double> gain(static_cast<std::size_t>(n) * 2, 1.0);
  std::vector<double> q(static_cast<std::size_t>(n) * n);
  std::vector<double> grad(static_cast<std::size_t>(n) * 2);

  for (int iter = 0; iter < cfg.iterations; ++iter) {
    const double exaggeration = iter < cfg.exaggeration_iters ? cfg.early_exaggeration : 1.0;
    const double momentum =
        iter < cfg.momentum_switch ? cfg.momentum_start : cfg.momentum_final;

    // student-t affinities in the embedding
    double qsum = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) {
        double dx = y[static_cast<std::size_t>(i) * 2] - y[static_cast<std::size_t>(j) * 2];
        double dy = y[static_cast<std::size_t>(i) * 2 + 1] - y[static_cast<std::size_t>(j) * 2 + 1];
        double val = 1.0 / (1.0 + dx * dx + dy * dy);
        q[static_cast<std::size_t>(i) * n + j] = val;
        q[static_cast<std::size_t>(j) * n + i] = val;
        qsum += 2.0 * val;
      }
    if (qsum <= 0.0) qsum = 1e-300;

    std::fill(grad.begin(), grad.end(), 0.0);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        if (i == j) continue;
        double qij = q[static_cast<std::size_t>(i) * n + j];
        double mult = (exaggeration * Psym[static_cast<std::size_t>(i) * n + j] - qij / qsum) * qij;
        grad[static_cast<std::size_t>(i) * 2] +=
            4.0 * mult * (y[static_cast<std::size_t>(i) * 2] - y[static_cast<std::size_t>(j) * 2]);
        grad[static_cast<std::size_t>(i) * 2 + 1] +=
            4.0 * mult *
            (y[static_cast<std::size_t>(i) * 2 + 1] - y[static_cast<std::size_t>(j) * 2 + 1]);
      }
    }

    for (std::size_t k = 0; k < vel.size(); ++k) {
      bool same_sign = (grad[k] > 0.0) == (vel[k] > 0.0);
      gain[k] = same_sign ? std::max(gain[k] * 0.8, 0.01) : gain[k] + 0.2;
      vel[k] = momentum * vel[k] - cfg.learning_rate * gain[k] * grad[k];
      y[k] += vel[k];
    }

    // recenter
    double mx = 0.0, my = 0.0;
    for (int i = 0; i < n; ++i) {
      mx += y[static_cast<std::size_t>(i) * 2];
      my += y[static_cast<std::size_t>(i) * 2 + 1];
    }
    mx /= n;
    my /= n;
    for (int i = 0; i < n; ++i) {
      y[static_cast<std::size_t>(i) * 2] -= mx;
      y[static_cast<std::size_t>(i) * 2 + 1] -= my;
    }
  }
  return y;
}

double silhouette_score(const Tensor& points, const std::vector<int>& labels) {
  if (points.rank() != 2) throw std::invalid_argument("silhouette_score: expected [N,D]");
  const int n = points.dim(0);
  if (static_cast<int>(labels.size()) != n)
    throw std::invalid_argument("silhouette_score: label count mismatch");
  std::set<int> distinct(labels.begin(), labels.end());
  if (distinct.size() < 2)
    throw std::invalid_argument("silhouette_score: need at least 2 clusters");

  auto sq = pairwise_sq(points);
  std::map<int, long> sizes;
  for (int l : labels) ++sizes[l];

  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    if (sizes[labels[static_cast<std::size_t>(i)]] == 1) continue;  // contributes 0
    std::map<int, double> mean_dist;
    std::map<int, long> counts;
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      mean_dist[labels[static_cast<std::size_t>(j)]] +=
          std::sqrt(sq[static_cast<std::size_t>(i) * n + j]);
      ++counts[labels[static_cast<std::size_t>(j)]];
    }
    int own = labels[static_cast<std::size_t>(i)];
    double a = mean_dist[own] / static_cast<double>(counts[own]);
    double b = std::numeric_limits<double>::infinity();
    for (const auto& [cls, sum] : mean_dist) {
      if (cls == own) continue;
      b = std::min(b, sum / static_cast<double>(counts[cls]));
    }
    total += (b - a) / std::max(a, b);
  }
  return total / static_cast<double>(n);
}

}  // namespace sergan
