#ifndef SERGAN_TSNE_HPP_
#define SERGAN_TSNE_HPP_

#include <cstdint>
#include <vector>

#include "sergan/tensor.hpp"

namespace sergan {

struct TsneConfig {
  double perplexity = 30.0;  // clamped to (N-1)/3 for small inputs
  int iterations = 1000;
  double learning_rate = 200.0;
  double early_exaggeration = 12.0;
  int exaggeration_iters = 250;
  double momentum_start = 0.5;
  double momentum_final = 0.8;
  int momentum_switch = 250;
};

// Exact (O(N^2)) t-SNE with the standard student-t kernel, gain-adaptive
// gradient descent and early exaggeration. Deterministic under the seed.
// x is [N,D]; the result is [N,2].
Tensor tsne_embed(const Tensor& x, const TsneConfig& cfg, std::uint64_t seed);

// Mean silhouette over all points with Euclidean distances; singleton
// clusters contribute 0. Needs at least two distinct labels.
double silhouette_score(const Tensor& points, const std::vector<int>& labels);

}  // namespace sergan

#endif  // SERGAN_TSNE_HPP_
