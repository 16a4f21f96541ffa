#pragma once

#include <cstdint>
#include <vector>

#include "clam/tensor.hpp"

namespace clam {

struct KEstimate {
  int chosen_k = 0;
  std::vector<int> candidates;
  std::vector<double> scores;  // mean silhouette per candidate, same order
};

// Mean silhouette over points, Euclidean metric; singleton clusters score 0.
double silhouette_score(const Tensor& z, const std::vector<int>& labels);

// Runs kmeans (20 restarts) per candidate K and keeps the argmax score;
// ties break toward the smaller K.
KEstimate estimate_k(const Tensor& z, int k_min, int k_max, uint64_t seed);

}  // namespace clam
