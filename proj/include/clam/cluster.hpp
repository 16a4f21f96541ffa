#pragma once

#include <cstdint>
#include <vector>

#include "clam/cae.hpp"
#include "clam/tensor.hpp"

namespace clam {

// K learnable centroids in the J-dimensional latent space.
struct ClusterHead {
  Tensor centroids;  // [K,J]

  int64_t k() const { return centroids.dim(0); }
  int64_t latent_dim() const { return centroids.dim(1); }
};

struct SoftAssign {
  Tensor q;  // [N,K], rows sum to 1

  double max_row_dev() const;
};

struct TargetDist {
  Tensor p;  // [N,K], rows sum to 1

  double max_row_dev() const;
};

struct KMeansResult {
  Tensor centroids;  // [K,J]
  std::vector<int> labels;
  double sse = 0.0;
};

// Lloyd's algorithm with k-means++ seeding; keeps the best of `restarts`
// runs by within-cluster SSE. Deterministic given the seed.
KMeansResult kmeans(const Tensor& z, int64_t k, uint64_t seed, int restarts = 20,
                    int max_iters = 100);

// Lloyd iterations from explicit initial centroids (no reseeding, empty
// clusters keep their centroid). Used for the fitted-K geometry check.
KMeansResult lloyd_from(const Tensor& z, const Tensor& init_centroids, int max_iters = 100);

SoftAssign soft_assign(const Tensor& z, const ClusterHead& head);
TargetDist target_distribution(const SoftAssign& q);
double kl_divergence(const TargetDist& p, const SoftAssign& q);
std::vector<int> hard_assign(const SoftAssign& q);

// Max over label permutations of mean agreement; exact for k <= 8.
double matched_accuracy(const std::vector<int>& pred, const std::vector<int>& truth);

struct JointTrainOptions {
  int epochs = 500;   // "trained for 500 additional epochs"
  int batch_size = 32;
  double gamma = 0.1;  // "typically set at gamma = 0.1"
  uint64_t seed = 0;
  double learning_rate = 1e-3;
};

// Phase 2: joint reconstruction + KL clustering loss over model and centroid
// parameters. The target distribution is recomputed once per epoch and held
// constant within it. Requires an initialized head (kmeans on the latents).
LossTrace joint_train(CaeModel& model, ClusterHead& head, const Tensor& images_unit,
                      const JointTrainOptions& opts);

// Full-dataset soft assignment in inference mode, chunked to bound memory.
SoftAssign assign_dataset(const CaeModel& model, const ClusterHead& head,
                          const Tensor& images_unit, int64_t chunk = 64);

Tensor encode_dataset(const CaeModel& model, const Tensor& images_unit, int64_t chunk = 64);

}  // namespace clam
