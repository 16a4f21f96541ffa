#pragma once

#include <cstdint>
#include <vector>

#include "clam/cae.hpp"
#include "clam/cluster.hpp"
#include "clam/tensor.hpp"

namespace clam {

// Activations of one encoder conv layer for a single image: [H, h, w].
struct ActivationStack {
  Tensor a;
  int conv_index = -1;

  int64_t channels() const { return a.dim(0); }
};

// Per-image cluster activation map with its channel-confidence weights.
struct ClamMap {
  int image_index = -1;
  int cluster = -1;
  std::vector<double> weights;  // alpha per channel
  Tensor map;                   // [64,64] in [0,1]; max is 1 unless all zero
};

struct GroupClam {
  std::vector<Tensor> cluster_maps;  // one per cluster; empty tensor if no members
  std::vector<int64_t> counts;
  Tensor population_map;
};

// Post-activation forward capture; conv_index -1 means the last encoder conv
// layer just prior to the clustering layer.
ActivationStack activations(const CaeModel& model, const ClusterHead& head, const Tensor& image,
                            int conv_index = -1);

// Bilinear upsample (corner-aligned) then min-max normalize to [0,1]; a
// constant channel maps to all zeros.
Tensor upsample_normalize(const Tensor& channel, int64_t target_h, int64_t target_w);

// Probability of cluster k for the image masked by the Hadamard product in
// normalized input space.
double channel_confidence(const CaeModel& model, const ClusterHead& head, const Tensor& image,
                          const Tensor& mask, int64_t k);

// Weighted channel sum at native resolution -> upsample -> ReLU -> min-max.
// Exposed for direct property tests on the map construction.
Tensor clam_from_weighted_sum(const Tensor& weighted_native, int64_t target_h, int64_t target_w);

ClamMap compute_clam(const CaeModel& model, const ClusterHead& head, const Tensor& image,
                     int conv_index = -1, int image_index = -1);

// Maps for a whole dataset; parallel across images with a fixed merge order.
std::vector<ClamMap> compute_clams(const CaeModel& model, const ClusterHead& head,
                                   const Tensor& images_unit, int conv_index = -1,
                                   int threads = 0);

// Cluster- and population-averaged maps. `literal_sum` reproduces the plain
// sum over members instead of the mean.
GroupClam group_clam(const std::vector<ClamMap>& maps, const std::vector<int>& labels,
                     int64_t k, bool literal_sum = false);

int64_t activated_area(const ClamMap& map, double threshold = 0.5);
int64_t activated_area(const Tensor& map, double threshold);

}  // namespace clam
