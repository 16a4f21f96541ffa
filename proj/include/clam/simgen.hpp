#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "clam/tensor.hpp"

namespace clam {

enum class Varied : uint32_t { Intensity = 0, Location = 1, Size = 2 };

const char* varied_name(Varied v);
Varied varied_from_name(const std::string& name);

struct AbnormalitySpec {
  double added_hu = 0.0;
  int row = 0;
  int col = 0;
  int radius = 0;
};

// One simulation scenario: 64x64 lung slices where exactly one abnormality
// characteristic varies across the true clusters.
struct ScenarioSpec {
  Varied varied = Varied::Location;
  int true_k = 3;
  int n_images = 300;
  uint64_t seed = 0;
  std::vector<AbnormalitySpec> clusters;  // one entry per true cluster

  // Baseline lung noise, standing in for the empirical healthy-lung
  // distribution: truncated Normal in HU.
  double noise_mean = -860.0;
  double noise_sd = 60.0;
  double noise_lo = -1000.0;
  double noise_hi = -600.0;
  double background_hu = -1024.0;
};

// Canonical per-cluster parameters for a scenario family.
ScenarioSpec make_scenario(Varied varied, int true_k, int n_images, uint64_t seed);

// Procedural two-lobe mask: vertically elongated ellipses with a medial gap,
// symmetric about the vertical midline. Values are 0/1.
Tensor make_lung_mask(int size = 64);

struct LabeledDataset {
  Tensor images;  // [N,1,H,W] in HU
  std::vector<int> labels;
  ScenarioSpec spec;
};

LabeledDataset simulate_scenario(const ScenarioSpec& spec);

// Dataset file format: magic "CLDS" header + little-endian f64 HU values +
// labels. The CSV manifest lists per-image cluster parameters.
void save_dataset(const LabeledDataset& ds, const std::string& path);
LabeledDataset load_dataset(const std::string& path);
void write_manifest_csv(const LabeledDataset& ds, const std::string& path);

}  // namespace clam
