#pragma once

#include <cstdint>
#include <string>

namespace clam {

// Experiment description; defaults reproduce the simulation-study schedule.
// Serializes to a sectioned key=value file; unknown keys are errors.
struct ExperimentConfig {
  // [experiment]
  uint64_t seed = 0;
  std::string output_dir = "run";

  // [data] — either a scenario to simulate or a dataset file to load.
  std::string scenario = "location";  // intensity | location | size | "" when dataset set
  int true_k = 3;
  int n_images = 300;
  std::string dataset = "";  // path to a CLDS file

  // [model]
  int latent_dim = 60;

  // [train]
  int pretrain_epochs = 200;
  int cluster_epochs = 500;
  int batch_size = 32;
  double gamma = 0.1;

  // [cluster]
  int fit_k = 0;  // 0 = auto (silhouette over [k_min, k_max])
  int k_min = 2;
  int k_max = 8;
  bool post_silhouette = false;

  // [clam]
  int clam_layer = -1;  // -1 = last encoder conv layer
  double area_threshold = 0.5;
  bool literal_group_sum = false;

  bool auto_k() const { return fit_k == 0; }
  void validate() const;
};

ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig load_config(const std::string& path);
std::string config_to_text(const ExperimentConfig& config);
void save_config(const ExperimentConfig& config, const std::string& path);

// FNV-1a over the canonical text; stable across runs.
uint64_t config_hash(const ExperimentConfig& config);

}  // namespace clam
