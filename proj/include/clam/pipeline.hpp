#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "clam/config.hpp"
#include "clam/kselect.hpp"
#include "clam/tensor.hpp"

namespace clam {

// Artifact names inside a run directory. Stages read only artifacts of
// earlier stages, so any later stage can be re-run from persisted files.
struct RunPaths {
  std::string dir;

  std::string config() const { return dir + "/config.ini"; }
  std::string dataset() const { return dir + "/dataset.clds"; }
  std::string manifest() const { return dir + "/dataset_manifest.csv"; }
  std::string pretrained() const { return dir + "/cae_pretrained.clam"; }
  std::string pretrain_trace() const { return dir + "/loss_pretrain.csv"; }
  std::string silhouette() const { return dir + "/silhouette.csv"; }
  std::string silhouette_post() const { return dir + "/silhouette_post.csv"; }
  std::string clustered() const { return dir + "/model_clustered.clam"; }
  std::string cluster_trace() const { return dir + "/loss_cluster.csv"; }
  std::string assignments() const { return dir + "/assignments.csv"; }
  std::string clam_grids() const { return dir + "/clam_maps.f64"; }
  std::string clam_areas() const { return dir + "/clam_areas.csv"; }
  std::string population_pgm() const { return dir + "/clam_population.pgm"; }
  std::string cluster_pgm(int64_t k) const {
    return dir + "/clam_cluster_" + std::to_string(k) + ".pgm";
  }
  std::string metrics_json() const { return dir + "/metrics.json"; }
  std::string metrics_txt() const { return dir + "/metrics.txt"; }
  std::string status() const { return dir + "/run_status.txt"; }
};

// Binary PGM (P5), maxval 255, round-half-up; input values must be in [0,1].
void export_heatmap(const Tensor& map01, const std::string& path);
uint8_t heatmap_byte(double v);

// Individual pipeline stages; each reads earlier artifacts from the run
// directory and persists its own.
void stage_simulate(const ExperimentConfig& config);
void stage_pretrain(const ExperimentConfig& config);
KEstimate stage_estimate_k(const ExperimentConfig& config);
void stage_cluster(const ExperimentConfig& config);
void stage_clam(const ExperimentConfig& config);
void stage_report(const ExperimentConfig& config);

// All stages in order; returns the run directory. Idempotent given the seed.
std::string run_experiment(const ExperimentConfig& config);

// Human-readable rendering of the metrics file (the `report` CLI verb).
std::string render_report(const std::string& metrics_json_path);

}  // namespace clam
