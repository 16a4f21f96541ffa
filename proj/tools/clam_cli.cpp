// Command-line front end: simulate -> pretrain -> estimate-k -> cluster ->
// clam -> report, individually or end to end via `run`.

#include <cstdio>
#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "clam/config.hpp"
#include "clam/errors.hpp"
#include "clam/pipeline.hpp"

namespace {

// Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric failure, 1 other.
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

struct Cli {
  std::string config_path;
  clam::ExperimentConfig config;

  // Flag presence trackers so config-file values survive unless overridden.
  void attach_common(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "Config file (sectioned key = value)");
    cmd->add_option("--seed", config.seed, "RNG seed");
    cmd->add_option("--output-dir,-o", config.output_dir, "Run directory");
    cmd->add_option("--scenario", config.scenario, "intensity | location | size");
    cmd->add_option("--true-k", config.true_k, "Simulated number of clusters");
    cmd->add_option("--n-images", config.n_images, "Number of simulated images");
    cmd->add_option("--dataset", config.dataset, "Existing CLDS dataset path");
    cmd->add_option("--latent-dim", config.latent_dim, "Latent dimension J");
    cmd->add_option("--pretrain-epochs", config.pretrain_epochs, "Phase 1 epochs");
    cmd->add_option("--cluster-epochs", config.cluster_epochs, "Phase 2 epochs");
    cmd->add_option("--batch-size", config.batch_size, "Minibatch size");
    cmd->add_option("--gamma", config.gamma, "Cluster loss weight");
    cmd->add_option("--k", config.fit_k, "Fit K (0 = auto via silhouette)");
    cmd->add_option("--k-min", config.k_min, "Smallest candidate K");
    cmd->add_option("--k-max", config.k_max, "Largest candidate K");
    cmd->add_flag("--post-silhouette", config.post_silhouette,
                  "Also score K on post-clustering latents");
    cmd->add_option("--clam-layer", config.clam_layer,
                    "Encoder conv layer for CLAM (-1 = last)");
    cmd->add_option("--area-threshold", config.area_threshold, "Activated-area threshold");
    cmd->add_flag("--literal-group-sum", config.literal_group_sum,
                  "Group maps as plain sums instead of means");
  }

  // Re-parse with file values as the baseline, then apply CLI overrides.
  void finalize(CLI::App* cmd) {
    if (!config_path.empty()) {
      clam::ExperimentConfig from_file = clam::load_config(config_path);
      clam::ExperimentConfig overrides = config;
      config = from_file;
      for (const auto* opt : cmd->get_options()) {
        if (opt->count() == 0) continue;
        const std::string name = opt->get_name();
        if (name == "--seed") config.seed = overrides.seed;
        else if (name == "--output-dir") config.output_dir = overrides.output_dir;
        else if (name == "--scenario") { config.scenario = overrides.scenario; config.dataset.clear(); }
        else if (name == "--true-k") config.true_k = overrides.true_k;
        else if (name == "--n-images") config.n_images = overrides.n_images;
        else if (name == "--dataset") { config.dataset = overrides.dataset; config.scenario.clear(); }
        else if (name == "--latent-dim") config.latent_dim = overrides.latent_dim;
        else if (name == "--pretrain-epochs") config.pretrain_epochs = overrides.pretrain_epochs;
        else if (name == "--cluster-epochs") config.cluster_epochs = overrides.cluster_epochs;
        else if (name == "--batch-size") config.batch_size = overrides.batch_size;
        else if (name == "--gamma") config.gamma = overrides.gamma;
        else if (name == "--k") config.fit_k = overrides.fit_k;
        else if (name == "--k-min") config.k_min = overrides.k_min;
        else if (name == "--k-max") config.k_max = overrides.k_max;
        else if (name == "--post-silhouette") config.post_silhouette = overrides.post_silhouette;
        else if (name == "--clam-layer") config.clam_layer = overrides.clam_layer;
        else if (name == "--area-threshold") config.area_threshold = overrides.area_threshold;
        else if (name == "--literal-group-sum")
          config.literal_group_sum = overrides.literal_group_sum;
      }
    }
    if (!config.dataset.empty() && !config.scenario.empty()) config.scenario.clear();
    config.validate();
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deep clustering of 2D image datasets with cluster activation maps"};
  app.require_subcommand(1);

  Cli cli;
  auto* sim = app.add_subcommand("simulate", "Generate a synthetic lung-slice dataset");
  auto* pre = app.add_subcommand("pretrain", "Phase 1: train the convolutional autoencoder");
  auto* est = app.add_subcommand("estimate-k", "Silhouette-based K estimation on latents");
  auto* clu = app.add_subcommand("cluster", "Phase 2: joint clustering training");
  auto* cam = app.add_subcommand("clam", "Compute cluster activation maps");
  auto* run = app.add_subcommand("run", "All stages end to end");
  auto* rep = app.add_subcommand("report", "Render the metrics report");
  for (auto* cmd : {sim, pre, est, clu, cam, run, rep}) cli.attach_common(cmd);

  CLI11_PARSE(app, argc, argv);
  CLI::App* cmd = app.get_subcommands().front();

  try {
    cli.finalize(cmd);
    const clam::ExperimentConfig& config = cli.config;
    const std::string name = cmd->get_name();
    if (name == "simulate") {
      clam::stage_simulate(config);
      std::cout << "dataset written under " << config.output_dir << "\n";
    } else if (name == "pretrain") {
      clam::stage_pretrain(config);
      std::cout << "pretrained checkpoint written under " << config.output_dir << "\n";
    } else if (name == "estimate-k") {
      clam::KEstimate est_k = clam::stage_estimate_k(config);
      std::cout << "k\tscore\n";
      for (size_t i = 0; i < est_k.candidates.size(); ++i)
        std::cout << est_k.candidates[i] << '\t' << est_k.scores[i] << "\n";
      std::cout << "chosen K = " << est_k.chosen_k << "\n";
    } else if (name == "cluster") {
      clam::stage_cluster(config);
      std::cout << "clustered checkpoint written under " << config.output_dir << "\n";
    } else if (name == "clam") {
      clam::stage_clam(config);
      std::cout << "activation maps written under " << config.output_dir << "\n";
    } else if (name == "run") {
      const std::string dir = clam::run_experiment(config);
      std::cout << clam::render_report(clam::RunPaths{dir}.metrics_json());
    } else if (name == "report") {
      clam::stage_report(config);
      std::cout << clam::render_report(clam::RunPaths{config.output_dir}.metrics_json());
    }
  } catch (const clam::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const clam::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const clam::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
