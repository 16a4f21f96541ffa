#include "clam/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "clam/cae.hpp"
#include "clam/checkpoint.hpp"
#include "clam/clammap.hpp"
#include "clam/cluster.hpp"
#include "clam/errors.hpp"
#include "clam/simgen.hpp"

namespace clam {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

// Wall-clock durations collected per stage; keyed by stage name. Excluded
// from determinism comparisons by consumers.
thread_local std::map<std::string, double>* g_durations = nullptr;

struct StageTimer {
  std::string name;
  std::chrono::steady_clock::time_point start;

  explicit StageTimer(std::string n) : name(std::move(n)), start(std::chrono::steady_clock::now()) {}
  ~StageTimer() {
    if (!g_durations) return;
    const auto dt = std::chrono::steady_clock::now() - start;
    (*g_durations)[name] = std::chrono::duration<double>(dt).count();
  }
};

// Flags the partial run, then rethrows with the stage name while keeping the
// error category (CLI exit codes depend on it).
[[noreturn]] void stage_fail(const std::string& stage, const RunPaths& paths,
                             const std::exception& err) {
  std::ofstream status(paths.status());
  status << "failed at " << stage << ": " << err.what() << "\n";
  const std::string msg = "stage " + stage + ": " + err.what();
  if (dynamic_cast<const ConfigError*>(&err)) throw ConfigError(msg);
  if (dynamic_cast<const NumericError*>(&err)) throw NumericError(msg);
  if (dynamic_cast<const ShapeError*>(&err)) throw ShapeError(msg);
  throw DataError(msg);
}

LabeledDataset load_run_dataset(const ExperimentConfig& config, const RunPaths& paths) {
  if (!config.dataset.empty()) return load_dataset(config.dataset);
  return load_dataset(paths.dataset());
}

Checkpoint load_clustered(const RunPaths& paths) {
  Checkpoint ck = load_checkpoint(paths.clustered());
  if (!ck.head.has_value())
    throw DataError("clustered checkpoint " + paths.clustered() + " has no cluster head");
  return ck;
}

void save_silhouette_csv(const KEstimate& est, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << "k,score\n";
  out.precision(17);
  for (size_t i = 0; i < est.candidates.size(); ++i)
    out << est.candidates[i] << ',' << est.scores[i] << '\n';
}

KEstimate load_silhouette_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path + " (run estimate-k first)");
  std::string line;
  std::getline(in, line);  // header
  KEstimate est;
  double best = -2.0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const size_t comma = line.find(',');
    const int k = std::stoi(line.substr(0, comma));
    const double s = std::stod(line.substr(comma + 1));
    est.candidates.push_back(k);
    est.scores.push_back(s);
    if (s > best) {
      best = s;
      est.chosen_k = k;
    }
  }
  if (est.candidates.empty()) throw DataError("empty silhouette table " + path);
  return est;
}

int resolve_fit_k(const ExperimentConfig& config, const RunPaths& paths) {
  if (!config.auto_k()) return config.fit_k;
  return load_silhouette_csv(paths.silhouette()).chosen_k;
}

struct Assignments {
  std::vector<int> pred;
  std::vector<int> truth;  // -1 when unknown
  std::vector<double> q_max;
};

void save_assignments(const Assignments& a, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << "image,true_cluster,pred_cluster,q_max\n";
  out.precision(17);
  for (size_t i = 0; i < a.pred.size(); ++i)
    out << i << ',' << a.truth[i] << ',' << a.pred[i] << ',' << a.q_max[i] << '\n';
}

Assignments load_assignments(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path + " (run cluster first)");
  std::string line;
  std::getline(in, line);
  Assignments a;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string cell;
    std::getline(row, cell, ',');
    std::getline(row, cell, ',');
    a.truth.push_back(std::stoi(cell));
    std::getline(row, cell, ',');
    a.pred.push_back(std::stoi(cell));
    std::getline(row, cell, ',');
    a.q_max.push_back(std::stod(cell));
  }
  return a;
}

std::vector<LossTraceRow> load_trace_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::string line;
  std::getline(in, line);
  std::vector<LossTraceRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string cell;
    LossTraceRow r;
    std::getline(row, cell, ',');
    r.epoch = std::stoi(cell);
    std::getline(row, cell, ',');
    r.l_r = std::stod(cell);
    std::getline(row, cell, ',');
    r.l_r_per_pixel = std::stod(cell);
    std::getline(row, cell, ',');
    r.l_c = std::stod(cell);
    std::getline(row, cell, ',');
    r.l = std::stod(cell);
    std::getline(row, cell, ',');
    r.gamma = std::stod(cell);
    std::getline(row, cell, ',');
    r.max_q_row_dev = std::stod(cell);
    std::getline(row, cell, ',');
    r.max_p_row_dev = std::stod(cell);
    rows.push_back(r);
  }
  return rows;
}

}  // namespace

uint8_t heatmap_byte(double v) {
  return static_cast<uint8_t>(std::floor(255.0 * v + 0.5));
}

void export_heatmap(const Tensor& map01, const std::string& path) {
  if (map01.ndim() != 2)
    throw DataError("export_heatmap: expected a 2-d map, got " + shape_str(map01.shape()));
  for (int64_t i = 0; i < map01.numel(); ++i) {
    const double v = map01.data()[i];
    if (!(v >= 0.0 && v <= 1.0))
      throw DataError("export_heatmap: value " + std::to_string(v) + " outside [0,1]");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("export_heatmap: cannot write " + path);
  out << "P5\n" << map01.dim(1) << " " << map01.dim(0) << "\n255\n";
  std::vector<uint8_t> bytes(static_cast<size_t>(map01.numel()));
  for (int64_t i = 0; i < map01.numel(); ++i)
    bytes[static_cast<size_t>(i)] = heatmap_byte(map01.data()[i]);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void stage_simulate(const ExperimentConfig& config) {
  RunPaths paths{config.output_dir};
  StageTimer timer("simulate");
  try {
    fs::create_directories(paths.dir);
    save_config(config, paths.config());
    if (!config.dataset.empty()) {
      (void)load_dataset(config.dataset);  // validate early
      return;
    }
    ScenarioSpec spec = make_scenario(varied_from_name(config.scenario), config.true_k,
                                      config.n_images, config.seed);
    LabeledDataset ds = simulate_scenario(spec);
    save_dataset(ds, paths.dataset());
    write_manifest_csv(ds, paths.manifest());
  } catch (const std::exception& e) {
    stage_fail("simulate", paths, e);
  }
}

void stage_pretrain(const ExperimentConfig& config) {
  RunPaths paths{config.output_dir};
  StageTimer timer("pretrain");
  try {
    LabeledDataset ds = load_run_dataset(config, paths);
    Tensor images = normalize_hu(ds.images);
    CaeModel model = CaeModel::build(config.latent_dim, config.seed);
    PretrainOptions opts;
    opts.epochs = config.pretrain_epochs;
    opts.batch_size = config.batch_size;
    opts.seed = config.seed;
    LossTrace trace = pretrain(model, images, opts);
    trace.save_csv(paths.pretrain_trace());
    save_checkpoint(model, nullptr, paths.pretrained());
  } catch (const std::exception& e) {
    stage_fail("pretrain", paths, e);
  }
}

KEstimate stage_estimate_k(const ExperimentConfig& config) {
  RunPaths paths{config.output_dir};
  StageTimer timer("estimate-k");
  try {
    LabeledDataset ds = load_run_dataset(config, paths);
    Checkpoint ck = load_checkpoint(paths.pretrained());
    Tensor z = encode_dataset(ck.model, normalize_hu(ds.images));
    KEstimate est = estimate_k(z, config.k_min, config.k_max, config.seed);
    save_silhouette_csv(est, paths.silhouette());
    return est;
  } catch (const std::exception& e) {
    stage_fail("estimate-k", paths, e);
  }
}

void stage_cluster(const ExperimentConfig& config) {
  RunPaths paths{config.output_dir};
  StageTimer timer("cluster");
  try {
    LabeledDataset ds = load_run_dataset(config, paths);
    Tensor images = normalize_hu(ds.images);
    Checkpoint ck = load_checkpoint(paths.pretrained());
    const int fit_k = resolve_fit_k(config, paths);

    Tensor z = encode_dataset(ck.model, images);
    KMeansResult init = kmeans(z, fit_k, config.seed);
    ClusterHead head{init.centroids};

    JointTrainOptions opts;
    opts.epochs = config.cluster_epochs;
    opts.batch_size = config.batch_size;
    opts.gamma = config.gamma;
    opts.seed = config.seed;
    LossTrace trace = joint_train(ck.model, head, images, opts);
    trace.save_csv(paths.cluster_trace());
    save_checkpoint(ck.model, &head, paths.clustered());

    SoftAssign q = assign_dataset(ck.model, head, images);
    Assignments a;
    a.pred = hard_assign(q);
    a.truth.assign(ds.labels.begin(), ds.labels.end());
    if (a.truth.size() != a.pred.size()) a.truth.assign(a.pred.size(), -1);
    a.q_max.resize(a.pred.size());
    for (size_t i = 0; i < a.pred.size(); ++i)
      a.q_max[i] = q.q.data()[static_cast<int64_t>(i) * head.k() + a.pred[i]];
    save_assignments(a, paths.assignments());

    if (config.post_silhouette) {
      Tensor z_post = encode_dataset(ck.model, images);
      KEstimate post = estimate_k(z_post, config.k_min, config.k_max, config.seed);
      save_silhouette_csv(post, paths.silhouette_post());
    }
  } catch (const std::exception& e) {
    stage_fail("cluster", paths, e);
  }
}

void stage_clam(const ExperimentConfig& config) {
  RunPaths paths{config.output_dir};
  StageTimer timer("clam");
  try {
    LabeledDataset ds = load_run_dataset(config, paths);
    Tensor images = normalize_hu(ds.images);
    Checkpoint ck = load_clustered(paths);
    const ClusterHead& head = *ck.head;

    std::vector<ClamMap> maps = compute_clams(ck.model, head, images, config.clam_layer);

    // Raw 64-bit grids, one per image, in image order.
    {
      std::ofstream out(paths.clam_grids(), std::ios::binary);
      if (!out) throw DataError("cannot write " + paths.clam_grids());
      for (const ClamMap& m : maps)
        out.write(reinterpret_cast<const char*>(m.map.data()),
                  static_cast<std::streamsize>(m.map.numel() * sizeof(double)));
    }
    {
      std::ofstream out(paths.clam_areas());
      if (!out) throw DataError("cannot write " + paths.clam_areas());
      out << "image,pred_cluster,area\n";
      for (size_t i = 0; i < maps.size(); ++i)
        out << i << ',' << maps[i].cluster << ','
            << activated_area(maps[i], config.area_threshold) << '\n';
    }

    std::vector<int> pred(maps.size());
    for (size_t i = 0; i < maps.size(); ++i) pred[i] = maps[i].cluster;
    GroupClam group = group_clam(maps, pred, head.k(), config.literal_group_sum);
    for (int64_t c = 0; c < head.k(); ++c)
      if (group.cluster_maps[static_cast<size_t>(c)].defined())
        export_heatmap(group.cluster_maps[static_cast<size_t>(c)], paths.cluster_pgm(c));
    export_heatmap(group.population_map, paths.population_pgm());
  } catch (const std::exception& e) {
    stage_fail("clam", paths, e);
  }
}

void stage_report(const ExperimentConfig& config) {
  RunPaths paths{config.output_dir};
  StageTimer timer("report");
  try {
    LabeledDataset ds = load_run_dataset(config, paths);
    Assignments assign = load_assignments(paths.assignments());
    const int64_t n = static_cast<int64_t>(assign.pred.size());
    int fit_k = 0;
    for (int p : assign.pred) fit_k = std::max(fit_k, p + 1);

    json doc;
    doc["run"] = {{"seed", config.seed},
                  {"config_hash", config_hash(config)},
                  {"scenario", config.scenario.empty() ? config.dataset : config.scenario},
                  {"n_images", n},
                  {"fit_k", fit_k}};

    const bool have_truth = !assign.truth.empty() && assign.truth.front() >= 0;
    if (have_truth) {
      std::vector<int> truth(assign.truth.begin(), assign.truth.end());
      doc["accuracy"] = matched_accuracy(assign.pred, truth);
      doc["true_k"] = ds.spec.true_k;
    }

    if (fs::exists(paths.silhouette())) {
      KEstimate est = load_silhouette_csv(paths.silhouette());
      json table = json::array();
      for (size_t i = 0; i < est.candidates.size(); ++i)
        table.push_back({{"k", est.candidates[i]}, {"score", est.scores[i]}});
      doc["silhouette"] = {{"chosen_k", est.chosen_k}, {"table", table}};
    }
    if (fs::exists(paths.silhouette_post())) {
      KEstimate est = load_silhouette_csv(paths.silhouette_post());
      json table = json::array();
      for (size_t i = 0; i < est.candidates.size(); ++i)
        table.push_back({{"k", est.candidates[i]}, {"score", est.scores[i]}});
      doc["silhouette_post"] = {{"chosen_k", est.chosen_k}, {"table", table}};
    }

    for (const auto& [key, path] :
         {std::pair<std::string, std::string>{"loss_pretrain", paths.pretrain_trace()},
          {"loss_cluster", paths.cluster_trace()}}) {
      if (!fs::exists(path)) continue;
      auto rows = load_trace_csv(path);
      if (rows.empty()) continue;
      doc[key] = {{"epochs", rows.size()},
                  {"first_l", rows.front().l},
                  {"last_l", rows.back().l},
                  {"first_l_r", rows.front().l_r},
                  {"last_l_r", rows.back().l_r},
                  {"last_l_c", rows.back().l_c},
                  {"max_q_row_dev", 0.0},
                  {"max_p_row_dev", 0.0}};
      double qdev = 0.0, pdev = 0.0;
      for (const auto& r : rows) {
        qdev = std::max(qdev, r.max_q_row_dev);
        pdev = std::max(pdev, r.max_p_row_dev);
      }
      doc[key]["max_q_row_dev"] = qdev;
      doc[key]["max_p_row_dev"] = pdev;
    }

    // Per-cluster activated area and mean HU over the lung mask.
    if (fs::exists(paths.clam_areas())) {
      std::ifstream in(paths.clam_areas());
      std::string line;
      std::getline(in, line);
      std::vector<std::vector<int64_t>> areas(static_cast<size_t>(fit_k));
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string cell;
        std::getline(row, cell, ',');
        std::getline(row, cell, ',');
        const int c = std::stoi(cell);
        std::getline(row, cell, ',');
        areas[static_cast<size_t>(c)].push_back(std::stoll(cell));
      }
      json area_stats = json::array();
      for (int c = 0; c < fit_k; ++c) {
        auto& v = areas[static_cast<size_t>(c)];
        json s = {{"cluster", c}, {"count", v.size()}};
        if (!v.empty()) {
          std::sort(v.begin(), v.end());
          double mean = 0.0;
          for (int64_t a : v) mean += static_cast<double>(a);
          mean /= static_cast<double>(v.size());
          s["min"] = v.front();
          s["median"] = v[v.size() / 2];
          s["mean"] = mean;
          s["max"] = v.back();
        }
        area_stats.push_back(s);
      }
      doc["activated_area"] = {{"threshold", config.area_threshold}, {"per_cluster", area_stats}};
    }

    {
      Tensor mask = make_lung_mask(static_cast<int>(ds.images.dim(2)));
      const int64_t pixels = ds.images.numel() / ds.images.dim(0);
      std::vector<double> sum(static_cast<size_t>(fit_k), 0.0);
      std::vector<int64_t> count(static_cast<size_t>(fit_k), 0);
      for (int64_t i = 0; i < n; ++i) {
        const double* img = ds.images.data() + i * pixels;
        double acc = 0.0;
        int64_t m = 0;
        for (int64_t p = 0; p < pixels; ++p)
          if (mask.data()[p] != 0.0) {
            acc += img[p];
            ++m;
          }
        const int c = assign.pred[static_cast<size_t>(i)];
        sum[static_cast<size_t>(c)] += acc / static_cast<double>(m);
        count[static_cast<size_t>(c)] += 1;
      }
      json hu = json::array();
      for (int c = 0; c < fit_k; ++c)
        hu.push_back({{"cluster", c},
                      {"count", count[static_cast<size_t>(c)]},
                      {"mean_hu", count[static_cast<size_t>(c)] > 0
                                      ? sum[static_cast<size_t>(c)] /
                                            static_cast<double>(count[static_cast<size_t>(c)])
                                      : 0.0}});
      doc["mean_hu_per_cluster"] = hu;
    }

    if (g_durations) {
      json d;
      for (const auto& [k, v] : *g_durations) d[k] = v;
      doc["durations_sec"] = d;
    }

    {
      std::ofstream out(paths.metrics_json());
      out << doc.dump(2) << "\n";
    }
    std::ofstream txt(paths.metrics_txt());
    txt << render_report(paths.metrics_json());
    std::ofstream status(paths.status());
    status << "ok\n";
  } catch (const std::exception& e) {
    stage_fail("report", paths, e);
  }
}

std::string run_experiment(const ExperimentConfig& config) {
  config.validate();
  std::map<std::string, double> durations;
  g_durations = &durations;
  try {
    stage_simulate(config);
    stage_pretrain(config);
    if (config.auto_k()) stage_estimate_k(config);
    stage_cluster(config);
    stage_clam(config);
    stage_report(config);
  } catch (...) {
    g_durations = nullptr;
    throw;
  }
  g_durations = nullptr;
  return config.output_dir;
}

std::string render_report(const std::string& metrics_json_path) {
  std::ifstream in(metrics_json_path);
  if (!in) throw DataError("report: cannot open " + metrics_json_path);
  json doc = json::parse(in);
  std::ostringstream out;
  out << "run summary\n===========\n";
  out << "scenario      : " << doc["run"]["scenario"].get<std::string>() << "\n";
  out << "images        : " << doc["run"]["n_images"] << "\n";
  out << "seed          : " << doc["run"]["seed"] << "\n";
  out << "config hash   : " << doc["run"]["config_hash"] << "\n";
  out << "fit K         : " << doc["run"]["fit_k"] << "\n";
  if (doc.contains("true_k")) out << "true K        : " << doc["true_k"] << "\n";
  if (doc.contains("accuracy")) out << "accuracy      : " << doc["accuracy"] << "\n";
  if (doc.contains("silhouette")) {
    out << "silhouette (pre-clustering): chosen K = " << doc["silhouette"]["chosen_k"] << "\n";
    out << "  k   score\n";
    for (const auto& row : doc["silhouette"]["table"])
      out << "  " << row["k"] << "   " << row["score"] << "\n";
  }
  if (doc.contains("silhouette_post")) {
    out << "silhouette (post-clustering): chosen K = " << doc["silhouette_post"]["chosen_k"]
        << "\n";
  }
  for (const char* key : {"loss_pretrain", "loss_cluster"}) {
    if (!doc.contains(key)) continue;
    out << key << "  : epochs " << doc[key]["epochs"] << ", L " << doc[key]["first_l"] << " -> "
        << doc[key]["last_l"] << "\n";
  }
  if (doc.contains("activated_area")) {
    out << "activated area (threshold " << doc["activated_area"]["threshold"] << ")\n";
    out << "  cluster  count  min  median  mean  max\n";
    for (const auto& row : doc["activated_area"]["per_cluster"]) {
      out << "  " << row["cluster"] << "  " << row["count"];
      if (row.contains("min"))
        out << "  " << row["min"] << "  " << row["median"] << "  " << row["mean"] << "  "
            << row["max"];
      out << "\n";
    }
  }
  if (doc.contains("mean_hu_per_cluster")) {
    out << "mean HU per cluster\n";
    for (const auto& row : doc["mean_hu_per_cluster"])
      out << "  cluster " << row["cluster"] << ": " << row["mean_hu"] << " (n=" << row["count"]
          << ")\n";
  }
  return out.str();
}

}  // namespace clam
