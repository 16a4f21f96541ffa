#include "clam/config.hpp"

#include <charconv>
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "clam/errors.hpp"
#include "clam/simgen.hpp"

namespace clam {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

int parse_int(const std::string& key, const std::string& v) {
  int out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size())
    throw ConfigError("config: " + key + " wants an integer, got '" + v + "'");
  return out;
}

uint64_t parse_u64(const std::string& key, const std::string& v) {
  uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size())
    throw ConfigError("config: " + key + " wants an unsigned integer, got '" + v + "'");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    double out = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config: " + key + " wants a number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError("config: " + key + " wants true|false, got '" + v + "'");
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (scenario.empty() == dataset.empty())
    throw ConfigError("config: exactly one of data.scenario and data.dataset must be set");
  if (!scenario.empty()) {
    varied_from_name(scenario);  // throws on unknown name
    if (true_k < 2 || true_k > 5) throw ConfigError("config: data.true_k must be in [2,5]");
    if (n_images < true_k) throw ConfigError("config: data.n_images < data.true_k");
  }
  if (latent_dim < 1) throw ConfigError("config: model.latent_dim must be >= 1");
  if (pretrain_epochs < 1 || cluster_epochs < 0)
    throw ConfigError("config: train epochs out of range");
  if (batch_size < 1) throw ConfigError("config: train.batch_size must be >= 1");
  if (gamma < 0.0) throw ConfigError("config: train.gamma must be >= 0");
  if (fit_k != 0 && fit_k < 2) throw ConfigError("config: cluster.k must be auto or >= 2");
  if (k_min < 2 || k_max < k_min || k_max > 8)
    throw ConfigError("config: cluster k range must satisfy 2 <= k_min <= k_max <= 8");
  if (area_threshold <= 0.0 || area_threshold >= 1.0)
    throw ConfigError("config: clam.area_threshold must be in (0,1)");
  if (output_dir.empty()) throw ConfigError("config: experiment.output_dir must be set");
}

ExperimentConfig parse_config_text(const std::string& text) {
  ExperimentConfig c;  // defaults match the simulation-study schedule
  std::istringstream in(text);
  std::string line, section;
  int line_no = 0;
  bool scenario_set = false, dataset_set = false;
  while (std::getline(in, line)) {
    ++line_no;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("config: malformed section at line " + std::to_string(line_no));
      section = line.substr(1, line.size() - 2);
      if (section != "experiment" && section != "data" && section != "model" &&
          section != "train" && section != "cluster" && section != "clam")
        throw ConfigError("config: unknown section [" + section + "]");
      continue;
    }
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: expected key = value at line " + std::to_string(line_no));
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const std::string full = section + "." + key;

    if (full == "experiment.seed") c.seed = parse_u64(full, value);
    else if (full == "experiment.output_dir") c.output_dir = value;
    else if (full == "data.scenario") { c.scenario = value; scenario_set = true; }
    else if (full == "data.true_k") c.true_k = parse_int(full, value);
    else if (full == "data.n_images") c.n_images = parse_int(full, value);
    else if (full == "data.dataset") { c.dataset = value; dataset_set = true; }
    else if (full == "model.latent_dim") c.latent_dim = parse_int(full, value);
    else if (full == "train.pretrain_epochs") c.pretrain_epochs = parse_int(full, value);
    else if (full == "train.cluster_epochs") c.cluster_epochs = parse_int(full, value);
    else if (full == "train.batch_size") c.batch_size = parse_int(full, value);
    else if (full == "train.gamma") c.gamma = parse_double(full, value);
    else if (full == "cluster.k")
      c.fit_k = value == "auto" ? 0 : parse_int(full, value);
    else if (full == "cluster.k_min") c.k_min = parse_int(full, value);
    else if (full == "cluster.k_max") c.k_max = parse_int(full, value);
    else if (full == "cluster.post_silhouette") c.post_silhouette = parse_bool(full, value);
    else if (full == "clam.layer")
      c.clam_layer = value == "last" ? -1 : parse_int(full, value);
    else if (full == "clam.area_threshold") c.area_threshold = parse_double(full, value);
    else if (full == "clam.literal_group_sum") c.literal_group_sum = parse_bool(full, value);
    else
      throw ConfigError("config: unknown key '" + full + "' at line " + std::to_string(line_no));
  }
  if (dataset_set && !scenario_set) c.scenario = "";
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

std::string config_to_text(const ExperimentConfig& c) {
  std::ostringstream out;
  out << "[experiment]\n";
  out << "seed = " << c.seed << "\n";
  out << "output_dir = " << c.output_dir << "\n";
  out << "\n[data]\n";
  if (!c.scenario.empty()) {
    out << "scenario = " << c.scenario << "\n";
    out << "true_k = " << c.true_k << "\n";
    out << "n_images = " << c.n_images << "\n";
  } else {
    out << "dataset = " << c.dataset << "\n";
  }
  out << "\n[model]\n";
  out << "latent_dim = " << c.latent_dim << "\n";
  out << "\n[train]\n";
  out << "pretrain_epochs = " << c.pretrain_epochs << "\n";
  out << "cluster_epochs = " << c.cluster_epochs << "\n";
  out << "batch_size = " << c.batch_size << "\n";
  out << "gamma = " << fmt_double(c.gamma) << "\n";
  out << "\n[cluster]\n";
  if (c.auto_k())
    out << "k = auto\n";
  else
    out << "k = " << c.fit_k << "\n";
  out << "k_min = " << c.k_min << "\n";
  out << "k_max = " << c.k_max << "\n";
  out << "post_silhouette = " << (c.post_silhouette ? "true" : "false") << "\n";
  out << "\n[clam]\n";
  if (c.clam_layer < 0)
    out << "layer = last\n";
  else
    out << "layer = " << c.clam_layer << "\n";
  out << "area_threshold = " << fmt_double(c.area_threshold) << "\n";
  out << "literal_group_sum = " << (c.literal_group_sum ? "true" : "false") << "\n";
  return out.str();
}

void save_config(const ExperimentConfig& config, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("config: cannot write " + path);
  out << config_to_text(config);
}

uint64_t config_hash(const ExperimentConfig& config) {
  const std::string text = config_to_text(config);
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace clam
