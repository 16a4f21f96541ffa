#include "clam/simgen.hpp"

#include <cstring>
#include <fstream>

#include "clam/errors.hpp"
#include "clam/rng.hpp"

namespace clam {

namespace {

// Lobe geometry: centers mirrored about the midline, clear of the frame edge.
constexpr double kLobeRowCenter = 31.5;
constexpr double kLeftLobeCol = 20.0;
constexpr double kRightLobeCol = 43.0;
constexpr double kLobeSemiAxisCol = 9.0;
constexpr double kLobeSemiAxisRow = 22.0;

constexpr int kDefaultRadius = 4;
constexpr double kDefaultAddedHu = 200.0;
// Right-lung mid-lobe point used when location is held fixed.
constexpr int kDefaultRow = 32;
constexpr int kDefaultCol = 43;

void write_u32(std::ofstream& out, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
  out.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ofstream& out, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
  out.write(reinterpret_cast<const char*>(b), 8);
}

void write_f64(std::ofstream& out, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  write_u64(out, bits);
}

uint32_t read_u32(std::ifstream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw DataError("dataset: truncated file");
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
  return v;
}

uint64_t read_u64(std::ifstream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (!in) throw DataError("dataset: truncated file");
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

double read_f64(std::ifstream& in) {
  uint64_t bits = read_u64(in);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

}  // namespace

const char* varied_name(Varied v) {
  switch (v) {
    case Varied::Intensity:
      return "intensity";
    case Varied::Location:
      return "location";
    case Varied::Size:
      return "size";
  }
  return "?";
}

Varied varied_from_name(const std::string& name) {
  if (name == "intensity") return Varied::Intensity;
  if (name == "location") return Varied::Location;
  if (name == "size") return Varied::Size;
  throw ConfigError("unknown scenario '" + name + "' (want intensity|location|size)");
}

Tensor make_lung_mask(int size) {
  if (size < 16) throw DataError("make_lung_mask: size must be >= 16, got " + std::to_string(size));
  const double s = static_cast<double>(size) / 64.0;
  Tensor mask({size, size});
  const double rc = kLobeRowCenter * s;
  const double ar = kLobeSemiAxisRow * s;
  const double ac = kLobeSemiAxisCol * s;
  const double cc = kLeftLobeCol * s;
  // Left lobe, then mirror so the mask is exactly symmetric for any size.
  for (int r = 0; r < size; ++r)
    for (int c = 0; c < size / 2; ++c) {
      const double dr = (static_cast<double>(r) - rc) / ar;
      const double dc = (static_cast<double>(c) - cc) / ac;
      if (dr * dr + dc * dc <= 1.0) {
        mask.at({r, c}) = 1.0;
        mask.at({r, size - 1 - c}) = 1.0;
      }
    }
  return mask;
}

ScenarioSpec make_scenario(Varied varied, int true_k, int n_images, uint64_t seed) {
  if (true_k < 2 || true_k > 5)
    throw ConfigError("scenario: true_k must be in [2,5], got " + std::to_string(true_k));
  if (n_images < true_k) throw ConfigError("scenario: fewer images than clusters");
  ScenarioSpec spec;
  spec.varied = varied;
  spec.true_k = true_k;
  spec.n_images = n_images;
  spec.seed = seed;

  // "range from 0 to 400 HU, in 100 unit increments"
  static constexpr double kAddedHu[5] = {0.0, 100.0, 200.0, 300.0, 400.0};
  // "2 to 6 pixel radii in increments of 1 pixel"
  static constexpr int kRadii[5] = {2, 3, 4, 5, 6};
  // Canonical centers spread over both lobes: upper/lower right, upper/lower
  // left, mid right.
  static constexpr int kCenters[5][2] = {{18, 43}, {45, 43}, {18, 20}, {45, 20}, {32, 43}};

  for (int c = 0; c < true_k; ++c) {
    AbnormalitySpec ab;
    switch (varied) {
      case Varied::Intensity:
        ab = {kAddedHu[c], kDefaultRow, kDefaultCol, kDefaultRadius};
        break;
      case Varied::Location:
        ab = {kDefaultAddedHu, kCenters[c][0], kCenters[c][1], kDefaultRadius};
        break;
      case Varied::Size:
        ab = {kDefaultAddedHu, kDefaultRow, kDefaultCol, kRadii[c]};
        break;
    }
    spec.clusters.push_back(ab);
  }
  return spec;
}

LabeledDataset simulate_scenario(const ScenarioSpec& spec) {
  if (spec.true_k < 1 || spec.clusters.size() != static_cast<size_t>(spec.true_k))
    throw ConfigError("simulate: spec has " + std::to_string(spec.clusters.size()) +
                      " cluster params for true_k = " + std::to_string(spec.true_k));
  const int hw = 64;
  Tensor mask = make_lung_mask(hw);

  // Every abnormality disk must lie fully inside the lung mask.
  for (const auto& ab : spec.clusters) {
    for (int r = ab.row - ab.radius; r <= ab.row + ab.radius; ++r)
      for (int c = ab.col - ab.radius; c <= ab.col + ab.radius; ++c) {
        const int dr = r - ab.row, dc = c - ab.col;
        if (dr * dr + dc * dc > ab.radius * ab.radius) continue;
        if (r < 0 || r >= hw || c < 0 || c >= hw || mask.at({r, c}) == 0.0)
          throw ConfigError("simulate: abnormality disk at (" + std::to_string(ab.row) + "," +
                            std::to_string(ab.col) + ") r=" + std::to_string(ab.radius) +
                            " leaves the lung mask");
      }
  }

  LabeledDataset ds;
  ds.spec = spec;
  ds.images = Tensor({spec.n_images, 1, hw, hw});
  ds.labels.resize(static_cast<size_t>(spec.n_images));

  // Cluster sizes as equal as possible, contiguous blocks.
  const int base = spec.n_images / spec.true_k;
  const int extra = spec.n_images % spec.true_k;
  int idx = 0;
  for (int c = 0; c < spec.true_k; ++c) {
    const int count = base + (c < extra ? 1 : 0);
    for (int i = 0; i < count; ++i) ds.labels[static_cast<size_t>(idx++)] = c;
  }

  Rng rng(spec.seed);
  for (int i = 0; i < spec.n_images; ++i) {
    double* img = ds.images.data() + static_cast<int64_t>(i) * hw * hw;
    const AbnormalitySpec& ab = spec.clusters[static_cast<size_t>(ds.labels[static_cast<size_t>(i)])];
    for (int r = 0; r < hw; ++r)
      for (int c = 0; c < hw; ++c) {
        double v = spec.background_hu;
        if (mask.at({r, c}) != 0.0) {
          v = rng.truncated_normal(spec.noise_mean, spec.noise_sd, spec.noise_lo, spec.noise_hi);
          const int dr = r - ab.row, dc = c - ab.col;
          if (dr * dr + dc * dc <= ab.radius * ab.radius) v += ab.added_hu;
        }
        img[r * hw + c] = v;
      }
  }
  return ds;
}

void save_dataset(const LabeledDataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("dataset: cannot write " + path);
  out.write("CLDS", 4);
  write_u32(out, 1);  // version
  write_u32(out, static_cast<uint32_t>(ds.images.dim(0)));
  write_u32(out, static_cast<uint32_t>(ds.images.dim(2)));
  write_u32(out, static_cast<uint32_t>(ds.images.dim(3)));
  write_u32(out, static_cast<uint32_t>(ds.spec.true_k));
  write_u64(out, ds.spec.seed);
  for (int64_t i = 0; i < ds.images.numel(); ++i) write_f64(out, ds.images.data()[i]);
  for (int label : ds.labels) write_u32(out, static_cast<uint32_t>(label));
  if (!out) throw DataError("dataset: write failed for " + path);
}

LabeledDataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("dataset: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "CLDS", 4) != 0)
    throw DataError("dataset: bad magic in " + path);
  const uint32_t version = read_u32(in);
  if (version != 1)
    throw DataError("dataset: unsupported version " + std::to_string(version));
  const int64_t n = read_u32(in);
  const int64_t h = read_u32(in);
  const int64_t w = read_u32(in);
  LabeledDataset ds;
  ds.spec.true_k = static_cast<int>(read_u32(in));
  ds.spec.seed = read_u64(in);
  ds.spec.n_images = static_cast<int>(n);
  ds.images = Tensor({n, 1, h, w});
  for (int64_t i = 0; i < ds.images.numel(); ++i) ds.images.data()[i] = read_f64(in);
  ds.labels.resize(static_cast<size_t>(n));
  for (auto& label : ds.labels) label = static_cast<int>(read_u32(in));
  return ds;
}

void write_manifest_csv(const LabeledDataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("manifest: cannot write " + path);
  out << "image,cluster,added_hu,center_row,center_col,radius\n";
  for (size_t i = 0; i < ds.labels.size(); ++i) {
    const int c = ds.labels[i];
    if (static_cast<size_t>(c) < ds.spec.clusters.size()) {
      const auto& ab = ds.spec.clusters[static_cast<size_t>(c)];
      out << i << ',' << c << ',' << ab.added_hu << ',' << ab.row << ',' << ab.col << ','
          << ab.radius << '\n';
    } else {
      out << i << ',' << c << ",,,,\n";
    }
  }
}

}  // namespace clam
