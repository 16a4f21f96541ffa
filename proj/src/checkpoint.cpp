#include "clam/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "clam/errors.hpp"

namespace clam {

namespace {

constexpr uint32_t kVersion = 1;

void put_u32(std::ofstream& out, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
  out.write(reinterpret_cast<const char*>(b), 4);
}

void put_i32(std::ofstream& out, int32_t v) { put_u32(out, static_cast<uint32_t>(v)); }

void put_u64(std::ofstream& out, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
  out.write(reinterpret_cast<const char*>(b), 8);
}

void put_f64(std::ofstream& out, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(out, bits);
}

uint32_t get_u32(std::ifstream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw DataError("checkpoint: truncated file");
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
  return v;
}

int32_t get_i32(std::ifstream& in) { return static_cast<int32_t>(get_u32(in)); }

uint64_t get_u64(std::ifstream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (!in) throw DataError("checkpoint: truncated file");
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

double get_f64(std::ifstream& in) {
  uint64_t bits = get_u64(in);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

void put_blob(std::ofstream& out, const Tensor& t) {
  if (!t.defined()) {
    put_u64(out, 0);
    return;
  }
  put_u64(out, static_cast<uint64_t>(t.numel()));
  for (int64_t i = 0; i < t.numel(); ++i) put_f64(out, t.data()[i]);
}

void get_blob(std::ifstream& in, Tensor& t) {
  const uint64_t count = get_u64(in);
  if (!t.defined()) {
    if (count != 0) throw DataError("checkpoint: unexpected parameter blob");
    return;
  }
  if (count != static_cast<uint64_t>(t.numel()))
    throw DataError("checkpoint: parameter blob has " + std::to_string(count) +
                    " values, expected " + std::to_string(t.numel()));
  for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = get_f64(in);
}

void put_layer(std::ofstream& out, const Layer& l) {
  put_u32(out, static_cast<uint32_t>(l.spec.kind));
  put_i32(out, static_cast<int32_t>(l.spec.in_ch));
  put_i32(out, static_cast<int32_t>(l.spec.out_ch));
  put_i32(out, static_cast<int32_t>(l.spec.kernel));
  put_i32(out, l.spec.stride);
  put_i32(out, l.spec.pad.top);
  put_i32(out, l.spec.pad.left);
  put_i32(out, l.spec.pad.bottom);
  put_i32(out, l.spec.pad.right);
  put_f64(out, l.spec.slope);
  put_blob(out, l.weight);
  put_blob(out, l.bias);
}

void check_layer_matches(std::ifstream& in, Layer& l, size_t index) {
  const auto kind = static_cast<LayerKind>(get_u32(in));
  const int64_t in_ch = get_i32(in);
  const int64_t out_ch = get_i32(in);
  const int64_t kernel = get_i32(in);
  const int stride = get_i32(in);
  Padding pad{get_i32(in), get_i32(in), get_i32(in), get_i32(in)};
  const double slope = get_f64(in);
  if (kind != l.spec.kind || in_ch != l.spec.in_ch || out_ch != l.spec.out_ch ||
      kernel != l.spec.kernel || stride != l.spec.stride || pad.top != l.spec.pad.top ||
      pad.left != l.spec.pad.left || pad.bottom != l.spec.pad.bottom ||
      pad.right != l.spec.pad.right)
    throw DataError("checkpoint: layer " + std::to_string(index) +
                    " does not match the architecture");
  l.spec.slope = slope;
  get_blob(in, l.weight);
  get_blob(in, l.bias);
}

}  // namespace

void save_checkpoint(const CaeModel& model, const ClusterHead* head, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("checkpoint: cannot write " + path);
  out.write("CLAM", 4);
  put_u32(out, kVersion);
  put_u32(out, static_cast<uint32_t>(model.latent_dim));
  put_u32(out, static_cast<uint32_t>(model.input_hw));
  const bool has_head = head != nullptr && head->centroids.defined();
  put_u32(out, has_head ? 1 : 0);
  put_u32(out, static_cast<uint32_t>(model.encoder.size()));
  put_u32(out, static_cast<uint32_t>(model.decoder.size()));
  for (const Layer& l : model.encoder) put_layer(out, l);
  for (const Layer& l : model.decoder) put_layer(out, l);
  if (has_head) {
    put_u32(out, static_cast<uint32_t>(head->k()));
    put_u32(out, static_cast<uint32_t>(head->latent_dim()));
    for (int64_t i = 0; i < head->centroids.numel(); ++i) put_f64(out, head->centroids.data()[i]);
  }
  if (!out) throw DataError("checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("checkpoint: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "CLAM", 4) != 0)
    throw DataError("checkpoint: bad magic in " + path);
  const uint32_t version = get_u32(in);
  if (version != kVersion)
    throw DataError("checkpoint: unsupported version " + std::to_string(version));
  const int64_t latent_dim = get_u32(in);
  const int64_t input_hw = get_u32(in);
  const bool has_head = get_u32(in) != 0;
  const uint32_t n_enc = get_u32(in);
  const uint32_t n_dec = get_u32(in);

  Checkpoint ck;
  // Rebuild the fixed architecture, then overwrite parameters from the blobs.
  ck.model = CaeModel::build(latent_dim, 0);
  if (ck.model.input_hw != input_hw || ck.model.encoder.size() != n_enc ||
      ck.model.decoder.size() != n_dec)
    throw DataError("checkpoint: architecture does not match this build");
  size_t index = 0;
  for (Layer& l : ck.model.encoder) check_layer_matches(in, l, index++);
  for (Layer& l : ck.model.decoder) check_layer_matches(in, l, index++);
  if (has_head) {
    const int64_t k = get_u32(in);
    const int64_t j = get_u32(in);
    if (j != latent_dim) throw DataError("checkpoint: head latent dim mismatch");
    ClusterHead head;
    head.centroids = Tensor({k, j});
    for (int64_t i = 0; i < head.centroids.numel(); ++i) head.centroids.data()[i] = get_f64(in);
    ck.head = std::move(head);
  }
  return ck;
}

}  // namespace clam
