#include "clam/clammap.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include "clam/errors.hpp"
#include "clam/ops.hpp"

namespace clam {

namespace {

void check_trained_head(const ClusterHead& head, const CaeModel& model) {
  if (!head.centroids.defined() || head.k() < 1)
    throw DataError("clam: cluster head is not initialized");
  if (head.latent_dim() != model.latent_dim)
    throw ShapeError("clam: head latent dim " + std::to_string(head.latent_dim()) +
                     " != model latent dim " + std::to_string(model.latent_dim));
}

Tensor as_batch_of_one(const Tensor& image, int64_t hw) {
  if (image.ndim() == 2 && image.dim(0) == hw && image.dim(1) == hw)
    return reshape(image, {1, 1, hw, hw});
  if (image.ndim() == 3 && image.dim(0) == 1)
    return reshape(image, {1, 1, hw, hw});
  if (image.ndim() == 4 && image.dim(0) == 1) return image;
  throw ShapeError("clam: expected a single image, got " + shape_str(image.shape()));
}

// Corner-aligned bilinear sample grid for one axis.
struct AxisLerp {
  std::vector<int64_t> lo, hi;
  std::vector<double> t;
};

AxisLerp axis_lerp(int64_t in, int64_t out) {
  AxisLerp a;
  a.lo.resize(static_cast<size_t>(out));
  a.hi.resize(static_cast<size_t>(out));
  a.t.resize(static_cast<size_t>(out));
  const double scale = out > 1 ? static_cast<double>(in - 1) / static_cast<double>(out - 1) : 0.0;
  for (int64_t i = 0; i < out; ++i) {
    const double src = static_cast<double>(i) * scale;
    int64_t lo = static_cast<int64_t>(src);
    lo = std::min(lo, in - 1);
    a.lo[static_cast<size_t>(i)] = lo;
    a.hi[static_cast<size_t>(i)] = std::min(lo + 1, in - 1);
    a.t[static_cast<size_t>(i)] = src - static_cast<double>(lo);
  }
  return a;
}

inline double lerp(double a, double b, double t) { return a + (b - a) * t; }

Tensor bilinear_upsample(const Tensor& src, int64_t th, int64_t tw) {
  const int64_t h = src.dim(0), w = src.dim(1);
  const AxisLerp ry = axis_lerp(h, th), rx = axis_lerp(w, tw);
  Tensor out({th, tw});
  for (int64_t y = 0; y < th; ++y) {
    const double* row_lo = src.data() + ry.lo[static_cast<size_t>(y)] * w;
    const double* row_hi = src.data() + ry.hi[static_cast<size_t>(y)] * w;
    const double ty = ry.t[static_cast<size_t>(y)];
    double* dst = out.data() + y * tw;
    for (int64_t x = 0; x < tw; ++x) {
      const int64_t lo = rx.lo[static_cast<size_t>(x)], hi = rx.hi[static_cast<size_t>(x)];
      const double tx = rx.t[static_cast<size_t>(x)];
      const double top = lerp(row_lo[lo], row_lo[hi], tx);
      const double bot = lerp(row_hi[lo], row_hi[hi], tx);
      dst[x] = lerp(top, bot, ty);
    }
  }
  return out;
}

// (v - min) / (max - min); exactly constant input maps to all zeros.
void minmax_normalize(Tensor& t) {
  double lo = t.data()[0], hi = t.data()[0];
  for (int64_t i = 1; i < t.numel(); ++i) {
    lo = std::min(lo, t.data()[i]);
    hi = std::max(hi, t.data()[i]);
  }
  if (hi == lo) {
    std::fill(t.vec().begin(), t.vec().end(), 0.0);
    return;
  }
  const double inv = 1.0 / (hi - lo);
  for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = (t.data()[i] - lo) * inv;
}

}  // namespace

ActivationStack activations(const CaeModel& model, const ClusterHead& head, const Tensor& image,
                            int conv_index) {
  check_trained_head(head, model);
  NoGradGuard ng;
  Tensor batch = as_batch_of_one(image, model.input_hw);
  Tensor captured;
  (void)model.encode_capture(batch, conv_index, &captured);
  ActivationStack stack;
  stack.conv_index = conv_index < 0 ? static_cast<int>(model.num_conv_layers()) - 1 : conv_index;
  stack.a = reshape(captured, {captured.dim(1), captured.dim(2), captured.dim(3)});
  return stack;
}

Tensor upsample_normalize(const Tensor& channel, int64_t target_h, int64_t target_w) {
  if (channel.ndim() != 2)
    throw ShapeError("upsample_normalize: expected [h,w], got " + shape_str(channel.shape()));
  if (channel.dim(0) > target_h || channel.dim(1) > target_w)
    throw ShapeError("upsample_normalize: source exceeds target size");
  Tensor up = bilinear_upsample(channel, target_h, target_w);
  minmax_normalize(up);
  return up;
}

double channel_confidence(const CaeModel& model, const ClusterHead& head, const Tensor& image,
                          const Tensor& mask, int64_t k) {
  check_trained_head(head, model);
  if (k < 0 || k >= head.k())
    throw DataError("channel_confidence: cluster " + std::to_string(k) + " out of range [0," +
                    std::to_string(head.k()) + ")");
  NoGradGuard ng;
  Tensor batch = as_batch_of_one(image, model.input_hw);
  if (mask.numel() != batch.numel())
    throw ShapeError("channel_confidence: mask " + shape_str(mask.shape()) +
                     " does not cover the image");
  Tensor masked(batch.shape());
  for (int64_t i = 0; i < batch.numel(); ++i)
    masked.data()[i] = batch.data()[i] * mask.data()[i];
  Tensor z = model.encode(masked);
  SoftAssign q = soft_assign(z, head);
  return q.q.data()[k];
}

Tensor clam_from_weighted_sum(const Tensor& weighted_native, int64_t target_h, int64_t target_w) {
  Tensor up = bilinear_upsample(weighted_native, target_h, target_w);
  for (int64_t i = 0; i < up.numel(); ++i) up.data()[i] = std::max(up.data()[i], 0.0);
  minmax_normalize(up);
  return up;
}

ClamMap compute_clam(const CaeModel& model, const ClusterHead& head, const Tensor& image,
                     int conv_index, int image_index) {
  check_trained_head(head, model);
  NoGradGuard ng;
  const int64_t hw = model.input_hw;
  Tensor batch = as_batch_of_one(image, hw);

  // Assignment of the unmasked image fixes the explained cluster.
  Tensor z0 = model.encode(batch);
  SoftAssign q0 = soft_assign(z0, head);
  const int cluster = hard_assign(q0)[0];

  ActivationStack stack = activations(model, head, batch, conv_index);
  const int64_t channels = stack.channels();
  const int64_t ah = stack.a.dim(1), aw = stack.a.dim(2);

  // One masked forward per channel, batched through the encoder in chunks.
  ClamMap out;
  out.image_index = image_index;
  out.cluster = cluster;
  out.weights.resize(static_cast<size_t>(channels));
  const int64_t chunk = 32;
  for (int64_t h0 = 0; h0 < channels; h0 += chunk) {
    const int64_t b = std::min<int64_t>(chunk, channels - h0);
    Tensor masked({b, 1, hw, hw});
    for (int64_t h = 0; h < b; ++h) {
      Tensor channel = Tensor::from_data(
          {ah, aw}, std::vector<double>(stack.a.data() + (h0 + h) * ah * aw,
                                        stack.a.data() + (h0 + h + 1) * ah * aw));
      Tensor mask = upsample_normalize(channel, hw, hw);
      double* dst = masked.data() + h * hw * hw;
      for (int64_t i = 0; i < hw * hw; ++i) dst[i] = batch.data()[i] * mask.data()[i];
    }
    Tensor zb = model.encode(masked);
    SoftAssign qb = soft_assign(zb, head);
    for (int64_t h = 0; h < b; ++h)
      out.weights[static_cast<size_t>(h0 + h)] = qb.q.data()[h * head.k() + cluster];
  }

  Tensor weighted({ah, aw});
  for (int64_t h = 0; h < channels; ++h) {
    const double alpha = out.weights[static_cast<size_t>(h)];
    const double* src = stack.a.data() + h * ah * aw;
    for (int64_t i = 0; i < ah * aw; ++i) weighted.data()[i] += alpha * src[i];
  }
  out.map = clam_from_weighted_sum(weighted, hw, hw);
  return out;
}

std::vector<ClamMap> compute_clams(const CaeModel& model, const ClusterHead& head,
                                   const Tensor& images_unit, int conv_index, int threads) {
  const int64_t n = images_unit.dim(0);
  const int64_t pixels = images_unit.numel() / n;
  std::vector<ClamMap> maps(static_cast<size_t>(n));
  if (threads <= 0) threads = static_cast<int>(std::thread::hardware_concurrency());
  threads = std::max(1, std::min<int>(threads, static_cast<int>(n)));

  const int64_t hw = model.input_hw;
  auto worker = [&](int64_t begin, int64_t step) {
    for (int64_t i = begin; i < n; i += step) {
      Tensor img = Tensor::from_data({1, 1, hw, hw},
                                     std::vector<double>(images_unit.data() + i * pixels,
                                                         images_unit.data() + (i + 1) * pixels));
      maps[static_cast<size_t>(i)] =
          compute_clam(model, head, img, conv_index, static_cast<int>(i));
    }
  };
  if (threads == 1) {
    worker(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker, t, threads);
    for (auto& th : pool) th.join();
  }
  return maps;
}

GroupClam group_clam(const std::vector<ClamMap>& maps, const std::vector<int>& labels,
                     int64_t k, bool literal_sum) {
  if (maps.empty()) throw DataError("group_clam: no maps");
  if (maps.size() != labels.size())
    throw DataError("group_clam: " + std::to_string(maps.size()) + " maps vs " +
                    std::to_string(labels.size()) + " labels");
  for (size_t i = 0; i < maps.size(); ++i)
    if (maps[i].cluster != labels[i])
      throw DataError("group_clam: map " + std::to_string(i) + " explains cluster " +
                      std::to_string(maps[i].cluster) + " but is labeled " +
                      std::to_string(labels[i]));

  const Shape map_shape = maps.front().map.shape();
  GroupClam out;
  out.counts.assign(static_cast<size_t>(k), 0);
  out.cluster_maps.resize(static_cast<size_t>(k));
  for (int64_t c = 0; c < k; ++c) out.cluster_maps[static_cast<size_t>(c)] = Tensor(map_shape);
  for (size_t i = 0; i < maps.size(); ++i) {
    const int c = labels[i];
    if (c < 0 || c >= k) throw DataError("group_clam: label out of range");
    out.counts[static_cast<size_t>(c)] += 1;
    Tensor& acc = out.cluster_maps[static_cast<size_t>(c)];
    for (int64_t p = 0; p < acc.numel(); ++p) acc.data()[p] += maps[i].map.data()[p];
  }
  for (int64_t c = 0; c < k; ++c) {
    const int64_t count = out.counts[static_cast<size_t>(c)];
    if (count == 0) {
      out.cluster_maps[static_cast<size_t>(c)] = Tensor();  // omitted, count 0 reported
      continue;
    }
    if (!literal_sum) {
      Tensor& acc = out.cluster_maps[static_cast<size_t>(c)];
      for (int64_t p = 0; p < acc.numel(); ++p) acc.data()[p] /= static_cast<double>(count);
    }
  }
  // Population map divides by K in both modes; only the per-cluster
  // aggregation differs between mean and literal-sum forms.
  out.population_map = Tensor(map_shape);
  for (int64_t c = 0; c < k; ++c) {
    if (!out.cluster_maps[static_cast<size_t>(c)].defined()) continue;
    const Tensor& m = out.cluster_maps[static_cast<size_t>(c)];
    for (int64_t p = 0; p < m.numel(); ++p) out.population_map.data()[p] += m.data()[p];
  }
  for (int64_t p = 0; p < out.population_map.numel(); ++p)
    out.population_map.data()[p] /= static_cast<double>(k);
  return out;
}

int64_t activated_area(const Tensor& map, double threshold) {
  if (threshold <= 0.0 || threshold >= 1.0)
    throw DataError("activated_area: threshold must be in (0,1), got " +
                    std::to_string(threshold));
  int64_t count = 0;
  for (int64_t i = 0; i < map.numel(); ++i)
    if (map.data()[i] >= threshold) ++count;
  return count;
}

int64_t activated_area(const ClamMap& map, double threshold) {
  return activated_area(map.map, threshold);
}

}  // namespace clam
