#include "clam/cae.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "clam/adam.hpp"
#include "clam/errors.hpp"
#include "clam/rng.hpp"

namespace clam {

double hu_to_unit(double hu) { return (hu - kHuLow) / (kHuHigh - kHuLow); }
double unit_to_hu(double unit) { return kHuLow + unit * (kHuHigh - kHuLow); }

Tensor normalize_hu(const Tensor& images_hu) {
  Tensor out(images_hu.shape());
  const int64_t n = images_hu.numel();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = hu_to_unit(images_hu.data()[i]);
  return out;
}

Tensor denormalize_hu(const Tensor& images_unit) {
  Tensor out(images_unit.shape());
  const int64_t n = images_unit.numel();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = unit_to_hu(images_unit.data()[i]);
  return out;
}

void LossTrace::append(LossTraceRow row) {
  for (double v : {row.l_r, row.l_c, row.l, row.gamma})
    if (!std::isfinite(v))
      throw NumericError("loss trace: non-finite value at epoch " + std::to_string(row.epoch));
  if (!rows.empty() && row.epoch <= rows.back().epoch)
    throw NumericError("loss trace: epochs must be strictly increasing");
  rows.push_back(row);
}

void LossTrace::save_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("loss trace: cannot write " + path);
  out << "epoch,l_r,l_r_per_pixel,l_c,l,gamma,max_q_row_dev,max_p_row_dev\n";
  out.precision(17);
  for (const auto& r : rows)
    out << r.epoch << ',' << r.l_r << ',' << r.l_r_per_pixel << ',' << r.l_c << ',' << r.l << ','
        << r.gamma << ',' << r.max_q_row_dev << ',' << r.max_p_row_dev << '\n';
}

namespace {

Tensor he_uniform(Shape shape, int64_t fan_in, Rng& rng) {
  Tensor t(shape);
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.uniform(-limit, limit);
  return t;
}

Layer conv_layer(int64_t in_ch, int64_t out_ch, int stride, Padding pad, Rng& rng) {
  Layer l;
  l.spec = {LayerKind::Conv, in_ch, out_ch, 4, stride, pad, 0.0};
  l.weight = he_uniform({out_ch, in_ch, 4, 4}, in_ch * 16, rng);
  l.bias = Tensor({out_ch});
  return l;
}

Layer conv_transpose_layer(int64_t in_ch, int64_t out_ch, int stride, Padding pad, Rng& rng) {
  Layer l;
  l.spec = {LayerKind::ConvTranspose, in_ch, out_ch, 4, stride, pad, 0.0};
  l.weight = he_uniform({in_ch, out_ch, 4, 4}, in_ch * 16, rng);
  l.bias = Tensor({out_ch});
  return l;
}

Layer dense_layer(int64_t in_dim, int64_t out_dim, Rng& rng) {
  Layer l;
  l.spec = {LayerKind::Dense, in_dim, out_dim, 0, 0, Padding{}, 0.0};
  l.weight = he_uniform({in_dim, out_dim}, in_dim, rng);
  l.bias = Tensor({out_dim});
  return l;
}

Layer activation_layer() {
  Layer l;
  l.spec = {LayerKind::LeakyRelu, 0, 0, 0, 0, Padding{}, kLeakySlope};
  return l;
}

Tensor apply_layer(const Layer& l, const Tensor& x) {
  switch (l.spec.kind) {
    case LayerKind::Conv:
      return conv2d(x, l.weight, l.bias, l.spec.stride, l.spec.pad);
    case LayerKind::ConvTranspose:
      return conv2d_transpose(x, l.weight, l.bias, l.spec.stride, l.spec.pad);
    case LayerKind::Dense:
      return dense(x, l.weight, l.bias);
    case LayerKind::LeakyRelu:
      return leaky_relu(x, l.spec.slope);
  }
  throw ShapeError("apply_layer: unknown layer kind");
}

}  // namespace

CaeModel CaeModel::build(int64_t latent_dim, uint64_t seed) {
  if (latent_dim < 1)
    throw ShapeError("build_cae: latent_dim must be >= 1, got " + std::to_string(latent_dim));
  Rng rng(seed);
  CaeModel m;
  m.latent_dim = latent_dim;

  const int64_t flat = 128 * 16 * 16;
  m.encoder.push_back(conv_layer(1, 32, 2, pad_halving(), rng));
  m.encoder.push_back(activation_layer());
  m.encoder.push_back(conv_layer(32, 64, 1, pad_same_k4(), rng));
  m.encoder.push_back(activation_layer());
  m.encoder.push_back(conv_layer(64, 128, 2, pad_halving(), rng));
  m.encoder.push_back(activation_layer());
  m.encoder.push_back(dense_layer(flat, latent_dim, rng));

  m.decoder.push_back(dense_layer(latent_dim, flat, rng));
  m.decoder.push_back(activation_layer());
  m.decoder.push_back(conv_transpose_layer(128, 64, 2, pad_halving(), rng));
  m.decoder.push_back(activation_layer());
  m.decoder.push_back(conv_transpose_layer(64, 32, 1, pad_same_k4(), rng));
  m.decoder.push_back(activation_layer());
  m.decoder.push_back(conv_transpose_layer(32, 1, 2, pad_halving(), rng));

  m.set_parameters_requires_grad(true);
  return m;
}

Tensor CaeModel::encode(const Tensor& images) const {
  return encode_capture(images, -1, nullptr);
}

Tensor CaeModel::encode_capture(const Tensor& images, int conv_index, Tensor* captured) const {
  if (images.ndim() != 4 || images.dim(1) != 1 || images.dim(2) != input_hw ||
      images.dim(3) != input_hw)
    throw ShapeError("encode: expected [N,1," + std::to_string(input_hw) + "," +
                     std::to_string(input_hw) + "], got " + shape_str(images.shape()));
  const int64_t n_convs = num_conv_layers();
  if (conv_index < 0) conv_index = static_cast<int>(n_convs) - 1;
  if (captured && conv_index >= n_convs)
    throw ShapeError("encode: conv layer index " + std::to_string(conv_index) +
                     " out of range (have " + std::to_string(n_convs) + ")");

  Tensor x = images;
  int conv_seen = -1;
  for (const Layer& l : encoder) {
    if (l.spec.kind == LayerKind::Dense) x = reshape(x, {x.dim(0), flatten_dim()});
    x = apply_layer(l, x);
    if (l.spec.kind == LayerKind::LeakyRelu) {
      ++conv_seen;
      if (captured && conv_seen == conv_index) *captured = x;
    }
  }
  return x;
}

Tensor CaeModel::decode(const Tensor& latents) const {
  if (latents.ndim() != 2 || latents.dim(1) != latent_dim)
    throw ShapeError("decode: expected [N," + std::to_string(latent_dim) + "], got " +
                     shape_str(latents.shape()));
  Tensor x = latents;
  bool reshaped = false;
  for (const Layer& l : decoder) {
    if (!reshaped && (l.spec.kind == LayerKind::ConvTranspose || l.spec.kind == LayerKind::Conv)) {
      x = reshape(x, {x.dim(0), 128, 16, 16});
      reshaped = true;
    }
    x = apply_layer(l, x);
  }
  return x;
}

int64_t CaeModel::num_conv_layers() const {
  int64_t n = 0;
  for (const Layer& l : encoder)
    if (l.spec.kind == LayerKind::Conv) ++n;
  return n;
}

int64_t CaeModel::flatten_dim() const { return 128 * 16 * 16; }

std::vector<Tensor> CaeModel::parameters() const {
  std::vector<Tensor> out;
  for (const auto* half : {&encoder, &decoder})
    for (const Layer& l : *half) {
      if (!l.weight.defined()) continue;
      out.push_back(l.weight);
      out.push_back(l.bias);
    }
  return out;
}

void CaeModel::set_parameters_requires_grad(bool on) {
  for (Tensor& p : parameters()) p.set_requires_grad(on);
}

LossTrace pretrain(CaeModel& model, const Tensor& images_unit, const PretrainOptions& opts) {
  if (images_unit.ndim() != 4 || images_unit.dim(0) < 1)
    throw DataError("pretrain: empty or malformed dataset " + shape_str(images_unit.shape()));
  if (opts.epochs < 1) throw DataError("pretrain: epochs must be >= 1");
  const int64_t n = images_unit.dim(0);
  const int64_t pixels = images_unit.numel() / n;
  const int64_t batch = std::min<int64_t>(opts.batch_size, n);

  Adam adam(model.parameters(), opts.learning_rate);
  Rng rng(opts.seed);
  std::vector<int64_t> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);

  LossTrace trace;
  for (int epoch = 1; epoch <= opts.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    int64_t seen = 0;
    for (int64_t start = 0; start < n; start += batch) {
      const int64_t b = std::min<int64_t>(batch, n - start);
      Tensor x({b, 1, model.input_hw, model.input_hw});
      for (int64_t i = 0; i < b; ++i)
        std::copy_n(images_unit.data() + order[static_cast<size_t>(start + i)] * pixels, pixels,
                    x.data() + i * pixels);
      Tensor z = model.encode(x);
      Tensor rec = model.decode(z);
      Tensor loss = scale(mse_loss(x, rec), 1.0 / static_cast<double>(b));
      const double loss_val = loss.item();
      if (!std::isfinite(loss_val))
        throw NumericError("pretrain: non-finite loss at epoch " + std::to_string(epoch) +
                           ", batch offset " + std::to_string(start));
      adam.zero_grad();
      loss.backward();
      adam.step();
      epoch_loss += loss_val * static_cast<double>(b);
      seen += b;
    }
    LossTraceRow row;
    row.epoch = epoch;
    row.l_r = epoch_loss / static_cast<double>(seen);
    row.l_r_per_pixel = row.l_r / static_cast<double>(pixels);
    row.l = row.l_r;
    trace.append(row);
  }
  return trace;
}

}  // namespace clam
