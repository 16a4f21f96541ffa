#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "clam/ops.hpp"
#include "clam/tensor.hpp"

namespace clam {

// Fixed affine map between Hounsfield units and the [0,1] network input space.
inline constexpr double kHuLow = -1024.0;
inline constexpr double kHuHigh = 400.0;

double hu_to_unit(double hu);
double unit_to_hu(double unit);
Tensor normalize_hu(const Tensor& images_hu);
Tensor denormalize_hu(const Tensor& images_unit);

enum class LayerKind : uint32_t { Conv = 0, ConvTranspose = 1, Dense = 2, LeakyRelu = 3 };

struct LayerSpec {
  LayerKind kind = LayerKind::Conv;
  int64_t in_ch = 0;   // conv/conv_transpose: channels; dense: input dim
  int64_t out_ch = 0;  // conv/conv_transpose: filters; dense: output dim
  int64_t kernel = 4;  // "kernel size of 4 x 4 as default"
  int stride = 1;
  Padding pad;
  double slope = 0.0;  // leaky_relu only
};

struct Layer {
  LayerSpec spec;
  Tensor weight;  // undefined for activation layers
  Tensor bias;
};

struct LossTraceRow {
  int epoch = 0;
  double l_r = 0.0;           // batch-mean of per-image sum-squared error
  double l_r_per_pixel = 0.0;  // l_r / pixels per image
  double l_c = 0.0;           // batch-mean KL, zero during pretraining
  double l = 0.0;             // l_r + gamma * l_c
  double gamma = 0.0;
  double max_q_row_dev = 0.0;  // max |row sum - 1| of Q this epoch
  double max_p_row_dev = 0.0;  // same for P
};

struct LossTrace {
  std::vector<LossTraceRow> rows;

  void append(LossTraceRow row);   // enforces finiteness and epoch ordering
  void save_csv(const std::string& path) const;
};

inline constexpr double kLeakySlope = 0.01;

// Encoder conv(s2,32) -> conv(s1,64) -> conv(s2,128) -> dense(J); decoder is
// its mirror image. Input is [N,1,64,64] in normalized [0,1] space.
class CaeModel {
 public:
  int64_t latent_dim = 0;
  int64_t input_hw = 64;
  std::vector<Layer> encoder;
  std::vector<Layer> decoder;

  static CaeModel build(int64_t latent_dim, uint64_t seed);

  Tensor encode(const Tensor& images) const;
  Tensor decode(const Tensor& latents) const;

  // Forward through the encoder capturing the post-activation output of one
  // conv layer (0-based conv index; -1 = last).
  Tensor encode_capture(const Tensor& images, int conv_index, Tensor* captured) const;

  int64_t num_conv_layers() const;
  int64_t flatten_dim() const;

  std::vector<Tensor> parameters() const;
  void set_parameters_requires_grad(bool on);
};

struct PretrainOptions {
  int epochs = 200;  // "trained end-to-end for 200 epochs"
  int batch_size = 32;
  uint64_t seed = 0;
  double learning_rate = 1e-3;
};

// Minimizes the reconstruction loss by Adam on normalized [0,1] images.
LossTrace pretrain(CaeModel& model, const Tensor& images_unit, const PretrainOptions& opts);

}  // namespace clam
