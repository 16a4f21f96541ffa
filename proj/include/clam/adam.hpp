#pragma once

#include <cstdint>
#include <vector>

#include "clam/tensor.hpp"

namespace clam {

struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int64_t step_count = 0;
  std::vector<std::vector<double>> m;  // first moments, one buffer per parameter
  std::vector<std::vector<double>> v;  // second moments
};

void adam_init(AdamState& state, const std::vector<Tensor>& params);

// Standard bias-corrected update from the gradients stored on the parameters.
void adam_step(AdamState& state, std::vector<Tensor>& params);

// Convenience wrapper tying a state to a fixed parameter list.
class Adam {
 public:
  explicit Adam(std::vector<Tensor> params, double lr = 1e-3);

  void zero_grad();
  void step();
  const AdamState& state() const { return state_; }

 private:
  std::vector<Tensor> params_;
  AdamState state_;
};

}  // namespace clam
