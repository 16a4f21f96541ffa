#include "clam/adam.hpp"

#include <cmath>

#include "clam/errors.hpp"

namespace clam {

void adam_init(AdamState& state, const std::vector<Tensor>& params) {
  state.step_count = 0;
  state.m.clear();
  state.v.clear();
  for (const Tensor& p : params) {
    state.m.emplace_back(static_cast<size_t>(p.numel()), 0.0);
    state.v.emplace_back(static_cast<size_t>(p.numel()), 0.0);
  }
}

void adam_step(AdamState& state, std::vector<Tensor>& params) {
  if (state.m.size() != params.size() || state.v.size() != params.size())
    throw NumericError("adam_step: state not initialized for " +
                       std::to_string(params.size()) + " parameters");
  state.step_count += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step_count));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step_count));
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = params[pi];
    if (!p.has_grad()) continue;  // zero gradient this step
    auto& m = state.m[pi];
    auto& v = state.v[pi];
    if (m.size() != static_cast<size_t>(p.numel()))
      throw NumericError("adam_step: moment buffer shape mismatch at parameter " +
                         std::to_string(pi));
    const auto g = p.grad();
    double* w = p.data();
    for (size_t i = 0; i < m.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

Adam::Adam(std::vector<Tensor> params, double lr) : params_(std::move(params)) {
  state_.lr = lr;
  adam_init(state_, params_);
}

void Adam::zero_grad() {
  for (Tensor& p : params_) p.zero_grad();
}

void Adam::step() { adam_step(state_, params_); }

}  // namespace clam
