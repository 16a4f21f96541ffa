#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "clam/ops.hpp"
#include "clam/rng.hpp"
#include "clam/tensor.hpp"

namespace testutil {

using clam::Padding;
using clam::Rng;
using clam::Shape;
using clam::Tensor;

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.uniform(lo, hi);
  return t;
}

// Central finite differences of a re-evaluated scalar loss w.r.t. every entry
// of `param`. Independent of the autodiff path: the loss closure must rebuild
// the forward pass from current values.
inline std::vector<double> fd_gradient(const std::function<double()>& loss, Tensor& param,
                                       double step = 1e-5) {
  std::vector<double> grad(static_cast<size_t>(param.numel()));
  for (int64_t i = 0; i < param.numel(); ++i) {
    const double saved = param.data()[i];
    param.data()[i] = saved + step;
    const double up = loss();
    param.data()[i] = saved - step;
    const double down = loss();
    param.data()[i] = saved;
    grad[static_cast<size_t>(i)] = (up - down) / (2.0 * step);
  }
  return grad;
}

inline double max_rel_error(std::span<const double> got, const std::vector<double>& want,
                            double floor = 1e-6) {
  double worst = 0.0;
  for (size_t i = 0; i < want.size(); ++i) {
    const double denom = std::max(std::abs(want[i]), floor);
    worst = std::max(worst, std::abs(got[i] - want[i]) / denom);
  }
  return worst;
}

// Direct triple-loop cross-correlation, the conv oracle.
inline Tensor conv2d_oracle(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
                            Padding pad) {
  const int64_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), wid = x.dim(3);
  const int64_t cout = w.dim(0), k = w.dim(2);
  const int64_t ho = (h + pad.vertical() - k) / stride + 1;
  const int64_t wo = (wid + pad.horizontal() - k) / stride + 1;
  Tensor y({n, cout, ho, wo});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t co = 0; co < cout; ++co)
      for (int64_t oy = 0; oy < ho; ++oy)
        for (int64_t ox = 0; ox < wo; ++ox) {
          double acc = b[co];
          for (int64_t ci = 0; ci < cin; ++ci)
            for (int64_t ky = 0; ky < k; ++ky)
              for (int64_t kx = 0; kx < k; ++kx) {
                const int64_t iy = oy * stride - pad.top + ky;
                const int64_t ix = ox * stride - pad.left + kx;
                if (iy < 0 || iy >= h || ix < 0 || ix >= wid) continue;
                acc += x.at({i, ci, iy, ix}) * w.at({co, ci, ky, kx});
              }
          y.at({i, co, oy, ox}) = acc;
        }
  return y;
}

// Scatter oracle: every input pixel deposits a weighted kernel patch.
inline Tensor conv2d_transpose_oracle(const Tensor& x, const Tensor& w, const Tensor& b,
                                      int stride, Padding pad) {
  const int64_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), wid = x.dim(3);
  const int64_t cout = w.dim(1), k = w.dim(2);
  const int64_t ho = (h - 1) * stride - pad.vertical() + k;
  const int64_t wo = (wid - 1) * stride - pad.horizontal() + k;
  Tensor y({n, cout, ho, wo});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t co = 0; co < cout; ++co)
      for (int64_t oy = 0; oy < ho; ++oy)
        for (int64_t ox = 0; ox < wo; ++ox) y.at({i, co, oy, ox}) = b[co];
  for (int64_t i = 0; i < n; ++i)
    for (int64_t ci = 0; ci < cin; ++ci)
      for (int64_t iy = 0; iy < h; ++iy)
        for (int64_t ix = 0; ix < wid; ++ix)
          for (int64_t co = 0; co < cout; ++co)
            for (int64_t ky = 0; ky < k; ++ky)
              for (int64_t kx = 0; kx < k; ++kx) {
                const int64_t oy = iy * stride - pad.top + ky;
                const int64_t ox = ix * stride - pad.left + kx;
                if (oy < 0 || oy >= ho || ox < 0 || ox >= wo) continue;
                y.at({i, co, oy, ox}) += x.at({i, ci, iy, ix}) * w.at({ci, co, ky, kx});
              }
  return y;
}

inline Tensor matmul_oracle(const Tensor& x, const Tensor& w, const Tensor& b) {
  const int64_t n = x.dim(0), d = x.dim(1), j = w.dim(1);
  Tensor y({n, j});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t c = 0; c < j; ++c) {
      double acc = b[c];
      for (int64_t a = 0; a < d; ++a) acc += x.at({i, a}) * w.at({a, c});
      y.at({i, c}) = acc;
    }
  return y;
}

}  // namespace testutil
