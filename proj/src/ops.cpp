#include "clam/ops.hpp"

#include <array>
#include <cmath>
#include <cstring>

#include "clam/errors.hpp"
#include "clam/gemm.hpp"

namespace clam {

namespace detail {

std::vector<double>& scratch(int slot, size_t n) {
  thread_local std::array<std::vector<double>, 8> pool;
  auto& buf = pool[static_cast<size_t>(slot)];
  if (buf.size() < n) buf.resize(n);
  return buf;
}

}  // namespace detail

namespace {

bool track_grad(std::initializer_list<const Tensor*> inputs) {
  if (!GradMode::enabled()) return false;
  for (const Tensor* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

// cols: [Ho*Wo] x [C*k*k], row per output pixel, patch laid out (c, ky, kx).
void im2col_one(const double* x, int64_t c_in, int64_t h, int64_t w, int64_t k, int64_t stride,
                const Padding& p, int64_t ho, int64_t wo, double* cols) {
  const int64_t patch = c_in * k * k;
  for (int64_t oy = 0; oy < ho; ++oy) {
    const int64_t iy0 = oy * stride - p.top;
    for (int64_t ox = 0; ox < wo; ++ox) {
      const int64_t ix0 = ox * stride - p.left;
      double* row = cols + (oy * wo + ox) * patch;
      for (int64_t ci = 0; ci < c_in; ++ci) {
        const double* plane = x + ci * h * w;
        for (int64_t ky = 0; ky < k; ++ky) {
          const int64_t iy = iy0 + ky;
          double* dst = row + (ci * k + ky) * k;
          if (iy < 0 || iy >= h) {
            std::memset(dst, 0, static_cast<size_t>(k) * sizeof(double));
            continue;
          }
          for (int64_t kx = 0; kx < k; ++kx) {
            const int64_t ix = ix0 + kx;
            dst[kx] = (ix >= 0 && ix < w) ? plane[iy * w + ix] : 0.0;
          }
        }
      }
    }
  }
}

// Scatter-add inverse of im2col_one; accumulates into x.
void col2im_one(const double* cols, int64_t c_in, int64_t h, int64_t w, int64_t k, int64_t stride,
                const Padding& p, int64_t ho, int64_t wo, double* x) {
  const int64_t patch = c_in * k * k;
  for (int64_t oy = 0; oy < ho; ++oy) {
    const int64_t iy0 = oy * stride - p.top;
    for (int64_t ox = 0; ox < wo; ++ox) {
      const int64_t ix0 = ox * stride - p.left;
      const double* row = cols + (oy * wo + ox) * patch;
      for (int64_t ci = 0; ci < c_in; ++ci) {
        double* plane = x + ci * h * w;
        for (int64_t ky = 0; ky < k; ++ky) {
          const int64_t iy = iy0 + ky;
          if (iy < 0 || iy >= h) continue;
          const double* src = row + (ci * k + ky) * k;
          for (int64_t kx = 0; kx < k; ++kx) {
            const int64_t ix = ix0 + kx;
            if (ix >= 0 && ix < w) plane[iy * w + ix] += src[kx];
          }
        }
      }
    }
  }
}

// [N,C,H,W] -> [N*H*W, C]
void nchw_to_rows(const double* x, int64_t n, int64_t c, int64_t hw, double* rows) {
  for (int64_t i = 0; i < n; ++i)
    for (int64_t ci = 0; ci < c; ++ci) {
      const double* src = x + (i * c + ci) * hw;
      double* dst = rows + i * hw * c + ci;
      for (int64_t p = 0; p < hw; ++p) dst[p * c] = src[p];
    }
}

// [N*H*W, C] -> [N,C,H,W], either overwriting or accumulating.
template <bool Accumulate>
void rows_to_nchw(const double* rows, int64_t n, int64_t c, int64_t hw, double* x) {
  for (int64_t i = 0; i < n; ++i)
    for (int64_t ci = 0; ci < c; ++ci) {
      const double* src = rows + i * hw * c + ci;
      double* dst = x + (i * c + ci) * hw;
      for (int64_t p = 0; p < hw; ++p) {
        if constexpr (Accumulate)
          dst[p] += src[p * c];
        else
          dst[p] = src[p * c];
      }
    }
}

int64_t conv_out_extent(int64_t in, int64_t pad_sum, int64_t k, int64_t stride,
                        const char* axis) {
  const int64_t span = in + pad_sum - k;
  if (span < 0)
    throw ShapeError(std::string("conv2d: kernel ") + std::to_string(k) + " exceeds padded " +
                     axis + " extent " + std::to_string(in + pad_sum));
  if (span % stride != 0)
    throw ShapeError(std::string("conv2d: non-integer output size along ") + axis + ": (" +
                     std::to_string(in) + " + " + std::to_string(pad_sum) + " - " +
                     std::to_string(k) + ") not divisible by stride " + std::to_string(stride));
  return span / stride + 1;
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, Padding pad) {
  if (x.ndim() != 4 || w.ndim() != 4)
    throw ShapeError("conv2d: expected 4-d input/weights, got " + shape_str(x.shape()) + " and " +
                     shape_str(w.shape()));
  if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
  if (pad.top < 0 || pad.left < 0 || pad.bottom < 0 || pad.right < 0)
    throw ShapeError("conv2d: negative padding");
  const int64_t n = x.dim(0), c_in = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int64_t c_out = w.dim(0), k = w.dim(2);
  if (w.dim(1) != c_in)
    throw ShapeError("conv2d: input channels " + std::to_string(c_in) +
                     " != weight channels " + std::to_string(w.dim(1)));
  if (w.dim(3) != k) throw ShapeError("conv2d: non-square kernel " + shape_str(w.shape()));
  if (b.numel() != c_out)
    throw ShapeError("conv2d: bias size " + std::to_string(b.numel()) + " != filters " +
                     std::to_string(c_out));
  const int64_t ho = conv_out_extent(h, pad.vertical(), k, stride, "height");
  const int64_t wo = conv_out_extent(wd, pad.horizontal(), k, stride, "width");

  const int64_t patch = c_in * k * k;
  const int64_t rows = n * ho * wo;
  auto& cols = detail::scratch(0, static_cast<size_t>(rows * patch));
  for (int64_t i = 0; i < n; ++i)
    im2col_one(x.data() + i * c_in * h * wd, c_in, h, wd, k, stride, pad, ho, wo,
               cols.data() + i * ho * wo * patch);

  auto& out_rows = detail::scratch(1, static_cast<size_t>(rows * c_out));
  gemm(false, true, rows, c_out, patch, 1.0, cols.data(), w.data(), 0.0, out_rows.data());
  for (int64_t r = 0; r < rows; ++r) {
    double* row = out_rows.data() + r * c_out;
    for (int64_t co = 0; co < c_out; ++co) row[co] += b.data()[co];
  }

  Tensor y({n, c_out, ho, wo});
  rows_to_nchw<false>(out_rows.data(), n, c_out, ho * wo, y.data());

  if (track_grad({&x, &w, &b})) {
    y.set_requires_grad(true);
    auto xn = x.node(), wn = w.node(), bn = b.node();
    const int s = stride;
    const Padding p = pad;
    y.node()->parents = {xn, wn, bn};
    y.node()->backward_fn = [xn, wn, bn, n, c_in, h, wd, c_out, k, s, p, ho, wo,
                             patch](TensorNode& self) {
      const int64_t rows2 = n * ho * wo;
      auto& gy_rows = detail::scratch(2, static_cast<size_t>(rows2 * c_out));
      nchw_to_rows(self.grad.data(), n, c_out, ho * wo, gy_rows.data());
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (int64_t r = 0; r < rows2; ++r)
          for (int64_t co = 0; co < c_out; ++co) bn->grad[co] += gy_rows[r * c_out + co];
      }
      if (wn->requires_grad) {
        auto& cols2 = detail::scratch(3, static_cast<size_t>(rows2 * patch));
        for (int64_t i = 0; i < n; ++i)
          im2col_one(xn->value.data() + i * c_in * h * wd, c_in, h, wd, k, s, p, ho, wo,
                     cols2.data() + i * ho * wo * patch);
        wn->ensure_grad();
        gemm(true, false, c_out, patch, rows2, 1.0, gy_rows.data(), cols2.data(), 1.0,
             wn->grad.data());
      }
      if (xn->requires_grad) {
        auto& dcols = detail::scratch(4, static_cast<size_t>(rows2 * patch));
        gemm(false, false, rows2, patch, c_out, 1.0, gy_rows.data(), wn->value.data(), 0.0,
             dcols.data());
        xn->ensure_grad();
        for (int64_t i = 0; i < n; ++i)
          col2im_one(dcols.data() + i * ho * wo * patch, c_in, h, wd, k, s, p, ho, wo,
                     xn->grad.data() + i * c_in * h * wd);
      }
    };
  }
  return y;
}

Tensor conv2d_transpose(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
                        Padding pad) {
  if (x.ndim() != 4 || w.ndim() != 4)
    throw ShapeError("conv2d_transpose: expected 4-d input/weights, got " +
                     shape_str(x.shape()) + " and " + shape_str(w.shape()));
  if (stride < 1) throw ShapeError("conv2d_transpose: stride must be >= 1");
  const int64_t n = x.dim(0), c_in = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int64_t c_out = w.dim(1), k = w.dim(2);
  if (w.dim(0) != c_in)
    throw ShapeError("conv2d_transpose: input channels " + std::to_string(c_in) +
                     " != weight channels " + std::to_string(w.dim(0)));
  if (b.numel() != c_out)
    throw ShapeError("conv2d_transpose: bias size " + std::to_string(b.numel()) +
                     " != filters " + std::to_string(c_out));
  const int64_t ho = (h - 1) * stride - pad.vertical() + k;
  const int64_t wo = (wd - 1) * stride - pad.horizontal() + k;
  if (ho < 1 || wo < 1)
    throw ShapeError("conv2d_transpose: output extent not positive for input " +
                     shape_str(x.shape()));

  const int64_t patch = c_out * k * k;
  const int64_t rows = n * h * wd;
  auto& x_rows = detail::scratch(0, static_cast<size_t>(rows * c_in));
  nchw_to_rows(x.data(), n, c_in, h * wd, x_rows.data());
  auto& cols = detail::scratch(1, static_cast<size_t>(rows * patch));
  gemm(false, false, rows, patch, c_in, 1.0, x_rows.data(), w.data(), 0.0, cols.data());

  Tensor y({n, c_out, ho, wo});
  for (int64_t i = 0; i < n; ++i)
    col2im_one(cols.data() + i * h * wd * patch, c_out, ho, wo, k, stride, pad, h, wd,
               y.data() + i * c_out * ho * wo);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t co = 0; co < c_out; ++co) {
      double* plane = y.data() + (i * c_out + co) * ho * wo;
      const double bias = b.data()[co];
      for (int64_t pix = 0; pix < ho * wo; ++pix) plane[pix] += bias;
    }

  if (track_grad({&x, &w, &b})) {
    y.set_requires_grad(true);
    auto xn = x.node(), wn = w.node(), bn = b.node();
    const int s = stride;
    const Padding p = pad;
    y.node()->parents = {xn, wn, bn};
    y.node()->backward_fn = [xn, wn, bn, n, c_in, h, wd, c_out, k, s, p, ho, wo,
                             patch](TensorNode& self) {
      const int64_t rows2 = n * h * wd;
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (int64_t i = 0; i < n; ++i)
          for (int64_t co = 0; co < c_out; ++co) {
            const double* plane = self.grad.data() + (i * c_out + co) * ho * wo;
            double acc = 0.0;
            for (int64_t pix = 0; pix < ho * wo; ++pix) acc += plane[pix];
            bn->grad[co] += acc;
          }
      }
      auto& cols_g = detail::scratch(2, static_cast<size_t>(rows2 * patch));
      for (int64_t i = 0; i < n; ++i)
        im2col_one(self.grad.data() + i * c_out * ho * wo, c_out, ho, wo, k, s, p, h, wd,
                   cols_g.data() + i * h * wd * patch);
      if (xn->requires_grad) {
        auto& dx_rows = detail::scratch(3, static_cast<size_t>(rows2 * c_in));
        gemm(false, true, rows2, c_in, patch, 1.0, cols_g.data(), wn->value.data(), 0.0,
             dx_rows.data());
        xn->ensure_grad();
        rows_to_nchw<true>(dx_rows.data(), n, c_in, h * wd, xn->grad.data());
      }
      if (wn->requires_grad) {
        auto& x_rows2 = detail::scratch(4, static_cast<size_t>(rows2 * c_in));
        nchw_to_rows(xn->value.data(), n, c_in, h * wd, x_rows2.data());
        wn->ensure_grad();
        gemm(true, false, c_in, patch, rows2, 1.0, x_rows2.data(), cols_g.data(), 1.0,
             wn->grad.data());
      }
    };
  }
  return y;
}

Tensor dense(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.ndim() != 2 || w.ndim() != 2)
    throw ShapeError("dense: expected 2-d input/weights, got " + shape_str(x.shape()) + " and " +
                     shape_str(w.shape()));
  const int64_t n = x.dim(0), d = x.dim(1), j = w.dim(1);
  if (w.dim(0) != d)
    throw ShapeError("dense: input dim " + std::to_string(d) + " != weight rows " +
                     std::to_string(w.dim(0)));
  if (b.numel() != j)
    throw ShapeError("dense: bias size " + std::to_string(b.numel()) + " != output dim " +
                     std::to_string(j));

  Tensor y({n, j});
  gemm(false, false, n, j, d, 1.0, x.data(), w.data(), 0.0, y.data());
  for (int64_t i = 0; i < n; ++i) {
    double* row = y.data() + i * j;
    for (int64_t c = 0; c < j; ++c) row[c] += b.data()[c];
  }

  if (track_grad({&x, &w, &b})) {
    y.set_requires_grad(true);
    auto xn = x.node(), wn = w.node(), bn = b.node();
    y.node()->parents = {xn, wn, bn};
    y.node()->backward_fn = [xn, wn, bn, n, d, j](TensorNode& self) {
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (int64_t i = 0; i < n; ++i)
          for (int64_t c = 0; c < j; ++c) bn->grad[c] += self.grad[i * j + c];
      }
      if (wn->requires_grad) {
        wn->ensure_grad();
        gemm(true, false, d, j, n, 1.0, xn->value.data(), self.grad.data(), 1.0,
             wn->grad.data());
      }
      if (xn->requires_grad) {
        xn->ensure_grad();
        gemm(false, true, n, d, j, 1.0, self.grad.data(), wn->value.data(), 1.0,
             xn->grad.data());
      }
    };
  }
  return y;
}

Tensor leaky_relu(const Tensor& x, double slope) {
  if (slope < 0.0 || slope >= 1.0)
    throw NumericError("leaky_relu: slope must be in [0,1), got " + std::to_string(slope));
  Tensor y(x.shape());
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) {
    const double v = x.data()[i];
    y.data()[i] = v > 0.0 ? v : slope * v;
  }
  if (track_grad({&x})) {
    y.set_requires_grad(true);
    auto xn = x.node();
    y.node()->parents = {xn};
    y.node()->backward_fn = [xn, slope, n](TensorNode& self) {
      if (!xn->requires_grad) return;
      xn->ensure_grad();
      for (int64_t i = 0; i < n; ++i)
        xn->grad[i] += self.grad[i] * (xn->value[i] > 0.0 ? 1.0 : slope);
    };
  }
  return y;
}

Tensor mse_loss(const Tensor& x, const Tensor& rec) {
  if (x.shape() != rec.shape())
    throw ShapeError("mse_loss: shape mismatch " + shape_str(x.shape()) + " vs " +
                     shape_str(rec.shape()));
  const int64_t n = x.numel();
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double d = x.data()[i] - rec.data()[i];
    acc += d * d;
  }
  Tensor y = Tensor::scalar(acc);
  if (track_grad({&x, &rec})) {
    y.set_requires_grad(true);
    auto xn = x.node(), rn = rec.node();
    y.node()->parents = {xn, rn};
    y.node()->backward_fn = [xn, rn, n](TensorNode& self) {
      const double g = self.grad[0];
      if (xn->requires_grad) {
        xn->ensure_grad();
        for (int64_t i = 0; i < n; ++i)
          xn->grad[i] += 2.0 * g * (xn->value[i] - rn->value[i]);
      }
      if (rn->requires_grad) {
        rn->ensure_grad();
        for (int64_t i = 0; i < n; ++i)
          rn->grad[i] += 2.0 * g * (rn->value[i] - xn->value[i]);
      }
    };
  }
  return y;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  Tensor y = Tensor::from_data(std::move(shape), x.vec());
  if (track_grad({&x})) {
    y.set_requires_grad(true);
    auto xn = x.node();
    y.node()->parents = {xn};
    y.node()->backward_fn = [xn](TensorNode& self) {
      if (!xn->requires_grad) return;
      xn->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i];
    };
  }
  return y;
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError("add: shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  Tensor y(a.shape());
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) y.data()[i] = a.data()[i] + b.data()[i];
  if (track_grad({&a, &b})) {
    y.set_requires_grad(true);
    auto an = a.node(), bn = b.node();
    y.node()->parents = {an, bn};
    y.node()->backward_fn = [an, bn](TensorNode& self) {
      for (TensorNode* t : {an.get(), bn.get()}) {
        if (!t->requires_grad) continue;
        t->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) t->grad[i] += self.grad[i];
      }
    };
  }
  return y;
}

Tensor scale(const Tensor& x, double c) {
  Tensor y(x.shape());
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) y.data()[i] = c * x.data()[i];
  if (track_grad({&x})) {
    y.set_requires_grad(true);
    auto xn = x.node();
    y.node()->parents = {xn};
    y.node()->backward_fn = [xn, c](TensorNode& self) {
      if (!xn->requires_grad) return;
      xn->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += c * self.grad[i];
    };
  }
  return y;
}

Tensor soft_assign_op(const Tensor& z, const Tensor& centroids) {
  if (z.ndim() != 2 || centroids.ndim() != 2 || z.dim(1) != centroids.dim(1))
    throw ShapeError("soft_assign: latent " + shape_str(z.shape()) + " vs centroids " +
                     shape_str(centroids.shape()));
  const int64_t n = z.dim(0), j = z.dim(1), k = centroids.dim(0);
  Tensor q({n, k});
  std::vector<double> row_sum(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    const double* zi = z.data() + i * j;
    double s = 0.0;
    for (int64_t c = 0; c < k; ++c) {
      const double* mu = centroids.data() + c * j;
      double d = 0.0;
      for (int64_t a = 0; a < j; ++a) {
        const double diff = zi[a] - mu[a];
        d += diff * diff;
      }
      const double u = 1.0 / (1.0 + d);
      q.data()[i * k + c] = u;
      s += u;
    }
    row_sum[static_cast<size_t>(i)] = s;
    for (int64_t c = 0; c < k; ++c) q.data()[i * k + c] /= s;
  }

  if (track_grad({&z, &centroids})) {
    q.set_requires_grad(true);
    auto zn = z.node(), mn = centroids.node();
    q.node()->parents = {zn, mn};
    q.node()->backward_fn = [zn, mn, n, j, k, row_sum](TensorNode& self) {
      const bool need_z = zn->requires_grad, need_mu = mn->requires_grad;
      if (need_z) zn->ensure_grad();
      if (need_mu) mn->ensure_grad();
      for (int64_t i = 0; i < n; ++i) {
        const double* gi = self.grad.data() + i * k;
        const double* qi = self.value.data() + i * k;
        const double s = row_sum[static_cast<size_t>(i)];
        double dot = 0.0;
        for (int64_t c = 0; c < k; ++c) dot += gi[c] * qi[c];
        const double* zi = zn->value.data() + i * j;
        for (int64_t c = 0; c < k; ++c) {
          // d loss / d dist_ik, with u = q * s.
          const double u = qi[c] * s;
          const double t = -(gi[c] - dot) / s * u * u;
          const double* mu = mn->value.data() + c * j;
          for (int64_t a = 0; a < j; ++a) {
            const double diff2 = 2.0 * (zi[a] - mu[a]);
            if (need_z) zn->grad[i * j + a] += t * diff2;
            if (need_mu) mn->grad[c * j + a] -= t * diff2;
          }
        }
      }
    };
  }
  return q;
}

Tensor kl_loss_op(const Tensor& p, const Tensor& q) {
  if (p.shape() != q.shape())
    throw ShapeError("kl_loss: shape mismatch " + shape_str(p.shape()) + " vs " +
                     shape_str(q.shape()));
  const int64_t n = p.numel();
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double pi = p.data()[i];
    if (pi <= 0.0) continue;
    const double qi = q.data()[i];
    if (qi <= 0.0)
      throw NumericError("kl_loss: q = " + std::to_string(qi) + " with p = " +
                         std::to_string(pi));
    acc += pi * std::log(pi / qi);
  }
  Tensor y = Tensor::scalar(acc);
  // P is a constant target by construction; only q receives gradient.
  if (track_grad({&q})) {
    y.set_requires_grad(true);
    auto pn = p.node(), qn = q.node();
    y.node()->parents = {qn};
    y.node()->backward_fn = [pn, qn, n](TensorNode& self) {
      if (!qn->requires_grad) return;
      qn->ensure_grad();
      const double g = self.grad[0];
      for (int64_t i = 0; i < n; ++i) {
        const double pi = pn->value[i];
        if (pi > 0.0) qn->grad[i] -= g * pi / qn->value[i];
      }
    };
  }
  return y;
}

}  // namespace clam
