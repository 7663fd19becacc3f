#include "lwa/ops.hpp"

#include <algorithm>
#include <cmath>

namespace lwa {

static void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw ValidationError(std::string(op) + ": expected a matrix, got " + shape_str(t.shape));
  }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  if (a.dim(1) != b.dim(0)) {
    throw ValidationError("matmul: inner dimensions disagree " + shape_str(a.shape) + " vs " +
                          shape_str(b.shape));
  }
  std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor c = Tensor::zeros({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      double av = a(i, p);
      if (av == 0.0) continue;
      const double* brow = &b.data[p * n];
      double* crow = &c.data[i * n];
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_tn");
  require_matrix(b, "matmul_tn");
  if (a.dim(0) != b.dim(0)) {
    throw ValidationError("matmul_tn: leading dimensions disagree " + shape_str(a.shape) + " vs " +
                          shape_str(b.shape));
  }
  std::size_t k = a.dim(0), m = a.dim(1), n = b.dim(1);
  Tensor c = Tensor::zeros({m, n});
  for (std::size_t p = 0; p < k; ++p) {
    const double* arow = &a.data[p * m];
    const double* brow = &b.data[p * n];
    for (std::size_t i = 0; i < m; ++i) {
      double av = arow[i];
      if (av == 0.0) continue;
      double* crow = &c.data[i * n];
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_nt");
  require_matrix(b, "matmul_nt");
  if (a.dim(1) != b.dim(1)) {
    throw ValidationError("matmul_nt: trailing dimensions disagree " + shape_str(a.shape) +
                          " vs " + shape_str(b.shape));
  }
  std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  Tensor c = Tensor::zeros({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = &a.data[i * k];
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = &b.data[j * k];
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      c(i, j) = acc;
    }
  }
  return c;
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw ValidationError("softmax: axis " + std::to_string(axis) + " invalid for shape " +
                          shape_str(x.shape));
  }
  std::size_t n = x.dim(axis);
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  std::size_t outer = x.size() / (n * inner);

  Tensor y = Tensor::zeros(x.shape);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      std::size_t base = o * n * inner + in;
      double mx = x.data[base];
      for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, x.data[base + i * inner]);
      double sum = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        double e = std::exp(x.data[base + i * inner] - mx);
        y.data[base + i * inner] = e;
        sum += e;
      }
      for (std::size_t i = 0; i < n; ++i) y.data[base + i * inner] /= sum;
    }
  }
  return y;
}

Tensor softmax_rows(const Tensor& x) {
  require_matrix(x, "softmax_rows");
  return softmax(x, 1);
}

Tensor softmax_rows_backward(const Tensor& y, const Tensor& dy) {
  require_matrix(y, "softmax_rows_backward");
  if (!y.same_shape(dy)) {
    throw ValidationError("softmax_rows_backward: shape mismatch " + shape_str(y.shape) + " vs " +
                          shape_str(dy.shape));
  }
  std::size_t m = y.dim(0), n = y.dim(1);
  Tensor dx = Tensor::zeros(y.shape);
  for (std::size_t i = 0; i < m; ++i) {
    double dot = 0.0;
    for (std::size_t j = 0; j < n; ++j) dot += dy(i, j) * y(i, j);
    for (std::size_t j = 0; j < n; ++j) dx(i, j) = y(i, j) * (dy(i, j) - dot);
  }
  return dx;
}

Activation activation_from_string(const std::string& s) {
  if (s == "none") return Activation::None;
  if (s == "silu") return Activation::Silu;
  throw ValidationError("unknown activation \"" + s + "\" (expected \"silu\" or \"none\")");
}

std::string activation_to_string(Activation a) {
  return a == Activation::Silu ? "silu" : "none";
}

static double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

double silu(double x) { return x * stable_sigmoid(x); }

double silu_grad(double x) {
  double s = stable_sigmoid(x);
  return s * (1.0 + x * (1.0 - s));
}

Tensor apply_activation(const Tensor& x, Activation act) {
  if (act == Activation::None) return x;
  Tensor y = x;
  for (double& v : y.data) v = silu(v);
  return y;
}

Tensor activation_backward(const Tensor& x, const Tensor& dy, Activation act) {
  if (act == Activation::None) return dy;
  Tensor dx = dy;
  for (std::size_t i = 0; i < x.size(); ++i) dx.data[i] *= silu_grad(x.data[i]);
  return dx;
}

static void check_conv_input(const Tensor& x, const char* op) {
  if (x.rank() != 3) {
    throw ValidationError(std::string(op) + ": expected [C x H x W] input, got " +
                          shape_str(x.shape));
  }
}

static std::size_t conv_out_dim(std::size_t in, std::size_t k, std::size_t stride,
                                std::size_t padding, const char* op) {
  if (in + 2 * padding < k) {
    throw ValidationError(std::string(op) + ": kernel size " + std::to_string(k) +
                          " exceeds padded input " + std::to_string(in + 2 * padding));
  }
  return (in + 2 * padding - k) / stride + 1;
}

Tensor depthwise_conv2d(const Tensor& x, const Tensor& kernel, std::size_t stride,
                        std::size_t padding) {
  check_conv_input(x, "depthwise_conv2d");
  if (kernel.rank() != 3 || kernel.dim(0) != x.dim(0) || kernel.dim(1) != kernel.dim(2)) {
    throw ValidationError("depthwise_conv2d: kernel shape " + shape_str(kernel.shape) +
                          " incompatible with input " + shape_str(x.shape));
  }
  std::size_t k = kernel.dim(1);
  if (k % 2 == 0) throw ValidationError("depthwise_conv2d: kernel size must be odd");
  if (stride < 1) throw ValidationError("depthwise_conv2d: stride must be >= 1");
  std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  std::size_t ho = conv_out_dim(h, k, stride, padding, "depthwise_conv2d");
  std::size_t wo = conv_out_dim(w, k, stride, padding, "depthwise_conv2d");

  Tensor y = Tensor::zeros({c, ho, wo});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < ho; ++i) {
      for (std::size_t j = 0; j < wo; ++j) {
        double acc = 0.0;
        for (std::size_t u = 0; u < k; ++u) {
          std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(i * stride + u) -
                              static_cast<std::ptrdiff_t>(padding);
          if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t v = 0; v < k; ++v) {
            std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(j * stride + v) -
                                static_cast<std::ptrdiff_t>(padding);
            if (jj < 0 || jj >= static_cast<std::ptrdiff_t>(w)) continue;
            acc += x(ch, static_cast<std::size_t>(ii), static_cast<std::size_t>(jj)) *
                   kernel(ch, u, v);
          }
        }
        y(ch, i, j) = acc;
      }
    }
  }
  return y;
}

void depthwise_conv2d_backward(const Tensor& x, const Tensor& kernel, std::size_t stride,
                               std::size_t padding, const Tensor& dy, Tensor& dx,
                               Tensor& dkernel) {
  std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  std::size_t k = kernel.dim(1);
  std::size_t ho = dy.dim(1), wo = dy.dim(2);
  dx = Tensor::zeros(x.shape);
  dkernel = Tensor::zeros(kernel.shape);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < ho; ++i) {
      for (std::size_t j = 0; j < wo; ++j) {
        double g = dy(ch, i, j);
        if (g == 0.0) continue;
        for (std::size_t u = 0; u < k; ++u) {
          std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(i * stride + u) -
                              static_cast<std::ptrdiff_t>(padding);
          if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t v = 0; v < k; ++v) {
            std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(j * stride + v) -
                                static_cast<std::ptrdiff_t>(padding);
            if (jj < 0 || jj >= static_cast<std::ptrdiff_t>(w)) continue;
            std::size_t si = static_cast<std::size_t>(ii), sj = static_cast<std::size_t>(jj);
            dkernel(ch, u, v) += g * x(ch, si, sj);
            dx(ch, si, sj) += g * kernel(ch, u, v);
          }
        }
      }
    }
  }
}

Tensor pointwise_conv2d(const Tensor& x, const Tensor& kernel) {
  check_conv_input(x, "pointwise_conv2d");
  require_matrix(kernel, "pointwise_conv2d");
  if (kernel.dim(1) != x.dim(0)) {
    throw ValidationError("pointwise_conv2d: channel mismatch, kernel " + shape_str(kernel.shape) +
                          " vs input " + shape_str(x.shape));
  }
  std::size_t cin = x.dim(0), cout = kernel.dim(0);
  std::size_t hw = x.dim(1) * x.dim(2);
  Tensor y = Tensor::zeros({cout, x.dim(1), x.dim(2)});
  for (std::size_t co = 0; co < cout; ++co) {
    double* yrow = &y.data[co * hw];
    for (std::size_t ci = 0; ci < cin; ++ci) {
      double kv = kernel(co, ci);
      if (kv == 0.0) continue;
      const double* xrow = &x.data[ci * hw];
      for (std::size_t p = 0; p < hw; ++p) yrow[p] += kv * xrow[p];
    }
  }
  return y;
}

void pointwise_conv2d_backward(const Tensor& x, const Tensor& kernel, const Tensor& dy, Tensor& dx,
                               Tensor& dkernel) {
  std::size_t cin = x.dim(0), cout = kernel.dim(0);
  std::size_t hw = x.dim(1) * x.dim(2);
  dx = Tensor::zeros(x.shape);
  dkernel = Tensor::zeros(kernel.shape);
  for (std::size_t co = 0; co < cout; ++co) {
    const double* grow = &dy.data[co * hw];
    for (std::size_t ci = 0; ci < cin; ++ci) {
      const double* xrow = &x.data[ci * hw];
      double* dxrow = &dx.data[ci * hw];
      double kv = kernel(co, ci);
      double acc = 0.0;
      for (std::size_t p = 0; p < hw; ++p) {
        acc += grow[p] * xrow[p];
        dxrow[p] += grow[p] * kv;
      }
      dkernel(co, ci) += acc;
    }
  }
}

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                        double eps) {
  if (eps <= 0.0) throw ValidationError("finite_diff_grad: eps must be positive");
  Tensor g = Tensor::zeros(x.shape);
  Tensor xp = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double orig = xp.data[i];
    xp.data[i] = orig + eps;
    double fp = f(xp);
    xp.data[i] = orig - eps;
    double fm = f(xp);
    xp.data[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw NumericError("finite_diff_grad: non-finite function value at element " +
                         std::to_string(i));
    }
    g.data[i] = (fp - fm) / (2.0 * eps);
  }
  return g;
}

double grad_rel_err(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    throw ValidationError("grad_rel_err: shape mismatch " + shape_str(a.shape) + " vs " +
                          shape_str(b.shape));
  }
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double d = a.data[i] - b.data[i];
    diff += d * d;
    na += a.data[i] * a.data[i];
    nb += b.data[i] * b.data[i];
  }
  double denom = std::sqrt(na) + std::sqrt(nb);
  if (denom < 1e-12) return 0.0;
  return std::sqrt(diff) / denom;
}

}  // namespace lwa
