#include "lwa/tensor.hpp"

#include <numeric>
#include <sstream>

namespace lwa {

std::string shape_str(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

static std::size_t shape_product(const std::vector<std::size_t>& s) {
  std::size_t n = 1;
  for (std::size_t d : s) {
    if (d == 0) throw ValidationError("tensor shape has zero dimension " + shape_str(s));
    n *= d;
  }
  return n;
}

Tensor::Tensor(std::vector<std::size_t> s, std::vector<double> d)
    : shape(std::move(s)), data(std::move(d)) {
  if (shape_product(shape) != data.size()) {
    throw ValidationError("tensor data length " + std::to_string(data.size()) +
                          " does not match shape " + shape_str(shape));
  }
}

Tensor Tensor::zeros(std::vector<std::size_t> s) {
  std::size_t n = shape_product(s);
  return Tensor(std::move(s), std::vector<double>(n, 0.0));
}

Tensor Tensor::full(std::vector<std::size_t> s, double v) {
  std::size_t n = shape_product(s);
  return Tensor(std::move(s), std::vector<double>(n, v));
}

Tensor Tensor::from_values(std::vector<std::size_t> s, std::vector<double> d) {
  Tensor t(std::move(s), std::move(d));
  t.check_finite("tensor input");
  return t;
}

bool Tensor::all_finite() const {
  for (double v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void Tensor::check_finite(const std::string& what) const {
  if (!all_finite()) throw NumericError(what + ": non-finite value");
}

static void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ValidationError(std::string(op) + ": shape mismatch " + shape_str(a.shape) + " vs " +
                          shape_str(b.shape));
  }
}

Tensor& Tensor::operator+=(const Tensor& o) {
  check_same_shape(*this, o, "add");
  for (std::size_t i = 0; i < data.size(); ++i) data[i] += o.data[i];
  return *this;
}

Tensor& Tensor::operator-=(const Tensor& o) {
  check_same_shape(*this, o, "sub");
  for (std::size_t i = 0; i < data.size(); ++i) data[i] -= o.data[i];
  return *this;
}

Tensor& Tensor::operator*=(double s) {
  for (double& v : data) v *= s;
  return *this;
}

Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
Tensor operator*(Tensor a, double s) { return a *= s; }

double max_abs_diff(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    m = std::max(m, std::abs(a.data[i] - b.data[i]));
  }
  return m;
}

Tensor SeededRng::init_tensor(std::vector<std::size_t> shape, std::size_t fan_in) {
  if (fan_in == 0) throw ValidationError("init_tensor: fan_in must be positive");
  double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.data) v = uniform(-bound, bound);
  return t;
}

}  // namespace lwa
