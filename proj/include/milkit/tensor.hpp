#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace milkit {

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};
struct ShapeError : Error {
  explicit ShapeError(const std::string& msg) : Error(msg) {}
};
struct ConfigError : Error {
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};
struct IoError : Error {
  explicit IoError(const std::string& msg) : Error(msg) {}
};
struct InputError : Error {
  explicit InputError(const std::string& msg) : Error(msg) {}
};

using Rng = std::mt19937_64;

// Dense row-major tensor, rank 1 or 2 in practice. Double precision
// throughout; float32 only appears at the serialization boundary.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    std::size_t n = 1;
    for (int d : shape_) {
      if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_str(shape_));
      n *= static_cast<std::size_t>(d);
    }
    data_.assign(n, 0.0);
  }

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

  static Tensor from(std::vector<int> shape, std::vector<double> data) {
    Tensor t(std::move(shape));
    if (data.size() != t.data_.size())
      throw ShapeError("data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(t.shape_));
    t.data_ = std::move(data);
    return t;
  }

  static Tensor scalar(double v) { return from({1}, {v}); }

  static Tensor identity(int n) {
    Tensor t({n, n});
    for (int i = 0; i < n; ++i) t.at(i, i) = 1.0;
    return t;
  }

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  std::size_t size() const { return data_.size(); }

  int rows() const { return rank() >= 1 ? shape_[0] : 0; }
  int cols() const {
    if (rank() == 2) return shape_[1];
    if (rank() == 1) return 1;
    return 0;
  }

  double& at(std::size_t i) { return data_[i]; }
  double at(std::size_t i) const { return data_[i]; }
  double& at(int i, int j) { return data_[static_cast<std::size_t>(i) * shape_[1] + j]; }
  double at(int i, int j) const { return data_[static_cast<std::size_t>(i) * shape_[1] + j]; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  void add_scaled(const Tensor& o, double c) {
    if (!same_shape(o))
      throw ShapeError("add_scaled shape mismatch: " + shape_str(shape_) + " vs " + shape_str(o.shape_));
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += c * o.data_[i];
  }

  static std::string shape_str(const std::vector<int>& s) {
    std::string out = "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i) out += "x";
      out += std::to_string(s[i]);
    }
    return out + ")";
  }

 private:
  std::vector<int> shape_;
  std::vector<double> data_;
};

inline Tensor gaussian(std::vector<int> shape, Rng& rng, double stddev = 1.0, double mean = 0.0) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(mean, stddev);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0])
    throw ShapeError("matmul shape mismatch: " + Tensor::shape_str(a.shape()) + " * " +
                     Tensor::shape_str(b.shape()));
  const int m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  Tensor c({m, n});
  for (int i = 0; i < m; ++i) {
    const double* ar = &a.data()[static_cast<std::size_t>(i) * k];
    double* cr = &c.data()[static_cast<std::size_t>(i) * n];
    for (int p = 0; p < k; ++p) {
      const double av = ar[p];
      if (av == 0.0) continue;
      const double* br = &b.data()[static_cast<std::size_t>(p) * n];
      for (int j = 0; j < n; ++j) cr[j] += av * br[j];
    }
  }
  return c;
}

// Stable softmax along the last axis of a rank-2 tensor (or the whole of a
// rank-1 tensor). Max subtraction keeps exp in range.
inline Tensor softmax(const Tensor& x) {
  Tensor y = x;
  const int rows = x.rank() == 2 ? x.shape()[0] : 1;
  const int cols = x.rank() == 2 ? x.shape()[1] : static_cast<int>(x.size());
  for (int i = 0; i < rows; ++i) {
    double* r = &y.data()[static_cast<std::size_t>(i) * cols];
    double mx = r[0];
    for (int j = 1; j < cols; ++j) mx = std::max(mx, r[j]);
    double sum = 0.0;
    for (int j = 0; j < cols; ++j) {
      r[j] = std::exp(r[j] - mx);
      sum += r[j];
    }
    for (int j = 0; j < cols; ++j) r[j] /= sum;
  }
  return y;
}

}  // namespace milkit
