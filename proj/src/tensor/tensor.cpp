#include "dinf/tensor/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>

#include "dinf/sim/errors.hpp"

namespace dinf::tensor {

namespace {

std::size_t product(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

[[noreturn]] void shape_error(std::string_view op, const Tensor& a, const Tensor& b) {
  std::ostringstream os;
  os << op << ": shape mismatch [" << a.rows() << "x" << a.cols() << "] vs [" << b.rows() << "x"
     << b.cols() << "]";
  throw ConfigError(os.str());
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape) : shape_(std::move(shape)) {
  for (auto d : shape_) {
    if (d == 0) throw ConfigError("tensor: dimensions must be positive");
  }
  data_.assign(product(shape_), 0.0f);
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  for (auto d : shape_) {
    if (d == 0) throw ConfigError("tensor: dimensions must be positive");
  }
  if (data_.size() != product(shape_)) throw ConfigError("tensor: data length does not match shape");
}

Tensor Tensor::from_rows(const std::vector<std::vector<float>>& rows) {
  if (rows.empty() || rows.front().empty()) throw ConfigError("tensor: empty rows");
  std::vector<float> data;
  for (const auto& r : rows) {
    if (r.size() != rows.front().size()) throw ConfigError("tensor: ragged rows");
    data.insert(data.end(), r.begin(), r.end());
  }
  return Tensor({rows.size(), rows.front().size()}, std::move(data));
}

std::size_t Tensor::rows() const {
  if (shape_.size() != 2) throw ConfigError("tensor: expected rank 2");
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (shape_.size() != 2) throw ConfigError("tensor: expected rank 2");
  return shape_[1];
}

std::span<float> Tensor::row(std::size_t r) {
  const auto c = cols();
  return {data_.data() + r * c, c};
}

std::span<const float> Tensor::row(std::size_t r) const {
  const auto c = cols();
  return {data_.data() + r * c, c};
}

Tensor Tensor::slice_rows(std::size_t begin, std::size_t end) const {
  if (begin >= end || end > rows()) throw ConfigError("tensor: invalid row slice");
  const auto c = cols();
  std::vector<float> out(data_.begin() + static_cast<std::ptrdiff_t>(begin * c),
                         data_.begin() + static_cast<std::ptrdiff_t>(end * c));
  return Tensor({end - begin, c}, std::move(out));
}

Tensor Tensor::slice_cols(std::size_t begin, std::size_t end) const {
  if (begin >= end || end > cols()) throw ConfigError("tensor: invalid column slice");
  const auto r = rows();
  const auto w = end - begin;
  std::vector<float> out;
  out.reserve(r * w);
  for (std::size_t i = 0; i < r; ++i) {
    auto src = row(i);
    out.insert(out.end(), src.begin() + static_cast<std::ptrdiff_t>(begin),
               src.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return Tensor({r, w}, std::move(out));
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ConfigError("concat_rows: no parts");
  const auto c = parts.front().cols();
  std::size_t total = 0;
  std::vector<float> data;
  for (const auto& p : parts) {
    if (p.cols() != c) throw ConfigError("concat_rows: column mismatch");
    total += p.rows();
    data.insert(data.end(), p.data().begin(), p.data().end());
  }
  return Tensor({total, c}, std::move(data));
}

Tensor matmul(const Tensor& a, const Tensor& b, FlopCounter* counter) {
  if (a.cols() != b.rows()) shape_error("matmul", a, b);
  const auto m = a.rows();
  const auto k = a.cols();
  const auto n = b.cols();
  Tensor c = Tensor::zeros(m, n);
  const float* ad = a.data().data();
  const float* bd = b.data().data();
  float* cd = c.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    float* crow = cd + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const float av = ad[i * k + p];
      const float* brow = bd + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  if (counter) counter->flops += 2.0 * static_cast<double>(m) * static_cast<double>(k) * static_cast<double>(n);
  check_finite(c, "matmul");
  return c;
}

Tensor transpose(const Tensor& a) {
  Tensor t = Tensor::zeros(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) t.at(j, i) = a.at(i, j);
  }
  return t;
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("add", a, b);
  Tensor c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c.data()[i] += b.data()[i];
  check_finite(c, "add");
  return c;
}

void softmax_inplace(std::span<float> row) {
  if (row.empty()) return;
  for (float v : row) {
    if (!std::isfinite(v)) throw NumericalError("softmax");
  }
  const float mx = *std::max_element(row.begin(), row.end());
  float sum = 0.0f;
  for (auto& v : row) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (auto& v : row) v /= sum;
}

Tensor softmax_rows(const Tensor& x) {
  Tensor y = x;
  for (std::size_t i = 0; i < y.rows(); ++i) softmax_inplace(y.row(i));
  return y;
}

Tensor rms_norm_rows(const Tensor& x, float eps) {
  Tensor y = x;
  const auto n = static_cast<float>(x.cols());
  for (std::size_t i = 0; i < y.rows(); ++i) {
    auto r = y.row(i);
    float ss = 0.0f;
    for (float v : r) ss += v * v;
    const float inv = 1.0f / std::sqrt(ss / n + eps);
    for (auto& v : r) v *= inv;
  }
  check_finite(y, "rms_norm");
  return y;
}

Tensor silu(const Tensor& x) {
  Tensor y = x;
  for (auto& v : y.data()) v = v / (1.0f + std::exp(-v));
  check_finite(y, "silu");
  return y;
}

std::size_t argmax(std::span<const float> row) {
  if (row.empty()) throw ConfigError("argmax: empty row");
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

void check_finite(const Tensor& t, std::string_view op) {
  for (float v : t.data()) {
    if (!std::isfinite(v)) throw NumericalError(std::string(op));
  }
}

double max_relative_error(const Tensor& actual, const Tensor& reference) {
  if (actual.shape() != reference.shape()) throw ConfigError("max_relative_error: shape mismatch");
  double max_diff = 0.0;
  double max_ref = 0.0;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    max_diff = std::max(max_diff, std::abs(static_cast<double>(actual.data()[i]) - reference.data()[i]));
    max_ref = std::max(max_ref, std::abs(static_cast<double>(reference.data()[i])));
  }
  if (max_ref == 0.0) return max_diff;
  return max_diff / max_ref;
}

}  // namespace dinf::tensor
