#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

namespace dinf::tensor {

// Dense row-major float32 tensor. Most operations expect rank 2.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape);
  Tensor(std::vector<std::size_t> shape, std::vector<float> data);

  static Tensor zeros(std::size_t rows, std::size_t cols) { return Tensor({rows, cols}); }
  static Tensor from_rows(const std::vector<std::vector<float>>& rows);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t rows() const;
  std::size_t cols() const;

  float& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  float at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<float> row(std::size_t r);
  std::span<const float> row(std::size_t r) const;

  std::vector<float>& data() { return data_; }
  const std::vector<float>& data() const { return data_; }
  std::vector<float> release() && { return std::move(data_); }

  Tensor slice_rows(std::size_t begin, std::size_t end) const;
  Tensor slice_cols(std::size_t begin, std::size_t end) const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<float> data_;
};

Tensor concat_rows(std::span<const Tensor> parts);

// Accumulates multiply-add FLOPs (2 per fused multiply-add) of the ops it is passed to.
struct FlopCounter {
  double flops = 0.0;
};

// Every output element accumulates its inner products in increasing k order,
// so row or column slices of an operand give bit-identical results.
Tensor matmul(const Tensor& a, const Tensor& b, FlopCounter* counter = nullptr);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);

// Numerically stabilised by per-row max subtraction.
Tensor softmax_rows(const Tensor& x);
void softmax_inplace(std::span<float> row);

Tensor rms_norm_rows(const Tensor& x, float eps = 1e-5f);
Tensor silu(const Tensor& x);
std::size_t argmax(std::span<const float> row);

// Throws NumericalError naming `op` on any NaN or infinity.
void check_finite(const Tensor& t, std::string_view op);

// Largest absolute difference divided by the largest absolute reference value.
double max_relative_error(const Tensor& actual, const Tensor& reference);

}  // namespace dinf::tensor
