#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "armour/errors.hpp"

namespace armour {

// Logit value used to suppress attention entries before softmax. Kept finite
// so arithmetic stays IEEE-normal; softmax_rows maps it to an exactly-zero
// probability via max subtraction and exp underflow.
inline constexpr double kMaskSentinel = -1e30;

// Dense row-major tensor of 64-bit reals. Computation is double throughout;
// 32-bit storage exists only in the on-disk weight container.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> extents, double fill = 0.0);

  // Builds a tensor from explicit values; throws ShapeError if the element
  // count does not match the shape product.
  static Tensor from(std::vector<std::size_t> extents, std::vector<double> values);
  static Tensor scalar(double v);
  static Tensor identity(std::size_t n);

  std::size_t rank() const { return shape.size(); }
  std::size_t numel() const { return data.size(); }

  // rank-2 accessors
  std::size_t rows() const;
  std::size_t cols() const;
  double& at(std::size_t i, std::size_t j);
  double at(std::size_t i, std::size_t j) const;

  double& operator[](std::size_t flat) { return data[flat]; }
  double operator[](std::size_t flat) const { return data[flat]; }

  bool same_shape(const Tensor& other) const { return shape == other.shape; }
};

std::string shape_string(const Tensor& t);
std::string shape_string(const std::vector<std::size_t>& extents);

// --- core operation set ------------------------------------------------
// All operations are pure: inputs are untouched, results freshly allocated.

Tensor matmul(const Tensor& a, const Tensor& b);
// a (m x k) times b^T for b (n x k); the transpose is folded into the index
// order, nothing is materialized. Summation order over k matches matmul.
Tensor matmul_transpose_b(const Tensor& a, const Tensor& b);
// Swaps the last two axes; rank >= 2 (leading axes act as batch).
Tensor transpose(const Tensor& a);
// Row-wise stable softmax over the last axis; rank >= 2. Rows made entirely
// of mask sentinels violate the precondition and raise MaskError.
Tensor softmax_rows(const Tensor& a);
// Joins two tensors along the last axis; all leading extents must agree.
Tensor concat_last_axis(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor hadamard(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
// m (r x c) plus bias (rank-1, length c) added to every row. Bias addition is
// the one deliberate broadcast in the op set; everything else is shape-exact.
Tensor add_row_bias(const Tensor& m, const Tensor& bias);
// Columns [c0, c1) of a rank-2 tensor.
Tensor slice_cols(const Tensor& m, std::size_t c0, std::size_t c1);
// Square rank-2 input with the diagonal replaced by `value`.
Tensor mask_diagonal(const Tensor& m, double value);
Tensor gelu(const Tensor& a);
// Column means of a rank-2 tensor, returned as 1 x c.
Tensor mean_rows(const Tensor& m);
double sum(const Tensor& a);

double max_abs_diff(const Tensor& a, const Tensor& b);

// --- deterministic RNG --------------------------------------------------
// splitmix64; identical streams on every platform, unlike std distributions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64();
  double uniform();  // [0, 1)
  double uniform(double lo, double hi);
  std::size_t below(std::size_t n);  // [0, n)

  Tensor uniform_tensor(std::vector<std::size_t> extents, double lo, double hi);

 private:
  std::uint64_t state_;
};

}  // namespace armour
