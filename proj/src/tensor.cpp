#include "armour/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace armour {

namespace {

std::size_t shape_product(const std::vector<std::size_t>& extents) {
  std::size_t n = 1;
  for (std::size_t e : extents) n *= e;
  return n;
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected rank-2 tensor, got " + shape_string(t));
  }
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> extents, double fill)
    : shape(std::move(extents)), data(shape_product(shape), fill) {}

Tensor Tensor::from(std::vector<std::size_t> extents, std::vector<double> values) {
  if (shape_product(extents) != values.size()) {
    throw ShapeError("Tensor::from: " + std::to_string(values.size()) +
                     " values do not fill shape " + shape_string(extents));
  }
  Tensor t;
  t.shape = std::move(extents);
  t.data = std::move(values);
  return t;
}

Tensor Tensor::scalar(double v) { return from({1}, {v}); }

Tensor Tensor::identity(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

std::size_t Tensor::rows() const {
  require_rank2(*this, "rows");
  return shape[0];
}

std::size_t Tensor::cols() const {
  require_rank2(*this, "cols");
  return shape[1];
}

double& Tensor::at(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
double Tensor::at(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }

std::string shape_string(const std::vector<std::size_t>& extents) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < extents.size(); ++i) {
    if (i) os << " x ";
    os << extents[i];
  }
  os << "]";
  return os.str();
}

std::string shape_string(const Tensor& t) { return shape_string(t.shape); }

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  if (a.shape[1] != b.shape[0]) {
    throw ShapeError("matmul: inner dimensions disagree, " + shape_string(a) + " vs " +
                     shape_string(b));
  }
  const std::size_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
  Tensor c({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a.data[i * k + p];
      const double* brow = &b.data[p * n];
      double* crow = &c.data[i * n];
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
  return c;
}

Tensor matmul_transpose_b(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul_transpose_b");
  require_rank2(b, "matmul_transpose_b");
  if (a.shape[1] != b.shape[1]) {
    throw ShapeError("matmul_transpose_b: inner dimensions disagree, " + shape_string(a) +
                     " vs " + shape_string(b) + " transposed");
  }
  const std::size_t m = a.shape[0], k = a.shape[1], n = b.shape[0];
  Tensor c({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = &a.data[i * k];
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = &b.data[j * k];
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      c.data[i * n + j] = acc;
    }
  }
  return c;
}

Tensor transpose(const Tensor& a) {
  if (a.rank() < 2) {
    throw ShapeError("transpose: rank must be >= 2, got " + shape_string(a));
  }
  std::vector<std::size_t> out_shape = a.shape;
  std::swap(out_shape[out_shape.size() - 1], out_shape[out_shape.size() - 2]);
  Tensor out(out_shape);
  const std::size_t r = a.shape[a.rank() - 2];
  const std::size_t c = a.shape[a.rank() - 1];
  const std::size_t batch = a.numel() / (r * c);
  for (std::size_t bi = 0; bi < batch; ++bi) {
    const double* src = &a.data[bi * r * c];
    double* dst = &out.data[bi * r * c];
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) dst[j * r + i] = src[i * c + j];
  }
  return out;
}

Tensor softmax_rows(const Tensor& a) {
  if (a.rank() < 2) {
    throw ShapeError("softmax_rows: rank must be >= 2, got " + shape_string(a));
  }
  const std::size_t c = a.shape[a.rank() - 1];
  const std::size_t nrows = a.numel() / c;
  Tensor out(a.shape);
  for (std::size_t i = 0; i < nrows; ++i) {
    const double* row = &a.data[i * c];
    double m = row[0];
    bool all_masked = true;
    for (std::size_t j = 0; j < c; ++j) {
      m = std::max(m, row[j]);
      all_masked = all_masked && row[j] == kMaskSentinel;
    }
    if (all_masked) {
      throw MaskError("softmax_rows: row " + std::to_string(i) + " is entirely masked");
    }
    double* orow = &out.data[i * c];
    double total = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      orow[j] = std::exp(row[j] - m);
      total += orow[j];
    }
    for (std::size_t j = 0; j < c; ++j) orow[j] /= total;
  }
  return out;
}

Tensor concat_last_axis(const Tensor& a, const Tensor& b) {
  if (a.rank() != b.rank() || a.rank() == 0) {
    throw ShapeError("concat_last_axis: rank mismatch, " + shape_string(a) + " vs " +
                     shape_string(b));
  }
  for (std::size_t i = 0; i + 1 < a.rank(); ++i) {
    if (a.shape[i] != b.shape[i]) {
      throw ShapeError("concat_last_axis: leading extents disagree, " + shape_string(a) +
                       " vs " + shape_string(b));
    }
  }
  const std::size_t p = a.shape[a.rank() - 1];
  const std::size_t q = b.shape[b.rank() - 1];
  std::vector<std::size_t> out_shape = a.shape;
  out_shape.back() = p + q;
  Tensor out(out_shape);
  const std::size_t lead = (p + q) == 0 ? 0 : out.numel() / (p + q);
  for (std::size_t i = 0; i < lead; ++i) {
    std::copy_n(&a.data[i * p], p, &out.data[i * (p + q)]);
    std::copy_n(&b.data[i * q], q, &out.data[i * (p + q) + p]);
  }
  return out;
}

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shapes disagree, " + shape_string(a) + " vs " +
                     shape_string(b));
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = a;
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] += b.data[i];
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a;
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] -= b.data[i];
  return out;
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "hadamard");
  Tensor out = a;
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] *= b.data[i];
  return out;
}

Tensor scale(const Tensor& a, double c) {
  Tensor out = a;
  for (double& v : out.data) v *= c;
  return out;
}

Tensor add_row_bias(const Tensor& m, const Tensor& bias) {
  require_rank2(m, "add_row_bias");
  if (bias.rank() != 1 || bias.shape[0] != m.shape[1]) {
    throw ShapeError("add_row_bias: bias " + shape_string(bias) + " does not match columns of " +
                     shape_string(m));
  }
  Tensor out = m;
  const std::size_t c = m.shape[1];
  for (std::size_t i = 0; i < m.shape[0]; ++i)
    for (std::size_t j = 0; j < c; ++j) out.data[i * c + j] += bias.data[j];
  return out;
}

Tensor slice_cols(const Tensor& m, std::size_t c0, std::size_t c1) {
  require_rank2(m, "slice_cols");
  if (c0 > c1 || c1 > m.shape[1]) {
    throw ShapeError("slice_cols: range [" + std::to_string(c0) + ", " + std::to_string(c1) +
                     ") out of bounds for " + shape_string(m));
  }
  Tensor out({m.shape[0], c1 - c0});
  for (std::size_t i = 0; i < m.shape[0]; ++i)
    std::copy_n(&m.data[i * m.shape[1] + c0], c1 - c0, &out.data[i * (c1 - c0)]);
  return out;
}

Tensor mask_diagonal(const Tensor& m, double value) {
  require_rank2(m, "mask_diagonal");
  if (m.shape[0] != m.shape[1]) {
    throw ShapeError("mask_diagonal: square matrix required, got " + shape_string(m));
  }
  Tensor out = m;
  for (std::size_t i = 0; i < m.shape[0]; ++i) out.at(i, i) = value;
  return out;
}

Tensor gelu(const Tensor& a) {
  Tensor out = a;
  constexpr double inv_sqrt2 = 0.7071067811865475244;
  for (double& v : out.data) v = 0.5 * v * (1.0 + std::erf(v * inv_sqrt2));
  return out;
}

Tensor mean_rows(const Tensor& m) {
  require_rank2(m, "mean_rows");
  const std::size_t r = m.shape[0], c = m.shape[1];
  Tensor out({1, c});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.data[j] += m.data[i * c + j];
  for (std::size_t j = 0; j < c; ++j) out.data[j] /= static_cast<double>(r);
  return out;
}

double sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data) s += v;
  return s;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

std::uint64_t Rng::next_u64() {
  std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

std::size_t Rng::below(std::size_t n) {
  return static_cast<std::size_t>(uniform() * static_cast<double>(n));
}

Tensor Rng::uniform_tensor(std::vector<std::size_t> extents, double lo, double hi) {
  Tensor t(std::move(extents));
  for (double& v : t.data) v = uniform(lo, hi);
  return t;
}

}  // namespace armour
