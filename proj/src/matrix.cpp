#include "cirl/matrix.hpp"

#include <algorithm>
#include <cmath>

#include "cirl/errors.hpp"
#include "cirl/kernels.hpp"
#include "cirl/rng.hpp"

namespace cirl {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw Error(ErrorKind::ShapeMismatch, "matrix data size does not match shape");
  }
}

Matrix Matrix::gaussian(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
  Matrix m(rows, cols);
  for (auto& v : m.data_) v = stddev * rng.gaussian();
  return m;
}

Matrix Matrix::row_vector(std::span<const double> values) {
  return Matrix(1, values.size(), std::vector<double>(values.begin(), values.end()));
}

Matrix Matrix::rows_slice(std::size_t begin, std::size_t end) const {
  Matrix out(end - begin, cols_);
  std::copy(data_.begin() + static_cast<std::ptrdiff_t>(begin * cols_),
            data_.begin() + static_cast<std::ptrdiff_t>(end * cols_), out.data_.begin());
  return out;
}

void Matrix::set_zero() { std::fill(data_.begin(), data_.end(), 0.0); }

double dot(std::span<const double> a, std::span<const double> b) {
  return kernels::dot(a.data(), b.data(), a.size());
}

double l2_norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  return dot(a, b) / (l2_norm(a) * l2_norm(b));
}

std::vector<double> column_mean(const Matrix& m) {
  std::vector<double> mean(m.cols(), 0.0);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) mean[c] += m(r, c);
  }
  const double inv = 1.0 / static_cast<double>(m.rows());
  for (auto& v : mean) v *= inv;
  return mean;
}

bool all_finite(const Matrix& m) {
  return std::all_of(m.flat().begin(), m.flat().end(), [](double v) { return std::isfinite(v); });
}

}  // namespace cirl
