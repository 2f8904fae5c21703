#include "fedsc/kernels.hpp"

#include "fedsc/errors.hpp"

namespace fedsc::kernels {

void weighted_sum(std::span<const Matrix* const> inputs, std::span<const double> weights,
                  Matrix& out, Exec exec) {
  if (inputs.empty() || inputs.size() != weights.size())
    throw ShapeError("weighted_sum: need one weight per input");
  const Eigen::Index rows = inputs[0]->rows(), cols = inputs[0]->cols();
  for (const auto* m : inputs)
    if (m->rows() != rows || m->cols() != cols) throw ShapeError("weighted_sum: shape mismatch");
  out.resize(rows, cols);
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(out.size());
  const std::size_t K = inputs.size();
  double* dst = out.data();
#pragma omp parallel for schedule(static) if (exec == Exec::parallel)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t k = 0; k < K; ++k) acc += weights[k] * inputs[k]->data()[i];
    dst[i] = acc;
  }
}

void row_scores(const Matrix& table, const Vector& query, Vector& scores, Exec exec) {
  if (table.cols() != query.size()) throw ShapeError("row_scores: width mismatch");
  const Eigen::Index rows = table.rows(), d = table.cols();
  scores.resize(rows);
#pragma omp parallel for schedule(static) if (exec == Exec::parallel)
  for (Eigen::Index r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (Eigen::Index c = 0; c < d; ++c) acc += table(r, c) * query(c);
    scores(r) = acc;
  }
}

void covariance(const Matrix& centered, Matrix& out, Exec exec) {
  const Eigen::Index n = centered.rows(), d = centered.cols();
  if (n < 2) throw ShapeError("covariance needs at least two rows");
  out.resize(d, d);
  const double inv = 1.0 / static_cast<double>(n - 1);
#pragma omp parallel for schedule(dynamic) if (exec == Exec::parallel)
  for (Eigen::Index j = 0; j < d; ++j) {
    const auto cj = centered.col(j);
    for (Eigen::Index i = 0; i <= j; ++i) {
      const auto ci = centered.col(i);
      double acc = 0.0;
      for (Eigen::Index r = 0; r < n; ++r) acc += ci(r) * cj(r);
      out(i, j) = acc * inv;
      out(j, i) = acc * inv;
    }
  }
}

void add_scaled(Matrix& dst, const Matrix& src, double scale, Exec exec) {
  if (dst.rows() != src.rows() || dst.cols() != src.cols()) throw ShapeError("add_scaled: shape mismatch");
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(dst.size());
  double* d = dst.data();
  const double* s = src.data();
#pragma omp parallel for schedule(static) if (exec == Exec::parallel)
  for (std::ptrdiff_t i = 0; i < n; ++i) d[i] += scale * s[i];
}

}  // namespace fedsc::kernels
