#pragma once

#include <span>

#include "fedsc/params.hpp"

namespace fedsc {

/// Serial variants are the reference implementations; parallel variants
/// split the outer loop with OpenMP and keep every per-element reduction in
/// the serial order, so both produce bit-identical results.
enum class Exec { serial, parallel };

namespace kernels {

/// out = sum_k weights[k] * inputs[k], accumulated in k order per element.
void weighted_sum(std::span<const Matrix* const> inputs, std::span<const double> weights,
                  Matrix& out, Exec exec);

/// scores[r] = <table.row(r), query>
void row_scores(const Matrix& table, const Vector& query, Vector& scores, Exec exec);

/// Column covariance X^T X / (n - 1) of an already centered n x d matrix.
/// Entry (i, j) is summed over rows in ascending order.
void covariance(const Matrix& centered, Matrix& out, Exec exec);

/// dst += scale * src
void add_scaled(Matrix& dst, const Matrix& src, double scale, Exec exec);

}  // namespace kernels
}  // namespace fedsc
