#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fedsc/kernels.hpp"
#include "fedsc/params.hpp"

namespace fedsc {

/// Principal components of the rows of an embedding matrix.
/// Columns of `components` are u_1..u_d with descending eigenvalues of the
/// sample covariance (normalized by rows - 1). Each u_i is signed so that its
/// largest-magnitude coordinate (lowest index on ties) is positive.
struct PcaResult {
  Matrix components;
  Vector eigenvalues;
  Vector mean;
  double normalization = 1.0;  // rows - 1
};

PcaResult pca_components(const Matrix& rows, Exec exec = Exec::parallel);

/// Embedding rows projected onto components d1..d2 (1-based, inclusive) of
/// their own centered PCA. The mean travels with the payload.
struct CompressedEmbedding {
  Matrix projected;  // rows x (d2 - d1 + 1)
  Matrix basis;      // d x (d2 - d1 + 1)
  Vector mean;       // d
  int d1 = 1;
  int d2 = 1;
  std::vector<std::uint32_t> row_ids;

  Eigen::Index width() const { return d2 - d1 + 1; }
  Eigen::Index dim() const { return basis.rows(); }
};

CompressedEmbedding compress(const Matrix& rows, std::vector<std::uint32_t> row_ids, int d1, int d2,
                             Exec exec = Exec::parallel);
CompressedEmbedding compress(const Matrix& rows, const PcaResult& pca,
                             std::vector<std::uint32_t> row_ids, int d1, int d2);

/// projected * basis^T + mean
Matrix decompress(const CompressedEmbedding& c);

/// sum_{i=d1}^{d2} lambda_i / sum_i lambda_i
double energy_kept(const Vector& eigenvalues, int d1, int d2);

/// Floats in one payload: (rows + d)(d2 - d1 + 1) + d.
std::size_t payload_float_count(std::size_t rows, std::size_t d, int d1, int d2);

/// Serialized bytes: 32-byte header {u64 d1, d2, rows, d} + u32 row id per
/// row + f64 per payload float.
std::size_t payload_byte_size(std::size_t rows, std::size_t d, int d1, int d2);

/// Little-endian: header | row_ids | mean (d) | basis (d x w, row-major) |
/// projected (rows x w, row-major).
std::vector<std::uint8_t> serialize(const CompressedEmbedding& c);
CompressedEmbedding deserialize(std::span<const std::uint8_t> bytes);

/// Top-k rows by inner product with row `w`, excluding `w`; ties by lower index.
std::vector<int> topk_neighbors(const Matrix& table, int w, int k, Exec exec = Exec::serial);

/// |set(a) intersect set(b)|
int intersection_count(std::span<const int> a, std::span<const int> b);

/// Fraction of sampled distinct triples (j1, j2, j3) whose inner-product
/// order <v1,v2> <= <v1,v3> differs between the two row-aligned matrices.
double relationship_disruption_rate(const Matrix& before, const Matrix& after,
                                    std::size_t samples, std::uint64_t seed);

/// Mean over `queries` of |topk(a, q) intersect topk(b, q)|.
double mean_neighbor_intersection(const Matrix& a, const Matrix& b, std::span<const int> queries,
                                  int k, Exec exec = Exec::serial);

/// Mean over rows of cos(a_r, b_r); zero rows contribute 0.
double mean_row_cosine(const Matrix& a, const Matrix& b);

/// Rows with one dominant shared direction plus cluster structure, the shape
/// that makes the first principal component carry most inner-product mass.
Matrix structured_embedding(int rows, int d, std::uint64_t seed, int clusters = 10);

}  // namespace fedsc
