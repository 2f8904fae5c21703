#include "fedsc/compression.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <numeric>
#include <set>

#include "fedsc/errors.hpp"
#include "fedsc/rng.hpp"

namespace fedsc {

PcaResult pca_components(const Matrix& rows, Exec exec) {
  if (rows.rows() < 2) throw ConfigError("PCA needs at least two rows");
  PcaResult out;
  out.mean = rows.colwise().mean().transpose();
  const Matrix centered = rows.rowwise() - out.mean.transpose();
  Matrix cov;
  kernels::covariance(centered, cov, exec);
  out.normalization = static_cast<double>(rows.rows() - 1);

  Eigen::SelfAdjointEigenSolver<Matrix> solver(cov);
  if (solver.info() != Eigen::Success) throw NumericError("PCA eigen-decomposition did not converge");
  const Eigen::Index d = cov.rows();
  out.components.resize(d, d);
  out.eigenvalues.resize(d);
  for (Eigen::Index i = 0; i < d; ++i) {
    const Eigen::Index src = d - 1 - i;  // solver sorts ascending
    Vector u = solver.eigenvectors().col(src);
    Eigen::Index arg = 0;
    for (Eigen::Index k = 1; k < d; ++k)
      if (std::abs(u(k)) > std::abs(u(arg))) arg = k;
    if (u(arg) < 0.0) u = -u;
    out.components.col(i) = u;
    // Roundoff can leave tiny negative eigenvalues on a PSD matrix.
    out.eigenvalues(i) = std::max(0.0, solver.eigenvalues()(src));
  }
  return out;
}

namespace {

void check_range(Eigen::Index d, int d1, int d2) {
  if (d1 < 1 || d2 < d1 || d2 > d)
    throw ConfigError("component range must satisfy 1 <= d1 <= d2 <= d (got d1=" +
                      std::to_string(d1) + ", d2=" + std::to_string(d2) + ", d=" +
                      std::to_string(d) + ")");
}

}  // namespace

CompressedEmbedding compress(const Matrix& rows, const PcaResult& pca,
                             std::vector<std::uint32_t> row_ids, int d1, int d2) {
  check_range(rows.cols(), d1, d2);
  if (!row_ids.empty() && static_cast<Eigen::Index>(row_ids.size()) != rows.rows())
    throw ShapeError("compress: one row id per row required");
  CompressedEmbedding c;
  c.d1 = d1;
  c.d2 = d2;
  c.mean = pca.mean;
  c.basis = pca.components.middleCols(d1 - 1, d2 - d1 + 1);
  c.projected = (rows.rowwise() - pca.mean.transpose()) * c.basis;
  c.row_ids = std::move(row_ids);
  return c;
}

CompressedEmbedding compress(const Matrix& rows, std::vector<std::uint32_t> row_ids, int d1, int d2,
                             Exec exec) {
  check_range(rows.cols(), d1, d2);
  return compress(rows, pca_components(rows, exec), std::move(row_ids), d1, d2);
}

Matrix decompress(const CompressedEmbedding& c) {
  if (c.projected.cols() != c.basis.cols() || c.mean.size() != c.basis.rows())
    throw ShapeError("decompress: inconsistent payload shapes");
  Matrix out = c.projected * c.basis.transpose();
  out.rowwise() += c.mean.transpose();
  return out;
}

double energy_kept(const Vector& eigenvalues, int d1, int d2) {
  check_range(eigenvalues.size(), d1, d2);
  if ((eigenvalues.array() < 0.0).any()) throw ConfigError("energy_kept: negative eigenvalue");
  const double total = eigenvalues.sum();
  if (!(total > 0.0)) throw NumericError("energy_kept: all eigenvalues are zero (degenerate matrix)");
  return eigenvalues.segment(d1 - 1, d2 - d1 + 1).sum() / total;
}

std::size_t payload_float_count(std::size_t rows, std::size_t d, int d1, int d2) {
  const auto w = static_cast<std::size_t>(d2 - d1 + 1);
  return (rows + d) * w + d;
}

std::size_t payload_byte_size(std::size_t rows, std::size_t d, int d1, int d2) {
  return 4 * sizeof(std::uint64_t) + rows * sizeof(std::uint32_t) +
         payload_float_count(rows, d, d1, d2) * sizeof(double);
}

namespace {

static_assert(std::endian::native == std::endian::little,
              "payload encoding assumes a little-endian host");

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

}  // namespace

std::vector<std::uint8_t> serialize(const CompressedEmbedding& c) {
  const auto rows = static_cast<std::size_t>(c.projected.rows());
  const auto d = static_cast<std::size_t>(c.dim());
  if (c.row_ids.size() != rows) throw ShapeError("serialize: one row id per row required");
  std::vector<std::uint8_t> out;
  out.reserve(payload_byte_size(rows, d, c.d1, c.d2));
  put<std::uint64_t>(out, static_cast<std::uint64_t>(c.d1));
  put<std::uint64_t>(out, static_cast<std::uint64_t>(c.d2));
  put<std::uint64_t>(out, rows);
  put<std::uint64_t>(out, d);
  for (auto id : c.row_ids) put<std::uint32_t>(out, id);
  for (Eigen::Index i = 0; i < c.mean.size(); ++i) put<double>(out, c.mean(i));
  for (Eigen::Index r = 0; r < c.basis.rows(); ++r)
    for (Eigen::Index k = 0; k < c.basis.cols(); ++k) put<double>(out, c.basis(r, k));
  for (Eigen::Index r = 0; r < c.projected.rows(); ++r)
    for (Eigen::Index k = 0; k < c.projected.cols(); ++k) put<double>(out, c.projected(r, k));
  return out;
}

CompressedEmbedding deserialize(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 0;
  auto get = [&]<typename T>(T) {
    if (pos + sizeof(T) > bytes.size()) throw IoError("compressed payload truncated");
    T v;
    std::memcpy(&v, bytes.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
  };
  CompressedEmbedding c;
  c.d1 = static_cast<int>(get(std::uint64_t{}));
  c.d2 = static_cast<int>(get(std::uint64_t{}));
  const auto rows = static_cast<Eigen::Index>(get(std::uint64_t{}));
  const auto d = static_cast<Eigen::Index>(get(std::uint64_t{}));
  check_range(d, c.d1, c.d2);
  if (bytes.size() != payload_byte_size(static_cast<std::size_t>(rows), static_cast<std::size_t>(d), c.d1, c.d2))
    throw IoError("compressed payload size does not match its header");
  const Eigen::Index w = c.d2 - c.d1 + 1;
  c.row_ids.resize(static_cast<std::size_t>(rows));
  for (auto& id : c.row_ids) id = get(std::uint32_t{});
  c.mean.resize(d);
  for (Eigen::Index i = 0; i < d; ++i) c.mean(i) = get(double{});
  c.basis.resize(d, w);
  for (Eigen::Index r = 0; r < d; ++r)
    for (Eigen::Index k = 0; k < w; ++k) c.basis(r, k) = get(double{});
  c.projected.resize(rows, w);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index k = 0; k < w; ++k) c.projected(r, k) = get(double{});
  return c;
}

std::vector<int> topk_neighbors(const Matrix& table, int w, int k, Exec exec) {
  if (w < 0 || w >= table.rows()) throw ConfigError("topk_neighbors: query row out of range");
  if (k < 0 || k >= table.rows()) throw ConfigError("topk_neighbors: need 0 <= K < rows");
  if (k == 0) return {};
  Vector scores;
  kernels::row_scores(table, table.row(w).transpose(), scores, exec);
  std::vector<int> idx;
  idx.reserve(static_cast<std::size_t>(table.rows() - 1));
  for (int r = 0; r < table.rows(); ++r)
    if (r != w) idx.push_back(r);
  auto better = [&](int a, int b) { return scores(a) > scores(b) || (scores(a) == scores(b) && a < b); };
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), better);
  idx.resize(static_cast<std::size_t>(k));
  return idx;
}

int intersection_count(std::span<const int> a, std::span<const int> b) {
  const std::set<int> sa(a.begin(), a.end());
  const std::set<int> sb(b.begin(), b.end());
  int n = 0;
  for (int v : sa) n += static_cast<int>(sb.count(v));
  return n;
}

double mean_neighbor_intersection(const Matrix& a, const Matrix& b, std::span<const int> queries,
                                  int k, Exec exec) {
  if (a.rows() != b.rows()) throw ShapeError("neighbor intersection: matrices not row-aligned");
  if (queries.empty()) return 0.0;
  double total = 0.0;
  for (int q : queries) {
    const auto na = topk_neighbors(a, q, k, exec);
    const auto nb = topk_neighbors(b, q, k, exec);
    total += intersection_count(na, nb);
  }
  return total / static_cast<double>(queries.size());
}

double relationship_disruption_rate(const Matrix& before, const Matrix& after,
                                    std::size_t samples, std::uint64_t seed) {
  if (before.rows() != after.rows()) throw ShapeError("disruption rate: matrices not row-aligned");
  const auto n = static_cast<std::uint64_t>(before.rows());
  if (n < 3) throw ConfigError("disruption rate needs at least three rows");
  if (samples == 0) return 0.0;
  Rng rng(seed);
  std::size_t flips = 0;
  for (std::size_t s = 0; s < samples; ++s) {
    const auto j1 = static_cast<Eigen::Index>(uniform_index(rng, n));
    Eigen::Index j2 = j1, j3 = j1;
    while (j2 == j1) j2 = static_cast<Eigen::Index>(uniform_index(rng, n));
    while (j3 == j1 || j3 == j2) j3 = static_cast<Eigen::Index>(uniform_index(rng, n));
    const bool b = before.row(j1).dot(before.row(j2)) <= before.row(j1).dot(before.row(j3));
    const bool a = after.row(j1).dot(after.row(j2)) <= after.row(j1).dot(after.row(j3));
    flips += (a != b);
  }
  return static_cast<double>(flips) / static_cast<double>(samples);
}

double mean_row_cosine(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("mean_row_cosine: shape mismatch");
  if (a.rows() == 0) return 0.0;
  double total = 0.0;
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    const double na = a.row(r).norm(), nb = b.row(r).norm();
    if (na > 0.0 && nb > 0.0) total += a.row(r).dot(b.row(r)) / (na * nb);
  }
  return total / static_cast<double>(a.rows());
}

Matrix structured_embedding(int rows, int d, std::uint64_t seed, int clusters) {
  if (rows < 2 || d < 2 || clusters < 1) throw ConfigError("structured_embedding: bad shape");
  Rng rng(seed);
  Vector dominant(d);
  for (int i = 0; i < d; ++i) dominant(i) = standard_normal(rng);
  dominant.normalize();
  Matrix centers(clusters, d);
  for (int c = 0; c < clusters; ++c)
    for (int i = 0; i < d; ++i) centers(c, i) = standard_normal(rng);
  Matrix out(rows, d);
  for (int r = 0; r < rows; ++r) {
    const auto c = static_cast<Eigen::Index>(uniform_index(rng, static_cast<std::uint64_t>(clusters)));
    const double along = 4.0 * standard_normal(rng);
    for (int i = 0; i < d; ++i)
      out(r, i) = along * dominant(i) + centers(c, i) + 0.3 * standard_normal(rng);
  }
  return out;
}

}  // namespace fedsc
