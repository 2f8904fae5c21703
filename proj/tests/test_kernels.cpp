#include <doctest.h>

#include "fedsc/errors.hpp"
#include "fedsc/kernels.hpp"
#include "test_util.hpp"

using namespace fedsc;
using test::bit_equal;
using test::random_matrix;

TEST_CASE("weighted_sum matches a naive loop and is exact on small integers") {
  Matrix a(1, 1), b(1, 1), out;
  a << 0.0;
  b << 4.0;
  const Matrix* in[] = {&a, &b};
  const double w[] = {0.25, 0.75};
  kernels::weighted_sum(in, w, out, Exec::serial);
  CHECK(out(0, 0) == 3.0);

  Rng rng(1);
  std::vector<Matrix> ms;
  for (int k = 0; k < 5; ++k) ms.push_back(random_matrix(13, 7, rng));
  std::vector<const Matrix*> ptrs;
  for (auto& m : ms) ptrs.push_back(&m);
  const std::vector<double> weights{0.1, 0.2, 0.3, 0.15, 0.25};
  Matrix naive = Matrix::Zero(13, 7);
  for (Eigen::Index i = 0; i < naive.size(); ++i)
    for (int k = 0; k < 5; ++k) naive.data()[i] += weights[k] * ms[k].data()[i];
  Matrix serial, parallel;
  kernels::weighted_sum(ptrs, weights, serial, Exec::serial);
  {
    test::ThreadScope threads(4);
    kernels::weighted_sum(ptrs, weights, parallel, Exec::parallel);
  }
  CHECK(bit_equal(serial, naive));
  CHECK(bit_equal(parallel, serial));
}

TEST_CASE("weighted_sum rejects mismatched inputs") {
  Matrix a = Matrix::Zero(2, 2), b = Matrix::Zero(2, 3), out;
  const Matrix* in[] = {&a, &b};
  const double w[] = {0.5, 0.5};
  CHECK_THROWS_AS(kernels::weighted_sum(in, w, out, Exec::serial), ShapeError);
  const double w1[] = {1.0};
  CHECK_THROWS_AS(kernels::weighted_sum(in, w1, out, Exec::serial), ShapeError);
}

TEST_CASE("row_scores serial and parallel agree bit for bit") {
  Rng rng(2);
  const Matrix table = random_matrix(300, 17, rng);
  const Vector q = random_matrix(17, 1, rng);
  Vector s, p;
  kernels::row_scores(table, q, s, Exec::serial);
  {
    test::ThreadScope threads(4);
    kernels::row_scores(table, q, p, Exec::parallel);
  }
  CHECK(bit_equal(s, p));
  CHECK((s - table * q).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("covariance equals X^T X / (n - 1)") {
  Rng rng(3);
  Matrix x = random_matrix(40, 6, rng);
  x.rowwise() -= x.colwise().mean();
  Matrix s, p;
  kernels::covariance(x, s, Exec::serial);
  {
    test::ThreadScope threads(4);
    kernels::covariance(x, p, Exec::parallel);
  }
  CHECK(bit_equal(s, p));
  const Matrix ref = x.transpose() * x / 39.0;
  CHECK((s - ref).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(bit_equal(s, Matrix(s.transpose())));
  Matrix one = Matrix::Zero(1, 3), out;
  CHECK_THROWS_AS(kernels::covariance(one, out, Exec::serial), ShapeError);
}

TEST_CASE("add_scaled") {
  Rng rng(4);
  Matrix dst = random_matrix(9, 9, rng);
  const Matrix src = random_matrix(9, 9, rng);
  Matrix expect = dst;
  for (Eigen::Index i = 0; i < expect.size(); ++i) expect.data()[i] += -0.5 * src.data()[i];
  Matrix par = dst;
  kernels::add_scaled(dst, src, -0.5, Exec::serial);
  {
    test::ThreadScope threads(4);
    kernels::add_scaled(par, src, -0.5, Exec::parallel);
  }
  CHECK(bit_equal(dst, expect));
  CHECK(bit_equal(par, expect));
  Matrix wrong = Matrix::Zero(2, 2);
  CHECK_THROWS_AS(kernels::add_scaled(wrong, src, 1.0, Exec::serial), ShapeError);
}
