#include <doctest.h>

#include <cmath>
#include <functional>

#include "fedsc/errors.hpp"
#include "fedsc/losses.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace fedsc;
using test::hsic_brute;
using test::random_matrix;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}


/// Central differences of f over every entry of m.
Matrix numeric_grad(Matrix& m, const std::function<double()>& f, double h = 1e-6) {
  Matrix g(m.rows(), m.cols());
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    const double x = m.data()[i];
    m.data()[i] = x + h;
    const double up = f();
    m.data()[i] = x - h;
    const double down = f();
    m.data()[i] = x;
    g.data()[i] = (up - down) / (2.0 * h);
  }
  return g;
}

double rel_err(const Matrix& a, const Matrix& n) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double d = std::abs(a.data()[i] - n.data()[i]);
    const double den = std::max({std::abs(a.data()[i]), std::abs(n.data()[i]), 1e-7});
    worst = std::max(worst, d / den);
  }
  return worst;
}

}  // namespace

TEST_CASE("cross_entropy values") {
  CHECK(std::abs(cross_entropy(vec({0, 0}), 0) - std::log(2.0)) < 1e-15);
  CHECK(cross_entropy(vec({30, -30}), 0) < 1e-12);
  CHECK(std::abs(cross_entropy(Vector::Constant(5, 1.7), 3) - std::log(5.0)) < 1e-14);
  Vector g;
  cross_entropy(vec({0, 0}), 1, &g);
  CHECK(g(0) == doctest::Approx(0.5));
  CHECK(g(1) == doctest::Approx(-0.5));
  CHECK(std::isfinite(cross_entropy(vec({1000, -1000}), 1)));
  CHECK_THROWS_AS(cross_entropy(vec({0, 0}), 2), ConfigError);
}

TEST_CASE("kd_loss values and direction") {
  CHECK(std::abs(kd_loss(vec({0, 0}), vec({0, 0}), 1.0) - std::log(2.0)) < 1e-15);
  // Teacher softmax_T at [1 - eps, eps].
  const double eps = 1e-3, T = 0.25;
  const Vector teacher = vec({T * std::log((1 - eps) / eps), 0.0});
  auto loss_at = [&](double p1) {
    const Vector student = vec({std::log(p1), std::log(1 - p1)});
    return kd_loss(student, teacher, T);
  };
  for (double p1 : {0.9, 0.5, 0.1}) {
    const double expect = -std::log(1 - eps) * p1 - std::log(eps) * (1 - p1);
    CHECK(std::abs(loss_at(p1) - expect) < 1e-12);
  }
  CHECK(loss_at(0.1) > loss_at(0.5));
  CHECK(loss_at(0.5) > loss_at(0.9));
  CHECK_THROWS_AS(kd_loss(vec({0, 0}), vec({0, 0}), 0.0), ConfigError);
}

TEST_CASE("kd_loss gradient treats the teacher as constant") {
  Rng rng(1);
  for (int trial = 0; trial < 5; ++trial) {
    Matrix student = random_matrix(4, 1, rng);
    const Vector teacher = random_matrix(4, 1, rng);
    Vector g;
    kd_loss(student.col(0), teacher, 0.25, &g);
    const Matrix num = numeric_grad(student, [&] { return kd_loss(student.col(0), teacher, 0.25); });
    CHECK(rel_err(g, num) < 1e-6);
  }
}

TEST_CASE("gram matrices") {
  Matrix same = Matrix::Constant(3, 4, 0.7);
  CHECK(gram(same, {KernelKind::gaussian, {}}) == Matrix::Ones(3, 3));
  CHECK(gram(Matrix::Identity(2, 2), {KernelKind::linear, {}}) == Matrix::Identity(2, 2));
  double s2 = 0;
  Matrix pts(3, 1);
  pts << 0, 1, 3;
  gram(pts, {KernelKind::gaussian, {}}, &s2);
  CHECK(s2 == 4.0);  // squared distances {1, 9, 4}
  CHECK(median_sigma2(same) == 1.0);
  CHECK_THROWS_AS(gram(Matrix::Zero(1, 3), {KernelKind::linear, {}}), ConfigError);
}

TEST_CASE("hsic equals a brute-force evaluation") {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix a = random_matrix(8, 6, rng), b = random_matrix(8, 6, rng);
    const double lin = hsic(a, b, {KernelKind::linear, {}});
    CHECK(std::abs(lin - hsic_brute(a, b, KernelKind::linear, 0, 0)) < 1e-10);
    const double gau = hsic(a, b, {KernelKind::gaussian, {}});
    CHECK(std::abs(gau - hsic_brute(a, b, KernelKind::gaussian, median_sigma2(a), median_sigma2(b))) < 1e-10);
    CHECK(lin >= -1e-12);
    CHECK(gau >= -1e-12);
  }
}

TEST_CASE("hsic special cases") {
  Matrix s(2, 1), p(2, 1);
  s << 0, 1;
  p << 0, 1;
  CHECK(std::abs(hsic(s, p, {KernelKind::linear, {}}) - 0.25) < 1e-12);

  Rng rng(3);
  const Matrix a = random_matrix(8, 6, rng);
  const Matrix constant = Matrix::Constant(8, 6, 2.5);
  CHECK(std::abs(hsic(a, constant, {KernelKind::linear, {}})) < 1e-12);
  CHECK(std::abs(hsic(a, constant, {KernelKind::gaussian, {}})) < 1e-12);
  CHECK_THROWS_AS(hsic(a, Matrix::Zero(7, 6), {KernelKind::linear, {}}), ShapeError);
}

TEST_CASE("hsic gradients match finite differences") {
  Rng rng(4);
  for (auto kind : {KernelKind::linear, KernelKind::gaussian}) {
    Matrix a = random_matrix(6, 4, rng), b = random_matrix(6, 4, rng);
    const KernelSpec k{kind, kind == KernelKind::gaussian ? std::optional<double>(3.0) : std::nullopt};
    Matrix da, db;
    hsic(a, b, k, &da, &db);
    CHECK(rel_err(da, numeric_grad(a, [&] { return hsic(a, b, k); })) < 1e-6);
    CHECK(rel_err(db, numeric_grad(b, [&] { return hsic(a, b, k); })) < 1e-6);
  }
}

TEST_CASE("total_loss reductions") {
  BatchOutputs out;
  out.logits_s.resize(2, 2);
  out.logits_s << 0, 0, std::log(2.0), 0;
  out.logits_p = out.logits_s;
  out.labels = {0, 1};
  Rng rng(5);
  out.feature_s = random_matrix(2, 3, rng);
  out.feature_p = random_matrix(2, 3, rng);

  const double ce1 = std::log(2.0), ce2 = std::log(3.0);
  LossConfig plain;
  plain.lambda_kd = 0.0;
  plain.lambda_div = 0.0;
  const auto a = total_loss(out, plain);
  CHECK(std::abs(a.total - (ce1 + ce2)) < 1e-15);
  CHECK(std::abs(a.ce_s - 0.5 * (ce1 + ce2)) < 1e-15);

  LossConfig kd = plain;
  kd.lambda_kd = 1.0;
  kd.temperature = 1.0;
  // Identical branches: KD is the entropy of each softmax.
  const double kd1 = std::log(2.0);
  const double kd2 = -(2.0 / 3.0) * std::log(2.0 / 3.0) - (1.0 / 3.0) * std::log(1.0 / 3.0);
  const auto b = total_loss(out, kd);
  CHECK(std::abs(b.total - 0.5 * ((2 * ce1 + kd1) + (2 * ce2 + kd2))) < 1e-14);

  BatchOutputs single = out;
  single.logits_p.resize(0, 0);
  single.feature_p.resize(0, 0);
  const auto c = total_loss(single, kd);
  CHECK(c.total == c.ce_s);
  CHECK(c.kd == 0.0);
}

TEST_CASE("total_loss guards") {
  BatchOutputs one;
  one.logits_s = Matrix::Zero(1, 2);
  one.logits_p = Matrix::Zero(1, 2);
  one.feature_s = Matrix::Zero(1, 2);
  one.feature_p = Matrix::Zero(1, 2);
  one.labels = {0};
  LossConfig cfg;
  CHECK_THROWS_AS(total_loss(one, cfg), ConfigError);
  cfg.lambda_div = 0.0;
  CHECK_NOTHROW(total_loss(one, cfg));
  one.labels = {0, 1};
  CHECK_THROWS_AS(total_loss(one, cfg), ShapeError);
  LossConfig neg;
  neg.lambda_kd = -1;
  CHECK_THROWS_AS(neg.validate(), ConfigError);
  LossConfig temp;
  temp.temperature = 0;
  CHECK_THROWS_AS(temp.validate(), ConfigError);
}

TEST_CASE("total_loss gradients match finite differences with the teacher frozen") {
  Rng rng(6);
  BatchOutputs out;
  out.logits_s = random_matrix(5, 3, rng);
  out.logits_p = random_matrix(5, 3, rng);
  out.feature_s = random_matrix(5, 4, rng);
  out.feature_p = random_matrix(5, 4, rng);
  out.labels = {0, 2, 1, 1, 0};
  LossConfig cfg;
  cfg.lambda_kd = 0.7;
  cfg.lambda_div = 0.3;
  cfg.kernel.sigma2 = 2.0;
  cfg.frozen_teacher = out.logits_s;
  LossGrads g;
  total_loss(out, cfg, &g);
  auto f = [&] { return total_loss(out, cfg).total; };
  CHECK(rel_err(g.logits_s, numeric_grad(out.logits_s, f)) < 1e-6);
  CHECK(rel_err(g.logits_p, numeric_grad(out.logits_p, f)) < 1e-6);
  CHECK(rel_err(g.feature_s, numeric_grad(out.feature_s, f)) < 1e-6);
  CHECK(rel_err(g.feature_p, numeric_grad(out.feature_p, f)) < 1e-6);
}
