#include "fedsc/losses.hpp"

#include <algorithm>
#include <cmath>

#include "fedsc/errors.hpp"

namespace fedsc {

void LossConfig::validate() const {
  if (!(lambda_kd >= 0.0) || !(lambda_div >= 0.0))
    throw ConfigError("loss coefficients must be nonnegative");
  if (!(temperature > 0.0)) throw ConfigError("distillation temperature must be > 0");
  if (kernel.sigma2 && !(*kernel.sigma2 > 0.0))
    throw ConfigError("fixed gaussian bandwidth must be > 0");
  for (const auto& f : frozen_sigma2)
    if (f && !(*f > 0.0)) throw ConfigError("frozen gaussian bandwidth must be > 0");
  if (!(weight_ce_s >= 0.0) || !(weight_ce_p >= 0.0))
    throw ConfigError("cross-entropy weights must be nonnegative");
}

namespace {

/// log softmax(g / T)
Vector log_softmax(const Vector& g, double temperature) {
  Vector z = g / temperature;
  const double m = z.maxCoeff();
  const double lse = m + std::log((z.array() - m).exp().sum());
  return z.array() - lse;
}

}  // namespace

double cross_entropy(const Vector& logits, int label, Vector* dlogits) {
  if (label < 0 || label >= logits.size()) throw ConfigError("cross_entropy: label out of range");
  const Vector lp = log_softmax(logits, 1.0);
  if (dlogits) {
    *dlogits = lp.array().exp();
    (*dlogits)(label) -= 1.0;
  }
  return -lp(label);
}

double kd_loss(const Vector& student, const Vector& teacher, double temperature, Vector* dstudent) {
  if (!(temperature > 0.0)) throw ConfigError("kd_loss: temperature must be > 0");
  const Vector p = log_softmax(student, 1.0).array().exp();
  const Vector neg_log_q = -log_softmax(teacher, temperature);
  const double loss = p.dot(neg_log_q);
  if (dstudent) {
    // d/dg_k sum_c p_c l_c = p_k (l_k - sum_c p_c l_c)
    *dstudent = p.cwiseProduct((neg_log_q.array() - loss).matrix());
  }
  return loss;
}

double median_sigma2(const Matrix& rows) {
  const Eigen::Index B = rows.rows();
  std::vector<double> d;
  d.reserve(static_cast<std::size_t>(B * (B - 1) / 2));
  for (Eigen::Index i = 0; i < B; ++i)
    for (Eigen::Index j = i + 1; j < B; ++j) d.push_back((rows.row(i) - rows.row(j)).squaredNorm());
  if (d.empty()) return 1.0;
  std::sort(d.begin(), d.end());
  const std::size_t n = d.size();
  const double med = n % 2 ? d[n / 2] : 0.5 * (d[n / 2 - 1] + d[n / 2]);
  return med > 0.0 ? med : 1.0;
}

Matrix gram(const Matrix& x, const KernelSpec& kernel, double* sigma2_used) {
  const Eigen::Index B = x.rows();
  if (B < 2) throw ConfigError("gram/HSIC needs a batch of at least 2 samples");
  if (kernel.kind == KernelKind::linear) {
    if (sigma2_used) *sigma2_used = 0.0;
    Matrix L = x * x.transpose();
    // Symmetrize exactly; the product can differ in the last bit across halves.
    for (Eigen::Index i = 0; i < B; ++i)
      for (Eigen::Index j = i + 1; j < B; ++j) L(j, i) = L(i, j);
    return L;
  }
  const double s2 = kernel.sigma2 ? *kernel.sigma2 : median_sigma2(x);
  if (sigma2_used) *sigma2_used = s2;
  Matrix L(B, B);
  for (Eigen::Index i = 0; i < B; ++i) {
    L(i, i) = 1.0;
    for (Eigen::Index j = i + 1; j < B; ++j) {
      const double v = std::exp(-(x.row(i) - x.row(j)).squaredNorm() / (2.0 * s2));
      L(i, j) = v;
      L(j, i) = v;
    }
  }
  return L;
}

namespace {

Matrix center(const Matrix& L) {
  // H L H with H = I - 11^T/B
  const Vector row_mean = L.rowwise().mean();
  const Eigen::RowVectorXd col_mean = L.colwise().mean();
  const double all = L.mean();
  Matrix out = L;
  out.colwise() -= row_mean;
  out.rowwise() -= col_mean;
  out.array() += all;
  return out;
}

Matrix gram_backward(const Matrix& x, const Matrix& L, const Matrix& dL, const KernelSpec& kernel,
                     double sigma2) {
  if (kernel.kind == KernelKind::linear) return 2.0 * dL * x;
  const Matrix G = dL.cwiseProduct(L);
  const Vector rs = G.rowwise().sum();
  return (-2.0 / sigma2) * (rs.asDiagonal() * x - G * x);
}

}  // namespace

double hsic(const Matrix& a, const Matrix& b, const KernelSpec& kernel, Matrix* da, Matrix* db) {
  return hsic(a, b, kernel, kernel, da, db);
}

std::array<double, 2> batch_sigma2(const Matrix& feature_s, const Matrix& feature_p,
                                   const KernelSpec& kernel) {
  if (kernel.sigma2) return {*kernel.sigma2, *kernel.sigma2};
  return {median_sigma2(feature_s), median_sigma2(feature_p)};
}

double hsic(const Matrix& a, const Matrix& b, const KernelSpec& kernel_a,
            const KernelSpec& kernel_b, Matrix* da, Matrix* db) {
  if (a.rows() != b.rows()) throw ShapeError("hsic: feature sets have different batch sizes");
  if (kernel_a.kind != kernel_b.kind) throw ConfigError("hsic: kernel kinds differ");
  const Eigen::Index B = a.rows();
  double s2a = 0.0, s2b = 0.0;
  const Matrix La = gram(a, kernel_a, &s2a);
  const Matrix Lb = gram(b, kernel_b, &s2b);
  const auto& kernel = kernel_a;
  const double scale = 1.0 / static_cast<double>((B - 1) * (B - 1));
  const Matrix Ca = center(La);
  const Matrix Cb = center(Lb);
  // Tr(La H Lb H) = <H La H, H Lb H>; the centered form is symmetric in (a, b) bit for bit.
  const double value = scale * Ca.cwiseProduct(Cb).sum();
  if (da) *da = gram_backward(a, La, scale * Cb, kernel, s2a);
  if (db) *db = gram_backward(b, Lb, scale * Ca, kernel, s2b);
  return value;
}

LossBreakdown total_loss(const BatchOutputs& out, const LossConfig& cfg, LossGrads* grads) {
  const Eigen::Index B = out.batch();
  if (B < 1) throw ConfigError("total_loss: empty batch");
  if (static_cast<Eigen::Index>(out.labels.size()) != B)
    throw ShapeError("total_loss: label count does not match batch");
  const bool two = out.has_p();
  if (cfg.frozen_teacher && (cfg.frozen_teacher->rows() != B || cfg.frozen_teacher->cols() != out.logits_s.cols()))
    throw ShapeError("total_loss: frozen teacher logits do not match the batch");
  if (two && cfg.lambda_div > 0.0 && B < 2)
    throw ConfigError("diversity loss needs batch size >= 2 (got 1)");

  LossBreakdown br;
  const double inv_b = 1.0 / static_cast<double>(B);
  if (grads) {
    grads->logits_s.setZero(B, out.logits_s.cols());
    grads->logits_p.setZero(two ? B : 0, two ? out.logits_p.cols() : 0);
    grads->feature_s.resize(0, 0);
    grads->feature_p.resize(0, 0);
  }
  Vector g;
  for (Eigen::Index i = 0; i < B; ++i) {
    const int y = out.labels[static_cast<std::size_t>(i)];
    const Vector ls = out.logits_s.row(i).transpose();
    br.ce_s += cross_entropy(ls, y, grads ? &g : nullptr);
    if (grads) grads->logits_s.row(i) = (cfg.weight_ce_s * inv_b) * g.transpose();
    if (!two) continue;
    const Vector lp = out.logits_p.row(i).transpose();
    br.ce_p += cross_entropy(lp, y, grads ? &g : nullptr);
    if (grads) grads->logits_p.row(i) = (cfg.weight_ce_p * inv_b) * g.transpose();
    const bool kd_grad = grads && cfg.lambda_kd > 0.0;
    const Vector teacher = cfg.frozen_teacher ? Vector(cfg.frozen_teacher->row(i).transpose()) : ls;
    br.kd += kd_loss(lp, teacher, cfg.temperature, kd_grad ? &g : nullptr);
    if (kd_grad) grads->logits_p.row(i) += (cfg.lambda_kd * inv_b) * g.transpose();
  }
  br.ce_s *= inv_b;
  br.ce_p *= inv_b;
  br.kd *= inv_b;
  if (two && B >= 2 && cfg.lambda_div > 0.0) {
    Matrix da, db;
    KernelSpec ks = cfg.kernel, kp = cfg.kernel;
    if (cfg.frozen_sigma2[0]) ks.sigma2 = cfg.frozen_sigma2[0];
    if (cfg.frozen_sigma2[1]) kp.sigma2 = cfg.frozen_sigma2[1];
    br.div = hsic(out.feature_s, out.feature_p, ks, kp, grads ? &da : nullptr,
                  grads ? &db : nullptr);
    if (grads) {
      grads->feature_s = cfg.lambda_div * da;
      grads->feature_p = cfg.lambda_div * db;
    }
  }
  br.total = cfg.weight_ce_s * br.ce_s;
  if (two) br.total += cfg.weight_ce_p * br.ce_p + cfg.lambda_kd * br.kd + cfg.lambda_div * br.div;
  return br;
}

}  // namespace fedsc
