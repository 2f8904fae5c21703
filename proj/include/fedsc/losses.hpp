#pragma once

#include <array>
#include <optional>
#include <span>

#include "fedsc/params.hpp"

namespace fedsc {

enum class KernelKind { gaussian, linear };

/// Gaussian kernel exp(-|a-b|^2 / (2 sigma^2)). With no fixed sigma^2 the
/// median of the batch's pairwise squared distances is used (1.0 when that
/// median is 0). The bandwidth is a constant under differentiation.
struct KernelSpec {
  KernelKind kind = KernelKind::gaussian;
  std::optional<double> sigma2;
};

struct LossConfig {
  double lambda_kd = 0.01;   // knowledge-transfer weight
  double lambda_div = 0.01;  // HSIC diversity weight
  double temperature = 0.25;
  KernelSpec kernel{};
  double weight_ce_s = 1.0;
  double weight_ce_p = 1.0;
  /// Per-side bandwidth overrides (s, p). The gradient checker freezes the
  /// median-heuristic values here so finite differences see a constant.
  std::array<std::optional<double>, 2> frozen_sigma2{};
  /// Teacher logits (B x C) used by the distillation term in place of the
  /// live shared logits. Finite differences of the objective then see the
  /// same stop-gradient the reverse pass applies.
  std::optional<Matrix> frozen_teacher;

  void validate() const;
};

/// -sum_c y_c log softmax(g)_c for a class index y. Optional gradient
/// w.r.t. g (softmax(g) - onehot(y)).
double cross_entropy(const Vector& logits, int label, Vector* dlogits = nullptr);

/// -sum_c softmax_1(g_p)_c log softmax_T(g_s)_c. The teacher logits g_s are
/// constants: only `dstudent` is produced.
double kd_loss(const Vector& student, const Vector& teacher, double temperature,
               Vector* dstudent = nullptr);

/// Median of the pairwise squared row distances (i < j), 1.0 when zero.
double median_sigma2(const Matrix& rows);

/// B x B gram matrix of the rows of `x`. Writes the bandwidth used when asked.
Matrix gram(const Matrix& x, const KernelSpec& kernel, double* sigma2_used = nullptr);

/// (B-1)^-2 Tr(L_a H L_b H), H = I - 11^T/B. Rows are samples.
/// Gradients w.r.t. both feature matrices are written when requested.
double hsic(const Matrix& a, const Matrix& b, const KernelSpec& kernel, Matrix* da = nullptr,
            Matrix* db = nullptr);
double hsic(const Matrix& a, const Matrix& b, const KernelSpec& kernel_a,
            const KernelSpec& kernel_b, Matrix* da, Matrix* db);

/// Bandwidths the gaussian kernel would use for the two branch features.
std::array<double, 2> batch_sigma2(const Matrix& feature_s, const Matrix& feature_p,
                                   const KernelSpec& kernel);

/// Per-batch network outputs, one row per sample. A batch without a p branch
/// leaves the *_p matrices empty.
struct BatchOutputs {
  Matrix logits_s;
  Matrix logits_p;
  Matrix feature_s;
  Matrix feature_p;
  std::vector<int> labels;

  Eigen::Index batch() const { return logits_s.rows(); }
  bool has_p() const { return logits_p.size() > 0; }
};

struct LossBreakdown {
  double total = 0.0;
  double ce_s = 0.0;  // batch means
  double ce_p = 0.0;
  double kd = 0.0;
  double div = 0.0;
};

struct LossGrads {
  Matrix logits_s;
  Matrix logits_p;
  Matrix feature_s;
  Matrix feature_p;
};

/// (1/B) sum_i [w_s CE_s,i + w_p CE_p,i + lambda_kd KD_i] + lambda_div HSIC.
/// Branch-p terms vanish for single-branch batches.
LossBreakdown total_loss(const BatchOutputs& out, const LossConfig& cfg,
                         LossGrads* grads = nullptr);

}  // namespace fedsc
