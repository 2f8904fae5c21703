#pragma once

// Independent reference implementations shared by the unit tests and the
// acceptance runner.

#include <cmath>
#include <vector>

#include "fedsc/federation.hpp"

namespace fedsc::test {

/// (B-1)^-2 Tr(L_a H L_b H) with every matrix built and multiplied by plain loops.
inline double hsic_brute(const Matrix& a, const Matrix& b, KernelKind kind, double s2a, double s2b) {
  const Eigen::Index B = a.rows();
  auto kernel = [&](const Matrix& x, double s2) {
    std::vector<std::vector<double>> L(B, std::vector<double>(B));
    for (Eigen::Index i = 0; i < B; ++i)
      for (Eigen::Index j = 0; j < B; ++j) {
        double acc = 0.0;
        for (Eigen::Index c = 0; c < x.cols(); ++c) {
          const double v = kind == KernelKind::linear ? x(i, c) * x(j, c) : (x(i, c) - x(j, c)) * (x(i, c) - x(j, c));
          acc += v;
        }
        L[i][j] = kind == KernelKind::linear ? acc : std::exp(-acc / (2.0 * s2));
      }
    return L;
  };
  auto mul = [B](const auto& X, const auto& Y) {
    std::vector<std::vector<double>> Z(B, std::vector<double>(B, 0.0));
    for (Eigen::Index i = 0; i < B; ++i)
      for (Eigen::Index k = 0; k < B; ++k)
        for (Eigen::Index j = 0; j < B; ++j) Z[i][j] += X[i][k] * Y[k][j];
    return Z;
  };
  std::vector<std::vector<double>> H(B, std::vector<double>(B));
  for (Eigen::Index i = 0; i < B; ++i)
    for (Eigen::Index j = 0; j < B; ++j) H[i][j] = (i == j ? 1.0 : 0.0) - 1.0 / static_cast<double>(B);
  const auto P = mul(mul(mul(kernel(a, s2a), H), kernel(b, s2b)), H);
  double tr = 0.0;
  for (Eigen::Index i = 0; i < B; ++i) tr += P[i][i];
  return tr / static_cast<double>((B - 1) * (B - 1));
}

/// Plain minibatch SGD with momentum over CE terms only, written against the
/// layer-level forward/backward API.
inline void centralized_epochs(const Network& net, ParamSet& params, ParamSet& velocity, const ClientCorpus& data,
                               int epochs, int batch_size, double lr, double momentum, double w_s, double w_p,
                               Rng& shuffle) {
  for (int e = 0; e < epochs; ++e) {
    for (const auto& idx : make_batches(data.train.size(), batch_size, shuffle)) {
      ParamSet grads = params.zeros_like();
      const double inv_b = 1.0 / static_cast<double>(idx.size());
      for (auto i : idx) {
        const auto& x = data.train[i];
        SampleTrace tr;
        net.forward(params, x, tr);
        BranchGrads g;
        cross_entropy(tr.s.logits, x.label, &g.logits_s);
        g.logits_s *= w_s * inv_b;
        if (tr.has_p) {
          cross_entropy(tr.p.logits, x.label, &g.logits_p);
          g.logits_p *= w_p * inv_b;
        }
        net.backward(params, x, tr, g, grads);
      }
      for (std::size_t t = 0; t < params.size(); ++t) {
        Matrix& v = velocity.at(t).value;
        v = momentum * v + grads.at(t).value;
        params.at(t).value -= lr * v;
      }
    }
  }
}

/// Client 0's model as the federation builds it: own init, then the server's shared tensors.
inline ParamSet federated_client_start(const Network& net, const FederationMode& mode, const RoundConfig& rc) {
  Rng server_init = make_stream(rc.seed, -1, 0, StreamPurpose::init);
  const ParamSet global = net.init_params(server_init, {rc.init_scale});
  Rng client_init = make_stream(rc.seed, 0, 0, StreamPurpose::init);
  ParamSet params = net.init_params(client_init, {rc.init_scale});
  for (auto& t : params.tensors())
    if (mode.sharing.shared(t.component)) t.value = global[t.name];
  return params;
}

}  // namespace fedsc::test
