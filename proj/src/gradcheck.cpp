#include "fedsc/gradcheck.hpp"

#include <cmath>
#include <set>

namespace fedsc {

GradCheckReport grad_check(const Network& net, const ParamSet& params,
                           std::span<const EncodedReview* const> batch, LossConfig cfg,
                           const GradCheckOptions& opts) {
  if (net.sharing().has_p_branch()) {
    const BatchOutputs base = batch_forward(net, params, batch);
    if (cfg.lambda_div > 0.0 && cfg.kernel.kind == KernelKind::gaussian && !cfg.kernel.sigma2) {
      const auto s2 = batch_sigma2(base.feature_s, base.feature_p, cfg.kernel);
      cfg.frozen_sigma2 = {s2[0], s2[1]};
    }
    cfg.frozen_teacher = base.logits_s;
  }

  ParamSet analytic = params.zeros_like();
  batch_objective(net, params, batch, cfg, &analytic);

  std::set<int> touched;
  for (const auto* x : batch)
    touched.insert(x->indices.begin(), x->indices.begin() + x->true_length);

  ParamSet probe = params;
  BatchWorkspace ws;
  auto eval = [&]() { return batch_objective(net, probe, batch, cfg, nullptr, ws).total; };
  auto central = [&](Matrix& m, Eigen::Index r, Eigen::Index c) {
    const double orig = m(r, c);
    m(r, c) = orig + opts.step;
    const double up = eval();
    m(r, c) = orig - opts.step;
    const double down = eval();
    m(r, c) = orig;
    return (up - down) / (2.0 * opts.step);
  };

  Rng rng(opts.seed);
  GradCheckReport report;
  for (std::size_t ti = 0; ti < probe.size(); ++ti) {
    auto& t = probe.at(ti);
    const auto& a = analytic.at(ti).value;
    const bool is_table = t.component == Component::embedding || t.component == Component::embedding_p;
    GradCheckEntry entry{t.name, 0.0, 0};

    std::vector<std::pair<Eigen::Index, Eigen::Index>> coords;
    for (Eigen::Index r = 0; r < t.value.rows(); ++r) {
      if (is_table && !touched.count(static_cast<int>(r))) continue;
      for (Eigen::Index c = 0; c < t.value.cols(); ++c) coords.emplace_back(r, c);
    }
    if (opts.max_coords_per_tensor && coords.size() > opts.max_coords_per_tensor) {
      std::vector<std::pair<Eigen::Index, Eigen::Index>> picked;
      for (const auto i : shuffled_indices(coords.size(), rng)) {
        picked.push_back(coords[i]);
        if (picked.size() == opts.max_coords_per_tensor) break;
      }
      coords = std::move(picked);
    }
    for (const auto& [r, c] : coords) {
      const double n = central(t.value, r, c);
      const double an = a(r, c);
      const double denom = std::max({std::abs(an), std::abs(n), opts.floor});
      entry.max_rel_error = std::max(entry.max_rel_error, std::abs(an - n) / denom);
      ++entry.checked;
    }

    if (is_table) {
      std::vector<Eigen::Index> untouched;
      for (Eigen::Index r = 0; r < t.value.rows(); ++r) {
        if (touched.count(static_cast<int>(r))) continue;
        untouched.push_back(r);
        if (a.row(r).cwiseAbs().maxCoeff() != 0.0) report.untouched_rows_zero = false;
      }
      for (std::size_t k = 0; k < opts.untouched_samples && !untouched.empty(); ++k) {
        const auto r = untouched[uniform_index(rng, untouched.size())];
        const auto c = static_cast<Eigen::Index>(uniform_index(rng, static_cast<std::uint64_t>(t.value.cols())));
        if (central(t.value, r, c) != 0.0) report.untouched_rows_zero = false;
      }
    }
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace fedsc
