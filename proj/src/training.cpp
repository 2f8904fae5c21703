#include "fedsc/training.hpp"

#include <cmath>

#include "fedsc/errors.hpp"

namespace fedsc {

std::vector<std::vector<std::size_t>> make_batches(std::size_t n, int batch_size, Rng& rng) {
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  const auto order = shuffled_indices(n, rng);
  const auto b = static_cast<std::size_t>(batch_size);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < n; i += b) {
    const std::size_t end = std::min(n, i + b);
    if (end - i < b && end - i < 2) break;
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                     order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

namespace {

void run_forward(const Network& net, const ParamSet& params,
                 std::span<const EncodedReview* const> batch, BatchWorkspace& ws) {
  const auto B = static_cast<Eigen::Index>(batch.size());
  const bool two = net.sharing().has_p_branch();
  const Eigen::Index C = net.dims().classes, F = net.dims().feature();
  if (ws.traces.size() < batch.size()) ws.traces.resize(batch.size());
  auto& out = ws.outputs;
  out.logits_s.resize(B, C);
  out.feature_s.resize(B, F);
  out.logits_p.resize(two ? B : 0, two ? C : 0);
  out.feature_p.resize(two ? B : 0, two ? F : 0);
  out.labels.resize(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    auto& tr = ws.traces[i];
    net.forward(params, *batch[i], tr, two);
    const auto r = static_cast<Eigen::Index>(i);
    out.logits_s.row(r) = tr.s.logits.transpose();
    out.feature_s.row(r) = tr.s.feature.transpose();
    if (two) {
      out.logits_p.row(r) = tr.p.logits.transpose();
      out.feature_p.row(r) = tr.p.feature.transpose();
    }
    out.labels[i] = batch[i]->label;
  }
}

}  // namespace

BatchOutputs batch_forward(const Network& net, const ParamSet& params,
                           std::span<const EncodedReview* const> batch) {
  BatchWorkspace ws;
  run_forward(net, params, batch, ws);
  return std::move(ws.outputs);
}

LossBreakdown batch_objective(const Network& net, const ParamSet& params,
                              std::span<const EncodedReview* const> batch, const LossConfig& cfg,
                              ParamSet* grads, BatchWorkspace& ws) {
  if (batch.empty()) throw ConfigError("batch_objective: empty batch");
  run_forward(net, params, batch, ws);
  const LossBreakdown br = total_loss(ws.outputs, cfg, grads ? &ws.loss_grads : nullptr);
  if (!std::isfinite(br.total)) throw NumericError("non-finite loss");
  if (!grads) return br;

  grads->set_zero();
  const auto& lg = ws.loss_grads;
  const bool two = ws.outputs.has_p();
  BranchGrads bg;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    bg.logits_s = lg.logits_s.row(r).transpose();
    bg.feature_s = lg.feature_s.size() ? Vector(lg.feature_s.row(r).transpose()) : Vector();
    if (two) {
      bg.logits_p = lg.logits_p.row(r).transpose();
      bg.feature_p = lg.feature_p.size() ? Vector(lg.feature_p.row(r).transpose()) : Vector();
    }
    net.backward(params, *batch[i], ws.traces[i], bg, *grads);
  }
  return br;
}

LossBreakdown batch_objective(const Network& net, const ParamSet& params,
                              std::span<const EncodedReview* const> batch, const LossConfig& cfg,
                              ParamSet* grads) {
  BatchWorkspace ws;
  return batch_objective(net, params, batch, cfg, grads, ws);
}

TrainStats train_epochs(const Network& net, ParamSet& params, OptState& opt,
                        std::span<const EncodedReview> data, int epochs, int batch_size,
                        const LossConfig& cfg, Rng& shuffle_rng) {
  TrainStats stats;
  ParamSet grads = params.zeros_like();
  BatchWorkspace ws;
  std::vector<const EncodedReview*> batch;
  for (int e = 0; e < epochs; ++e) {
    for (const auto& idx : make_batches(data.size(), batch_size, shuffle_rng)) {
      batch.clear();
      for (auto i : idx) batch.push_back(&data[i]);
      const auto br = batch_objective(net, params, batch, cfg, &grads, ws);
      sgd_step(params, grads, opt);
      stats.mean.total += br.total;
      stats.mean.ce_s += br.ce_s;
      stats.mean.ce_p += br.ce_p;
      stats.mean.kd += br.kd;
      stats.mean.div += br.div;
      ++stats.steps;
    }
  }
  if (stats.steps) {
    const double n = static_cast<double>(stats.steps);
    stats.mean.total /= n;
    stats.mean.ce_s /= n;
    stats.mean.ce_p /= n;
    stats.mean.kd /= n;
    stats.mean.div /= n;
  }
  return stats;
}

}  // namespace fedsc
