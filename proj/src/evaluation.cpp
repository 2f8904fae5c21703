#include "fedsc/evaluation.hpp"

#include "fedsc/errors.hpp"

namespace fedsc {

std::string_view inference_name(InferenceWay w) {
  switch (w) {
    case InferenceWay::s: return "s";
    case InferenceWay::p: return "p";
    case InferenceWay::sp: return "sp";
  }
  return "?";
}

InferenceWay parse_inference(std::string_view name) {
  if (name == "s") return InferenceWay::s;
  if (name == "p") return InferenceWay::p;
  if (name == "sp") return InferenceWay::sp;
  throw ConfigError("unknown inference way '" + std::string(name) + "' (expected s, p or sp)");
}

void PersonalizationSchedule::validate() const {
  if (probe_interval < 1) throw ConfigError("personalization probe interval z must be >= 1");
  if (total_steps < probe_interval || total_steps % probe_interval != 0)
    throw ConfigError("personalization steps Z must be a positive multiple of z (Z=" +
                      std::to_string(total_steps) + ", z=" + std::to_string(probe_interval) + ")");
  if (!(lr_multiplier >= 0.0)) throw ConfigError("personalization lr multiplier must be >= 0");
}

int argmax(const Vector& v) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i)
    if (v(i) > v(best)) best = i;
  return static_cast<int>(best);
}

int predict(const Network& net, const ParamSet& params, const EncodedReview& x, InferenceWay way,
            SampleTrace& scratch) {
  const bool need_p = way != InferenceWay::s;
  if (need_p && !net.sharing().has_p_branch())
    throw ConfigError("inference way '" + std::string(inference_name(way)) +
                      "' needs a private classifier");
  net.forward(params, x, scratch, need_p);
  switch (way) {
    case InferenceWay::s: return argmax(scratch.s.logits);
    case InferenceWay::p: return argmax(scratch.p.logits);
    case InferenceWay::sp:
      return argmax(Vector(0.5 * (softmax_t(scratch.s.logits, 1.0) + softmax_t(scratch.p.logits, 1.0))));
  }
  return 0;
}

double accuracy(const Network& net, const ParamSet& params, std::span<const EncodedReview> data,
                InferenceWay way) {
  if (data.empty()) return 0.0;
  SampleTrace scratch;
  std::size_t hits = 0;
  for (const auto& x : data) hits += predict(net, params, x, way, scratch) == x.label;
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

AgResult eval_ag(const Network& net, const ParamSet& global, std::span<const ClientCorpus> clients) {
  AgResult out;
  if (!net.sharing().global_model_complete()) return out;
  double total = 0.0;
  for (const auto& c : clients) {
    out.per_client.push_back(accuracy(net, global, c.test, InferenceWay::s));
    total += out.per_client.back();
  }
  out.mean = clients.empty() ? 0.0 : total / static_cast<double>(clients.size());
  return out;
}

AgResult eval_own_models(const Network& net, std::span<const ParamSet> models,
                         std::span<const ClientCorpus> clients) {
  if (models.size() != clients.size()) throw ShapeError("eval_own_models: one model per client");
  AgResult out;
  double total = 0.0;
  for (std::size_t k = 0; k < clients.size(); ++k) {
    out.per_client.push_back(accuracy(net, models[k], clients[k].test, InferenceWay::s));
    total += out.per_client.back();
  }
  out.mean = clients.empty() ? 0.0 : total / static_cast<double>(clients.size());
  return out;
}

ApResult personalize_and_score(const Network& net, const ParamSet& params,
                               const ClientCorpus& client, const PersonalizeOptions& opts, Rng& rng) {
  const auto& sched = opts.schedule;
  sched.validate();
  ParamSet local = params;
  OptState opt = make_opt_state(local, sched.lr_multiplier * opts.base_lr, opts.momentum);
  for (std::size_t c = 0; c < kComponentCount; ++c)
    if (opts.component_lr[c]) opt.component_lr[c] = sched.lr_multiplier * *opts.component_lr[c];

  ParamSet grads = local.zeros_like();
  BatchWorkspace ws;
  std::vector<std::vector<std::size_t>> batches;
  std::size_t next = 0;
  std::vector<const EncodedReview*> batch;
  ApResult out;
  for (int step = 1; step <= sched.total_steps; ++step) {
    if (next == batches.size()) {
      batches = make_batches(client.train.size(), opts.batch_size, rng);
      next = 0;
      if (batches.empty())
        throw ConfigError("client '" + client.name + "' has too few training samples for one batch");
    }
    batch.clear();
    for (auto i : batches[next++]) batch.push_back(&client.train[i]);
    batch_objective(net, local, batch, opts.loss, &grads, ws);
    sgd_step(local, grads, opt);
    if (step % sched.probe_interval == 0)
      out.probes.push_back(accuracy(net, local, client.test, opts.way));
  }
  double total = 0.0;
  for (double p : out.probes) total += p;
  out.score = total / static_cast<double>(out.probes.size());
  return out;
}

double eval_ap(std::span<const double> per_client) {
  if (per_client.empty()) return 0.0;
  double total = 0.0;
  for (double v : per_client) total += v;
  return total / static_cast<double>(per_client.size());
}

}  // namespace fedsc
