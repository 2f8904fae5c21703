#pragma once

#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "fedsc/training.hpp"

namespace fedsc {

/// Which classifier output drives a prediction: shared, private, or the mean
/// of both branches' softmax outputs.
enum class InferenceWay { s, p, sp };

std::string_view inference_name(InferenceWay w);
InferenceWay parse_inference(std::string_view name);

/// Finetune for total_steps, probing test accuracy every probe_interval steps.
struct PersonalizationSchedule {
  int total_steps = 25;
  int probe_interval = 5;
  double lr_multiplier = 0.01;

  int probes() const { return probe_interval > 0 ? total_steps / probe_interval : 0; }
  /// Requires total_steps = probes * probe_interval with probes >= 1, and
  /// lr_multiplier >= 0.
  void validate() const;
};

/// Argmax with ties to the lowest index.
int argmax(const Vector& v);

int predict(const Network& net, const ParamSet& params, const EncodedReview& x, InferenceWay way,
            SampleTrace& scratch);

double accuracy(const Network& net, const ParamSet& params, std::span<const EncodedReview> data,
                InferenceWay way);

/// Global-model accuracy. `per_client` is empty when the mode has no complete
/// global model.
struct AgResult {
  std::vector<double> per_client;
  std::optional<double> mean;
};

/// Scores the s branch of `global` on each client's test split; Ag is the
/// uniform mean over clients.
AgResult eval_ag(const Network& net, const ParamSet& global, std::span<const ClientCorpus> clients);

/// Mean of per-client accuracies of per-client models on their own test split.
AgResult eval_own_models(const Network& net, std::span<const ParamSet> models,
                         std::span<const ClientCorpus> clients);

struct ApResult {
  std::vector<double> probes;  // Ap_t for t = 1..n_Z
  double score = 0.0;          // Ap^k
};

struct PersonalizeOptions {
  PersonalizationSchedule schedule;
  InferenceWay way = InferenceWay::s;
  double base_lr = 0.01;
  double momentum = 0.9;
  std::array<std::optional<double>, kComponentCount> component_lr{};
  int batch_size = 8;
  LossConfig loss;
};

/// Finetunes a copy of `params` (fresh optimizer state) on the client's train
/// split with lr = mu * base_lr and probes its test accuracy.
ApResult personalize_and_score(const Network& net, const ParamSet& params,
                               const ClientCorpus& client, const PersonalizeOptions& opts, Rng& rng);

/// Uniform mean over clients.
double eval_ap(std::span<const double> per_client);

}  // namespace fedsc
