#pragma once

#include <span>
#include <vector>

#include "fedsc/corpus.hpp"
#include "fedsc/losses.hpp"
#include "fedsc/nn.hpp"

namespace fedsc {

/// Shuffles [0, n) and cuts it into batches of `batch_size`. A short final
/// batch is kept only if it holds at least two samples.
std::vector<std::vector<std::size_t>> make_batches(std::size_t n, int batch_size, Rng& rng);

/// Per-thread scratch reused across batches.
struct BatchWorkspace {
  std::vector<SampleTrace> traces;
  BatchOutputs outputs;
  LossGrads loss_grads;
};

/// Forward pass over `batch`, objective, and (when `grads` is given) the full
/// reverse pass. `grads` is zeroed first and must match `params`' layout.
LossBreakdown batch_objective(const Network& net, const ParamSet& params,
                              std::span<const EncodedReview* const> batch, const LossConfig& cfg,
                              ParamSet* grads, BatchWorkspace& ws);

LossBreakdown batch_objective(const Network& net, const ParamSet& params,
                              std::span<const EncodedReview* const> batch, const LossConfig& cfg,
                              ParamSet* grads = nullptr);

/// Branch features of a batch without computing losses (used to freeze the
/// gaussian bandwidth for gradient checks).
BatchOutputs batch_forward(const Network& net, const ParamSet& params,
                           std::span<const EncodedReview* const> batch);

struct TrainStats {
  LossBreakdown mean;  // averaged over steps
  std::size_t steps = 0;
};

/// `epochs` passes of SGD over freshly shuffled batches of `data`.
TrainStats train_epochs(const Network& net, ParamSet& params, OptState& opt,
                        std::span<const EncodedReview> data, int epochs, int batch_size,
                        const LossConfig& cfg, Rng& shuffle_rng);

}  // namespace fedsc
