#pragma once

#include <array>
#include <filesystem>
#include <optional>

#include "fedsc/corpus.hpp"
#include "fedsc/params.hpp"
#include "fedsc/rng.hpp"

namespace fedsc {

// ---------------------------------------------------------------------------
// Layer primitives. Each forward has a matching backward that accumulates
// into caller-owned gradient storage.
// ---------------------------------------------------------------------------

/// Column j is row x.indices[j] of `table` (d x L).
Matrix embed(const EncodedReview& x, const Matrix& table);

/// One GRU direction. Gate rows are stacked [update; reset; candidate]:
/// W is 3s x d, U is 3s x s, b is 3s x 1.
struct GruRef {
  const Matrix* W;
  const Matrix* U;
  const Matrix* b;
};
struct GruGradRef {
  Matrix* W;
  Matrix* U;
  Matrix* b;
};

/// Per-direction activations, stored in processing order (step t).
struct GruTrace {
  Matrix wx;     // 3s x len, W x_t + b
  Matrix gates;  // 3s x len, [z; r; n] after nonlinearity
  Matrix h;      // s x (len + 1), column 0 is the zero initial state
};

struct BirnnTrace {
  int length = 0;
  GruTrace fwd;
  GruTrace bwd;
};

/// Forward direction runs over positions 0..len-1, backward over len-1..0.
/// Returns h (2s x L) with zero columns at padded positions.
Matrix birnn_forward(const Matrix& e, const GruRef& fwd, const GruRef& bwd, int true_length,
                     BirnnTrace* trace = nullptr);

/// dh is 2s x L (padded columns ignored); accumulates weight grads and writes
/// de (d x L, zero beyond true_length).
void birnn_backward(const Matrix& e, const BirnnTrace& trace, const Matrix& dh, const GruRef& fwd,
                    const GruRef& bwd, const GruGradRef& dfwd, const GruGradRef& dbwd, Matrix& de);

/// Mean of the first true_length columns.
Vector seq_mean(const Matrix& h, int true_length);

/// Affine map W o + b.
Vector project(const Vector& o, const Matrix& W, const Matrix& b);

struct ClassifierTrace {
  Vector pre;     // W1 o + b1
  Vector hidden;  // relu(pre)
};

/// W2 relu(W1 o + b1) + b2; raw logits.
Vector classify(const Vector& o, const Matrix& W1, const Matrix& b1, const Matrix& W2,
                const Matrix& b2, ClassifierTrace* trace = nullptr);

/// Temperature softmax with max subtraction.
Vector softmax_t(const Vector& g, double temperature);

// ---------------------------------------------------------------------------
// Two-branch network.
// ---------------------------------------------------------------------------

struct InitOptions {
  double scale = 0.1;  // weights ~ U[-scale, scale], biases zero
};

struct BranchTrace {
  Vector input;     // encoder output feeding the branch
  Vector feature;   // projection output (== input when no projection)
  ClassifierTrace cls;
  Vector logits;
};

struct SampleTrace {
  BirnnTrace enc_s;
  BirnnTrace enc_p;  // used only with a private encoder
  Matrix emb_s;
  Matrix emb_p;
  BranchTrace s;
  BranchTrace p;
  bool has_p = false;
};

/// Gradient of the objective w.r.t. one sample's branch outputs.
struct BranchGrads {
  Vector logits_s;
  Vector logits_p;
  Vector feature_s;  // may be empty
  Vector feature_p;  // may be empty
};

class Network {
 public:
  Network(ModelDims dims, SharingConfig sharing);

  const ModelDims& dims() const noexcept { return dims_; }
  const SharingConfig& sharing() const noexcept { return sharing_; }

  /// Tensors for every present component in canonical order.
  ParamSet init_params(Rng& rng, const InitOptions& opts = {}) const;

  /// Runs the s branch, and the p branch when `with_p` and it exists.
  /// `params` may be a subset (e.g. the server's shared tensors) as long as
  /// it holds every tensor the requested branches need.
  void forward(const ParamSet& params, const EncodedReview& x, SampleTrace& trace,
               bool with_p = true) const;

  /// Accumulates into `grads`, which must have the layout of `params`.
  void backward(const ParamSet& params, const EncodedReview& x, const SampleTrace& trace,
                const BranchGrads& g, ParamSet& grads) const;

 private:
  struct Bound;
  ModelDims dims_;
  SharingConfig sharing_;
};

/// Tensor names belonging to one component.
std::vector<std::string> component_tensor_names(Component c);

/// Overrides rows of `table` whose token appears in a `token f1 ... fd` text
/// file. Returns the number of rows replaced.
std::size_t load_pretrained_embedding(const std::filesystem::path& path, const Vocab& vocab,
                                      Matrix& table);

// ---------------------------------------------------------------------------
// SGD with momentum.
// ---------------------------------------------------------------------------

struct OptState {
  ParamSet velocity;
  double momentum = 0.9;
  double lr = 0.01;
  std::array<std::optional<double>, kComponentCount> component_lr{};

  double lr_for(Component c) const {
    const auto& o = component_lr[static_cast<std::size_t>(c)];
    return o ? *o : lr;
  }
};

OptState make_opt_state(const ParamSet& params, double lr, double momentum);

/// v <- m v + g;  p <- p - lr(component) v.  Throws NumericError on a
/// non-finite gradient before touching any state.
void sgd_step(ParamSet& params, const ParamSet& grads, OptState& opt);

}  // namespace fedsc
