#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace fedsc {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Network components that can be shared, kept local, or left out.
///
/// The "s" branch runs embedding -> rnn -> projection_s -> classifier_s.
/// The "p" branch runs (embedding_p or embedding) -> (rnn_p or rnn) ->
/// projection_p -> classifier_p, i.e. it reuses the s-branch encoder unless
/// its own encoder components are present.
enum class Component : std::uint8_t {
  embedding,
  rnn,
  embedding_p,
  rnn_p,
  projection_s,
  projection_p,
  classifier_s,
  classifier_p,
};
inline constexpr std::size_t kComponentCount = 8;

std::string_view component_name(Component c);
Component parse_component(std::string_view name);

enum class Placement : std::uint8_t { absent, shared, local };

struct SharingConfig {
  std::array<Placement, kComponentCount> placement{};

  Placement operator[](Component c) const { return placement[static_cast<std::size_t>(c)]; }
  Placement& operator[](Component c) { return placement[static_cast<std::size_t>(c)]; }
  bool present(Component c) const { return (*this)[c] != Placement::absent; }
  bool shared(Component c) const { return (*this)[c] == Placement::shared; }
  bool has_p_branch() const { return present(Component::classifier_p); }

  /// True when every component on the s-branch path is shared, i.e. the server
  /// holds a model that can classify on its own.
  bool global_model_complete() const;
  bool any_shared() const;

  /// Throws ConfigError for unreachable or missing classifiers.
  void validate() const;
};

struct ModelDims {
  int vocab = 0;
  int embed = 0;    // d
  int hidden = 0;   // s (per direction)
  int mlp = 0;      // classifier hidden width
  int classes = 2;  // C

  int feature() const { return 2 * hidden; }
  void validate() const;
};

struct Tensor {
  std::string name;
  Component component;
  Matrix value;
};

/// Named trainable arrays in a fixed insertion order. Shapes are fixed once
/// added; `set` rejects a shape change.
class ParamSet {
 public:
  void add(std::string name, Component component, Matrix value);

  std::size_t size() const noexcept { return tensors_.size(); }
  bool empty() const noexcept { return tensors_.empty(); }
  std::span<Tensor> tensors() noexcept { return tensors_; }
  std::span<const Tensor> tensors() const noexcept { return tensors_; }
  Tensor& at(std::size_t i) { return tensors_.at(i); }
  const Tensor& at(std::size_t i) const { return tensors_.at(i); }

  /// Index of the named tensor or -1.
  int index_of(std::string_view name) const;
  Matrix& operator[](std::string_view name);
  const Matrix& operator[](std::string_view name) const;
  bool contains(std::string_view name) const { return index_of(name) >= 0; }

  void set(std::string_view name, const Matrix& value);

  /// Copies every tensor of `src` into the same-named tensor here.
  void assign_from(const ParamSet& src);

  ParamSet zeros_like() const;
  void set_zero();
  ParamSet select(const std::function<bool(const Tensor&)>& keep) const;

  std::size_t scalar_count() const;
  bool all_finite() const;
  double squared_norm() const;

 private:
  std::vector<Tensor> tensors_;
};

bool same_layout(const ParamSet& a, const ParamSet& b);
double max_abs_diff(const ParamSet& a, const ParamSet& b);
bool bit_equal(const ParamSet& a, const ParamSet& b);

/// Parameter snapshot, little-endian:
///   "FSCSNAP1" | u64 count | count x { u32 name_len | name | u8 component |
///   u64 rows | u64 cols | rows*cols f64 row-major }
void write_snapshot(const std::filesystem::path& path, const ParamSet& params);
ParamSet read_snapshot(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_snapshot(const ParamSet& params);
ParamSet decode_snapshot(std::span<const std::uint8_t> bytes);

}  // namespace fedsc
