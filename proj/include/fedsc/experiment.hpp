#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedsc/evaluation.hpp"
#include "fedsc/federation.hpp"

namespace fedsc {

/// Flat run configuration. Every field has a `key = value` spelling (see
/// `config_keys()`); model defaults follow the reference setup, scene
/// defaults are scaled down for a single machine.
struct ExperimentConfig {
  std::string scene = "synthetic-k4";  // synthetic-k{1,2,4,16} or dir:/path
  SceneSpec scene_spec;                // overrides for synthetic scenes
  int classes = 2;                     // for dir: scenes
  int max_len = 32;                    // for dir: scenes
  std::size_t max_vocab = kDefaultMaxVocab;

  std::string mode = "kteps";
  std::string arch = "standard";
  std::uint64_t seed = 1;

  int embed = 200;
  int hidden = 64;
  int mlp = 0;  // 0: 2 * hidden
  std::string pretrained;

  LossConfig loss;
  RoundConfig round;
  CompressionConfig compression;
  std::optional<int> d2;  // unset: min(150, d)
  PersonalizationSchedule schedule;
  std::string inference = "auto";  // auto: sp with a private classifier, else s

  /// Evaluate Ag every n rounds (0: final round only). Ap is computed at the
  /// final round.
  int eval_every = 0;
  std::string out = "out";
  bool snapshot = false;

  int effective_d2() const;
  InferenceWay inference_way() const;
  FederationMode federation_mode() const;
  /// Throws ConfigError for anything a run would reject.
  void validate() const;
};

std::vector<std::string> config_keys();

/// Sets one field from its textual value; throws ConfigError on an unknown
/// key or a malformed value.
void apply_setting(ExperimentConfig& cfg, std::string_view key, std::string_view value);

/// `key = value` lines; `#` starts a comment.
void apply_config_text(ExperimentConfig& cfg, std::string_view text);
void apply_config_file(ExperimentConfig& cfg, const std::filesystem::path& path);

/// Canonical `key = value` dump of every field.
std::string config_text(const ExperimentConfig& cfg);

Scene load_scene(const ExperimentConfig& cfg);

/// Writes each client of `scene` as `<dir>/<name>/train.tsv` and `test.tsv`,
/// the layout `dir:` scenes read.
void write_scene_dir(const Scene& scene, const std::filesystem::path& dir);

/// One metric value; `client` -1 stands for the client average.
struct MetricRow {
  int round = 0;
  int client = -1;
  std::string metric;
  std::optional<double> value;  // empty: not applicable
};

struct ClientSummary {
  std::string name;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  std::size_t vocab_rows = 0;
  std::optional<double> ag;
  ApResult ap;
  std::size_t upload_bytes = 0;
  std::size_t upload_floats_per_round = 0;
  std::size_t embedding_floats_per_round = 0;
  std::optional<double> i_ser;
  std::optional<double> i_ag;
};

struct ExperimentResult {
  ExperimentConfig config;
  FederationMode mode;
  InferenceWay way = InferenceWay::s;
  std::vector<RoundReport> rounds;
  std::vector<MetricRow> rows;
  std::vector<ClientSummary> clients;
  std::optional<double> ag;
  std::optional<double> ap;
  std::size_t upload_bytes = 0;
  std::optional<double> i_ser;
  std::optional<double> i_ag;
  ParamSet global;
  std::vector<ParamSet> client_params;
};

ExperimentResult run_experiment(const ExperimentConfig& cfg, Exec exec = Exec::parallel);
ExperimentResult run_experiment(const ExperimentConfig& cfg, const Scene& scene,
                                Exec exec = Exec::parallel);

/// `mode,seed,round,client,metric,value`, values printed in shortest
/// round-trip form and `na` for not-applicable entries.
std::string metrics_csv(const ExperimentResult& r);
std::string summary_json(const ExperimentResult& r);

/// metrics.csv, summary.json, config.txt and (on request) snapshots.
void write_run_outputs(const ExperimentResult& r, const std::filesystem::path& dir);

/// One sweep axis, parsed from `key=v1,v2,...`.
struct GridAxis {
  std::string key;
  std::vector<std::string> values;
};
GridAxis parse_grid_axis(std::string_view spec);

/// Seed of replicate r: the base seed for r = 0, a splitmix64 derivative otherwise.
std::uint64_t replicate_seed(std::uint64_t base, int replicate);

struct SweepPoint {
  std::vector<std::string> values;  // one per axis
  std::string mode;
  std::vector<std::optional<double>> ag;  // one per replicate
  std::vector<std::optional<double>> ap;
  std::vector<std::size_t> upload_bytes;
};

struct SweepResult {
  std::vector<GridAxis> axes;
  std::vector<SweepPoint> points;
};

/// Cartesian product of `axes` (first axis slowest), `replicates` seeds per
/// point. Every point is validated before the first run. Writes each run to
/// `out/point{i}_rep{r}` and the merged table to `out/sweep.csv` when `out`
/// is given.
SweepResult run_sweep(const ExperimentConfig& base, std::span<const GridAxis> axes, int replicates,
                      const std::optional<std::filesystem::path>& out, Exec exec = Exec::parallel);

/// `point,<axis...>,mode,replicates,ag,ap,upload_bytes`, one row per grid point
/// with replicate means.
std::string sweep_csv(const SweepResult& r);

/// Shortest text that reads back as the same double.
std::string format_double(double v);

}  // namespace fedsc
