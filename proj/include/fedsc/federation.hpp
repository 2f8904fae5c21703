#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedsc/compression.hpp"
#include "fedsc/training.hpp"

namespace fedsc {

enum class ModeName { individual, fedavg, fedper, lg, pfl_da, kteps, kteps_star };

/// Two-branch architecture variants: the default adds projections on top of
/// a shared encoder; A drops the projections, B adds a private rnn to A, and
/// C adds a private embedding to B.
enum class Arch { standard, A, B, C };

std::string_view mode_name(ModeName m);
ModeName parse_mode(std::string_view name);
std::string_view arch_name(Arch a);
Arch parse_arch(std::string_view name);

struct FederationMode {
  ModeName name = ModeName::kteps;
  Arch arch = Arch::standard;
  SharingConfig sharing;
  bool uses_diversity = false;
  bool uses_kd = false;
  bool uses_pdr = false;
  double weight_ce_s = 1.0;
  double weight_ce_p = 1.0;

  bool transmits() const { return sharing.any_shared(); }
};

/// Sharing layout and loss switches of a named method. Arch applies only to
/// kteps and kteps_star.
FederationMode make_mode(ModeName name, Arch arch = Arch::standard);

/// `base` with the terms the mode does not use switched off and its CE weights.
LossConfig mode_loss(const FederationMode& mode, LossConfig base);

struct RoundConfig {
  int rounds = 50;
  int local_epochs = 2;
  int batch_size = 8;
  double noise_sigma = 0.01;
  double lr = 0.01;
  double momentum = 0.9;
  std::optional<double> embedding_lr;
  /// Weights start U[-init_scale, init_scale], biases at zero.
  double init_scale = 0.1;
  /// Upload only the rows of the client's local vocabulary.
  bool vocab_subset = true;
  std::uint64_t seed = 1;

  void validate(const FederationMode& mode, const LossConfig& loss) const;
};

struct CompressionConfig {
  int d1 = 2;
  int d2 = 150;
  /// Query words per client for the neighbor-intersection probes (0 = off).
  int privacy_queries = 20;
  int privacy_k = 10;

  void validate(int embed_dim) const;
};

/// One array in an upload.
struct PayloadEntry {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t floats = 0;
  std::size_t bytes = 0;
};

/// Everything one client sends in a round. Dense tensors are shared arrays
/// other than a row-subset embedding; the embedding is either raw rows or a
/// serialized compressed payload.
struct Upload {
  int client = 0;
  ParamSet dense;
  std::vector<int> row_ids;
  Matrix rows;
  std::vector<std::uint8_t> compressed;
  std::vector<PayloadEntry> manifest;

  std::size_t bytes() const;
  std::size_t floats() const;
};

/// Each scalar plus an independent N(0, sigma^2) draw. sigma = 0 copies.
Matrix add_noise(const Matrix& m, double sigma, Rng& rng);
ParamSet add_noise(const ParamSet& p, double sigma, Rng& rng);

/// Validates a weight table: nonnegative and summing to 1 within 1e-12.
void check_weights(std::span<const double> weights);

/// One client's dense shared arrays.
struct ClientTensors {
  int client = 0;
  const ParamSet* params = nullptr;
};

/// Element-wise sum_k w_k X_k. `weights` is indexed by client id and every
/// client must appear exactly once; reduction runs in ascending client id
/// whatever the order of `uploads`.
ParamSet aggregate(std::span<const ClientTensors> uploads, std::span<const double> weights,
                   Exec exec = Exec::serial);

/// One client's embedding rows and their vocabulary indices.
struct ClientRows {
  int client = 0;
  const std::vector<int>* row_ids = nullptr;
  const Matrix* rows = nullptr;
};

/// Row-subset embedding merge. Each row becomes the weight-renormalized mean
/// of the clients that sent it; rows nobody sent keep their value in `table`.
/// Contributions are reduced in ascending client id.
void merge_embedding_rows(Matrix& table, std::span<const ClientRows> uploads,
                          std::span<const double> weights, Exec exec = Exec::serial);

struct ClientState {
  int id = 0;
  const ClientCorpus* corpus = nullptr;
  ParamSet params;  // shared and local tensors
  OptState opt;
};

struct ServerState {
  ParamSet global;  // shared tensors only
  std::vector<double> weights;
  int round = 0;
};

struct ClientRoundStats {
  int client = 0;
  LossBreakdown loss;
  std::size_t steps = 0;
  std::size_t upload_bytes = 0;
  std::size_t upload_floats = 0;
  std::size_t embedding_floats = 0;  // rows or compressed embedding floats
  std::vector<PayloadEntry> manifest;
  double param_norm = 0.0;
  std::optional<double> i_ser;
  std::optional<double> i_ag;
};

struct RoundReport {
  int round = 0;
  std::vector<ClientRoundStats> clients;
  std::size_t upload_bytes = 0;
  double param_norm = 0.0;  // sum_k (N^k / N) |theta^k|
};

class Federation {
 public:
  Federation(const Scene& scene, FederationMode mode, ModelDims dims, LossConfig loss,
             RoundConfig rounds, CompressionConfig compression, Exec exec = Exec::parallel);

  const Network& network() const noexcept { return net_; }
  const FederationMode& mode() const noexcept { return mode_; }
  const ServerState& server() const noexcept { return server_; }
  std::span<const ClientState> clients() const noexcept { return clients_; }
  std::span<const ClientCorpus> corpora() const noexcept { return scene_->clients; }
  const LossConfig& loss() const noexcept { return loss_; }
  const RoundConfig& round_config() const noexcept { return rounds_; }
  int round() const noexcept { return server_.round; }

  /// Replaces the embedding rows named in the vocabulary with pretrained
  /// values on the server and every client.
  std::size_t load_pretrained(const std::filesystem::path& path);

  /// Download, local update, (compression), noise, upload, aggregation.
  RoundReport run_round();

  /// Client k's model with the current global tensors in place of its shared ones.
  ParamSet personalized_start(int k) const;

 private:
  Upload local_update(ClientState& c, ClientRoundStats& stats);
  void aggregate_uploads(std::vector<Upload>& uploads, std::vector<ClientRoundStats>& stats);

  std::vector<Matrix> local_rows_;  // pre-noise uploaded rows, for privacy probes
  std::vector<std::vector<int>> probe_queries_;
  const Scene* scene_;
  FederationMode mode_;
  ModelDims dims_;
  LossConfig loss_;
  RoundConfig rounds_;
  CompressionConfig compression_;
  Exec exec_;
  Network net_;
  ServerState server_;
  std::vector<ClientState> clients_;
};

}  // namespace fedsc
