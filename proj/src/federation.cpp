#include "fedsc/federation.hpp"

#include <algorithm>
#include <cmath>
#include <exception>

#include "fedsc/errors.hpp"

namespace fedsc {

namespace {

constexpr std::pair<ModeName, std::string_view> kModes[] = {
    {ModeName::individual, "individual"}, {ModeName::fedavg, "fedavg"},
    {ModeName::fedper, "fedper"},         {ModeName::lg, "lg"},
    {ModeName::pfl_da, "pfl_da"},         {ModeName::kteps, "kteps"},
    {ModeName::kteps_star, "kteps_star"},
};

constexpr std::pair<Arch, std::string_view> kArchs[] = {
    {Arch::standard, "standard"}, {Arch::A, "A"}, {Arch::B, "B"}, {Arch::C, "C"}};

}  // namespace

std::string_view mode_name(ModeName m) {
  for (const auto& [k, v] : kModes)
    if (k == m) return v;
  return "?";
}

ModeName parse_mode(std::string_view name) {
  for (const auto& [k, v] : kModes)
    if (v == name) return k;
  throw ConfigError("unknown mode '" + std::string(name) +
                    "' (expected individual, fedavg, fedper, lg, pfl_da, kteps or kteps_star)");
}

std::string_view arch_name(Arch a) {
  for (const auto& [k, v] : kArchs)
    if (k == a) return v;
  return "?";
}

Arch parse_arch(std::string_view name) {
  for (const auto& [k, v] : kArchs)
    if (v == name) return k;
  throw ConfigError("unknown architecture '" + std::string(name) + "' (expected standard, A, B or C)");
}

FederationMode make_mode(ModeName name, Arch arch) {
  using C = Component;
  FederationMode m;
  m.name = name;
  auto& sh = m.sharing;
  const auto S = Placement::shared, L = Placement::local;
  switch (name) {
    case ModeName::individual:
      sh[C::embedding] = sh[C::rnn] = sh[C::classifier_s] = L;
      break;
    case ModeName::fedavg:
      sh[C::embedding] = sh[C::rnn] = sh[C::classifier_s] = S;
      break;
    case ModeName::fedper:
      sh[C::embedding] = sh[C::rnn] = S;
      sh[C::classifier_s] = L;
      break;
    case ModeName::lg:
      sh[C::embedding] = sh[C::rnn] = L;
      sh[C::classifier_s] = S;
      break;
    case ModeName::pfl_da:
      sh[C::embedding] = sh[C::rnn] = sh[C::classifier_s] = S;
      sh[C::embedding_p] = sh[C::rnn_p] = sh[C::classifier_p] = L;
      m.weight_ce_s = m.weight_ce_p = 0.5;
      break;
    case ModeName::kteps:
    case ModeName::kteps_star:
      m.arch = arch;
      sh[C::embedding] = sh[C::rnn] = sh[C::classifier_s] = S;
      sh[C::classifier_p] = L;
      if (arch == Arch::standard) {
        sh[C::projection_s] = S;
        sh[C::projection_p] = L;
      }
      if (arch == Arch::B || arch == Arch::C) sh[C::rnn_p] = L;
      if (arch == Arch::C) sh[C::embedding_p] = L;
      m.uses_diversity = m.uses_kd = true;
      m.uses_pdr = name == ModeName::kteps_star;
      break;
  }
  sh.validate();
  return m;
}

LossConfig mode_loss(const FederationMode& mode, LossConfig base) {
  if (!mode.uses_kd) base.lambda_kd = 0.0;
  if (!mode.uses_diversity) base.lambda_div = 0.0;
  base.weight_ce_s = mode.weight_ce_s;
  base.weight_ce_p = mode.weight_ce_p;
  return base;
}

void RoundConfig::validate(const FederationMode& mode, const LossConfig& loss) const {
  if (rounds < 0) throw ConfigError("rounds must be >= 0");
  if (local_epochs < 1) throw ConfigError("local epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (batch_size < 2 && loss.lambda_div > 0.0 && mode.sharing.has_p_branch())
    throw ConfigError("diversity loss needs batch size >= 2");
  if (!(noise_sigma >= 0.0)) throw ConfigError("noise sigma must be >= 0");
  if (!(lr >= 0.0)) throw ConfigError("learning rate must be >= 0");
  if (embedding_lr && !(*embedding_lr >= 0.0)) throw ConfigError("embedding learning rate must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(init_scale >= 0.0)) throw ConfigError("init scale must be >= 0");
}

void CompressionConfig::validate(int embed_dim) const {
  if (d1 < 1 || d2 < d1 || d2 > embed_dim)
    throw ConfigError("compression range must satisfy 1 <= d1 <= d2 <= d (got d1=" +
                      std::to_string(d1) + ", d2=" + std::to_string(d2) +
                      ", d=" + std::to_string(embed_dim) + ")");
  if (privacy_queries < 0) throw ConfigError("privacy queries must be >= 0");
  if (privacy_k < 1) throw ConfigError("privacy K must be >= 1");
}

std::size_t Upload::bytes() const {
  std::size_t n = 0;
  for (const auto& e : manifest) n += e.bytes;
  return n;
}

std::size_t Upload::floats() const {
  std::size_t n = 0;
  for (const auto& e : manifest) n += e.floats;
  return n;
}

Matrix add_noise(const Matrix& m, double sigma, Rng& rng) {
  if (!(sigma >= 0.0)) throw ConfigError("noise sigma must be >= 0");
  Matrix out = m;
  if (sigma == 0.0) return out;
  for (Eigen::Index j = 0; j < out.cols(); ++j)
    for (Eigen::Index i = 0; i < out.rows(); ++i) out(i, j) += sigma * standard_normal(rng);
  return out;
}

ParamSet add_noise(const ParamSet& p, double sigma, Rng& rng) {
  ParamSet out = p;
  for (auto& t : out.tensors()) t.value = add_noise(t.value, sigma, rng);
  return out;
}

void check_weights(std::span<const double> weights) {
  if (weights.empty()) throw ConfigError("aggregation weights are empty");
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("aggregation weights must be finite and >= 0");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-12)
    throw ConfigError("aggregation weights must sum to 1 (got " + std::to_string(total) + ")");
}

namespace {

template <typename T>
std::vector<const T*> by_client(std::span<const T> uploads, std::size_t clients) {
  std::vector<const T*> slot(clients, nullptr);
  for (const auto& u : uploads) {
    if (u.client < 0 || static_cast<std::size_t>(u.client) >= clients)
      throw ConfigError("upload from unknown client " + std::to_string(u.client));
    if (slot[static_cast<std::size_t>(u.client)])
      throw ConfigError("duplicate upload from client " + std::to_string(u.client));
    slot[static_cast<std::size_t>(u.client)] = &u;
  }
  for (std::size_t k = 0; k < clients; ++k)
    if (!slot[k]) throw ConfigError("missing upload from client " + std::to_string(k));
  return slot;
}

}  // namespace

ParamSet aggregate(std::span<const ClientTensors> uploads, std::span<const double> weights, Exec exec) {
  check_weights(weights);
  const auto slot = by_client(uploads, weights.size());
  const ParamSet& first = *slot.front()->params;
  for (const auto* u : slot)
    if (!same_layout(first, *u->params)) throw ShapeError("aggregate: uploads differ in layout");
  ParamSet out = first.zeros_like();
  std::vector<const Matrix*> inputs(slot.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    for (std::size_t k = 0; k < slot.size(); ++k) inputs[k] = &slot[k]->params->at(i).value;
    kernels::weighted_sum(inputs, weights, out.at(i).value, exec);
  }
  return out;
}

void merge_embedding_rows(Matrix& table, std::span<const ClientRows> uploads,
                          std::span<const double> weights, Exec exec) {
  check_weights(weights);
  const auto slot = by_client(uploads, weights.size());
  // contributors[r] lists (client, local row) in ascending client id.
  std::vector<std::vector<std::pair<int, Eigen::Index>>> contributors(static_cast<std::size_t>(table.rows()));
  for (std::size_t k = 0; k < slot.size(); ++k) {
    const auto& ids = *slot[k]->row_ids;
    const Matrix& rows = *slot[k]->rows;
    if (static_cast<Eigen::Index>(ids.size()) != rows.rows() || rows.cols() != table.cols())
      throw ShapeError("merge_embedding_rows: rows and row ids disagree");
    for (std::size_t j = 0; j < ids.size(); ++j) {
      const int r = ids[j];
      if (r < 0 || r >= table.rows()) throw ShapeError("merge_embedding_rows: row id out of range");
      auto& list = contributors[static_cast<std::size_t>(r)];
      if (!list.empty() && list.back().first == static_cast<int>(k))
        throw ConfigError("merge_embedding_rows: duplicate row id in one upload");
      list.emplace_back(static_cast<int>(k), static_cast<Eigen::Index>(j));
    }
  }
  const auto n = static_cast<std::ptrdiff_t>(table.rows());
#pragma omp parallel for schedule(static) if (exec == Exec::parallel)
  for (std::ptrdiff_t r = 0; r < n; ++r) {
    const auto& list = contributors[static_cast<std::size_t>(r)];
    if (list.empty()) continue;
    Eigen::RowVectorXd num = Eigen::RowVectorXd::Zero(table.cols());
    double den = 0.0;
    for (const auto& [k, j] : list) {
      const double w = weights[static_cast<std::size_t>(k)];
      num += w * slot[static_cast<std::size_t>(k)]->rows->row(j);
      den += w;
    }
    if (den > 0.0) table.row(r) = num / den;
  }
}

Federation::Federation(const Scene& scene, FederationMode mode, ModelDims dims, LossConfig loss,
                       RoundConfig rounds, CompressionConfig compression, Exec exec)
    : scene_(&scene),
      mode_(std::move(mode)),
      dims_(dims),
      loss_(mode_loss(mode_, loss)),
      rounds_(rounds),
      compression_(compression),
      exec_(exec),
      net_(dims, mode_.sharing) {
  mode_.sharing.validate();
  dims_.validate();
  loss_.validate();
  rounds_.validate(mode_, loss_);
  if (mode_.uses_pdr) compression_.validate(dims_.embed);
  if (static_cast<std::size_t>(dims_.vocab) != scene.vocab.size())
    throw ConfigError("model vocabulary size differs from the scene vocabulary");
  if (dims_.classes != scene.classes) throw ConfigError("model class count differs from the scene");
  if (scene.clients.empty()) throw ConfigError("scene has no clients");

  const std::size_t K = scene.clients.size();
  double N = 0.0;
  for (const auto& c : scene.clients) {
    if (c.train.empty()) throw ConfigError("client '" + c.name + "' has no training reviews");
    N += static_cast<double>(c.train.size());
  }
  for (const auto& c : scene.clients) server_.weights.push_back(static_cast<double>(c.train.size()) / N);

  {
    Rng rng = make_stream(rounds_.seed, -1, 0, StreamPurpose::init);
    const auto& sh = mode_.sharing;
    server_.global = net_.init_params(rng, {rounds_.init_scale}).select([&](const Tensor& t) { return sh.shared(t.component); });
  }
  clients_.resize(K);
  local_rows_.resize(K);
  probe_queries_.resize(K);
  for (std::size_t k = 0; k < K; ++k) {
    auto& c = clients_[k];
    c.id = static_cast<int>(k);
    c.corpus = &scene.clients[k];
    Rng rng = make_stream(rounds_.seed, c.id, 0, StreamPurpose::init);
    c.params = net_.init_params(rng, {rounds_.init_scale});
    c.params.assign_from(server_.global);
    c.opt = make_opt_state(c.params, rounds_.lr, rounds_.momentum);
    if (rounds_.embedding_lr) {
      c.opt.component_lr[static_cast<std::size_t>(Component::embedding)] = rounds_.embedding_lr;
      c.opt.component_lr[static_cast<std::size_t>(Component::embedding_p)] = rounds_.embedding_lr;
    }
  }
}

std::size_t Federation::load_pretrained(const std::filesystem::path& path) {
  std::size_t replaced = 0;
  if (server_.global.contains("embedding"))
    replaced = load_pretrained_embedding(path, scene_->vocab, server_.global["embedding"]);
  for (auto& c : clients_)
    for (const char* name : {"embedding", "embedding_p"})
      if (c.params.contains(name)) replaced = load_pretrained_embedding(path, scene_->vocab, c.params[name]);
  return replaced;
}

ParamSet Federation::personalized_start(int k) const {
  ParamSet p = clients_.at(static_cast<std::size_t>(k)).params;
  p.assign_from(server_.global);
  return p;
}

namespace {

bool row_upload(const FederationMode& mode, const RoundConfig& rc) {
  return mode.sharing.shared(Component::embedding) && (rc.vocab_subset || mode.uses_pdr);
}

PayloadEntry dense_entry(const Tensor& t) {
  const auto n = static_cast<std::size_t>(t.value.size());
  return {t.name, static_cast<std::size_t>(t.value.rows()), static_cast<std::size_t>(t.value.cols()), n,
          n * sizeof(double)};
}

}  // namespace

Upload Federation::local_update(ClientState& c, ClientRoundStats& stats) {
  const int r = server_.round;
  c.params.assign_from(server_.global);

  Rng shuffle = make_stream(rounds_.seed, c.id, r, StreamPurpose::shuffle);
  const auto ts = train_epochs(net_, c.params, c.opt, c.corpus->train, rounds_.local_epochs,
                               rounds_.batch_size, loss_, shuffle);
  stats.client = c.id;
  stats.loss = ts.mean;
  stats.steps = ts.steps;
  stats.param_norm = std::sqrt(c.params.squared_norm());
  if (!c.params.all_finite()) throw NumericError("client " + std::to_string(c.id) + ": non-finite parameters");

  Upload up;
  up.client = c.id;
  if (!mode_.transmits()) return up;

  Rng noise = make_stream(rounds_.seed, c.id, r, StreamPurpose::noise);
  const bool rows_mode = row_upload(mode_, rounds_);
  up.dense = c.params.select([&](const Tensor& t) {
    return mode_.sharing.shared(t.component) && !(rows_mode && t.component == Component::embedding);
  });

  if (rows_mode) {
    const Matrix& table = c.params["embedding"];
    if (rounds_.vocab_subset) {
      up.row_ids = c.corpus->local_vocab;
    } else {
      up.row_ids.resize(static_cast<std::size_t>(table.rows()));
      for (std::size_t i = 0; i < up.row_ids.size(); ++i) up.row_ids[i] = static_cast<int>(i);
    }
    Matrix local(static_cast<Eigen::Index>(up.row_ids.size()), table.cols());
    for (std::size_t j = 0; j < up.row_ids.size(); ++j)
      local.row(static_cast<Eigen::Index>(j)) = table.row(up.row_ids[j]);
    const std::size_t vk = up.row_ids.size();
    const auto d = static_cast<std::size_t>(table.cols());

    Matrix restored;
    if (mode_.uses_pdr) {
      std::vector<std::uint32_t> ids(up.row_ids.begin(), up.row_ids.end());
      auto comp = compress(local, std::move(ids), compression_.d1, compression_.d2, Exec::serial);
      comp.projected = add_noise(comp.projected, rounds_.noise_sigma, noise);
      comp.basis = add_noise(comp.basis, rounds_.noise_sigma, noise);
      comp.mean = add_noise(comp.mean, rounds_.noise_sigma, noise);
      up.compressed = serialize(comp);
      const std::size_t floats = payload_float_count(vk, d, comp.d1, comp.d2);
      up.manifest.push_back({"embedding.pdr", vk, static_cast<std::size_t>(comp.width()), floats,
                             up.compressed.size()});
      stats.embedding_floats = floats;
      up.row_ids.clear();
      restored = decompress(comp);
    } else {
      up.rows = add_noise(local, rounds_.noise_sigma, noise);
      up.manifest.push_back({"embedding.rows", vk, d, vk * d, vk * sizeof(std::uint32_t) + vk * d * sizeof(double)});
      stats.embedding_floats = vk * d;
      restored = up.rows;
    }

    auto& queries = probe_queries_[static_cast<std::size_t>(c.id)];
    queries.clear();
    const int q = compression_.privacy_queries, k = compression_.privacy_k;
    if (q > 0 && static_cast<std::size_t>(k) < vk) {
      Rng prng = make_stream(rounds_.seed, c.id, r, StreamPurpose::privacy);
      for (auto i : shuffled_indices(vk, prng)) {
        queries.push_back(static_cast<int>(i));
        if (queries.size() == static_cast<std::size_t>(q)) break;
      }
      stats.i_ser = mean_neighbor_intersection(local, restored, queries, k);
    }
    local_rows_[static_cast<std::size_t>(c.id)] = std::move(local);
  }

  up.dense = add_noise(up.dense, rounds_.noise_sigma, noise);
  for (const auto& t : up.dense.tensors()) up.manifest.push_back(dense_entry(t));
  stats.manifest = up.manifest;
  stats.upload_bytes = up.bytes();
  stats.upload_floats = up.floats();
  return up;
}

void Federation::aggregate_uploads(std::vector<Upload>& uploads, std::vector<ClientRoundStats>& stats) {
  if (!mode_.transmits()) return;
  std::vector<ClientTensors> dense;
  for (const auto& u : uploads) dense.push_back({u.client, &u.dense});
  if (!uploads.front().dense.empty()) server_.global.assign_from(aggregate(dense, server_.weights, exec_));

  if (!row_upload(mode_, rounds_)) return;
  if (mode_.uses_pdr) {
    for (auto& u : uploads) {
      const auto comp = deserialize(u.compressed);
      u.rows = decompress(comp);
      u.row_ids.assign(comp.row_ids.begin(), comp.row_ids.end());
    }
  }
  std::vector<ClientRows> rows;
  for (const auto& u : uploads) rows.push_back({u.client, &u.row_ids, &u.rows});
  Matrix& table = server_.global["embedding"];
  merge_embedding_rows(table, rows, server_.weights, exec_);

  const int k = compression_.privacy_k;
  for (auto& u : uploads) {
    const auto ck = static_cast<std::size_t>(u.client);
    if (probe_queries_[ck].empty()) continue;
    Matrix global_rows(static_cast<Eigen::Index>(u.row_ids.size()), table.cols());
    for (std::size_t j = 0; j < u.row_ids.size(); ++j)
      global_rows.row(static_cast<Eigen::Index>(j)) = table.row(u.row_ids[j]);
    stats[ck].i_ag = mean_neighbor_intersection(local_rows_[ck], global_rows, probe_queries_[ck], k);
  }
}

RoundReport Federation::run_round() {
  const std::size_t K = clients_.size();
  std::vector<Upload> uploads(K);
  std::vector<ClientRoundStats> stats(K);
  std::vector<std::exception_ptr> errors(K);
  const auto n = static_cast<std::ptrdiff_t>(K);
#pragma omp parallel for schedule(dynamic, 1) if (exec_ == Exec::parallel)
  for (std::ptrdiff_t k = 0; k < n; ++k) {
    const auto i = static_cast<std::size_t>(k);
    try {
      uploads[i] = local_update(clients_[i], stats[i]);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  aggregate_uploads(uploads, stats);

  RoundReport report;
  report.round = server_.round;
  for (std::size_t k = 0; k < K; ++k) {
    report.upload_bytes += stats[k].upload_bytes;
    report.param_norm += server_.weights[k] * stats[k].param_norm;
  }
  if (!std::isfinite(report.param_norm)) throw NumericError("non-finite parameter norm");
  report.clients = std::move(stats);
  ++server_.round;
  return report;
}

}  // namespace fedsc
