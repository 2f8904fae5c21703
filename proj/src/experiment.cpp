#include "fedsc/experiment.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "fedsc/errors.hpp"

namespace fedsc {

std::string format_double(double v) {
  char buf[40];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string bad_value(std::string_view key, std::string_view value, const char* want) {
  return "config key '" + std::string(key) + "': '" + std::string(value) + "' is not " + want;
}

template <typename T>
T parse_integral(std::string_view key, std::string_view v) {
  T out{};
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty())
    throw ConfigError(bad_value(key, v, "an integer"));
  return out;
}

double parse_real(std::string_view key, std::string_view v) {
  const std::string s(v);
  char* end = nullptr;
  const double out = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) throw ConfigError(bad_value(key, v, "a number"));
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(bad_value(key, v, "a boolean"));
}

std::vector<int> parse_int_list(std::string_view key, std::string_view v) {
  std::vector<int> out;
  std::size_t pos = 0;
  while (true) {
    const auto comma = v.find(',', pos);
    out.push_back(parse_integral<int>(key, trim(v.substr(pos, comma - pos))));
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return out;
}

std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

struct Field {
  const char* key;
  std::function<void(ExperimentConfig&, std::string_view key, std::string_view value)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

#define FEDSC_INT(KEY, MEMBER)                                                            \
  Field {                                                                                 \
    KEY, [](ExperimentConfig& c, std::string_view k, std::string_view v) {                \
      c.MEMBER = parse_integral<std::remove_reference_t<decltype(c.MEMBER)>>(k, v);       \
    },                                                                                    \
        [](const ExperimentConfig& c) { return std::to_string(c.MEMBER); }                \
  }
#define FEDSC_REAL(KEY, MEMBER)                                                               \
  Field {                                                                                     \
    KEY, [](ExperimentConfig& c, std::string_view k, std::string_view v) { c.MEMBER = parse_real(k, v); }, \
        [](const ExperimentConfig& c) { return format_double(c.MEMBER); }                     \
  }
#define FEDSC_TEXT(KEY, MEMBER)                                                                \
  Field {                                                                                      \
    KEY, [](ExperimentConfig& c, std::string_view, std::string_view v) { c.MEMBER = std::string(v); }, \
        [](const ExperimentConfig& c) { return c.MEMBER; }                                     \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      FEDSC_TEXT("scene", scene),
      Field{"scene.n_train",
            [](ExperimentConfig& c, std::string_view k, std::string_view v) {
              c.scene_spec.n_train = parse_int_list(k, v);
            },
            [](const ExperimentConfig& c) { return join_ints(c.scene_spec.n_train); }},
      Field{"scene.n_test",
            [](ExperimentConfig& c, std::string_view k, std::string_view v) {
              c.scene_spec.n_test = parse_int_list(k, v);
            },
            [](const ExperimentConfig& c) { return join_ints(c.scene_spec.n_test); }},
      FEDSC_INT("scene.shared_lexicon", scene_spec.shared_lexicon),
      FEDSC_INT("scene.domain_lexicon", scene_spec.domain_lexicon),
      FEDSC_INT("scene.filler_lexicon", scene_spec.filler_lexicon),
      FEDSC_INT("scene.min_length", scene_spec.min_length),
      FEDSC_INT("scene.max_length", scene_spec.max_length),
      FEDSC_REAL("scene.sentiment_rate", scene_spec.sentiment_rate),
      FEDSC_REAL("scene.domain_rate", scene_spec.domain_rate),
      FEDSC_REAL("scene.topic_rate", scene_spec.topic_rate),
      FEDSC_REAL("scene.purity", scene_spec.purity),
      Field{"scene.polarity_shift",
            [](ExperimentConfig& c, std::string_view k, std::string_view v) {
              c.scene_spec.polarity_shift = v.empty() ? std::vector<int>{} : parse_int_list(k, v);
            },
            [](const ExperimentConfig& c) { return join_ints(c.scene_spec.polarity_shift); }},
      FEDSC_INT("classes", classes),
      FEDSC_INT("max_len", max_len),
      FEDSC_INT("max_vocab", max_vocab),
      FEDSC_TEXT("mode", mode),
      FEDSC_TEXT("arch", arch),
      FEDSC_INT("seed", seed),
      FEDSC_INT("d", embed),
      FEDSC_INT("s", hidden),
      FEDSC_INT("mlp", mlp),
      FEDSC_TEXT("pretrained", pretrained),
      FEDSC_REAL("lambda1", loss.lambda_kd),
      FEDSC_REAL("lambda2", loss.lambda_div),
      FEDSC_REAL("temperature", loss.temperature),
      Field{"kernel",
            [](ExperimentConfig& c, std::string_view k, std::string_view v) {
              if (v == "gaussian") c.loss.kernel.kind = KernelKind::gaussian;
              else if (v == "linear") c.loss.kernel.kind = KernelKind::linear;
              else throw ConfigError(bad_value(k, v, "gaussian or linear"));
            },
            [](const ExperimentConfig& c) {
              return std::string(c.loss.kernel.kind == KernelKind::gaussian ? "gaussian" : "linear");
            }},
      Field{"bandwidth",
            [](ExperimentConfig& c, std::string_view k, std::string_view v) {
              if (v == "median") c.loss.kernel.sigma2.reset();
              else c.loss.kernel.sigma2 = parse_real(k, v);
            },
            [](const ExperimentConfig& c) {
              return c.loss.kernel.sigma2 ? format_double(*c.loss.kernel.sigma2) : std::string("median");
            }},
      FEDSC_INT("rounds", round.rounds),
      FEDSC_INT("local_epochs", round.local_epochs),
      FEDSC_INT("batch_size", round.batch_size),
      FEDSC_REAL("sigma", round.noise_sigma),
      FEDSC_REAL("lr", round.lr),
      Field{"embedding_lr",
            [](ExperimentConfig& c, std::string_view k, std::string_view v) {
              if (v.empty() || v == "lr") c.round.embedding_lr.reset();
              else c.round.embedding_lr = parse_real(k, v);
            },
            [](const ExperimentConfig& c) {
              return c.round.embedding_lr ? format_double(*c.round.embedding_lr) : std::string("lr");
            }},
      FEDSC_REAL("momentum", round.momentum),
      FEDSC_REAL("init_scale", round.init_scale),
      Field{"vocab_subset",
            [](ExperimentConfig& c, std::string_view k, std::string_view v) {
              c.round.vocab_subset = parse_bool(k, v);
            },
            [](const ExperimentConfig& c) { return std::string(c.round.vocab_subset ? "true" : "false"); }},
      FEDSC_INT("d1", compression.d1),
      Field{"d2",
            [](ExperimentConfig& c, std::string_view k, std::string_view v) {
              if (v == "auto") c.d2.reset();
              else c.d2 = parse_integral<int>(k, v);
            },
            [](const ExperimentConfig& c) { return c.d2 ? std::to_string(*c.d2) : std::string("auto"); }},
      FEDSC_INT("privacy_queries", compression.privacy_queries),
      FEDSC_INT("privacy_k", compression.privacy_k),
      FEDSC_INT("Z", schedule.total_steps),
      FEDSC_INT("z", schedule.probe_interval),
      FEDSC_REAL("mu", schedule.lr_multiplier),
      FEDSC_TEXT("inference", inference),
      FEDSC_INT("eval_every", eval_every),
      FEDSC_TEXT("out", out),
      Field{"snapshot",
            [](ExperimentConfig& c, std::string_view k, std::string_view v) { c.snapshot = parse_bool(k, v); },
            [](const ExperimentConfig& c) { return std::string(c.snapshot ? "true" : "false"); }},
  };
  return table;
}

#undef FEDSC_INT
#undef FEDSC_REAL
#undef FEDSC_TEXT

/// K of a `synthetic-k<K>` scene name, or 0.
int synthetic_clients(std::string_view scene) {
  constexpr std::string_view prefix = "synthetic-k";
  if (scene.substr(0, prefix.size()) != prefix) return 0;
  const auto rest = scene.substr(prefix.size());
  int k = 0;
  const auto [p, ec] = std::from_chars(rest.data(), rest.data() + rest.size(), k);
  if (ec != std::errc() || p != rest.data() + rest.size() || k < 1) return 0;
  return k;
}

constexpr std::string_view kDirPrefix = "dir:";

SceneSpec synthetic_spec(const ExperimentConfig& cfg) {
  SceneSpec spec = cfg.scene_spec;
  spec.clients = synthetic_clients(cfg.scene);
  spec.classes = cfg.classes;
  spec.max_len = cfg.max_len;
  spec.max_vocab = cfg.max_vocab;
  return spec;
}

}  // namespace

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& f : fields()) out.emplace_back(f.key);
  return out;
}

void apply_setting(ExperimentConfig& cfg, std::string_view key, std::string_view value) {
  key = trim(key);
  value = trim(value);
  for (const auto& f : fields()) {
    if (key == f.key) {
      f.set(cfg, key, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

void apply_config_text(ExperimentConfig& cfg, std::string_view text) {
  std::size_t line_no = 0, pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (!line.empty()) {
      const auto eq = line.find('=');
      if (eq == std::string_view::npos)
        throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
      try {
        apply_setting(cfg, line.substr(0, eq), line.substr(eq + 1));
      } catch (const ConfigError& e) {
        throw ConfigError("config line " + std::to_string(line_no) + ": " + e.what());
      }
    }
    if (nl == std::string_view::npos) break;
    pos = nl + 1;
  }
}

void apply_config_file(ExperimentConfig& cfg, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  apply_config_text(cfg, ss.str());
}

std::string config_text(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& f : fields()) out += std::string(f.key) + " = " + f.get(cfg) + "\n";
  return out;
}

int ExperimentConfig::effective_d2() const { return d2 ? *d2 : std::min(150, embed); }

FederationMode ExperimentConfig::federation_mode() const {
  const ModeName m = parse_mode(mode);
  const Arch a = parse_arch(arch);
  if (a != Arch::standard && m != ModeName::kteps && m != ModeName::kteps_star)
    throw ConfigError("architecture variants apply only to kteps and kteps_star");
  return make_mode(m, a);
}

InferenceWay ExperimentConfig::inference_way() const {
  if (inference == "auto")
    return federation_mode().sharing.has_p_branch() ? InferenceWay::sp : InferenceWay::s;
  return parse_inference(inference);
}

void ExperimentConfig::validate() const {
  const FederationMode fm = federation_mode();
  if (synthetic_clients(scene) > 0) {
    synthetic_spec(*this).validate();
  } else if (scene.substr(0, kDirPrefix.size()) != kDirPrefix || scene.size() == kDirPrefix.size()) {
    throw ConfigError("unknown scene '" + scene + "' (expected synthetic-k<K> or dir:<path>)");
  }
  if (classes < 2) throw ConfigError("classes must be >= 2");
  if (max_len < 1) throw ConfigError("max_len must be >= 1");
  if (max_vocab < 2) throw ConfigError("max_vocab must be >= 2");
  if (embed < 1 || hidden < 1 || mlp < 0) throw ConfigError("model sizes must satisfy d >= 1, s >= 1, mlp >= 0");
  loss.validate();
  round.validate(fm, mode_loss(fm, loss));
  CompressionConfig cc = compression;
  cc.d2 = effective_d2();
  cc.validate(embed);
  schedule.validate();
  const InferenceWay way = inference_way();
  if (way != InferenceWay::s && !fm.sharing.has_p_branch())
    throw ConfigError("inference way '" + std::string(inference_name(way)) + "' needs a private classifier");
  if (eval_every < 0) throw ConfigError("eval_every must be >= 0");
}

Scene load_scene(const ExperimentConfig& cfg) {
  if (synthetic_clients(cfg.scene) > 0)
    return generate_synthetic_scene(synthetic_spec(cfg), derive_seed(cfg.seed, -1, -1, StreamPurpose::scene));
  const std::filesystem::path dir(cfg.scene.substr(kDirPrefix.size()));
  if (!std::filesystem::is_directory(dir)) throw IoError("scene directory not found: " + dir.string());
  std::vector<std::filesystem::path> subdirs;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_directory()) subdirs.push_back(e.path());
  std::sort(subdirs.begin(), subdirs.end());
  if (subdirs.empty()) throw IoError("scene directory has no client subdirectories: " + dir.string());
  std::vector<std::string> names;
  std::vector<std::vector<RawReview>> train, test;
  for (const auto& sd : subdirs) {
    names.push_back(sd.filename().string());
    train.push_back(load_corpus_file(sd / "train.tsv", cfg.classes));
    const auto test_path = sd / "test.tsv";
    test.push_back(std::filesystem::exists(test_path) ? load_corpus_file(test_path, cfg.classes)
                                                      : std::vector<RawReview>{});
  }
  return build_scene(std::move(names), std::move(train), std::move(test), cfg.classes, cfg.max_len,
                     cfg.max_vocab);
}

void write_scene_dir(const Scene& scene, const std::filesystem::path& dir) {
  for (std::size_t k = 0; k < scene.clients.size(); ++k) {
    const auto sub = dir / scene.clients[k].name;
    std::filesystem::create_directories(sub);
    write_corpus_file(sub / "train.tsv", scene.raw_train[k]);
    write_corpus_file(sub / "test.tsv", scene.raw_test[k]);
  }
  write_vocab(dir / "vocab.txt", scene.vocab);
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, Exec exec) {
  cfg.validate();
  const Scene scene = load_scene(cfg);
  return run_experiment(cfg, scene, exec);
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, const Scene& scene, Exec exec) {
  cfg.validate();
  ExperimentResult res;
  res.config = cfg;
  res.mode = cfg.federation_mode();
  res.way = cfg.inference_way();

  ModelDims dims;
  dims.vocab = static_cast<int>(scene.vocab.size());
  dims.embed = cfg.embed;
  dims.hidden = cfg.hidden;
  dims.mlp = cfg.mlp > 0 ? cfg.mlp : 2 * cfg.hidden;
  dims.classes = scene.classes;
  RoundConfig rc = cfg.round;
  rc.seed = cfg.seed;
  CompressionConfig cc = cfg.compression;
  cc.d2 = cfg.effective_d2();

  Federation fed(scene, res.mode, dims, cfg.loss, rc, cc, exec);
  if (!cfg.pretrained.empty()) fed.load_pretrained(cfg.pretrained);
  const Network& net = fed.network();
  const std::size_t K = scene.clients.size();
  res.clients.resize(K);
  for (std::size_t k = 0; k < K; ++k) {
    auto& cs = res.clients[k];
    cs.name = scene.clients[k].name;
    cs.n_train = scene.clients[k].train.size();
    cs.n_test = scene.clients[k].test.size();
    cs.vocab_rows = scene.clients[k].local_vocab.size();
  }

  auto emit = [&](int round, int client, std::string metric, std::optional<double> v) {
    res.rows.push_back({round, client, std::move(metric), v});
  };
  auto current_models = [&]() {
    std::vector<ParamSet> models;
    for (std::size_t k = 0; k < K; ++k) models.push_back(fed.personalized_start(static_cast<int>(k)));
    return models;
  };
  auto evaluate_ag = [&]() {
    if (res.mode.name == ModeName::individual) {
      const auto models = current_models();
      return eval_own_models(net, models, scene.clients);
    }
    return eval_ag(net, fed.server().global, scene.clients);
  };
  auto emit_ag = [&](int round, const AgResult& ag) {
    for (std::size_t k = 0; k < K; ++k)
      emit(round, static_cast<int>(k), "ag", ag.mean ? std::optional<double>(ag.per_client[k]) : std::nullopt);
    emit(round, -1, "ag", ag.mean);
  };

  for (int r = 0; r < rc.rounds; ++r) {
    RoundReport rep = fed.run_round();
    const int tag = r + 1;
    double loss_sum = 0.0, ser_sum = 0.0, ag_sum = 0.0;
    int ser_n = 0, ag_n = 0;
    for (const auto& s : rep.clients) {
      const int k = s.client;
      emit(tag, k, "loss", s.loss.total);
      emit(tag, k, "ce_s", s.loss.ce_s);
      emit(tag, k, "ce_p", s.loss.ce_p);
      emit(tag, k, "kd", s.loss.kd);
      emit(tag, k, "div", s.loss.div);
      emit(tag, k, "steps", static_cast<double>(s.steps));
      emit(tag, k, "upload_bytes", static_cast<double>(s.upload_bytes));
      emit(tag, k, "upload_floats", static_cast<double>(s.upload_floats));
      emit(tag, k, "param_norm", s.param_norm);
      if (s.i_ser) emit(tag, k, "i_ser", *s.i_ser);
      if (s.i_ag) emit(tag, k, "i_ag", *s.i_ag);
      loss_sum += s.loss.total;
      if (s.i_ser) ser_sum += *s.i_ser, ++ser_n;
      if (s.i_ag) ag_sum += *s.i_ag, ++ag_n;

      auto& cs = res.clients[static_cast<std::size_t>(k)];
      cs.upload_bytes += s.upload_bytes;
      cs.upload_floats_per_round = s.upload_floats;
      cs.embedding_floats_per_round = s.embedding_floats;
      cs.i_ser = s.i_ser;
      cs.i_ag = s.i_ag;
    }
    emit(tag, -1, "loss", loss_sum / static_cast<double>(K));
    emit(tag, -1, "upload_bytes", static_cast<double>(rep.upload_bytes));
    emit(tag, -1, "param_norm", rep.param_norm);
    res.i_ser = ser_n ? std::optional<double>(ser_sum / ser_n) : std::nullopt;
    res.i_ag = ag_n ? std::optional<double>(ag_sum / ag_n) : std::nullopt;
    if (res.i_ser) emit(tag, -1, "i_ser", *res.i_ser);
    if (res.i_ag) emit(tag, -1, "i_ag", *res.i_ag);
    res.upload_bytes += rep.upload_bytes;
    if (cfg.eval_every > 0 && tag % cfg.eval_every == 0 && tag != rc.rounds) emit_ag(tag, evaluate_ag());
    res.rounds.push_back(std::move(rep));
  }

  const int final_tag = rc.rounds;
  const AgResult ag = evaluate_ag();
  emit_ag(final_tag, ag);
  res.ag = ag.mean;
  for (std::size_t k = 0; k < K; ++k) res.clients[k].ag = ag.mean ? std::optional<double>(ag.per_client[k]) : std::nullopt;

  PersonalizeOptions po;
  po.schedule = cfg.schedule;
  po.way = res.way;
  po.base_lr = rc.lr;
  po.momentum = rc.momentum;
  if (rc.embedding_lr) {
    po.component_lr[static_cast<std::size_t>(Component::embedding)] = rc.embedding_lr;
    po.component_lr[static_cast<std::size_t>(Component::embedding_p)] = rc.embedding_lr;
  }
  po.batch_size = rc.batch_size;
  po.loss = fed.loss();
  std::vector<ApResult> ap(K);
  std::vector<std::exception_ptr> errors(K);
  const auto n = static_cast<std::ptrdiff_t>(K);
#pragma omp parallel for schedule(dynamic, 1) if (exec == Exec::parallel)
  for (std::ptrdiff_t k = 0; k < n; ++k) {
    const auto i = static_cast<std::size_t>(k);
    try {
      Rng rng = make_stream(cfg.seed, static_cast<std::int64_t>(k), rc.rounds, StreamPurpose::personalize);
      ap[i] = personalize_and_score(net, fed.personalized_start(static_cast<int>(k)), scene.clients[i], po, rng);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  std::vector<double> scores;
  const int probes = cfg.schedule.probes();
  std::vector<double> probe_mean(static_cast<std::size_t>(probes), 0.0);
  for (std::size_t k = 0; k < K; ++k) {
    for (int t = 0; t < probes; ++t) {
      emit(final_tag, static_cast<int>(k), "ap_t" + std::to_string(t + 1), ap[k].probes[static_cast<std::size_t>(t)]);
      probe_mean[static_cast<std::size_t>(t)] += ap[k].probes[static_cast<std::size_t>(t)] / static_cast<double>(K);
    }
    emit(final_tag, static_cast<int>(k), "ap", ap[k].score);
    scores.push_back(ap[k].score);
    res.clients[k].ap = std::move(ap[k]);
  }
  for (int t = 0; t < probes; ++t)
    emit(final_tag, -1, "ap_t" + std::to_string(t + 1), probe_mean[static_cast<std::size_t>(t)]);
  res.ap = eval_ap(scores);
  emit(final_tag, -1, "ap", res.ap);

  res.global = fed.server().global;
  for (const auto& c : fed.clients()) res.client_params.push_back(c.params);
  return res;
}

std::string metrics_csv(const ExperimentResult& r) {
  std::string out = "mode,seed,round,client,metric,value\n";
  const std::string prefix = r.config.mode + "," + std::to_string(r.config.seed) + ",";
  for (const auto& row : r.rows) {
    out += prefix;
    out += std::to_string(row.round);
    out += ',';
    out += row.client < 0 ? std::string("all") : std::to_string(row.client);
    out += ',';
    out += row.metric;
    out += ',';
    out += row.value ? format_double(*row.value) : std::string("na");
    out += '\n';
  }
  return out;
}

namespace {

using Json = nlohmann::ordered_json;

Json opt_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

}  // namespace

std::string summary_json(const ExperimentResult& r) {
  const auto& cfg = r.config;
  Json j;
  j["mode"] = cfg.mode;
  j["arch"] = cfg.arch;
  j["scene"] = cfg.scene;
  j["seed"] = cfg.seed;
  j["rounds"] = cfg.round.rounds;
  j["inference"] = std::string(inference_name(r.way));
  j["ag"] = opt_json(r.ag);
  j["ap"] = opt_json(r.ap);

  Json payload;
  payload["upload_bytes_total"] = r.upload_bytes;
  std::size_t floats = 0;
  for (const auto& c : r.clients) floats += c.upload_floats_per_round;
  payload["upload_floats_per_round"] = floats;
  if (r.mode.uses_pdr) {
    Json comp;
    comp["d1"] = cfg.compression.d1;
    comp["d2"] = cfg.effective_d2();
    comp["d"] = cfg.embed;
    Json per = Json::array();
    for (const auto& c : r.clients) {
      Json e;
      e["client"] = c.name;
      e["rows"] = c.vocab_rows;
      e["payload_floats"] = c.embedding_floats_per_round;
      e["payload_bytes"] = payload_byte_size(c.vocab_rows, static_cast<std::size_t>(cfg.embed),
                                             cfg.compression.d1, cfg.effective_d2());
      per.push_back(std::move(e));
    }
    comp["clients"] = std::move(per);
    payload["compression"] = std::move(comp);
  }
  if (!r.rounds.empty()) {
    Json manifests = Json::array();
    for (const auto& s : r.rounds.back().clients) {
      Json m = Json::array();
      for (const auto& e : s.manifest)
        m.push_back({{"name", e.name}, {"rows", e.rows}, {"cols", e.cols}, {"floats", e.floats}, {"bytes", e.bytes}});
      manifests.push_back(std::move(m));
    }
    payload["last_round_manifest"] = std::move(manifests);
  }
  j["payload"] = std::move(payload);

  Json privacy;
  privacy["k"] = cfg.compression.privacy_k;
  privacy["queries"] = cfg.compression.privacy_queries;
  privacy["i_ser"] = opt_json(r.i_ser);
  privacy["i_ag"] = opt_json(r.i_ag);
  j["privacy"] = std::move(privacy);

  Json clients = Json::array();
  for (const auto& c : r.clients) {
    Json e;
    e["name"] = c.name;
    e["n_train"] = c.n_train;
    e["n_test"] = c.n_test;
    e["vocab_rows"] = c.vocab_rows;
    e["ag"] = opt_json(c.ag);
    e["ap"] = c.ap.score;
    e["ap_probes"] = c.ap.probes;
    e["upload_bytes_total"] = c.upload_bytes;
    e["upload_floats_per_round"] = c.upload_floats_per_round;
    e["i_ser"] = opt_json(c.i_ser);
    e["i_ag"] = opt_json(c.i_ag);
    clients.push_back(std::move(e));
  }
  j["clients"] = std::move(clients);
  return j.dump(2) + "\n";
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace

void write_run_outputs(const ExperimentResult& r, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
  write_text(dir / "metrics.csv", metrics_csv(r));
  write_text(dir / "summary.json", summary_json(r));
  write_text(dir / "config.txt", config_text(r.config));
  if (r.config.snapshot) {
    const auto snap = dir / "snapshots";
    std::filesystem::create_directories(snap, ec);
    if (ec) throw IoError("cannot create " + snap.string());
    if (!r.global.empty()) write_snapshot(snap / "global.bin", r.global);
    for (std::size_t k = 0; k < r.client_params.size(); ++k)
      write_snapshot(snap / ("client" + std::to_string(k) + ".bin"), r.client_params[k]);
  }
}

GridAxis parse_grid_axis(std::string_view spec) {
  const auto eq = spec.find('=');
  if (eq == std::string_view::npos) throw ConfigError("grid axis '" + std::string(spec) + "' must look like key=v1,v2");
  GridAxis axis;
  axis.key = std::string(trim(spec.substr(0, eq)));
  const auto values = spec.substr(eq + 1);
  std::size_t pos = 0;
  while (true) {
    const auto comma = values.find(',', pos);
    const auto v = trim(values.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos));
    if (v.empty()) throw ConfigError("grid axis '" + axis.key + "' has an empty value");
    axis.values.emplace_back(v);
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  const auto keys = config_keys();
  if (std::find(keys.begin(), keys.end(), axis.key) == keys.end())
    throw ConfigError("grid axis names unknown config key '" + axis.key + "'");
  return axis;
}

std::uint64_t replicate_seed(std::uint64_t base, int replicate) {
  return replicate == 0 ? base : splitmix64(base + static_cast<std::uint64_t>(replicate));
}

SweepResult run_sweep(const ExperimentConfig& base, std::span<const GridAxis> axes, int replicates,
                      const std::optional<std::filesystem::path>& out, Exec exec) {
  if (replicates < 1) throw ConfigError("replicates must be >= 1");
  SweepResult res;
  res.axes.assign(axes.begin(), axes.end());
  std::size_t total = 1;
  for (const auto& a : axes) {
    if (a.values.empty()) throw ConfigError("grid axis '" + a.key + "' has no values");
    total *= a.values.size();
  }

  std::vector<ExperimentConfig> configs;
  for (std::size_t p = 0; p < total; ++p) {
    ExperimentConfig cfg = base;
    SweepPoint point;
    std::size_t rest = p;
    point.values.resize(axes.size());
    for (std::size_t a = axes.size(); a-- > 0;) {
      const auto& vals = axes[a].values;
      point.values[a] = vals[rest % vals.size()];
      rest /= vals.size();
    }
    for (std::size_t a = 0; a < axes.size(); ++a) apply_setting(cfg, axes[a].key, point.values[a]);
    cfg.validate();
    point.mode = cfg.mode;
    res.points.push_back(std::move(point));
    configs.push_back(std::move(cfg));
  }

  for (std::size_t p = 0; p < total; ++p) {
    for (int r = 0; r < replicates; ++r) {
      ExperimentConfig cfg = configs[p];
      cfg.seed = replicate_seed(base.seed, r);
      if (out) cfg.out = (*out / ("point" + std::to_string(p) + "_rep" + std::to_string(r))).string();
      const auto run = run_experiment(cfg, exec);
      auto& point = res.points[p];
      point.ag.push_back(run.ag);
      point.ap.push_back(run.ap);
      point.upload_bytes.push_back(run.upload_bytes);
      if (out) write_run_outputs(run, cfg.out);
    }
  }
  if (out) write_text(*out / "sweep.csv", sweep_csv(res));
  return res;
}

std::string sweep_csv(const SweepResult& r) {
  std::string out = "point";
  for (const auto& a : r.axes) out += "," + a.key;
  out += ",mode,replicates,ag,ap,upload_bytes\n";
  auto mean = [](const std::vector<std::optional<double>>& v) -> std::optional<double> {
    if (v.empty()) return std::nullopt;
    double s = 0.0;
    for (const auto& x : v) {
      if (!x) return std::nullopt;
      s += *x;
    }
    return s / static_cast<double>(v.size());
  };
  for (std::size_t p = 0; p < r.points.size(); ++p) {
    const auto& pt = r.points[p];
    out += std::to_string(p);
    for (const auto& v : pt.values) out += "," + v;
    const auto ag = mean(pt.ag), ap = mean(pt.ap);
    double bytes = 0.0;
    for (auto b : pt.upload_bytes) bytes += static_cast<double>(b);
    if (!pt.upload_bytes.empty()) bytes /= static_cast<double>(pt.upload_bytes.size());
    out += "," + pt.mode + "," + std::to_string(pt.ag.size()) + "," + (ag ? format_double(*ag) : "na") + "," +
           (ap ? format_double(*ap) : "na") + "," + format_double(bytes) + "\n";
  }
  return out;
}

}  // namespace fedsc
