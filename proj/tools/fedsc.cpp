// Command-line front end: run one experiment, sweep a grid, or dump a scene.

#include <CLI11.hpp>

#include <omp.h>

#include <cstdio>
#include <iostream>
#include <map>

#include "fedsc/errors.hpp"
#include "fedsc/experiment.hpp"

namespace {

enum Exit { kOk = 0, kOther = 1, kConfig = 2, kNumeric = 3, kIo = 4 };

struct CommonArgs {
  std::string config;
  std::map<std::string, std::string> flags;  // key -> value, from named flags
  std::vector<std::string> sets;             // key=value
  int threads = 0;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config, "key = value config file");
  static const std::pair<const char*, const char*> named[] = {
      {"mode", "individual|fedavg|fedper|lg|pfl_da|kteps|kteps_star"},
      {"arch", "standard|A|B|C (kteps variants)"},
      {"scene", "synthetic-k<K> or dir:<path>"},
      {"seed", "master seed"},
      {"rounds", "global rounds"},
      {"d1", "first kept principal component (1-based)"},
      {"d2", "last kept principal component"},
      {"lambda1", "knowledge-transfer weight"},
      {"lambda2", "diversity weight"},
      {"temperature", "distillation temperature"},
      {"sigma", "upload noise std"},
      {"mu", "personalization lr multiplier"},
      {"inference", "auto|s|p|sp"},
      {"out", "output directory"},
  };
  for (const auto& [key, help] : named) {
    std::string k = key;
    cmd->add_option_function<std::string>(
        "--" + k, [&args, k](const std::string& v) { args.flags[k] = v; }, help);
  }
  cmd->add_flag_function(
      "--snapshot", [&args](std::int64_t) { args.flags["snapshot"] = "true"; },
      "write parameter snapshots");
  cmd->add_option("--set", args.sets, "any config key, as key=value (repeatable)");
  cmd->add_option("--threads", args.threads, "worker threads (1 = serial reference path)");
}

fedsc::ExperimentConfig build_config(const CommonArgs& args) {
  fedsc::ExperimentConfig cfg;
  if (!args.config.empty()) fedsc::apply_config_file(cfg, args.config);
  for (const auto& [k, v] : args.flags) fedsc::apply_setting(cfg, k, v);
  for (const auto& s : args.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw fedsc::ConfigError("--set expects key=value, got '" + s + "'");
    fedsc::apply_setting(cfg, s.substr(0, eq), s.substr(eq + 1));
  }
  if (args.threads < 0) throw fedsc::ConfigError("--threads must be >= 0");
  return cfg;
}

fedsc::Exec exec_for(int threads) {
  if (threads > 0) omp_set_num_threads(threads);
  return threads == 1 ? fedsc::Exec::serial : fedsc::Exec::parallel;
}

int report(const char* cls, const std::exception& e, int code) {
  std::fprintf(stderr, "fedsc: %s error: %s\n", cls, e.what());
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated multi-domain sentiment classification simulator"};
  app.require_subcommand(1);

  CommonArgs run_args;
  auto* run = app.add_subcommand("run", "run one experiment");
  add_common(run, run_args);

  CommonArgs sweep_args;
  std::vector<std::string> grid;
  int replicates = 1;
  auto* sweep = app.add_subcommand("sweep", "run a Cartesian grid of experiments");
  add_common(sweep, sweep_args);
  sweep->add_option("--grid", grid, "axis as key=v1,v2,... (repeatable)")->required();
  sweep->add_option("--replicates", replicates, "seeds per grid point");

  CommonArgs gen_args;
  auto* gen = app.add_subcommand("gen-scene", "write a scene as a dir: corpus tree");
  add_common(gen, gen_args);

  auto* keys = app.add_subcommand("keys", "list config keys with their defaults");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*keys) {
      std::cout << fedsc::config_text(fedsc::ExperimentConfig{});
      return kOk;
    }
    if (*run) {
      const auto cfg = build_config(run_args);
      cfg.validate();
      const auto exec = exec_for(run_args.threads);
      const auto result = fedsc::run_experiment(cfg, exec);
      fedsc::write_run_outputs(result, cfg.out);
      std::printf("mode=%s seed=%llu ag=%s ap=%s out=%s\n", cfg.mode.c_str(),
                  static_cast<unsigned long long>(cfg.seed),
                  result.ag ? fedsc::format_double(*result.ag).c_str() : "na",
                  result.ap ? fedsc::format_double(*result.ap).c_str() : "na", cfg.out.c_str());
      return kOk;
    }
    if (*sweep) {
      const auto cfg = build_config(sweep_args);
      cfg.validate();
      std::vector<fedsc::GridAxis> axes;
      for (const auto& g : grid) axes.push_back(fedsc::parse_grid_axis(g));
      const auto exec = exec_for(sweep_args.threads);
      const auto result = fedsc::run_sweep(cfg, axes, replicates, std::filesystem::path(cfg.out), exec);
      std::cout << fedsc::sweep_csv(result);
      return kOk;
    }
    if (*gen) {
      const auto cfg = build_config(gen_args);
      cfg.validate();
      const auto scene = fedsc::load_scene(cfg);
      fedsc::write_scene_dir(scene, cfg.out);
      std::printf("clients=%zu vocab=%zu out=%s\n", scene.clients.size(), scene.vocab.size(), cfg.out.c_str());
      return kOk;
    }
  } catch (const fedsc::ConfigError& e) {
    return report("config", e, kConfig);
  } catch (const fedsc::ShapeError& e) {
    return report("config", e, kConfig);
  } catch (const fedsc::NumericError& e) {
    return report("numeric", e, kNumeric);
  } catch (const fedsc::IoError& e) {
    return report("io", e, kIo);
  } catch (const std::filesystem::filesystem_error& e) {
    return report("io", e, kIo);
  } catch (const std::exception& e) {
    return report("internal", e, kOther);
  }
  return kOther;
}
