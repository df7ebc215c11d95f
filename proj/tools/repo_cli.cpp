// Command-line shell: train / adapt / toy-adapt / eval / probe / pca /
// dump-frames, all driven by a shared TOML-subset config with flag
// overrides.
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "repo/adaptation.hpp"
#include "repo/checkpoint.hpp"
#include "repo/config.hpp"
#include "repo/diagnostics.hpp"
#include "repo/metrics.hpp"
#include "repo/trainer.hpp"

namespace fs = std::filesystem;
using repo::config::RunConfig;
using nlohmann::json;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

struct CommonFlags {
  std::string config_path;
  std::string out_dir;
  std::string task;
  std::string preset;
  std::vector<std::string> overrides;  // key=value
  long long seed = -1;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("--config", flags.config_path, "config file (TOML subset)");
  cmd->add_option("--out", flags.out_dir, "output directory");
  cmd->add_option("--task", flags.task, "task name");
  cmd->add_option("--preset", flags.preset, "desk or paper");
  cmd->add_option("--seed", flags.seed, "run seed");
  cmd->add_option("--set", flags.overrides,
                  "extra section.key=value overrides");
}

RunConfig resolve_config(const CommonFlags& flags) {
  RunConfig cfg = repo::config::default_config();
  if (!flags.config_path.empty()) {
    std::ifstream in(flags.config_path);
    if (!in) {
      throw repo::config::ConfigError("cannot read config file " +
                                      flags.config_path);
    }
    std::stringstream buf;
    buf << in.rdbuf();
    cfg = repo::config::parse_config(buf.str(), cfg);
  }
  if (!flags.preset.empty()) {
    repo::config::apply_override(cfg, "preset", "\"" + flags.preset + "\"");
  }
  if (!flags.task.empty()) {
    repo::config::apply_override(cfg, "task", "\"" + flags.task + "\"");
  }
  if (flags.seed >= 0) {
    repo::config::apply_override(cfg, "seed", std::to_string(flags.seed));
  }
  if (!flags.out_dir.empty()) {
    repo::config::apply_override(cfg, "out_dir", "\"" + flags.out_dir + "\"");
  }
  for (const auto& kv : flags.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      throw repo::config::ConfigError("--set expects key=value, got '" + kv +
                                      "'");
    }
    repo::config::apply_override(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  repo::config::validate_config(cfg);
  return cfg;
}

void write_config_echo(const RunConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  const std::string text = repo::config::serialize_config(cfg);
  std::ofstream out(fs::path(cfg.out_dir) / "config.toml");
  out << text;
  std::cout << text;
}

repo::trainer::TrainerConfig trainer_config(const RunConfig& cfg) {
  auto tc = cfg.trainer;
  tc.seed = cfg.seed;
  return tc;
}

int run_train(const RunConfig& cfg) {
  write_config_echo(cfg);
  repo::metrics::MetricsWriter metrics(
      (fs::path(cfg.out_dir) / "metrics.jsonl").string());
  repo::trainer::Trainer trainer(trainer_config(cfg),
                                 repo::config::domain_for_task(cfg.task,
                                                               cfg.seed));
  const std::string config_text = repo::config::serialize_config(cfg);
  trainer.seed_buffer();
  metrics.write(json{{"event", "seeded"},
                     {"env_steps", trainer.env_steps()},
                     {"buffer_episodes", trainer.buffer().episode_count()}});
  int cycle = 0;
  auto eval_domain = repo::config::domain_for_task(cfg.task, cfg.seed + 777);
  try {
    while (!trainer.budget_exhausted()) {
      const auto steps = trainer.train_cycle();
      for (const auto& m : steps) {
        metrics.write(json{{"step", m.step},
                           {"model_loss", m.model_loss},
                           {"reward_ll", m.reward_ll},
                           {"raw_kl", m.raw_kl},
                           {"beta", m.beta},
                           {"actor_loss", m.actor_loss},
                           {"critic_loss", m.critic_loss},
                           {"imagined_return", m.imagined_return}});
      }
      ++cycle;
      if (cfg.eval_every_cycles > 0 && cycle % cfg.eval_every_cycles == 0) {
        const double ret = trainer.eval_return(eval_domain, cfg.eval_episodes,
                                               cfg.seed * 1000 + cycle);
        metrics.write(json{{"event", "eval"},
                           {"cycle", cycle},
                           {"env_steps", trainer.env_steps()},
                           {"eval_return", ret}});
        std::cout << "cycle " << cycle << " env_steps "
                  << trainer.env_steps() << " eval_return " << ret << "\n";
      }
      if (cfg.checkpoint_every_cycles > 0 &&
          cycle % cfg.checkpoint_every_cycles == 0) {
        repo::ckpt::save_checkpoint(
            (fs::path(cfg.out_dir) /
             ("ckpt_" + std::to_string(trainer.env_steps()) + ".bin"))
                .string(),
            repo::ckpt::snapshot(trainer, config_text));
      }
      metrics.flush();
    }
  } catch (const repo::num::NumericError& e) {
    const std::string dump =
        (fs::path(cfg.out_dir) / "dump_nonfinite.bin").string();
    repo::ckpt::save_checkpoint(dump,
                                repo::ckpt::snapshot(trainer, config_text));
    std::cerr << "non-finite training state: " << e.what() << "\nstate dump: "
              << dump << "\n";
    return kExitNumeric;
  }
  repo::ckpt::save_checkpoint(
      (fs::path(cfg.out_dir) / "ckpt_final.bin").string(),
      repo::ckpt::snapshot(trainer, config_text));
  return 0;
}

/// Rebuilds a trainer matching the checkpoint's own config and restores
/// its state; the env domain follows the checkpoint task.
std::unique_ptr<repo::trainer::Trainer> trainer_from_checkpoint(
    const repo::ckpt::Checkpoint& ckpt, RunConfig* out_cfg) {
  RunConfig cfg = repo::config::parse_config(ckpt.config_text);
  auto trainer = std::make_unique<repo::trainer::Trainer>(
      trainer_config(cfg), repo::config::domain_for_task(cfg.task, cfg.seed));
  repo::ckpt::restore(*trainer, ckpt);
  if (out_cfg != nullptr) *out_cfg = cfg;
  return trainer;
}

int run_adapt(const RunConfig& cfg, const std::string& ckpt_path,
              int cycles) {
  write_config_echo(cfg);
  repo::metrics::MetricsWriter metrics(
      (fs::path(cfg.out_dir) / "metrics.jsonl").string());
  const auto ckpt = repo::ckpt::load_checkpoint(ckpt_path);
  RunConfig source_cfg;
  auto trainer = trainer_from_checkpoint(ckpt, &source_cfg);
  if (source_cfg.task == "toy2d" || cfg.task == "toy2d") {
    throw repo::config::ConfigError("adapt requires pixel tasks");
  }
  const auto train_domain =
      repo::config::domain_for_task(source_cfg.task, source_cfg.seed);
  const auto test_domain =
      repo::config::domain_for_task(cfg.task, source_cfg.seed);

  // Rebuild the source replay buffer offline from the frozen model.
  {
    repo::worlds::PointmassEnv env(train_domain);
    auto& rng = trainer->collect_rng();
    for (int i = 0; i < cfg.adaptation.seed_episodes; ++i) {
      trainer->buffer().add(repo::trainer::collect_episode(
          env, trainer->model(), trainer->actor(),
          repo::behavior::ActMode::kExplore, rng));
    }
  }

  repo::adapt::PixelAdapter adapter(
      trainer->model(), trainer->model_params(), trainer->actor(),
      trainer->actor_params(), trainer->buffer(), train_domain, test_domain,
      cfg.adaptation, cfg.seed);
  const auto checksum_before = adapter.frozen_checksum();
  adapter.collect_calibration();
  adapter.seed_test_buffer();
  for (int c = 0; c < cycles; ++c) {
    const auto m = adapter.adapt_cycle();
    json rec{{"cycle", m.cycle},
             {"saddle", m.saddle},
             {"e_tau", m.e_tau},
             {"lambda", m.lambda},
             {"calibration", m.calibration}};
    if (cfg.eval_every_cycles > 0 && (c + 1) % cfg.eval_every_cycles == 0) {
      const double ret = adapter.eval_return(cfg.eval_episodes, cfg.seed + c);
      rec["eval_return"] = ret;
      std::cout << "cycle " << c << " eval_return " << ret << "\n";
    }
    metrics.write(rec);
    metrics.flush();
  }
  if (adapter.frozen_checksum() != checksum_before) {
    std::cerr << "frozen-parameter checksum changed\n";
    return kExitNumeric;
  }
  repo::ckpt::Checkpoint out;
  out.config_text = repo::config::serialize_config(cfg);
  out.model = repo::ckpt::dump_store(adapter.encoder_params());
  repo::ckpt::save_checkpoint(
      (fs::path(cfg.out_dir) / "adapted_encoder.bin").string(), out);
  std::cout << "frozen checksum ok: " << std::hex << checksum_before
            << std::dec << "\n";
  return 0;
}

int run_toy_adapt(const RunConfig& cfg) {
  write_config_echo(cfg);
  auto toy = cfg.toy;
  toy.seed = cfg.seed;
  const auto report = repo::adapt::toy_adapt(toy);
  json rec{{"mean_l2_error", report.mean_l2_error},
           {"e_tau", report.e_tau},
           {"saddle", report.saddle},
           {"degenerate", report.degenerate}};
  repo::metrics::MetricsWriter metrics(
      (fs::path(cfg.out_dir) / "metrics.jsonl").string());
  metrics.write(rec);
  std::cout << rec.dump() << "\n";
  return 0;
}

int run_eval(const RunConfig& cfg, const std::string& ckpt_path,
             int episodes) {
  const auto ckpt = repo::ckpt::load_checkpoint(ckpt_path);
  auto trainer = trainer_from_checkpoint(ckpt, nullptr);
  const auto domain = repo::config::domain_for_task(cfg.task, cfg.seed + 777);
  repo::worlds::PointmassEnv env(domain);
  repo::Rng rng(cfg.seed + 17);
  std::vector<double> returns;
  for (int i = 0; i < episodes; ++i) {
    const auto ep = repo::trainer::collect_episode(
        env, trainer->model(), trainer->actor(),
        repo::behavior::ActMode::kEval, rng);
    double total = 0.0;
    for (double r : ep.rewards) total += r;
    returns.push_back(total);
  }
  double mean = 0.0;
  for (double r : returns) mean += r;
  mean /= episodes;
  double var = 0.0;
  for (double r : returns) var += (r - mean) * (r - mean);
  const double stddev = episodes > 1 ? std::sqrt(var / (episodes - 1)) : 0.0;
  json rec{{"event", "eval"},
           {"task", cfg.task},
           {"episodes", episodes},
           {"mean_return", mean},
           {"stddev_return", stddev}};
  fs::create_directories(cfg.out_dir);
  repo::metrics::MetricsWriter metrics(
      (fs::path(cfg.out_dir) / "metrics.jsonl").string());
  metrics.write(rec);
  std::cout << rec.dump() << "\n";
  return 0;
}

struct ProbeData {
  std::vector<double> latents;
  std::vector<double> targets;
  int n{0}, d{0}, k{0};
};

ProbeData collect_probe_data(repo::trainer::Trainer& trainer,
                             const repo::worlds::DomainSpec& domain,
                             int episodes, std::uint64_t seed) {
  ProbeData data;
  repo::worlds::PointmassEnv env(domain);
  repo::Rng rng(seed + 29);
  for (int i = 0; i < episodes; ++i) {
    const auto ep = repo::trainer::collect_episode(
        env, trainer.model(), trainer.actor(),
        repo::behavior::ActMode::kExplore, rng);
    const auto features = repo::trainer::filter_features(trainer.model(), ep);
    for (int t = 0; t < ep.length; ++t) {
      data.latents.insert(data.latents.end(), features[t].begin(),
                          features[t].end());
      data.targets.insert(data.targets.end(), ep.factor(t),
                          ep.factor(t) + ep.factor_dim);
      ++data.n;
    }
    data.d = static_cast<int>(features[0].size());
    data.k = ep.factor_dim;
  }
  return data;
}

int run_probe(const RunConfig& cfg, const std::string& ckpt_path,
              int episodes, bool mlp) {
  const auto ckpt = repo::ckpt::load_checkpoint(ckpt_path);
  auto trainer = trainer_from_checkpoint(ckpt, nullptr);
  const auto domain = repo::config::domain_for_task(cfg.task, cfg.seed + 555);
  const auto data = collect_probe_data(*trainer, domain, episodes, cfg.seed);
  std::vector<double> pred;
  const auto r2 = repo::diag::probe_fit(
      data.latents, data.n, data.d, data.targets, data.k,
      mlp ? repo::diag::ProbeKind::kMlp : repo::diag::ProbeKind::kLinear,
      cfg.seed, &pred);

  fs::create_directories(cfg.out_dir);
  std::ofstream csv(fs::path(cfg.out_dir) / "probe.csv");
  for (int j = 0; j < data.k; ++j) csv << "target_" << j << ",";
  for (int j = 0; j < data.k; ++j) {
    csv << "pred_" << j << (j + 1 < data.k ? "," : "\n");
  }
  for (int i = 0; i < data.n; ++i) {
    for (int j = 0; j < data.k; ++j) {
      csv << data.targets[static_cast<std::size_t>(i) * data.k + j] << ",";
    }
    for (int j = 0; j < data.k; ++j) {
      csv << pred[static_cast<std::size_t>(i) * data.k + j]
          << (j + 1 < data.k ? "," : "\n");
    }
  }
  double pos_r2 = (r2[0] + r2[1]) / 2.0;
  double distractor_r2 = 0.0;
  for (int j = 2; j < data.k; ++j) distractor_r2 += r2[j];
  distractor_r2 /= (data.k - 2);
  json rec{{"event", "probe"},
           {"position_r2", pos_r2},
           {"distractor_r2", distractor_r2}};
  std::cout << rec.dump() << "\n";
  return 0;
}

int run_pca(const RunConfig& cfg, const std::string& ckpt_path,
            int episodes) {
  const auto ckpt = repo::ckpt::load_checkpoint(ckpt_path);
  auto trainer = trainer_from_checkpoint(ckpt, nullptr);
  const auto domain = repo::config::domain_for_task(cfg.task, cfg.seed + 555);
  const auto data = collect_probe_data(*trainer, domain, episodes, cfg.seed);
  const auto pca = repo::diag::pca_top2(data.latents, data.n, data.d);
  fs::create_directories(cfg.out_dir);
  std::ofstream csv(fs::path(cfg.out_dir) / "pca.csv");
  csv << "pc1,pc2\n";
  for (int i = 0; i < data.n; ++i) {
    csv << pca.projections[2 * i] << "," << pca.projections[2 * i + 1]
        << "\n";
  }
  json rec{{"event", "pca"},
           {"explained_1", pca.explained[0]},
           {"explained_2", pca.explained[1]},
           {"degenerate", pca.degenerate}};
  std::cout << rec.dump() << "\n";
  return 0;
}

int run_dump_frames(const RunConfig& cfg, int episodes) {
  const auto domain = repo::config::domain_for_task(cfg.task, cfg.seed);
  repo::worlds::PointmassEnv env(domain);
  repo::Rng rng(cfg.seed + 41);
  const fs::path dir = fs::path(cfg.out_dir) / "frames";
  fs::create_directories(dir);
  int frame = 0;
  char name[32];
  for (int i = 0; i < episodes; ++i) {
    auto obs = env.reset();
    for (int t = 0; t < repo::worlds::kEpisodeLen; ++t) {
      std::snprintf(name, sizeof name, "frame_%05d.pgm", frame++);
      repo::worlds::write_pgm(obs, (dir / name).string());
      obs = env.step({rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)}).obs;
    }
  }
  std::cout << "wrote " << frame << " frames to " << dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"latent world-model training, adaptation, and diagnostics"};
  app.require_subcommand(1);

  CommonFlags flags;
  std::string ckpt_path;
  int cycles = 50;
  int episodes = 10;
  bool mlp_probe = false;

  auto* train = app.add_subcommand("train", "train an agent");
  add_common(train, flags);

  auto* adapt = app.add_subcommand("adapt", "test-time encoder adaptation");
  add_common(adapt, flags);
  adapt->add_option("--ckpt", ckpt_path, "source checkpoint")->required();
  adapt->add_option("--cycles", cycles, "adaptation cycles");

  auto* toy = app.add_subcommand("toy-adapt", "2-D toy adaptation study");
  add_common(toy, flags);

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval, flags);
  eval->add_option("--ckpt", ckpt_path, "checkpoint")->required();
  eval->add_option("--episodes", episodes, "evaluation episodes");

  auto* probe = app.add_subcommand("probe", "ground-truth factor probes");
  add_common(probe, flags);
  probe->add_option("--ckpt", ckpt_path, "checkpoint")->required();
  probe->add_option("--episodes", episodes, "episodes to collect");
  probe->add_flag("--mlp", mlp_probe, "use the mlp probe");

  auto* pca = app.add_subcommand("pca", "top-2 latent projections");
  add_common(pca, flags);
  pca->add_option("--ckpt", ckpt_path, "checkpoint")->required();
  pca->add_option("--episodes", episodes, "episodes to collect");

  auto* frames = app.add_subcommand("dump-frames", "write observation PGMs");
  add_common(frames, flags);
  frames->add_option("--episodes", episodes, "episodes to render");

  CLI11_PARSE(app, argc, argv);

  try {
    const RunConfig cfg = resolve_config(flags);
    if (train->parsed()) return run_train(cfg);
    if (adapt->parsed()) return run_adapt(cfg, ckpt_path, cycles);
    if (toy->parsed()) return run_toy_adapt(cfg);
    if (eval->parsed()) return run_eval(cfg, ckpt_path, episodes);
    if (probe->parsed()) return run_probe(cfg, ckpt_path, episodes, mlp_probe);
    if (pca->parsed()) return run_pca(cfg, ckpt_path, episodes);
    if (frames->parsed()) return run_dump_frames(cfg, episodes);
  } catch (const repo::config::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const repo::ckpt::CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
