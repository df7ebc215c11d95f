#include <cstdio>
#include <fstream>
#include <string>

#include "doctest.h"
#include "json.hpp"
#include "repo/checkpoint.hpp"
#include "repo/config.hpp"
#include "repo/metrics.hpp"

using namespace repo;
using namespace repo::config;

TEST_CASE("defaults validate and serialize-parse is a fixed point") {
  auto cfg = default_config();
  validate_config(cfg);
  auto text = serialize_config(cfg);
  auto back = parse_config(text);
  CHECK(serialize_config(back) == text);
  auto twice = parse_config(serialize_config(back));
  CHECK(serialize_config(twice) == text);
}

TEST_CASE("unknown keys and sections are hard errors") {
  CHECK_THROWS_AS(parse_config("sneaky_typo = 3\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[nosuchsection]\nx = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[trainer]\nbogus = true\n"), ConfigError);
  auto cfg = default_config();
  CHECK_THROWS_AS(apply_override(cfg, "nope", "1"), ConfigError);
}

TEST_CASE("file values override defaults") {
  auto cfg = parse_config(
      "task = \"pointmass-static\"\n"
      "seed = 9\n"
      "[trainer]\n"
      "model_lr = 0.001\n"
      "[bottleneck]\n"
      "epsilon = 1.5\n");
  CHECK(cfg.task == "pointmass-static");
  CHECK(cfg.seed == 9);
  CHECK(cfg.trainer.model_lr == 1e-3);
  CHECK(cfg.trainer.bottleneck.epsilon == 1.5);
}

TEST_CASE("paper preset and family tables") {
  auto cfg = parse_config("preset = \"paper\"\nfamily = \"walker\"\n");
  CHECK(cfg.trainer.model.belief_dim == 200);
  CHECK(cfg.trainer.model.latent_dim == 30);
  CHECK(cfg.trainer.model.embed_dim == 1024);
  CHECK(cfg.trainer.schedule.batch == 50);
  CHECK(cfg.trainer.schedule.segment_len == 50);
  CHECK(cfg.trainer.bottleneck.beta_lr == 1e-4);
  CHECK(cfg.trainer.bottleneck.beta_init == 1e-5);
  CHECK(cfg.trainer.bottleneck.epsilon == 3.0);
  CHECK(cfg.trainer.bottleneck.balance_ratio == 5.0);
  CHECK(cfg.adaptation.batch == 2500);

  auto hopper = parse_config("family = \"hopper\"\n");
  CHECK(hopper.trainer.bottleneck.beta_init == 1e-4);
  CHECK(hopper.trainer.bottleneck.epsilon == 1.0);
  CHECK(hopper.trainer.bottleneck.balance_ratio == 3.0);
}

TEST_CASE("explicit keys beat packaged preset values") {
  auto cfg = parse_config(
      "preset = \"paper\"\n"
      "family = \"walker\"\n"
      "[bottleneck]\n"
      "epsilon = 0.5\n");
  CHECK(cfg.trainer.bottleneck.epsilon == 0.5);
  CHECK(cfg.trainer.bottleneck.beta_init == 1e-5);  // family value kept
}

TEST_CASE("validation rejects bad values") {
  auto cfg = default_config();
  cfg.task = "frisbee";
  CHECK_THROWS_AS(validate_config(cfg), ConfigError);

  cfg = default_config();
  cfg.trainer.bottleneck.epsilon = -1.0;
  CHECK_THROWS_AS(validate_config(cfg), ConfigError);

  cfg = default_config();
  cfg.trainer.schedule.segment_len = 1;
  CHECK_THROWS_AS(validate_config(cfg), ConfigError);
}

TEST_CASE("tasks map to domains") {
  auto none = domain_for_task("pointmass-none", 3);
  CHECK(none.background_mode == worlds::BackgroundMode::kNone);
  auto dyn = domain_for_task("pointmass-dynamic", 3);
  CHECK(dyn.background_mode == worlds::BackgroundMode::kDynamic);
  auto stat = domain_for_task("pointmass-static", 3);
  CHECK(stat.background_mode == worlds::BackgroundMode::kStatic);
  CHECK(stat.pattern_pool == worlds::PatternPool::kTrain);
  auto shifted = domain_for_task("pointmass-shifted", 3);
  CHECK(shifted.background_mode == worlds::BackgroundMode::kStatic);
  CHECK(shifted.pattern_pool == worlds::PatternPool::kShifted);
  CHECK_THROWS(domain_for_task("toy2d", 3));
}

namespace {

trainer::TrainerConfig tiny_trainer_config() {
  trainer::TrainerConfig cfg;
  cfg.model.obs_dim = worlds::kObsDim;
  cfg.model.embed_dim = 12;
  cfg.model.belief_dim = 12;
  cfg.model.latent_dim = 6;
  cfg.model.encoder_hidden = 24;
  cfg.model.dist_hidden = 24;
  cfg.model.head_hidden = 16;
  cfg.schedule.seed_episodes = 1;
  cfg.schedule.updates_per_cycle = 2;
  cfg.schedule.env_steps_per_cycle = 100;
  cfg.schedule.batch = 4;
  cfg.schedule.segment_len = 8;
  cfg.behavior.horizon = 4;
  cfg.seed = 77;
  return cfg;
}

}  // namespace

TEST_CASE("checkpoint round trip is bit exact and resumes the rng streams") {
  auto cfg = tiny_trainer_config();
  worlds::DomainSpec domain;
  domain.background_mode = worlds::BackgroundMode::kDynamic;
  domain.seed = 51;

  trainer::Trainer t(cfg, domain);
  t.seed_buffer();
  t.train_cycle();

  auto snap = ckpt::snapshot(t, "config-echo");
  const std::string path = "/tmp/repo_test_ckpt.bin";
  ckpt::save_checkpoint(path, snap);
  auto loaded = ckpt::load_checkpoint(path);
  std::remove(path.c_str());

  CHECK(loaded.config_text == snap.config_text);
  CHECK(loaded.beta_raw == snap.beta_raw);
  CHECK(loaded.updates == snap.updates);
  CHECK(loaded.env_steps == snap.env_steps);
  REQUIRE(loaded.model.size() == snap.model.size());
  for (std::size_t i = 0; i < snap.model.size(); ++i) {
    CHECK(loaded.model[i].name == snap.model[i].name);
    CHECK(loaded.model[i].shape == snap.model[i].shape);
    CHECK(loaded.model[i].data == snap.model[i].data);
  }
  CHECK(loaded.train_rng == snap.train_rng);

  // restoring into a fresh trainer reproduces the same next update exactly
  auto continue_run = [&](trainer::Trainer& tr) {
    tr.buffer().add(t.buffer().episodes().front());
    return tr.update_step();
  };
  trainer::Trainer t2(cfg, domain);
  ckpt::restore(t2, loaded);
  CHECK(t2.model_params().checksum() == t.model_params().checksum());
  CHECK(t2.total_updates() == t.total_updates());

  auto m1 = continue_run(t2);
  trainer::Trainer t3(cfg, domain);
  ckpt::restore(t3, loaded);
  auto m2 = continue_run(t3);
  CHECK(m1.model_loss == m2.model_loss);
  CHECK(m1.raw_kl == m2.raw_kl);
}

TEST_CASE("checkpoint rejects corrupted input and mismatched stores") {
  const std::string path = "/tmp/repo_test_ckpt_bad.bin";
  {
    std::ofstream out(path, std::ios::binary);
    out << "NOPE this is not a checkpoint";
  }
  CHECK_THROWS_AS(ckpt::load_checkpoint(path), ckpt::CheckpointError);
  std::remove(path.c_str());
  CHECK_THROWS_AS(ckpt::load_checkpoint("/tmp/no_such_file_repo.bin"),
                  ckpt::CheckpointError);

  // shape mismatch on restore
  auto cfg = tiny_trainer_config();
  worlds::DomainSpec domain;
  domain.seed = 52;
  trainer::Trainer t(cfg, domain);
  auto snap = ckpt::snapshot(t, "");
  snap.model[0].shape[0] += 1;
  trainer::Trainer t2(cfg, domain);
  CHECK_THROWS_AS(ckpt::restore(t2, snap), ckpt::CheckpointError);
}

TEST_CASE("random parameter sets survive the tensor dump round trip") {
  Rng rng(61);
  for (int trial = 0; trial < 20; ++trial) {
    num::ParamStore store;
    int count = 1 + rng.uniform_int(5);
    for (int i = 0; i < count; ++i) {
      int r = 1 + rng.uniform_int(12), c = 1 + rng.uniform_int(12);
      store.add("t" + std::to_string(i),
                num::make_tensor({r, c},
                                 rng.normal_vec(static_cast<std::size_t>(r) * c),
                                 true));
    }
    ckpt::Checkpoint ck;
    ck.model = ckpt::dump_store(store);
    const std::string path = "/tmp/repo_test_ckpt_prop.bin";
    ckpt::save_checkpoint(path, ck);
    auto back = ckpt::load_checkpoint(path);
    std::remove(path.c_str());
    REQUIRE(back.model.size() == ck.model.size());
    for (std::size_t i = 0; i < ck.model.size(); ++i)
      CHECK(back.model[i].data == ck.model[i].data);  // bit exact
  }
}

TEST_CASE("metrics writer emits one valid json object per line") {
  const std::string path = "/tmp/repo_test_metrics.jsonl";
  std::remove(path.c_str());
  {
    metrics::MetricsWriter w(path);
    w.write({{"event", "eval"}, {"value", 1.5}});
    w.write({{"step", 2}, {"loss", -0.25}});
    w.flush();
  }
  {
    // append mode: a second writer extends the same file
    metrics::MetricsWriter w(path);
    w.write({{"step", 3}});
    w.flush();
  }
  std::ifstream in(path);
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) {
    ++lines;
    auto obj = nlohmann::json::parse(line);
    CHECK(obj.is_object());
  }
  CHECK(lines == 3);
  std::remove(path.c_str());
}
