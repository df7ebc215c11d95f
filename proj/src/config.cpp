#include "repo/config.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>
#include <vector>

namespace repo::config {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

struct Field {
  std::string name;  // "section.key" or bare "key"
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

long long parse_int(const std::string& name, const std::string& raw) {
  std::size_t pos = 0;
  long long v = 0;
  try {
    v = std::stoll(raw, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != raw.size() || raw.empty()) {
    throw ConfigError(name + ": expected integer, got '" + raw + "'");
  }
  return v;
}

double parse_double(const std::string& name, const std::string& raw) {
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(raw, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != raw.size() || raw.empty()) {
    throw ConfigError(name + ": expected number, got '" + raw + "'");
  }
  return v;
}

bool parse_bool(const std::string& name, const std::string& raw) {
  if (raw == "true") return true;
  if (raw == "false") return false;
  throw ConfigError(name + ": expected true/false, got '" + raw + "'");
}

std::string parse_string(const std::string& name, const std::string& raw) {
  if (raw.size() >= 2 && raw.front() == '"' && raw.back() == '"') {
    return raw.substr(1, raw.size() - 2);
  }
  throw ConfigError(name + ": expected quoted string, got '" + raw + "'");
}

std::string format_double(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

Field make_int(const std::string& name,
               std::function<int&(RunConfig&)> ref) {
  return {name,
          [name, ref](RunConfig& c, const std::string& raw) {
            ref(c) = static_cast<int>(parse_int(name, raw));
          },
          [ref](const RunConfig& c) {
            return std::to_string(ref(const_cast<RunConfig&>(c)));
          }};
}

Field make_u64(const std::string& name,
               std::function<std::uint64_t&(RunConfig&)> ref) {
  return {name,
          [name, ref](RunConfig& c, const std::string& raw) {
            ref(c) = static_cast<std::uint64_t>(parse_int(name, raw));
          },
          [ref](const RunConfig& c) {
            return std::to_string(ref(const_cast<RunConfig&>(c)));
          }};
}

Field make_double(const std::string& name,
                  std::function<double&(RunConfig&)> ref) {
  return {name,
          [name, ref](RunConfig& c, const std::string& raw) {
            ref(c) = parse_double(name, raw);
          },
          [ref](const RunConfig& c) {
            return format_double(ref(const_cast<RunConfig&>(c)));
          }};
}

Field make_bool(const std::string& name,
                std::function<bool&(RunConfig&)> ref) {
  return {name,
          [name, ref](RunConfig& c, const std::string& raw) {
            ref(c) = parse_bool(name, raw);
          },
          [ref](const RunConfig& c) {
            return ref(const_cast<RunConfig&>(c)) ? "true" : "false";
          }};
}

Field make_string(const std::string& name,
                  std::function<std::string&(RunConfig&)> ref) {
  return {name,
          [name, ref](RunConfig& c, const std::string& raw) {
            ref(c) = parse_string(name, raw);
          },
          [ref](const RunConfig& c) {
            return "\"" + ref(const_cast<RunConfig&>(c)) + "\"";
          }};
}

Field make_objective(const std::string& name,
                     std::function<adapt::AdaptObjective&(RunConfig&)> ref) {
  return {name,
          [name, ref](RunConfig& c, const std::string& raw) {
            const auto v = parse_string(name, raw);
            if (v == "support") {
              ref(c) = adapt::AdaptObjective::kSupport;
            } else if (v == "distribution-matching") {
              ref(c) = adapt::AdaptObjective::kDistributionMatching;
            } else {
              throw ConfigError(name + ": unknown objective '" + v + "'");
            }
          },
          [ref](const RunConfig& c) -> std::string {
            return ref(const_cast<RunConfig&>(c)) ==
                           adapt::AdaptObjective::kSupport
                       ? "\"support\""
                       : "\"distribution-matching\"";
          }};
}

void apply_packaged_values(RunConfig& c) {
  if (c.preset == "paper") {
    auto& m = c.trainer.model;
    m.belief_dim = 200;
    m.latent_dim = 30;
    m.embed_dim = 1024;
    m.encoder_hidden = 200;
    m.dist_hidden = 200;
    m.head_hidden = 200;
    m.head_layers = 4;
    auto& b = c.trainer.behavior;
    b.actor_hidden = 200;
    b.actor_layers = 4;
    b.critic_hidden = 200;
    b.critic_layers = 4;
    b.actor_lr = 8e-5;
    b.critic_lr = 8e-5;
    c.trainer.schedule.batch = 50;
    c.trainer.schedule.segment_len = 50;
    c.trainer.schedule.updates_per_cycle = 100;
    c.trainer.bottleneck.beta_lr = 1e-4;
    c.adaptation.batch = 2500;
    c.adaptation.ratio_hidden = 256;
    c.toy.ratio_hidden = 256;
    c.toy.batch = 2500;
  }
  auto set_table = [&](double beta0, double eps, double r) {
    c.trainer.bottleneck.beta_init = beta0;
    c.trainer.bottleneck.epsilon = eps;
    c.trainer.bottleneck.balance_ratio = r;
  };
  if (c.family == "walker" || c.family == "cheetah" ||
      c.family == "turtlebot") {
    set_table(1e-5, 3.0, 5.0);
  } else if (c.family == "hopper") {
    set_table(1e-4, 1.0, 3.0);
  } else if (c.family == "cartpole" || c.family == "maniskill") {
    set_table(1e-4, 3.0, 4.0);
  } else if (c.family != "pointmass") {
    throw ConfigError("unknown task family '" + c.family + "'");
  }
}

const std::vector<Field>& registry() {
  static const std::vector<Field> fields = [] {
    std::vector<Field> f;
    auto r = [](auto member) {
      return [member](RunConfig& c) -> auto& { return member(c); };
    };
    f.push_back(make_string("task", r([](RunConfig& c) -> std::string& {
      return c.task;
    })));
    f.push_back(make_string("preset", r([](RunConfig& c) -> std::string& {
      return c.preset;
    })));
    f.push_back(make_string("family", r([](RunConfig& c) -> std::string& {
      return c.family;
    })));
    f.push_back(make_u64("seed", r([](RunConfig& c) -> std::uint64_t& {
      return c.seed;
    })));
    f.push_back(make_string("out_dir", r([](RunConfig& c) -> std::string& {
      return c.out_dir;
    })));
    f.push_back(make_int("eval_episodes", r([](RunConfig& c) -> int& {
      return c.eval_episodes;
    })));
    f.push_back(make_int("eval_every_cycles", r([](RunConfig& c) -> int& {
      return c.eval_every_cycles;
    })));
    f.push_back(make_int("checkpoint_every_cycles",
                         r([](RunConfig& c) -> int& {
                           return c.checkpoint_every_cycles;
                         })));

    auto mi = [&f](const char* name, std::function<int&(RunConfig&)> ref) {
      f.push_back(make_int(name, std::move(ref)));
    };
    auto md = [&f](const char* name, std::function<double&(RunConfig&)> ref) {
      f.push_back(make_double(name, std::move(ref)));
    };
    auto mb = [&f](const char* name, std::function<bool&(RunConfig&)> ref) {
      f.push_back(make_bool(name, std::move(ref)));
    };

    mi("model.embed_dim", [](RunConfig& c) -> int& { return c.trainer.model.embed_dim; });
    mi("model.belief_dim", [](RunConfig& c) -> int& { return c.trainer.model.belief_dim; });
    mi("model.latent_dim", [](RunConfig& c) -> int& { return c.trainer.model.latent_dim; });
    mi("model.encoder_hidden", [](RunConfig& c) -> int& { return c.trainer.model.encoder_hidden; });
    mi("model.encoder_layers", [](RunConfig& c) -> int& { return c.trainer.model.encoder_layers; });
    mi("model.dist_hidden", [](RunConfig& c) -> int& { return c.trainer.model.dist_hidden; });
    mi("model.head_hidden", [](RunConfig& c) -> int& { return c.trainer.model.head_hidden; });
    mi("model.head_layers", [](RunConfig& c) -> int& { return c.trainer.model.head_layers; });
    mb("model.recon_enabled", [](RunConfig& c) -> bool& { return c.trainer.model.recon_enabled; });

    md("bottleneck.epsilon", [](RunConfig& c) -> double& { return c.trainer.bottleneck.epsilon; });
    md("bottleneck.beta_init", [](RunConfig& c) -> double& { return c.trainer.bottleneck.beta_init; });
    md("bottleneck.beta_lr", [](RunConfig& c) -> double& { return c.trainer.bottleneck.beta_lr; });
    md("bottleneck.balance_ratio", [](RunConfig& c) -> double& { return c.trainer.bottleneck.balance_ratio; });

    mi("behavior.horizon", [](RunConfig& c) -> int& { return c.trainer.behavior.horizon; });
    md("behavior.gamma", [](RunConfig& c) -> double& { return c.trainer.behavior.gamma; });
    md("behavior.lambda", [](RunConfig& c) -> double& { return c.trainer.behavior.lambda; });
    md("behavior.actor_lr", [](RunConfig& c) -> double& { return c.trainer.behavior.actor_lr; });
    md("behavior.critic_lr", [](RunConfig& c) -> double& { return c.trainer.behavior.critic_lr; });
    mi("behavior.actor_hidden", [](RunConfig& c) -> int& { return c.trainer.behavior.actor_hidden; });
    mi("behavior.actor_layers", [](RunConfig& c) -> int& { return c.trainer.behavior.actor_layers; });
    mi("behavior.critic_hidden", [](RunConfig& c) -> int& { return c.trainer.behavior.critic_hidden; });
    mi("behavior.critic_layers", [](RunConfig& c) -> int& { return c.trainer.behavior.critic_layers; });
    md("behavior.entropy_eta", [](RunConfig& c) -> double& { return c.trainer.behavior.entropy_eta; });

    mi("schedule.seed_episodes", [](RunConfig& c) -> int& { return c.trainer.schedule.seed_episodes; });
    mi("schedule.updates_per_cycle", [](RunConfig& c) -> int& { return c.trainer.schedule.updates_per_cycle; });
    mi("schedule.env_steps_per_cycle", [](RunConfig& c) -> int& { return c.trainer.schedule.env_steps_per_cycle; });
    mi("schedule.batch", [](RunConfig& c) -> int& { return c.trainer.schedule.batch; });
    mi("schedule.segment_len", [](RunConfig& c) -> int& { return c.trainer.schedule.segment_len; });
    mi("schedule.total_env_steps", [](RunConfig& c) -> int& { return c.trainer.schedule.total_env_steps; });
    mi("schedule.imagine_starts", [](RunConfig& c) -> int& { return c.trainer.schedule.imagine_starts; });

    md("trainer.model_lr", [](RunConfig& c) -> double& { return c.trainer.model_lr; });
    md("trainer.grad_clip", [](RunConfig& c) -> double& { return c.trainer.grad_clip; });
    mb("trainer.recon_ablation", [](RunConfig& c) -> bool& { return c.trainer.recon_ablation; });

    mi("adaptation.updates_per_cycle", [](RunConfig& c) -> int& { return c.adaptation.updates_per_cycle; });
    mi("adaptation.env_steps_per_cycle", [](RunConfig& c) -> int& { return c.adaptation.env_steps_per_cycle; });
    mi("adaptation.batch", [](RunConfig& c) -> int& { return c.adaptation.batch; });
    mi("adaptation.calibration_trajectories", [](RunConfig& c) -> int& { return c.adaptation.calibration_trajectories; });
    mi("adaptation.seed_episodes", [](RunConfig& c) -> int& { return c.adaptation.seed_episodes; });
    md("adaptation.encoder_lr", [](RunConfig& c) -> double& { return c.adaptation.encoder_lr; });
    md("adaptation.tau_lr", [](RunConfig& c) -> double& { return c.adaptation.tau_lr; });
    md("adaptation.f_lr", [](RunConfig& c) -> double& { return c.adaptation.f_lr; });
    md("adaptation.lambda_step", [](RunConfig& c) -> double& { return c.adaptation.lambda_step; });
    md("adaptation.lambda_init", [](RunConfig& c) -> double& { return c.adaptation.lambda_init; });
    md("adaptation.calibration_weight", [](RunConfig& c) -> double& { return c.adaptation.calibration_weight; });
    mi("adaptation.ratio_hidden", [](RunConfig& c) -> int& { return c.adaptation.ratio_hidden; });
    mb("adaptation.use_vdb", [](RunConfig& c) -> bool& { return c.adaptation.use_vdb; });
    mb("adaptation.use_calibration", [](RunConfig& c) -> bool& { return c.adaptation.use_calibration; });
    f.push_back(make_objective("adaptation.objective",
                               [](RunConfig& c) -> adapt::AdaptObjective& {
                                 return c.adaptation.objective;
                               }));

    f.push_back(make_objective("toy.objective",
                               [](RunConfig& c) -> adapt::AdaptObjective& {
                                 return c.toy.objective;
                               }));
    mb("toy.use_calibration", [](RunConfig& c) -> bool& { return c.toy.use_calibration; });
    mb("toy.skewed_calibration", [](RunConfig& c) -> bool& { return c.toy.skewed_calibration; });
    mb("toy.use_pairwise", [](RunConfig& c) -> bool& { return c.toy.use_pairwise; });
    mi("toy.iterations", [](RunConfig& c) -> int& { return c.toy.iterations; });
    mi("toy.batch", [](RunConfig& c) -> int& { return c.toy.batch; });
    mi("toy.calibration_points", [](RunConfig& c) -> int& { return c.toy.calibration_points; });
    mi("toy.train_samples", [](RunConfig& c) -> int& { return c.toy.train_samples; });
    mi("toy.test_samples", [](RunConfig& c) -> int& { return c.toy.test_samples; });
    mi("toy.encoder_hidden", [](RunConfig& c) -> int& { return c.toy.encoder_hidden; });
    mi("toy.ratio_hidden", [](RunConfig& c) -> int& { return c.toy.ratio_hidden; });
    md("toy.encoder_lr", [](RunConfig& c) -> double& { return c.toy.encoder_lr; });
    md("toy.tau_lr", [](RunConfig& c) -> double& { return c.toy.tau_lr; });
    md("toy.f_lr", [](RunConfig& c) -> double& { return c.toy.f_lr; });
    md("toy.lambda_step", [](RunConfig& c) -> double& { return c.toy.lambda_step; });
    md("toy.lambda_init", [](RunConfig& c) -> double& { return c.toy.lambda_init; });
    md("toy.calibration_weight", [](RunConfig& c) -> double& { return c.toy.calibration_weight; });
    md("toy.pairwise_weight", [](RunConfig& c) -> double& { return c.toy.pairwise_weight; });
    return f;
  }();
  return fields;
}

const Field& find_field(const std::string& name) {
  for (const auto& f : registry()) {
    if (f.name == name) return f;
  }
  throw ConfigError("unknown config key '" + name + "'");
}

}  // namespace

RunConfig default_config() {
  RunConfig c;
  apply_packaged_values(c);
  return c;
}

void apply_override(RunConfig& cfg, const std::string& key,
                    const std::string& value) {
  const Field& field = find_field(key);
  field.set(cfg, trim(value));
  if (key == "preset" || key == "family") {
    if (cfg.preset != "desk" && cfg.preset != "paper") {
      throw ConfigError("unknown preset '" + cfg.preset + "'");
    }
    apply_packaged_values(cfg);
  }
}

RunConfig parse_config(const std::string& text, const RunConfig& base) {
  RunConfig cfg = base;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw ConfigError("line " + std::to_string(lineno) +
                          ": malformed section header");
      }
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) +
                        ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    apply_override(cfg, section.empty() ? key : section + "." + key, value);
  }
  validate_config(cfg);
  return cfg;
}

RunConfig parse_config(const std::string& text) {
  return parse_config(text, default_config());
}

std::string serialize_config(const RunConfig& cfg) {
  std::ostringstream out;
  std::string section;
  for (const auto& f : registry()) {
    const auto dot = f.name.find('.');
    const std::string sec = dot == std::string::npos ? "" : f.name.substr(0, dot);
    const std::string key = dot == std::string::npos ? f.name : f.name.substr(dot + 1);
    if (sec != section) {
      out << "\n[" << sec << "]\n";
      section = sec;
    }
    out << key << " = " << f.get(cfg) << "\n";
  }
  return out.str();
}

void validate_config(const RunConfig& cfg) {
  static const char* kTasks[] = {"pointmass-none", "pointmass-static",
                                 "pointmass-dynamic", "pointmass-shifted",
                                 "toy2d"};
  if (std::find_if(std::begin(kTasks), std::end(kTasks), [&](const char* t) {
        return cfg.task == t;
      }) == std::end(kTasks)) {
    throw ConfigError("unknown task '" + cfg.task + "'");
  }
  if (cfg.preset != "desk" && cfg.preset != "paper") {
    throw ConfigError("unknown preset '" + cfg.preset + "'");
  }
  const auto& m = cfg.trainer.model;
  if (m.embed_dim < 1 || m.belief_dim < 1 || m.latent_dim < 1) {
    throw ConfigError("model dimensions must be positive");
  }
  if (cfg.trainer.bottleneck.epsilon <= 0.0) {
    throw ConfigError("bottleneck.epsilon must be positive");
  }
  if (cfg.trainer.schedule.batch < 1 || cfg.trainer.schedule.segment_len < 2) {
    throw ConfigError("schedule batch/segment_len too small");
  }
  if (cfg.trainer.behavior.horizon < 1) {
    throw ConfigError("behavior.horizon must be >= 1");
  }
}

worlds::DomainSpec domain_for_task(const std::string& task,
                                   std::uint64_t seed) {
  worlds::DomainSpec spec;
  spec.seed = seed;
  if (task == "pointmass-none") {
    spec.background_mode = worlds::BackgroundMode::kNone;
  } else if (task == "pointmass-static") {
    spec.background_mode = worlds::BackgroundMode::kStatic;
  } else if (task == "pointmass-dynamic") {
    spec.background_mode = worlds::BackgroundMode::kDynamic;
  } else if (task == "pointmass-shifted") {
    spec.background_mode = worlds::BackgroundMode::kStatic;
    spec.pattern_pool = worlds::PatternPool::kShifted;
  } else {
    throw ConfigError("task '" + task + "' has no pixel domain");
  }
  return spec;
}

}  // namespace repo::config
