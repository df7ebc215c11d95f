#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include "repo/adaptation.hpp"
#include "repo/trainer.hpp"
#include "repo/worlds.hpp"

namespace repo::config {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  std::string task{"pointmass-dynamic"};
  std::string preset{"desk"};
  std::string family{"pointmass"};  // App.-table row for (beta0, epsilon, r)
  std::uint64_t seed{0};
  std::string out_dir{"out"};
  int eval_episodes{8};
  int eval_every_cycles{5};
  int checkpoint_every_cycles{25};

  trainer::TrainerConfig trainer;
  adapt::AdaptConfig adaptation;
  adapt::ToyAdaptConfig toy;
};

/// Desk defaults with preset/family values applied.
RunConfig default_config();

/// Parses a key=value TOML subset ([section], strings, numbers, booleans,
/// # comments). Unknown sections or keys are hard errors. `base` supplies
/// defaults; preset/family keys re-apply their packaged values before the
/// file's explicit keys override them.
RunConfig parse_config(const std::string& text, const RunConfig& base);
RunConfig parse_config(const std::string& text);

/// Applies one `key = value` pair (key optionally `section.key`).
void apply_override(RunConfig& cfg, const std::string& key,
                    const std::string& value);

std::string serialize_config(const RunConfig& cfg);

void validate_config(const RunConfig& cfg);

worlds::DomainSpec domain_for_task(const std::string& task,
                                   std::uint64_t seed);

}  // namespace repo::config
