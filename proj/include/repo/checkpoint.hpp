#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "repo/trainer.hpp"

namespace repo::ckpt {

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NamedTensor {
  std::string name;
  std::vector<int> shape;
  std::vector<double> data;
};

/// Bit-exact run snapshot: config text, parameters by store, dual state,
/// RNG streams, and progress counters.
struct Checkpoint {
  std::string config_text;
  std::vector<NamedTensor> model, actor, critic;
  double beta_raw{0.0};
  double beta_step{0.0};
  std::string train_rng, collect_rng;
  std::int64_t updates{0};
  std::int64_t env_steps{0};
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

Checkpoint snapshot(trainer::Trainer& t, const std::string& config_text);
/// Restores parameters, duals, RNG streams, and counters; shape mismatch
/// or missing tensors throw.
void restore(trainer::Trainer& t, const Checkpoint& ckpt);

/// Copies tensor values into an existing store (names and shapes must
/// match exactly).
void load_store(num::ParamStore& store,
                const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> dump_store(const num::ParamStore& store);

}  // namespace repo::ckpt
