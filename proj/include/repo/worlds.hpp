#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "repo/rng.hpp"

namespace repo::worlds {

inline constexpr int kImageSize = 16;
inline constexpr int kObsDim = kImageSize * kImageSize;  // flattened 16x16
inline constexpr int kDistractorCols = 6;                // left columns
inline constexpr int kActionDim = 2;
inline constexpr int kFactorDim = 2 + kImageSize;  // agent pos + row means
inline constexpr int kEpisodeLen = 100;
inline constexpr int kPatternsPerPool = 64;
inline constexpr double kGoalX = 0.8;
inline constexpr double kGoalY = 0.8;

enum class BackgroundMode { kNone, kStatic, kDynamic };
enum class PatternPool { kTrain, kShifted };

struct DomainSpec {
  BackgroundMode background_mode{BackgroundMode::kNone};
  PatternPool pattern_pool{PatternPool::kTrain};
  std::uint64_t seed{0};
};

struct PointmassState {
  std::array<double, 2> agent_pos{0.5, 0.5};
  std::array<double, 2> goal_pos{kGoalX, kGoalY};
  std::vector<double> distractor_state;  // per-column walk values (dynamic)
  int pattern_index{-1};                 // static mode pattern id
  int t{0};
};

/// One rollout: aligned (observation, action, reward, factors) sequences.
struct Episode {
  int length{0};
  int obs_dim{kObsDim};
  int action_dim{kActionDim};
  int factor_dim{kFactorDim};
  std::vector<double> observations;
  std::vector<double> actions;
  std::vector<double> rewards;
  std::vector<double> factors;

  const double* obs(int t) const { return &observations[t * obs_dim]; }
  const double* action(int t) const { return &actions[t * action_dim]; }
  const double* factor(int t) const { return &factors[t * factor_dim]; }
};

double pointmass_reward(const std::array<double, 2>& agent,
                        const std::array<double, 2>& goal);

/// Deterministic pattern for (pool, index); values on 4 gray levels.
std::vector<double> pattern_pixels(PatternPool pool, int index);

std::vector<double> render(const PointmassState& state, const DomainSpec& spec);

/// Renders the same underlying state under two specs that differ only in
/// background fields; agent/goal pixels are identical across the pair.
std::pair<std::vector<double>, std::vector<double>> paired_render(
    const PointmassState& state, const DomainSpec& a, const DomainSpec& b);

/// Ground-truth factors for probing: agent position plus the mean gray
/// level of each distractor-region row.
std::vector<double> ground_truth_factors(const PointmassState& state,
                                         const DomainSpec& spec);

class PointmassEnv {
 public:
  explicit PointmassEnv(const DomainSpec& spec);

  std::vector<double> reset();
  struct StepResult {
    std::vector<double> obs;
    double reward;
  };
  StepResult step(const std::array<double, 2>& action);

  const PointmassState& state() const { return state_; }
  const DomainSpec& spec() const { return spec_; }
  std::vector<double> factors() const {
    return ground_truth_factors(state_, spec_);
  }

 private:
  DomainSpec spec_;
  PointmassState state_;
  Rng reset_rng_;
  Rng distractor_rng_;
  int episode_count_{0};
};

/// Proportional goal-seeking controller used for calibration collection.
std::array<double, 2> expert_action(const PointmassState& state);

struct ToySample {
  std::vector<double> latents;       // n x 2
  std::vector<double> observations;  // n x 2
};

enum class ToyDomain { kTrain, kTest };

inline constexpr double kToyEmissionScale = 0.025;

/// Train latents uniform on [0,6]^2; test on the half-rectangle
/// [0,3] x [0,6]. Emission 0.025 * e^x coordinatewise.
ToySample toy_world_sample(int n, ToyDomain domain, Rng& rng);

double toy_emission(double x);
double toy_true_encoder(double o);  // log(o / 0.025)

// Episode persistence (little-endian binary record) and PGM frame dumps.
void save_episode(const Episode& ep, const std::string& path);
Episode load_episode(const std::string& path);
void write_pgm(const std::vector<double>& frame, const std::string& path);

}  // namespace repo::worlds
