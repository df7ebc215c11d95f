#include "repo/worlds.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace repo::worlds {

namespace {

constexpr std::uint64_t kTrainPoolSeedBase = 0x1000;
constexpr std::uint64_t kShiftedPoolSeedBase = 0x9000;  // disjoint range
constexpr double kGrayLevels[4] = {0.2, 0.4, 0.6, 0.8};
constexpr double kWalkStep = 0.6;

// Agent/goal cells live in columns >= kDistractorCols, so blobs never
// overlap the distractor region.
void blob_cell(const std::array<double, 2>& pos, int& row, int& col) {
  // 2x2 blob; top-left cell ranges over rows 0..14 and cols 6..14.
  row = std::min(kImageSize - 2, static_cast<int>(pos[1] * (kImageSize - 1)));
  col = kDistractorCols +
        std::min(kImageSize - 2 - kDistractorCols,
                 static_cast<int>(pos[0] * (kImageSize - 1 - kDistractorCols)));
}

void paint_blob(std::vector<double>& img, const std::array<double, 2>& pos,
                double value) {
  int row, col;
  blob_cell(pos, row, col);
  for (int dr = 0; dr < 2; ++dr) {
    for (int dc = 0; dc < 2; ++dc) {
      double& px = img[(row + dr) * kImageSize + (col + dc)];
      px = std::max(px, value);
    }
  }
}

double quantize_walk(double v) {
  int level = std::min(3, static_cast<int>(v * 4.0));
  return 0.125 + 0.25 * level;
}

void write_u32(std::ofstream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::ifstream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_doubles(std::ofstream& os, const std::vector<double>& v) {
  os.write(reinterpret_cast<const char*>(v.data()),
           static_cast<std::streamsize>(v.size() * sizeof(double)));
}

void read_doubles(std::ifstream& is, std::vector<double>& v, std::size_t n) {
  v.resize(n);
  is.read(reinterpret_cast<char*>(v.data()),
          static_cast<std::streamsize>(n * sizeof(double)));
}

}  // namespace

double pointmass_reward(const std::array<double, 2>& agent,
                        const std::array<double, 2>& goal) {
  double dx = agent[0] - goal[0], dy = agent[1] - goal[1];
  return std::exp(-4.0 * std::sqrt(dx * dx + dy * dy));
}

std::vector<double> pattern_pixels(PatternPool pool, int index) {
  if (index < 0 || index >= kPatternsPerPool) {
    throw std::invalid_argument("pattern index out of range");
  }
  std::uint64_t base =
      pool == PatternPool::kTrain ? kTrainPoolSeedBase : kShiftedPoolSeedBase;
  Rng rng(base + static_cast<std::uint64_t>(index));
  std::vector<double> px(kDistractorCols * kImageSize);
  for (auto& v : px) v = kGrayLevels[rng.uniform_int(4)];
  return px;
}

std::vector<double> render(const PointmassState& state,
                           const DomainSpec& spec) {
  std::vector<double> img(kObsDim, 0.0);
  switch (spec.background_mode) {
    case BackgroundMode::kNone:
      break;
    case BackgroundMode::kStatic: {
      auto px = pattern_pixels(spec.pattern_pool, state.pattern_index);
      for (int r = 0; r < kImageSize; ++r) {
        for (int c = 0; c < kDistractorCols; ++c) {
          img[r * kImageSize + c] = px[r * kDistractorCols + c];
        }
      }
      break;
    }
    case BackgroundMode::kDynamic: {
      for (int c = 0; c < kDistractorCols; ++c) {
        double v = quantize_walk(state.distractor_state[c]);
        for (int r = 0; r < kImageSize; ++r) img[r * kImageSize + c] = v;
      }
      break;
    }
  }
  paint_blob(img, state.goal_pos, 0.5);
  paint_blob(img, state.agent_pos, 1.0);
  return img;
}

std::pair<std::vector<double>, std::vector<double>> paired_render(
    const PointmassState& state, const DomainSpec& a, const DomainSpec& b) {
  if (a.seed != b.seed) {
    throw std::invalid_argument(
        "paired_render: specs differ in non-background fields");
  }
  return {render(state, a), render(state, b)};
}

std::vector<double> ground_truth_factors(const PointmassState& state,
                                         const DomainSpec& spec) {
  std::vector<double> f(kFactorDim, 0.0);
  f[0] = state.agent_pos[0];
  f[1] = state.agent_pos[1];
  auto img = render(state, spec);
  for (int r = 0; r < kImageSize; ++r) {
    double s = 0.0;
    for (int c = 0; c < kDistractorCols; ++c) s += img[r * kImageSize + c];
    f[2 + r] = s / kDistractorCols;
  }
  return f;
}

PointmassEnv::PointmassEnv(const DomainSpec& spec)
    : spec_(spec),
      reset_rng_(spec.seed * 2 + 1),
      distractor_rng_(spec.seed * 2 + 0x7fffffff) {}

std::vector<double> PointmassEnv::reset() {
  state_ = PointmassState{};
  state_.agent_pos = {reset_rng_.uniform(), reset_rng_.uniform()};
  state_.goal_pos = {kGoalX, kGoalY};
  state_.t = 0;
  if (spec_.background_mode == BackgroundMode::kStatic) {
    state_.pattern_index = reset_rng_.uniform_int(kPatternsPerPool);
  } else if (spec_.background_mode == BackgroundMode::kDynamic) {
    state_.distractor_state.resize(kDistractorCols);
    for (auto& v : state_.distractor_state) v = distractor_rng_.uniform();
  }
  ++episode_count_;
  return render(state_, spec_);
}

PointmassEnv::StepResult PointmassEnv::step(
    const std::array<double, 2>& action) {
  std::array<double, 2> a = {std::clamp(action[0], -1.0, 1.0),
                             std::clamp(action[1], -1.0, 1.0)};
  state_.agent_pos[0] = std::clamp(state_.agent_pos[0] + 0.1 * a[0], 0.0, 1.0);
  state_.agent_pos[1] = std::clamp(state_.agent_pos[1] + 0.1 * a[1], 0.0, 1.0);
  if (spec_.background_mode == BackgroundMode::kDynamic) {
    // Bounded random walk on its own stream; independent of actions.
    for (auto& v : state_.distractor_state) {
      v += kWalkStep * (2.0 * distractor_rng_.uniform() - 1.0);
      if (v < 0.0) v = -v;
      if (v > 1.0) v = 2.0 - v;
    }
  }
  ++state_.t;
  double reward = pointmass_reward(state_.agent_pos, state_.goal_pos);
  return {render(state_, spec_), reward};
}

std::array<double, 2> expert_action(const PointmassState& state) {
  return {std::clamp(8.0 * (state.goal_pos[0] - state.agent_pos[0]), -1.0, 1.0),
          std::clamp(8.0 * (state.goal_pos[1] - state.agent_pos[1]), -1.0, 1.0)};
}

ToySample toy_world_sample(int n, ToyDomain domain, Rng& rng) {
  if (n < 1) throw std::invalid_argument("toy_world_sample: n must be >= 1");
  ToySample s;
  s.latents.resize(2 * n);
  s.observations.resize(2 * n);
  const double x_hi = domain == ToyDomain::kTrain ? 6.0 : 3.0;
  for (int i = 0; i < n; ++i) {
    s.latents[2 * i] = rng.uniform(0.0, x_hi);
    s.latents[2 * i + 1] = rng.uniform(0.0, 6.0);
    s.observations[2 * i] = toy_emission(s.latents[2 * i]);
    s.observations[2 * i + 1] = toy_emission(s.latents[2 * i + 1]);
  }
  return s;
}

double toy_emission(double x) { return kToyEmissionScale * std::exp(x); }

double toy_true_encoder(double o) { return std::log(o / kToyEmissionScale); }

void save_episode(const Episode& ep, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  os.write("RPEP", 4);
  write_u32(os, 1);  // version
  write_u32(os, static_cast<std::uint32_t>(ep.length));
  write_u32(os, static_cast<std::uint32_t>(ep.obs_dim));
  write_u32(os, static_cast<std::uint32_t>(ep.action_dim));
  write_u32(os, static_cast<std::uint32_t>(ep.factor_dim));
  write_doubles(os, ep.observations);
  write_doubles(os, ep.actions);
  write_doubles(os, ep.rewards);
  write_doubles(os, ep.factors);
}

Episode load_episode(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (std::memcmp(magic, "RPEP", 4) != 0) {
    throw std::runtime_error("bad episode magic in " + path);
  }
  if (read_u32(is) != 1) throw std::runtime_error("unsupported episode version");
  Episode ep;
  ep.length = static_cast<int>(read_u32(is));
  ep.obs_dim = static_cast<int>(read_u32(is));
  ep.action_dim = static_cast<int>(read_u32(is));
  ep.factor_dim = static_cast<int>(read_u32(is));
  read_doubles(is, ep.observations, static_cast<std::size_t>(ep.length) * ep.obs_dim);
  read_doubles(is, ep.actions, static_cast<std::size_t>(ep.length) * ep.action_dim);
  read_doubles(is, ep.rewards, ep.length);
  read_doubles(is, ep.factors, static_cast<std::size_t>(ep.length) * ep.factor_dim);
  if (!is) throw std::runtime_error("truncated episode file " + path);
  return ep;
}

void write_pgm(const std::vector<double>& frame, const std::string& path) {
  if (frame.size() != kObsDim) {
    throw std::invalid_argument("write_pgm: expected a flattened 16x16 frame");
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  os << "P5\n" << kImageSize << " " << kImageSize << "\n255\n";
  for (double v : frame) {
    unsigned char b =
        static_cast<unsigned char>(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5);
    os.write(reinterpret_cast<const char*>(&b), 1);
  }
}

}  // namespace repo::worlds
