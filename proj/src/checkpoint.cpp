#include "repo/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace repo::ckpt {

namespace {

constexpr char kMagic[4] = {'R', 'P', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void write_i64(std::ostream& out, std::int64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void write_f64(std::ostream& out, double v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void write_string(std::ostream& out, const std::string& s) {
  write_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void write_group(std::ostream& out, const std::vector<NamedTensor>& group) {
  write_u32(out, static_cast<std::uint32_t>(group.size()));
  for (const auto& t : group) {
    write_string(out, t.name);
    write_u32(out, static_cast<std::uint32_t>(t.shape.size()));
    for (int d : t.shape) write_u32(out, static_cast<std::uint32_t>(d));
    write_i64(out, static_cast<std::int64_t>(t.data.size()));
    out.write(reinterpret_cast<const char*>(t.data.data()),
              static_cast<std::streamsize>(t.data.size() * sizeof(double)));
  }
}

std::uint32_t read_u32(std::istream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw CheckpointError("truncated checkpoint");
  return v;
}

std::int64_t read_i64(std::istream& in) {
  std::int64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw CheckpointError("truncated checkpoint");
  return v;
}

double read_f64(std::istream& in) {
  double v = 0.0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw CheckpointError("truncated checkpoint");
  return v;
}

std::string read_string(std::istream& in) {
  const auto n = read_u32(in);
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw CheckpointError("truncated checkpoint");
  return s;
}

std::vector<NamedTensor> read_group(std::istream& in) {
  std::vector<NamedTensor> group(read_u32(in));
  for (auto& t : group) {
    t.name = read_string(in);
    t.shape.resize(read_u32(in));
    for (auto& d : t.shape) d = static_cast<int>(read_u32(in));
    t.data.resize(static_cast<std::size_t>(read_i64(in)));
    in.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    if (!in) throw CheckpointError("truncated checkpoint");
  }
  return group;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open " + path + " for writing");
  out.write(kMagic, sizeof kMagic);
  write_u32(out, kVersion);
  write_string(out, ckpt.config_text);
  write_group(out, ckpt.model);
  write_group(out, ckpt.actor);
  write_group(out, ckpt.critic);
  write_f64(out, ckpt.beta_raw);
  write_f64(out, ckpt.beta_step);
  write_string(out, ckpt.train_rng);
  write_string(out, ckpt.collect_rng);
  write_i64(out, ckpt.updates);
  write_i64(out, ckpt.env_steps);
  if (!out) throw CheckpointError("write failure: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path);
  char magic[4];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw CheckpointError(path + ": bad magic");
  }
  if (read_u32(in) != kVersion) {
    throw CheckpointError(path + ": unsupported version");
  }
  Checkpoint c;
  c.config_text = read_string(in);
  c.model = read_group(in);
  c.actor = read_group(in);
  c.critic = read_group(in);
  c.beta_raw = read_f64(in);
  c.beta_step = read_f64(in);
  c.train_rng = read_string(in);
  c.collect_rng = read_string(in);
  c.updates = read_i64(in);
  c.env_steps = read_i64(in);
  return c;
}

std::vector<NamedTensor> dump_store(const num::ParamStore& store) {
  std::vector<NamedTensor> out;
  out.reserve(store.items().size());
  for (const auto& [name, t] : store.items()) {
    out.push_back({name, t->shape, t->data});
  }
  return out;
}

void load_store(num::ParamStore& store,
                const std::vector<NamedTensor>& tensors) {
  if (tensors.size() != store.items().size()) {
    throw CheckpointError("parameter count mismatch");
  }
  for (const auto& t : tensors) {
    if (!store.has(t.name)) {
      throw CheckpointError("missing parameter '" + t.name + "'");
    }
    const auto& dst = store.get(t.name);
    if (dst->shape != t.shape || dst->data.size() != t.data.size()) {
      throw CheckpointError("shape mismatch for '" + t.name + "'");
    }
    dst->data = t.data;
  }
}

Checkpoint snapshot(trainer::Trainer& t, const std::string& config_text) {
  Checkpoint c;
  c.config_text = config_text;
  c.model = dump_store(t.model_params());
  c.actor = dump_store(t.actor_params());
  c.critic = dump_store(t.critic_params());
  c.beta_raw = t.beta().raw;
  c.beta_step = t.beta().step_size;
  c.train_rng = t.rng().serialize();
  c.collect_rng = t.collect_rng().serialize();
  c.updates = t.total_updates();
  c.env_steps = t.env_steps();
  return c;
}

void restore(trainer::Trainer& t, const Checkpoint& c) {
  load_store(t.model_params(), c.model);
  load_store(t.actor_params(), c.actor);
  load_store(t.critic_params(), c.critic);
  t.beta().raw = c.beta_raw;
  t.beta().step_size = c.beta_step;
  t.rng().deserialize(c.train_rng);
  t.collect_rng().deserialize(c.collect_rng);
  t.set_counters(c.updates, c.env_steps);
}

}  // namespace repo::ckpt
