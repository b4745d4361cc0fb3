#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ocp/diff/graph.hpp"
#include "ocp/diff/tensor.hpp"
#include "ocp/io.hpp"

namespace ocp::diff {

/// Named parameter tensors, ordered by name.
using ParamSet = std::map<std::string, Tensor>;

inline Bindings bind_all(const ParamSet& params) {
  Bindings b;
  for (const auto& [name, t] : params) b.bind(name, t);
  return b;
}

/// Uniform in +-1/sqrt(fan_in).
inline Tensor uniform_init(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

struct AdamConfig {
  double learning_rate = 1e-3;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  ParamSet first_moment;
  ParamSet second_moment;
};

inline AdamState make_adam(const ParamSet& params, AdamConfig config = {}) {
  AdamState s;
  s.config = config;
  for (const auto& [name, t] : params) {
    s.first_moment.emplace(name, Tensor(t.shape()));
    s.second_moment.emplace(name, Tensor(t.shape()));
  }
  return s;
}

/// One Adam update with decoupled weight decay: p <- p*(1 - lr*wd), then the
/// bias-corrected moment step. Parameters without a gradient entry are still
/// decayed and see a zero gradient.
inline void adam_step(ParamSet& params, const Gradients& grads, AdamState& state) {
  for (const auto& [name, g] : grads) {
    auto it = params.find(name);
    if (it == params.end()) throw std::invalid_argument("adam: gradient for unknown parameter '" + name + "'");
    if (g.shape() != it->second.shape()) {
      throw std::invalid_argument("adam: gradient shape " + shape_string(g.shape()) + " for '" + name + "' " +
                                  shape_string(it->second.shape()));
    }
    if (!g.all_finite()) throw std::domain_error("adam: non-finite gradient for parameter '" + name + "'");
  }
  const auto& c = state.config;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);
  const double decay = 1.0 - c.learning_rate * c.weight_decay;
  for (auto& [name, p] : params) {
    Tensor& m = state.first_moment.at(name);
    Tensor& v = state.second_moment.at(name);
    if (m.shape() != p.shape()) throw std::invalid_argument("adam: moment shape mismatch for '" + name + "'");
    auto git = grads.find(name);
    const Tensor* g = git == grads.end() ? nullptr : &git->second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g ? (*g)[i] : 0.0;
      p[i] *= decay;
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
      const double mhat = m[i] / correction1;
      const double vhat = v[i] / correction2;
      p[i] -= c.learning_rate * mhat / (std::sqrt(vhat) + c.epsilon);
    }
  }
}

/// Adds b into a (same keys and shapes).
inline void accumulate(Gradients& a, const Gradients& b) {
  for (const auto& [name, g] : b) {
    auto it = a.find(name);
    if (it == a.end()) {
      a.emplace(name, g);
    } else {
      for (std::size_t i = 0; i < g.size(); ++i) it->second[i] += g[i];
    }
  }
}

// Checkpoint container:
//   OCPCKPT\n
//   version 1\n
//   tensors <n>\n
//   <name> <rank> <d0> .. <dk> <byte offset>\n   (one per tensor, name order)
//   end\n
//   raw little-endian float64 payload
inline constexpr int kCheckpointVersion = 1;

inline std::vector<std::uint8_t> encode_checkpoint(const ParamSet& params) {
  std::ostringstream header;
  header << "OCPCKPT\nversion " << kCheckpointVersion << "\ntensors " << params.size() << "\n";
  std::size_t offset = 0;
  for (const auto& [name, t] : params) {
    if (name.empty() || name.find_first_of(" \n\t") != std::string::npos) {
      throw std::invalid_argument("checkpoint: parameter name '" + name + "' contains whitespace");
    }
    header << name << ' ' << t.rank();
    for (auto d : t.shape()) header << ' ' << d;
    header << ' ' << offset << '\n';
    offset += t.size() * 8;
  }
  header << "end\n";
  io::Writer w;
  w.bytes(header.str());
  for (const auto& [name, t] : params) {
    for (double v : t.values()) w.f64(v);
  }
  return w.take();
}

inline ParamSet decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  using io::FormatError;
  std::size_t pos = 0;
  auto next_line = [&]() -> std::string {
    std::size_t end = pos;
    while (end < bytes.size() && bytes[end] != '\n') ++end;
    if (end >= bytes.size()) throw FormatError(FormatError::Kind::Truncated, "checkpoint: header truncated");
    std::string line(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.begin() + static_cast<std::ptrdiff_t>(end));
    pos = end + 1;
    return line;
  };
  if (bytes.size() < 8 || next_line() != "OCPCKPT") throw FormatError(FormatError::Kind::BadMagic, "checkpoint: bad magic");
  {
    std::istringstream ls(next_line());
    std::string key;
    int version = -1;
    ls >> key >> version;
    if (key != "version") throw FormatError(FormatError::Kind::Corrupt, "checkpoint: missing version line");
    if (version != kCheckpointVersion) {
      throw FormatError(FormatError::Kind::VersionMismatch, "checkpoint: unsupported version " + std::to_string(version));
    }
  }
  std::size_t count = 0;
  {
    std::istringstream ls(next_line());
    std::string key;
    ls >> key >> count;
    if (key != "tensors" || ls.fail()) throw FormatError(FormatError::Kind::Corrupt, "checkpoint: missing tensor count");
  }
  struct Entry {
    std::string name;
    Shape shape;
    std::size_t offset;
  };
  std::vector<Entry> table;
  for (;;) {
    std::string line = next_line();
    if (line == "end") break;
    std::istringstream ls(line);
    Entry e;
    std::size_t rank = 0;
    ls >> e.name >> rank;
    e.shape.resize(rank);
    for (auto& d : e.shape) ls >> d;
    ls >> e.offset;
    if (ls.fail()) throw FormatError(FormatError::Kind::Corrupt, "checkpoint: malformed table line '" + line + "'");
    for (auto d : e.shape) {
      if (d == 0) throw FormatError(FormatError::Kind::Corrupt, "checkpoint: zero dimension for '" + e.name + "'");
    }
    table.push_back(std::move(e));
  }
  if (table.size() != count) {
    throw FormatError(FormatError::Kind::CountMismatch, "checkpoint: header declares " + std::to_string(count) +
                                                             " tensors, table lists " + std::to_string(table.size()));
  }
  std::size_t expected = 0;
  for (const auto& e : table) {
    if (e.offset != expected) throw FormatError(FormatError::Kind::Corrupt, "checkpoint: bad offset for '" + e.name + "'");
    expected += shape_size(e.shape) * 8;
  }
  if (bytes.size() - pos != expected) {
    throw FormatError(bytes.size() - pos < expected ? FormatError::Kind::Truncated : FormatError::Kind::Corrupt,
                      "checkpoint: payload is " + std::to_string(bytes.size() - pos) + " bytes, expected " +
                          std::to_string(expected));
  }
  io::Reader r(bytes, pos);
  ParamSet out;
  for (const auto& e : table) {
    std::vector<double> data(shape_size(e.shape));
    for (auto& v : data) v = r.f64();
    if (!out.emplace(e.name, Tensor(e.shape, std::move(data))).second) {
      throw FormatError(FormatError::Kind::Corrupt, "checkpoint: duplicate tensor '" + e.name + "'");
    }
  }
  return out;
}

inline void save_checkpoint(const std::filesystem::path& path, const ParamSet& params) {
  io::write_file(path, encode_checkpoint(params));
}

inline ParamSet load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(io::read_file(path)); }

}  // namespace ocp::diff
