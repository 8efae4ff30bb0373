#pragma once

// Checkpoints: named-parameter sections plus the full run configuration and
// seed, so any stage output can be reloaded bit-exactly.
//
// Layout (little-endian):
//   magic "EGCKPT1\n", u32 version
//   u64 config_hash, u64 seed
//   u32 config text length, bytes
//   u32 meta count, per entry: (u16 len, key bytes, u32 len, value bytes)
//   u32 section count, per section:
//     u16 len, section name
//     u32 parameter count, per parameter:
//       u16 len, name, u8 rank, u32 dims..., f64 data (raw bits)

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "emogest/config.hpp"
#include "emogest/core.hpp"
#include "emogest/nn.hpp"

namespace emogest {

struct Checkpoint {
  RunConfig config;
  std::uint64_t seed = 0;
  std::map<std::string, std::vector<std::pair<std::string, Tensor>>> sections;
  std::map<std::string, std::string> meta;

  void put_section(const std::string& name, const nn::ParamStore& ps) {
    sections[name] = ps.snapshot();
  }

  bool has_section(const std::string& name) const { return sections.count(name) > 0; }

  void load_section(const std::string& name, nn::ParamStore& ps) const {
    auto it = sections.find(name);
    if (it == sections.end())
      throw MissingPrerequisiteError("checkpoint: missing section '" + name + "'");
    ps.load_values(it->second);
  }

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);
};

namespace ckpt_detail {

using io_detail::read_raw;
using io_detail::write_raw;

inline void write_string16(std::ostream& out, const std::string& s) {
  write_raw<std::uint16_t>(out, static_cast<std::uint16_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline void write_string32(std::ostream& out, const std::string& s) {
  write_raw<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string16(std::istream& in) {
  const std::uint16_t n = read_raw<std::uint16_t>(in);
  std::string s(n, '\0');
  in.read(s.data(), n);
  return s;
}

inline std::string read_string32(std::istream& in) {
  const std::uint32_t n = read_raw<std::uint32_t>(in);
  std::string s(n, '\0');
  in.read(s.data(), n);
  return s;
}

}  // namespace ckpt_detail

inline void Checkpoint::save(const std::string& path) const {
  using namespace ckpt_detail;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("Checkpoint::save: cannot open " + path);
  out.write("EGCKPT1\n", 8);
  write_raw<std::uint32_t>(out, 1);
  write_raw<std::uint64_t>(out, config.hash());
  write_raw<std::uint64_t>(out, seed);
  write_string32(out, config.serialize());
  write_raw<std::uint32_t>(out, static_cast<std::uint32_t>(meta.size()));
  for (const auto& [k, v] : meta) {
    write_string16(out, k);
    write_string32(out, v);
  }
  write_raw<std::uint32_t>(out, static_cast<std::uint32_t>(sections.size()));
  for (const auto& [name, params] : sections) {
    write_string16(out, name);
    write_raw<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
    for (const auto& [pname, t] : params) {
      write_string16(out, pname);
      write_raw<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
      for (std::size_t i = 0; i < t.rank(); ++i)
        write_raw<std::uint32_t>(out, static_cast<std::uint32_t>(t.dim(i)));
      out.write(reinterpret_cast<const char*>(t.data()),
                static_cast<std::streamsize>(t.size() * sizeof(double)));
    }
  }
  if (!out) throw std::runtime_error("Checkpoint::save: write failed for " + path);
}

inline Checkpoint Checkpoint::load(const std::string& path) {
  using namespace ckpt_detail;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingPrerequisiteError("Checkpoint::load: cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, "EGCKPT1\n", 8) != 0)
    throw std::runtime_error("Checkpoint::load: bad magic in " + path);
  const std::uint32_t version = read_raw<std::uint32_t>(in);
  if (version != 1) throw std::runtime_error("Checkpoint::load: unsupported version");
  const std::uint64_t stored_hash = read_raw<std::uint64_t>(in);
  Checkpoint c;
  c.seed = read_raw<std::uint64_t>(in);
  c.config = RunConfig::parse(read_string32(in));
  if (c.config.hash() != stored_hash)
    throw std::runtime_error("Checkpoint::load: config hash mismatch in " + path);
  const std::uint32_t n_meta = read_raw<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    std::string k = read_string16(in);
    c.meta[k] = read_string32(in);
  }
  const std::uint32_t n_sections = read_raw<std::uint32_t>(in);
  for (std::uint32_t s = 0; s < n_sections; ++s) {
    std::string name = read_string16(in);
    const std::uint32_t n_params = read_raw<std::uint32_t>(in);
    std::vector<std::pair<std::string, Tensor>> params;
    params.reserve(n_params);
    for (std::uint32_t p = 0; p < n_params; ++p) {
      std::string pname = read_string16(in);
      const std::uint8_t rank = read_raw<std::uint8_t>(in);
      std::vector<std::size_t> shape(rank);
      for (std::uint8_t d = 0; d < rank; ++d) shape[d] = read_raw<std::uint32_t>(in);
      Tensor t(shape);
      in.read(reinterpret_cast<char*>(t.data()),
              static_cast<std::streamsize>(t.size() * sizeof(double)));
      if (!in) throw std::runtime_error("Checkpoint::load: truncated tensor in " + path);
      params.emplace_back(std::move(pname), std::move(t));
    }
    c.sections[name] = std::move(params);
  }
  return c;
}

}  // namespace emogest
