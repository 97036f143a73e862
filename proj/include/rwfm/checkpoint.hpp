#pragma once

// Checkpoint text format (version 1):
//
//   rwfm-checkpoint 1
//   input_dim <d>
//   hidden <w1> <w2> ...
//   activation <tanh|gelu>
//   seed <u64>
//   parameters <count>
//   <one shortest round-trip decimal per line>
//
// Lines starting with '#' are ignored. Loaders reject any other version.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <system_error>
#include <vector>

#include "rwfm/nnfield.hpp"

namespace rwfm {

inline constexpr int kCheckpointVersion = 1;

inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc{}) throw std::runtime_error("format_double: conversion failed");
  return std::string(buf, ptr);
}

inline double parse_double(const std::string& s) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (first != last && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc{} || ptr != last) throw std::invalid_argument("not a number: '" + s + "'");
  return v;
}

inline void write_checkpoint(std::ostream& os, const VectorField& field) {
  os << "rwfm-checkpoint " << kCheckpointVersion << '\n';
  os << "input_dim " << field.dim() << '\n';
  os << "hidden";
  for (std::size_t w : field.hidden_widths()) os << ' ' << w;
  os << '\n';
  os << "activation " << to_string(field.activation()) << '\n';
  os << "seed " << field.seed() << '\n';
  os << "parameters " << field.parameter_count() << '\n';
  for (double p : field.parameters()) os << format_double(p) << '\n';
}

inline VectorField read_checkpoint(std::istream& is) {
  std::string line;
  auto next_line = [&]() -> std::string {
    while (std::getline(is, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || line[0] == '#') continue;
      return line;
    }
    throw std::runtime_error("checkpoint: unexpected end of file");
  };
  auto expect_key = [&](const std::string& key) {
    std::istringstream ss(next_line());
    std::string k;
    ss >> k;
    if (k != key) throw std::runtime_error("checkpoint: expected key '" + key + "', found '" + k + "'");
    std::string rest;
    std::getline(ss, rest);
    return rest;
  };

  {
    std::istringstream ss(next_line());
    std::string magic;
    int version = 0;
    ss >> magic >> version;
    if (magic != "rwfm-checkpoint") throw std::runtime_error("checkpoint: missing header");
    if (version != kCheckpointVersion)
      throw std::runtime_error("checkpoint: unsupported format version " + std::to_string(version));
  }
  const std::size_t input_dim = std::stoul(expect_key("input_dim"));
  std::vector<std::size_t> hidden;
  {
    std::istringstream ss(expect_key("hidden"));
    std::size_t w;
    while (ss >> w) hidden.push_back(w);
  }
  std::string act;
  std::istringstream(expect_key("activation")) >> act;
  const std::uint64_t seed = std::stoull(expect_key("seed"));
  const std::size_t count = std::stoul(expect_key("parameters"));

  VectorField field(input_dim, hidden, parse_activation(act), seed);
  if (field.parameter_count() != count)
    throw std::runtime_error("checkpoint: parameter count does not match architecture");
  std::vector<double> params(count);
  for (auto& p : params) {
    const std::string s = next_line();
    p = parse_double(s);
  }
  field.set_parameters(params);
  return field;
}

inline void save_checkpoint(const std::filesystem::path& path, const VectorField& field) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write checkpoint " + path.string());
  write_checkpoint(os, field);
}

inline VectorField load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read checkpoint " + path.string());
  return read_checkpoint(is);
}

}  // namespace rwfm
