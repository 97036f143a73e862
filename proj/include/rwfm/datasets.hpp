#pragma once

// Point files (one point per line, coordinates separated by single spaces)
// and the built-in Gaussian-mixture datasets.

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>
#include <system_error>
#include <vector>

#include "rwfm/checkpoint.hpp"
#include "rwfm/core.hpp"

namespace rwfm {

inline std::string format_fixed(double v) {
  char buf[512];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::fixed);
  if (ec != std::errc{}) throw std::runtime_error("format_fixed: conversion failed");
  return std::string(buf, ptr);
}

inline std::vector<double> split_numbers(const std::string& line) {
  std::vector<double> out;
  std::istringstream ss(line);
  std::string tok;
  while (ss >> tok) out.push_back(parse_double(tok));
  return out;
}

inline void write_points(std::ostream& os, const PointBatch& points) {
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto p = points[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      if (k) os << ' ';
      os << format_fixed(p[k]);
    }
    os << '\n';
  }
}

inline PointBatch read_points(std::istream& is) {
  PointBatch out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto p = split_numbers(line);
    if (p.empty()) continue;
    if (out.dim() == 0) out = PointBatch(p.size());
    if (p.size() != out.dim())
      throw std::runtime_error("point file: line " + std::to_string(lineno) + " has " + std::to_string(p.size()) +
                               " coordinates, expected " + std::to_string(out.dim()));
    out.push_back(p);
  }
  if (out.dim() == 0) throw std::runtime_error("point file: no points");
  return out;
}

inline void save_points(const std::filesystem::path& path, const PointBatch& points) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  write_points(os, points);
}

inline PointBatch load_points(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  return read_points(is);
}

// Isotropic Gaussian mixture with a shared standard deviation.
struct GaussianMixture {
  PointBatch centers;
  std::vector<double> weights;  // unnormalized, one per center
  double spread = 0.3;

  std::size_t dim() const { return centers.dim(); }
  std::size_t modes() const { return centers.size(); }

  // Samples and, optionally, the component label of each sample.
  PointBatch sample(std::size_t n, Rng& rng, std::vector<std::size_t>* labels = nullptr) const {
    if (centers.empty()) throw std::invalid_argument("GaussianMixture: no centers");
    std::vector<double> cdf(modes());
    double total = 0.0;
    for (std::size_t k = 0; k < modes(); ++k) {
      const double w = weights.empty() ? 1.0 : weights.at(k);
      if (!(w >= 0.0)) throw std::invalid_argument("GaussianMixture: negative weight");
      total += w;
      cdf[k] = total;
    }
    if (!(total > 0.0)) throw std::invalid_argument("GaussianMixture: zero total weight");
    PointBatch out(dim(), n);
    for (std::size_t i = 0; i < n; ++i) {
      const double u = rng.uniform() * total;
      std::size_t k = 0;
      while (k + 1 < modes() && u >= cdf[k]) ++k;
      if (labels) labels->push_back(k);
      auto p = out[i];
      for (std::size_t j = 0; j < dim(); ++j) p[j] = centers[k][j] + spread * rng.normal();
    }
    return out;
  }
};

// Eight equally weighted modes on a circle, mode k at angle 2 pi k / 8.
inline GaussianMixture ring_mixture(std::size_t modes = 8, double radius = 4.0, double spread = 0.3) {
  GaussianMixture m;
  m.centers = PointBatch(2);
  for (std::size_t k = 0; k < modes; ++k) {
    const double a = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(modes);
    const double p[2] = {radius * std::cos(a), radius * std::sin(a)};
    m.centers.push_back(p);
  }
  m.weights.assign(modes, 1.0);
  m.spread = spread;
  return m;
}

// 1D modes evenly spaced `spacing` apart and centered on the origin.
inline GaussianMixture line_mixture(std::size_t modes, double spacing = 4.0, double spread = 0.3) {
  GaussianMixture m;
  m.centers = PointBatch(1);
  for (std::size_t k = 0; k < modes; ++k) {
    const double c = (static_cast<double>(k) - 0.5 * static_cast<double>(modes - 1)) * spacing;
    m.centers.push_back(std::span<const double>(&c, 1));
  }
  m.weights.assign(modes, 1.0);
  m.spread = spread;
  return m;
}

}  // namespace rwfm
