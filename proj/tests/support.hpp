#pragma once

// Helpers shared by the unit tests and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "rwfm/nnfield.hpp"
#include "rwfm/oracle.hpp"

namespace rwfm::check {

// Central finite differences of `loss(field)` with respect to every
// parameter. The loss is re-evaluated from scratch for each perturbation.
inline std::vector<double> numeric_gradient(VectorField field, const std::function<double(const VectorField&)>& loss,
                                            double h = 1e-5) {
  std::vector<double> theta(field.parameters().begin(), field.parameters().end());
  std::vector<double> grad(theta.size());
  for (std::size_t k = 0; k < theta.size(); ++k) {
    const double keep = theta[k];
    theta[k] = keep + h;
    field.set_parameters(theta);
    const double up = loss(field);
    theta[k] = keep - h;
    field.set_parameters(theta);
    const double down = loss(field);
    theta[k] = keep;
    grad[k] = (up - down) / (2.0 * h);
  }
  return grad;
}

// Largest |a - b| / max(|a|, |b|, floor) over components. The floor keeps
// components whose true value is ~0 from dominating through rounding noise.
inline double max_relative_error(std::span<const double> a, std::span<const double> b, double floor) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double scale = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
  }
  return worst;
}

// Fresh scratch directory under the system temp dir, removed on destruction.
class ScratchDir {
 public:
  explicit ScratchDir(const std::string& name) {
    path_ = std::filesystem::temp_directory_path() / ("rwfm_test_" + name);
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

// Random categorical problem: support size 2..12, strictly positive q,
// rewards in [-2, 2], weights exp(r), divergence profile in [0, 3).
struct OracleInstance {
  oracle::GridDistribution q;
  std::vector<double> r, w;
  oracle::DivergenceProfile D;
  double tau = 1.0, beta = 0.0;
  std::size_t N = 1;
};

inline OracleInstance random_instance(Rng& rng, std::size_t max_epochs = 30) {
  OracleInstance in;
  const std::size_t n = 2 + rng.index(11);
  in.q = oracle::GridDistribution::uniform(n);
  double total = 0.0;
  for (double& p : in.q.probabilities) total += (p = 0.05 + rng.uniform());
  for (double& p : in.q.probabilities) p /= total;
  in.r.resize(n);
  in.w.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    in.r[i] = 4.0 * rng.uniform() - 2.0;
    in.w[i] = std::exp(in.r[i]);
  }
  in.N = 1 + rng.index(max_epochs);
  in.D = oracle::DivergenceProfile::zeros(in.N, n);
  for (auto& row : in.D.per_epoch)
    for (double& d : row) d = 3.0 * rng.uniform();
  in.tau = 0.1 + 2.0 * rng.uniform();
  in.beta = 2.0 * rng.uniform();
  return in;
}

}  // namespace rwfm::check
