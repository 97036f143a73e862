// Closed-form view of online reward-weighted training on a discrete grid:
// without regularization the mass piles onto the best point at a geometric
// rate; a divergence penalty keeps part of it on the starting distribution.

#include <cstdio>
#include <vector>

#include "rwfm/oracle.hpp"

int main() {
  namespace o = rwfm::oracle;
  const auto q = o::GridDistribution::uniform(5);
  const std::vector<double> w = {1.0, 1.5, 2.0, 2.5, 3.0};

  std::printf("   N   q_N(best)       gap\n");
  for (std::size_t N : {0, 1, 2, 5, 10, 20, 40}) {
    const auto qn = o::evolve_online(q, w, N);
    std::printf("%4zu   %9.6f  %.3e\n", N, qn.probabilities.back(), o::delta_gap(q, w, N));
  }

  // Divergence grows with distance from the middle point.
  const std::size_t N = 20;
  o::DivergenceProfile D = o::DivergenceProfile::zeros(N, q.size());
  for (auto& row : D.per_epoch)
    for (std::size_t i = 0; i < row.size(); ++i) row[i] = 0.1 * static_cast<double>(i) * static_cast<double>(i);
  std::printf("\nbeta     distribution after %zu epochs\n", N);
  for (double beta : {0.0, 0.5, 2.0, 10.0}) {
    const auto qn = o::evolve_regularized_closed_form(q, w, D, beta, N);
    std::printf("%5.1f   ", beta);
    for (double p : qn.probabilities) std::printf(" %.4f", p);
    std::printf("\n");
  }
}
