// Pretrains a small flow on the eight-mode ring, then fine-tunes it toward
// even-indexed modes with and without the W2 penalty and prints how reward,
// mode entropy and distance to the reference evolve.
//
//   ring_finetune [pretrain_epochs] [finetune_epochs]

#include <cstdio>
#include <cstdlib>

#include "rwfm/rwfm.hpp"

int main(int argc, char** argv) {
  const std::size_t pre_epochs = argc > 1 ? std::strtoul(argv[1], nullptr, 10) : 120;
  const std::size_t ft_epochs = argc > 2 ? std::strtoul(argv[2], nullptr, 10) : 15;

  const auto ring = rwfm::ring_mixture();
  rwfm::Rng data_rng(1);
  const auto data = ring.sample(4096, data_rng);

  rwfm::VectorField field(2, {64, 64}, rwfm::Activation::tanh, 0);
  rwfm::OptimizerState opt(rwfm::OptimizerKind::adam, 1e-3, field.parameter_count());
  const auto pre = rwfm::pretrain(field, data, {pre_epochs, 256, 7}, opt);
  std::printf("pretrained %zu steps, final loss %.4f\n", pre.steps, pre.epoch_loss.back());

  std::vector<int> parity;
  for (std::size_t k = 0; k < ring.modes(); ++k) parity.push_back(k % 2 == 0 ? 1 : -1);
  const auto reward = rwfm::RewardSpec::mode_parity(ring.centers, parity);

  for (double alpha : {0.0, 1.0}) {
    rwfm::FineTuneConfig cfg;
    cfg.weighting = {rwfm::WeightingKind::exponential, 10.0};
    cfg.alpha = alpha;
    cfg.epochs = ft_epochs;
    cfg.sample_steps = 50;
    cfg.mode_centers = ring.centers;
    rwfm::FineTuner tuner(field, reward, cfg);
    std::printf("\nalpha = %g   (reference Lipschitz estimate %.2f)\n", alpha, tuner.record().lipschitz_estimate);
    std::printf("epoch  reward  entropy  top-share  mc-w2\n");
    auto show = [](const rwfm::EpochRecord& r) {
      std::printf("%5zu  %6.3f  %7.3f  %9.3f  %6.3f\n", r.epoch, r.mean_reward, r.mode_entropy, r.top_mode_share,
                  r.mc_w2_integrand);
    };
    show(tuner.record().baseline);
    for (std::size_t e = 0; e < cfg.epochs; ++e) show(tuner.run_epoch());
  }
}
