#pragma once

// Rectified-flow and latent adversarial fine-tuning numerics on flat arrays.
//
//   x_t        = (1 - t) x0 + t eps
//   u_t        = eps - x0                      (target velocity)
//   x'_{t'}    = x_t + (t' - t) v              (fake sample at t')
//   x0_hat     = x_t - t v
//   L_D        = mean max(0, 1 + D(real)) + mean max(0, 1 - D(fake))
//   L_G^adv    = mean D(fake)
//   L_recon    = sqrt(||x0_hat - x0||^2 + c^2) - c
//
// Losses reduce by mean. Gradients are closed form; the hinge subgradient at
// the kink is 0.

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace archpilot::flow {

using Vec = std::vector<double>;
using Rng = std::mt19937_64;

struct FlowState {
  Vec x0;
  Vec eps;
  double t = 0.0;

  void validate() const;
};

struct LogitNormalParams {
  double m = -1.0;
  double s = 1.0;

  void validate() const;
};

// 0 < T_k < ... < T_1 = 1.0
class DistillGrid {
public:
  explicit DistillGrid(std::vector<double> timesteps);
  // T_i = 1 - (i - 1) / k for i = 1..k.
  static DistillGrid uniform(std::size_t k = 4);

  std::size_t k() const { return timesteps_.size(); }
  std::span<const double> timesteps() const { return timesteps_; }

private:
  std::vector<double> timesteps_;
};

class HuberConst {
public:
  explicit HuberConst(double c);
  double value() const { return c_; }

private:
  double c_;
};

inline constexpr double kDefaultEmaRate = 0.95;
inline constexpr double kDefaultReconWeight = 1.0;

Vec forward_interp(const FlowState& state);
Vec target_velocity(std::span<const double> x0, std::span<const double> eps);

double cfm_loss(std::span<const double> velocity_pred, std::span<const double> x0,
                std::span<const double> eps);
Vec cfm_loss_grad(std::span<const double> velocity_pred, std::span<const double> x0,
                  std::span<const double> eps);

double logit(double t);
double sigmoid(double x);
// Throws ValidationError unless 0 < t < 1.
double logit_normal_pdf(double t, const LogitNormalParams& p);
double logit_normal_cdf(double t, const LogitNormalParams& p);
double sample_logit_normal(const LogitNormalParams& p, Rng& rng);

Vec fake_sample(std::span<const double> x_t, double t, double t_prime,
                std::span<const double> velocity);
Vec predict_x0(std::span<const double> x_t, double t, std::span<const double> velocity);

double disc_hinge_loss(std::span<const double> d_real, std::span<const double> d_fake);
struct HingeGrad {
  Vec d_real;
  Vec d_fake;
};
HingeGrad disc_hinge_loss_grad(std::span<const double> d_real, std::span<const double> d_fake);

double gen_adv_loss(std::span<const double> d_fake);
Vec gen_adv_loss_grad(std::span<const double> d_fake);

double recon_loss(std::span<const double> x0_pred, std::span<const double> x0, HuberConst c);
Vec recon_loss_grad(std::span<const double> x0_pred, std::span<const double> x0, HuberConst c);

// L_G^adv(d_fake) + recon_weight * L_recon(x0_pred, x0).
double generator_objective(std::span<const double> d_fake, std::span<const double> x0_pred,
                           std::span<const double> x0, HuberConst c,
                           double recon_weight = kDefaultReconWeight);

// ema' = rate * ema + (1 - rate) * current
Vec ema_update(std::span<const double> ema, std::span<const double> current, double rate);

double sample_grid_t(const DistillGrid& grid, Rng& rng);

}  // namespace archpilot::flow
