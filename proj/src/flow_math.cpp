#include "archpilot/flow_math.hpp"

#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "archpilot/errors.hpp"

namespace archpilot::flow {

namespace {

void require_same_length(std::span<const double> a, std::span<const double> b, const char* what) {
  if (a.size() != b.size()) {
    throw ValidationError(std::string(what) + ": length mismatch (" + std::to_string(a.size()) +
                          " vs " + std::to_string(b.size()) + ")");
  }
  if (a.empty()) throw ValidationError(std::string(what) + ": empty input");
}

void require_non_empty(std::span<const double> a, const char* what) {
  if (a.empty()) throw ValidationError(std::string(what) + ": empty input");
}

void require_unit_interval(double t, const char* what) {
  if (!(t >= 0.0 && t <= 1.0)) {
    throw ValidationError(std::string(what) + ": time must lie in [0, 1]");
  }
}

double mean(std::span<const double> xs) {
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

}  // namespace

void FlowState::validate() const {
  require_same_length(x0, eps, "FlowState");
  require_unit_interval(t, "FlowState");
}

void LogitNormalParams::validate() const {
  if (!std::isfinite(m)) throw ValidationError("logit-normal location must be finite");
  if (!(s > 0.0) || !std::isfinite(s)) throw ValidationError("logit-normal scale must be > 0");
}

DistillGrid::DistillGrid(std::vector<double> timesteps) : timesteps_(std::move(timesteps)) {
  if (timesteps_.empty()) throw ValidationError("distillation grid needs at least one timestep");
  if (timesteps_.front() != 1.0) throw ValidationError("distillation grid must start at 1.0");
  for (std::size_t i = 1; i < timesteps_.size(); ++i) {
    if (!(timesteps_[i] < timesteps_[i - 1])) {
      throw ValidationError("distillation grid must be strictly decreasing");
    }
  }
  if (!(timesteps_.back() > 0.0)) throw ValidationError("distillation grid must stay above 0");
}

DistillGrid DistillGrid::uniform(std::size_t k) {
  if (k == 0) throw ValidationError("distillation grid needs k >= 1");
  std::vector<double> ts(k);
  for (std::size_t i = 0; i < k; ++i) {
    ts[i] = 1.0 - static_cast<double>(i) / static_cast<double>(k);
  }
  return DistillGrid(std::move(ts));
}

HuberConst::HuberConst(double c) : c_(c) {
  if (!(c > 0.0) || !std::isfinite(c)) throw ValidationError("Huber constant c must be > 0");
}

Vec forward_interp(const FlowState& state) {
  state.validate();
  Vec out(state.x0.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = (1.0 - state.t) * state.x0[i] + state.t * state.eps[i];
  }
  return out;
}

Vec target_velocity(std::span<const double> x0, std::span<const double> eps) {
  require_same_length(x0, eps, "target_velocity");
  Vec u(x0.size());
  for (std::size_t i = 0; i < u.size(); ++i) u[i] = eps[i] - x0[i];
  return u;
}

double cfm_loss(std::span<const double> velocity_pred, std::span<const double> x0,
                std::span<const double> eps) {
  require_same_length(velocity_pred, x0, "cfm_loss");
  require_same_length(x0, eps, "cfm_loss");
  double s = 0.0;
  for (std::size_t i = 0; i < x0.size(); ++i) {
    const double d = velocity_pred[i] - (eps[i] - x0[i]);
    s += d * d;
  }
  return s / static_cast<double>(x0.size());
}

Vec cfm_loss_grad(std::span<const double> velocity_pred, std::span<const double> x0,
                  std::span<const double> eps) {
  require_same_length(velocity_pred, x0, "cfm_loss_grad");
  require_same_length(x0, eps, "cfm_loss_grad");
  const double scale = 2.0 / static_cast<double>(x0.size());
  Vec g(x0.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    g[i] = scale * (velocity_pred[i] - (eps[i] - x0[i]));
  }
  return g;
}

double logit(double t) { return std::log(t / (1.0 - t)); }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double logit_normal_pdf(double t, const LogitNormalParams& p) {
  p.validate();
  if (!(t > 0.0 && t < 1.0)) throw ValidationError("logit_normal_pdf: t must lie in (0, 1)");
  const double z = (logit(t) - p.m) / p.s;
  return std::exp(-0.5 * z * z) / (p.s * std::sqrt(2.0 * std::numbers::pi) * t * (1.0 - t));
}

double logit_normal_cdf(double t, const LogitNormalParams& p) {
  p.validate();
  if (t <= 0.0) return 0.0;
  if (t >= 1.0) return 1.0;
  const double z = (logit(t) - p.m) / p.s;
  return 0.5 * std::erfc(-z / std::numbers::sqrt2);
}

double sample_logit_normal(const LogitNormalParams& p, Rng& rng) {
  p.validate();
  std::normal_distribution<double> normal(p.m, p.s);
  return sigmoid(normal(rng));
}

Vec fake_sample(std::span<const double> x_t, double t, double t_prime,
                std::span<const double> velocity) {
  require_same_length(x_t, velocity, "fake_sample");
  require_unit_interval(t, "fake_sample");
  require_unit_interval(t_prime, "fake_sample");
  const double dt = t_prime - t;
  Vec out(x_t.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x_t[i] + dt * velocity[i];
  return out;
}

Vec predict_x0(std::span<const double> x_t, double t, std::span<const double> velocity) {
  require_same_length(x_t, velocity, "predict_x0");
  require_unit_interval(t, "predict_x0");
  Vec out(x_t.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x_t[i] - t * velocity[i];
  return out;
}

double disc_hinge_loss(std::span<const double> d_real, std::span<const double> d_fake) {
  require_non_empty(d_real, "disc_hinge_loss");
  require_non_empty(d_fake, "disc_hinge_loss");
  double real = 0.0;
  for (double d : d_real) real += std::max(0.0, 1.0 + d);
  double fake = 0.0;
  for (double d : d_fake) fake += std::max(0.0, 1.0 - d);
  return real / static_cast<double>(d_real.size()) + fake / static_cast<double>(d_fake.size());
}

HingeGrad disc_hinge_loss_grad(std::span<const double> d_real, std::span<const double> d_fake) {
  require_non_empty(d_real, "disc_hinge_loss_grad");
  require_non_empty(d_fake, "disc_hinge_loss_grad");
  HingeGrad g{Vec(d_real.size(), 0.0), Vec(d_fake.size(), 0.0)};
  const double nr = static_cast<double>(d_real.size());
  const double nf = static_cast<double>(d_fake.size());
  for (std::size_t i = 0; i < d_real.size(); ++i) {
    if (1.0 + d_real[i] > 0.0) g.d_real[i] = 1.0 / nr;
  }
  for (std::size_t i = 0; i < d_fake.size(); ++i) {
    if (1.0 - d_fake[i] > 0.0) g.d_fake[i] = -1.0 / nf;
  }
  return g;
}

double gen_adv_loss(std::span<const double> d_fake) {
  require_non_empty(d_fake, "gen_adv_loss");
  return mean(d_fake);
}

Vec gen_adv_loss_grad(std::span<const double> d_fake) {
  require_non_empty(d_fake, "gen_adv_loss_grad");
  return Vec(d_fake.size(), 1.0 / static_cast<double>(d_fake.size()));
}

double recon_loss(std::span<const double> x0_pred, std::span<const double> x0, HuberConst c) {
  require_same_length(x0_pred, x0, "recon_loss");
  const double cv = c.value();
  // sqrt(d2 + c^2) - c rewritten to avoid cancellation when d2 << c^2.
  const double d2 = squared_distance(x0_pred, x0);
  return d2 / (std::sqrt(d2 + cv * cv) + cv);
}

Vec recon_loss_grad(std::span<const double> x0_pred, std::span<const double> x0, HuberConst c) {
  require_same_length(x0_pred, x0, "recon_loss_grad");
  const double cv = c.value();
  const double denom = std::sqrt(squared_distance(x0_pred, x0) + cv * cv);
  Vec g(x0.size());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = (x0_pred[i] - x0[i]) / denom;
  return g;
}

double generator_objective(std::span<const double> d_fake, std::span<const double> x0_pred,
                           std::span<const double> x0, HuberConst c, double recon_weight) {
  if (!(recon_weight >= 0.0)) throw ValidationError("recon_weight must be >= 0");
  return gen_adv_loss(d_fake) + recon_weight * recon_loss(x0_pred, x0, c);
}

Vec ema_update(std::span<const double> ema, std::span<const double> current, double rate) {
  require_same_length(ema, current, "ema_update");
  if (!(rate >= 0.0 && rate <= 1.0)) throw ValidationError("ema_update: rate must lie in [0, 1]");
  Vec out(ema.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = rate * ema[i] + (1.0 - rate) * current[i];
  }
  return out;
}

double sample_grid_t(const DistillGrid& grid, Rng& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, grid.k() - 1);
  return grid.timesteps()[pick(rng)];
}

}  // namespace archpilot::flow
