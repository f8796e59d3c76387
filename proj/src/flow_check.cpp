#include "archpilot/flow_check.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <string>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "archpilot/flow_math.hpp"

namespace archpilot::flow {

namespace {

Vec normal_vec(Rng& rng, std::size_t n) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vec v(n);
  for (auto& x : v) x = normal(rng);
  return v;
}

CheckResult make(std::string name, double observed, double tolerance, std::string detail = {}) {
  return {std::move(name), observed <= tolerance, observed, tolerance, std::move(detail)};
}

// Central differences of a scalar function of a vector.
Vec numeric_gradient(const std::function<double(const Vec&)>& f, Vec x, double h = 1e-5) {
  Vec g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double up = f(x);
    x[i] = saved - h;
    const double down = f(x);
    x[i] = saved;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

CheckResult check_consistency(const FlowCheckOptions& o, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double worst = 0.0;
  for (std::size_t d = 0; d < o.identity_draws; ++d) {
    FlowState s{normal_vec(rng, o.vector_length), normal_vec(rng, o.vector_length), unit(rng)};
    const double t_prime = unit(rng);
    const Vec x_t = forward_interp(s);
    const Vec fake = fake_sample(x_t, s.t, t_prime, target_velocity(s.x0, s.eps));
    const Vec expected = forward_interp({s.x0, s.eps, t_prime});
    worst = std::max(worst, normwise_relative_error(fake, expected));
  }
  return make("consistency_identity", worst, 1e-12);
}

CheckResult check_inversion(const FlowCheckOptions& o, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double worst = 0.0;
  for (std::size_t d = 0; d < o.identity_draws; ++d) {
    FlowState s{normal_vec(rng, o.vector_length), normal_vec(rng, o.vector_length), unit(rng)};
    const Vec x0_hat = predict_x0(forward_interp(s), s.t, target_velocity(s.x0, s.eps));
    worst = std::max(worst, normwise_relative_error(x0_hat, s.x0));
  }
  return make("inversion_identity", worst, 1e-12);
}

std::vector<CheckResult> check_pdf() {
  std::vector<CheckResult> out;
  for (const auto& [m, s] : {std::pair{-1.0, 1.0}, {0.0, 1.0}, {-2.0, 1.0}}) {
    const LogitNormalParams p{m, s};
    const double area = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
        [&](double t) { return logit_normal_pdf(t, p); }, 0.0, 1.0, 15, 1e-12);
    out.push_back(make("pdf_normalization(m=" + std::to_string(m) + ",s=" + std::to_string(s) + ")",
                       std::abs(area - 1.0), 1e-6));
  }
  double worst = 0.0;
  for (int i = 1; i < 200; ++i) {
    const double t = i / 200.0;
    for (double m : {-2.0, -1.0, 0.0, 0.5}) {
      const double a = logit_normal_pdf(t, {m, 1.0});
      const double b = logit_normal_pdf(1.0 - t, {-m, 1.0});
      worst = std::max(worst, std::abs(a - b) / std::max(a, 1e-300));
    }
  }
  out.push_back(make("pdf_symmetry", worst, 1e-12));
  return out;
}

CheckResult check_ks(const FlowCheckOptions& o, Rng& rng) {
  const LogitNormalParams p;
  std::vector<double> xs(o.ks_samples);
  for (auto& x : xs) x = sample_logit_normal(p, rng);
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  double d = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double f = logit_normal_cdf(xs[i], p);
    d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
  }
  return make("sampler_ks_statistic", d, 0.01, std::to_string(xs.size()) + " samples, m=-1, s=1");
}

std::vector<CheckResult> check_recon_properties(const FlowCheckOptions& o, Rng& rng) {
  const HuberConst c(1.0);
  double negative = 0.0;
  double lipschitz_excess = 0.0;
  double zero_at_equal = 0.0;
  bool positive_off_diagonal = true;
  for (std::size_t d = 0; d < o.identity_draws; ++d) {
    const Vec x0 = normal_vec(rng, o.vector_length);
    const Vec a = normal_vec(rng, o.vector_length);
    const Vec b = normal_vec(rng, o.vector_length);
    const double la = recon_loss(a, x0, c);
    const double lb = recon_loss(b, x0, c);
    negative = std::max({negative, -la, -lb});
    positive_off_diagonal = positive_off_diagonal && la > 0.0 && lb > 0.0;
    zero_at_equal = std::max(zero_at_equal, std::abs(recon_loss(x0, x0, c)));
    double ra = 0.0;
    double rb = 0.0;
    for (std::size_t i = 0; i < x0.size(); ++i) {
      ra += (a[i] - x0[i]) * (a[i] - x0[i]);
      rb += (b[i] - x0[i]) * (b[i] - x0[i]);
    }
    const double gap = std::abs(std::sqrt(ra) - std::sqrt(rb));
    lipschitz_excess = std::max(lipschitz_excess, std::abs(la - lb) - gap - 1e-12);
  }
  return {make("recon_nonnegative", negative, 0.0),
          make("recon_zero_iff_equal", positive_off_diagonal ? zero_at_equal : 1.0, 0.0),
          make("recon_1_lipschitz", std::max(lipschitz_excess, 0.0), 0.0)};
}

std::vector<CheckResult> check_gradients(const FlowCheckOptions& o, Rng& rng) {
  const std::size_t n = o.vector_length;
  const HuberConst c(1.0);
  double recon = 0.0;
  double cfm = 0.0;
  double hinge = 0.0;
  double adv = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const Vec x0 = normal_vec(rng, n);
    const Vec eps = normal_vec(rng, n);
    const Vec pred = normal_vec(rng, n);

    recon = std::max(recon, normwise_relative_error(
                                recon_loss_grad(pred, x0, c),
                                numeric_gradient([&](const Vec& v) { return recon_loss(v, x0, c); },
                                                 pred)));
    cfm = std::max(cfm, normwise_relative_error(
                            cfm_loss_grad(pred, x0, eps),
                            numeric_gradient([&](const Vec& v) { return cfm_loss(v, x0, eps); },
                                             pred)));

    // Keep hinge inputs away from the kinks at -1 (real) and +1 (fake).
    Vec d_real = normal_vec(rng, n);
    Vec d_fake = normal_vec(rng, n);
    for (auto& v : d_real) if (std::abs(v + 1.0) < 1e-3) v += 0.01;
    for (auto& v : d_fake) if (std::abs(v - 1.0) < 1e-3) v += 0.01;
    const auto hg = disc_hinge_loss_grad(d_real, d_fake);
    hinge = std::max(hinge, normwise_relative_error(
                                hg.d_real, numeric_gradient([&](const Vec& v) {
                                  return disc_hinge_loss(v, d_fake);
                                }, d_real)));
    hinge = std::max(hinge, normwise_relative_error(
                                hg.d_fake, numeric_gradient([&](const Vec& v) {
                                  return disc_hinge_loss(d_real, v);
                                }, d_fake)));
    adv = std::max(adv, normwise_relative_error(
                            gen_adv_loss_grad(d_fake),
                            numeric_gradient([](const Vec& v) { return gen_adv_loss(v); }, d_fake)));
  }
  return {make("grad_recon_loss", recon, 1e-4), make("grad_cfm_loss", cfm, 1e-4),
          make("grad_disc_hinge_loss", hinge, 1e-4), make("grad_gen_adv_loss", adv, 1e-4)};
}

CheckResult check_grid_sampling(const FlowCheckOptions& o, Rng& rng) {
  const auto grid = DistillGrid::uniform(4);
  std::map<double, std::size_t> counts;
  for (std::size_t i = 0; i < o.grid_draws; ++i) ++counts[sample_grid_t(grid, rng)];
  double worst = counts.size() == grid.k() ? 0.0 : 1.0;
  for (const double t : grid.timesteps()) {
    const double freq = static_cast<double>(counts[t]) / static_cast<double>(o.grid_draws);
    worst = std::max(worst, std::abs(freq - 0.25));
  }
  return make("grid_sampling_uniform", worst, 0.01);
}

CheckResult check_ema() {
  const Vec out = ema_update(Vec{0.0}, Vec{1.0}, kDefaultEmaRate);
  return make("ema_rate_0.95", std::abs(out[0] - 0.05), 1e-15);
}

}  // namespace

double normwise_relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < a.size() && i < b.size(); ++i) {
    num = std::max(num, std::abs(a[i] - b[i]));
    den = std::max(den, std::abs(b[i]));
  }
  if (a.size() != b.size()) return INFINITY;
  return num / std::max(den, 1e-300);
}

bool FlowCheckReport::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.passed; });
}

FlowCheckReport run_flow_checks(const FlowCheckOptions& options) {
  Rng rng(options.seed);
  FlowCheckReport report;
  auto add = [&](CheckResult r) { report.checks.push_back(std::move(r)); };
  auto add_all = [&](std::vector<CheckResult> rs) {
    for (auto& r : rs) add(std::move(r));
  };
  add(check_consistency(options, rng));
  add(check_inversion(options, rng));
  add_all(check_pdf());
  add(check_ks(options, rng));
  add_all(check_recon_properties(options, rng));
  add_all(check_gradients(options, rng));
  add(check_grid_sampling(options, rng));
  add(check_ema());
  return report;
}

nlohmann::json to_json(const CheckResult& r) {
  nlohmann::json j{{"name", r.name},
                   {"passed", r.passed},
                   {"observed", r.observed},
                   {"tolerance", r.tolerance}};
  if (!r.detail.empty()) j["detail"] = r.detail;
  return j;
}

nlohmann::json to_json(const FlowCheckReport& r) {
  nlohmann::json checks = nlohmann::json::array();
  for (const auto& c : r.checks) checks.push_back(to_json(c));
  return {{"passed", r.passed()}, {"checks", std::move(checks)}};
}

}  // namespace archpilot::flow
