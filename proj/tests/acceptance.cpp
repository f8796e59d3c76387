// Runs every acceptance criterion at its stated tolerance and prints one
// PASS/FAIL line per criterion. Exit status is nonzero if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <sstream>
#include <string>

#include "archpilot/arch_space.hpp"
#include "archpilot/flow_check.hpp"
#include "archpilot/flow_math.hpp"
#include "archpilot/op_cost.hpp"
#include "archpilot/pipeline_plan.hpp"
#include "oracles/chunk_oracle.hpp"
#include "oracles/flop_oracle.hpp"
#include "oracles/quadrature.hpp"
#include "oracles/search_oracle.hpp"

using namespace archpilot;
namespace fs = std::filesystem;

namespace {

const fs::path kData = ARCHPILOT_DATA_DIR;

struct Verdict {
  bool pass = true;
  std::string detail;
};

int failures = 0;

void criterion(const std::string& name, double runtime_limit_s, const std::function<Verdict()>& body) {
  const auto start = std::chrono::steady_clock::now();
  Verdict v;
  try {
    v = body();
  } catch (const std::exception& e) {
    v = {false, std::string("exception: ") + e.what()};
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (secs >= runtime_limit_s) {
    v.pass = false;
    v.detail += " (runtime limit exceeded)";
  }
  if (!v.pass) ++failures;
  std::printf("%s  %-28s %7.3fs  %s\n", v.pass ? "PASS" : "FAIL", name.c_str(), secs,
              v.detail.c_str());
  std::fflush(stdout);
}

std::string fmt(double x) {
  std::ostringstream os;
  os.precision(12);
  os << x;
  return os.str();
}

OperatorSpec op_of(OpKind kind, std::uint64_t c, std::uint64_t heads, std::uint64_t kernel = 3) {
  OperatorSpec op{kind, c};
  if (is_conv(kind)) op.kernel = kernel;
  if (is_attention(kind)) op.heads = heads;
  if (is_cross_attention(kind)) op.text_tokens = 3;
  return op;
}

Verdict demo_budget() {
  const auto iphone = load_profile(kData / "iphone16pm.json");
  PipelineSpec spec;
  spec.steps = 4;
  spec.cfg_enabled = false;
  const auto e = estimate_pipeline(spec, iphone);
  const bool ok = std::abs(e.latency_s - 4.586) <= 1e-9 && e.latency_s < 5.0;
  return {ok, "latency " + fmt(e.latency_s) + " s (target 4.586, < 5)"};
}

Verdict vae_speedup() {
  const double table = speedup_report(load_profile(kData / "vae_original.json"),
                                      load_profile(kData / "vae_ours.json"));
  const double split = speedup_report(load_profile(kData / "vae_baseline_17f.json"),
                                      load_profile(kData / "vae_efficient_17f.json"));
  const bool exact = table == 27.2 / 0.5 && split == (23.1 + 4.1) / (0.21 + 0.33);
  const double gap = std::abs(table - 54.5) / 54.5;
  const bool ok = exact && gap <= 0.005 && split >= 50.0;
  return {ok, "27.2/0.5 = " + fmt(table) + " (vs 54.5: " + fmt(100 * gap) + "%), 27.2/0.54 = " +
                  fmt(split) + " (>= 50)"};
}

Verdict flop_oracle() {
  std::size_t cases = 0;
  for (const auto kind : kAllOpKinds) {
    for (std::uint64_t c : {2, 4, 8})
      for (std::uint64_t n : {1, 2, 4})
        for (std::uint64_t h : {1, 2, 4})
          for (std::uint64_t w : {1, 2, 4}) {
            std::vector<OperatorSpec> ops;
            if (is_conv(kind)) {
              ops = {op_of(kind, c, 0, 1), op_of(kind, c, 0, 3)};
            } else {
              ops = {op_of(kind, c, 1), op_of(kind, c, c / 2)};
            }
            for (const auto& op : ops) {
              const TensorShape s{n, c, h, w};
              ++cases;
              if (flops_of(op, s) != oracle::count_flops(op, s).total()) {
                return {false, "mismatch for " + to_string(op) + " on " + to_string(s)};
              }
            }
          }
  }
  return {true, std::to_string(cases) + " (op, shape) cases equal"};
}

Verdict scaling_laws() {
  std::size_t checks = 0;
  for (std::uint64_t n : {1, 2, 4, 12})
    for (std::uint64_t h : {1, 2, 4})
      for (std::uint64_t w : {1, 3}) {
        const TensorShape s{n, 8, h, w}, d{n, 8, 2 * h, 2 * w};
        const auto sa3 = op_of(OpKind::SelfAttn3D, 8, 2);
        if (flop_breakdown(sa3, d).score != 16 * flop_breakdown(sa3, s).score) {
          return {false, "SelfAttn3D score ratio != 16 at " + to_string(s)};
        }
        for (const auto kind : {OpKind::SelfAttn1D, OpKind::Conv1D, OpKind::Conv3D}) {
          const auto op = op_of(kind, 8, 2);
          if (flops_of(op, d) != 4 * flops_of(op, s)) {
            return {false, to_string(op) + " total ratio != 4 at " + to_string(s)};
          }
        }
        checks += 4;
      }
  return {true, std::to_string(checks) + " exact ratios (16 score, 4 totals)"};
}

Verdict search_optimality() {
  double worst = INFINITY;
  std::size_t feasible_instances = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto inst = oracle::random_toy_instance(seed);
    if (inst.space.insertion_units() > 12) return {false, "instance exceeds 12 insertions"};
    const auto q = synthetic_oracle(inst.weights, 0.7, seed, 0.0);
    SearchConfig cfg;
    cfg.seed = seed;
    const auto r = evolve(inst.space, inst.lut, q, inst.constraints, cfg);
    const auto best = oracle::exhaustive_optimum(inst.space, inst.lut, q, inst.constraints);
    if (r.feasible != best.genome.has_value()) {
      return {false, "seed " + std::to_string(seed) + ": feasibility differs from enumeration"};
    }
    if (!best.genome) continue;
    ++feasible_instances;
    const double ratio = best.quality > 0 ? r.quality / best.quality : 1.0;
    worst = std::min(worst, ratio);
    if (r.quality < 0.95 * best.quality) {
      return {false, "seed " + std::to_string(seed) + ": ratio " + fmt(ratio)};
    }
  }
  return {true, std::to_string(feasible_instances) + "/20 feasible instances, worst ratio " +
                    fmt(worst)};
}

Verdict flow_identities() {
  using namespace archpilot::flow;
  Rng rng(2024);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto randn = [&](std::size_t n) {
    Vec v(n);
    for (auto& x : v) x = normal(rng);
    return v;
  };
  double identity = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const FlowState s{randn(16), randn(16), unit(rng)};
    const double tp = unit(rng);
    const auto v = target_velocity(s.x0, s.eps);
    const auto xt = forward_interp(s);
    identity = std::max(identity, normwise_relative_error(fake_sample(xt, s.t, tp, v),
                                                          forward_interp({s.x0, s.eps, tp})));
    identity = std::max(identity, normwise_relative_error(predict_x0(xt, s.t, v), s.x0));
  }
  double area_err = 0.0;
  for (const auto& [m, sd] : {std::pair{-1.0, 1.0}, {0.0, 1.0}, {-2.0, 1.0}}) {
    const LogitNormalParams p{m, sd};
    const double area = oracle::integrate(
        [&](double z) {
          const double t = sigmoid(z);
          return logit_normal_pdf(t, p) * t * (1.0 - t);
        },
        -30.0, 30.0);
    area_err = std::max(area_err, std::abs(area - 1.0));
  }
  double grad = 0.0;
  const HuberConst c(1.0);
  for (int i = 0; i < 20; ++i) {
    const auto x0 = randn(16), eps = randn(16), pred = randn(16);
    grad = std::max(grad, normwise_relative_error(
                              recon_loss_grad(pred, x0, c),
                              oracle::central_diff([&](const Vec& v) { return recon_loss(v, x0, c); },
                                                   pred)));
    grad = std::max(grad, normwise_relative_error(
                              cfm_loss_grad(pred, x0, eps),
                              oracle::central_diff([&](const Vec& v) { return cfm_loss(v, x0, eps); },
                                                   pred)));
  }
  const bool ok = identity <= 1e-12 && area_err <= 1e-6 && grad <= 1e-4;
  return {ok, "identity " + fmt(identity) + ", |area-1| " + fmt(area_err) + ", grad " + fmt(grad)};
}

Verdict chunk_planner() {
  const std::vector<std::uint64_t> pool{1, 2, 3, 5, 8, 16};
  std::vector<std::vector<std::uint64_t>> subsets;
  for (unsigned mask = 1; mask < (1u << pool.size()); ++mask) {
    if (std::popcount(mask) > 4) continue;
    std::vector<std::uint64_t> s;
    for (std::size_t i = 0; i < pool.size(); ++i) {
      if (mask & (1u << i)) s.push_back(pool[i]);
    }
    subsets.push_back(s);
  }
  const AffineChunkCost cost({0.004, 3e-7}, {0.003, 2e-8});
  const std::uint64_t budgets[] = {2'000, 20'000, 80'000, 300'000, 1'000'000, 100'000'000};
  std::size_t instances = 0;
  for (std::uint64_t frames = 1; frames <= 8; ++frames) {
    const TensorShape latent{frames, 4, 4, 4};
    std::vector<std::uint64_t> tq;
    for (std::uint64_t q = 1; q <= frames; ++q) tq.push_back(q);
    for (const bool causal : {false, true}) {
      const LatentGeometry geo{8, causal ? TemporalMapping::causal_4x : TemporalMapping::linear_quarter};
      for (const auto& sq : subsets)
        for (const auto budget : budgets) {
          ++instances;
          const auto r = plan_vae_decode(latent, geo, {}, budget, cost, {tq, sq, std::nullopt});
          const auto b = oracle::brute_force_plan(latent, causal, 8, 2, 3.0, 3, budget, cost, tq, sq);
          const bool same =
              r.feasible() == b.best.has_value() && r.min_achievable_bytes == b.min_peak_bytes &&
              (!r.plan || (r.plan->temporal_chunk == b.best->temporal_chunk &&
                           r.plan->spatial_chunk == b.best->spatial_chunk &&
                           r.plan->est_latency_s == b.best->latency_s &&
                           r.plan->est_peak_bytes == b.best->peak_bytes));
          if (!same) return {false, "mismatch at n~=" + std::to_string(frames)};
          if (r.plan && r.plan->est_peak_bytes > budget) return {false, "plan exceeds budget"};
        }
    }
  }
  return {true, std::to_string(instances) + " instances equal brute force, all within budget"};
}

Verdict determinism() {
  const auto dir = fs::temp_directory_path() / "archpilot_acceptance";
  fs::create_directories(dir);
  std::string contents[3];
  const char* threads[] = {"1", "1", "8"};
  for (int i = 0; i < 3; ++i) {
    const auto out = dir / ("trace_" + std::to_string(i) + ".json");
    fs::remove(out);
    const std::string cmd = std::string("ARCHPILOT_THREADS=") + threads[i] + " \"" + ARCHPILOT_CLI +
                            "\" search --space \"" + (kData / "toy_space.json").string() +
                            "\" --lut \"" + (kData / "toy_lut.json").string() + "\" --config \"" +
                            (kData / "toy_search.json").string() + "\" --seed 0 --out \"" +
                            out.string() + "\"";
    if (std::system(cmd.c_str()) != 0) return {false, "search command failed"};
    std::ifstream f(out, std::ios::binary);
    contents[i].assign(std::istreambuf_iterator<char>(f), {});
  }
  const bool ok = !contents[0].empty() && contents[0] == contents[1] && contents[0] == contents[2];
  return {ok, std::to_string(contents[0].size()) + "-byte trace identical across runs"};
}

}  // namespace

int main() {
  criterion("demo_budget", 1.0, demo_budget);
  criterion("vae_speedup", 1.0, vae_speedup);
  criterion("flop_oracle_equivalence", 30.0, flop_oracle);
  criterion("scaling_laws", 1.0, scaling_laws);
  criterion("search_optimality", 120.0, search_optimality);
  criterion("flow_identities", 60.0, flow_identities);
  criterion("chunk_planner_oracle", 10.0, chunk_planner);
  criterion("search_determinism", 60.0, determinism);
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
