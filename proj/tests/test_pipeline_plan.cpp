#include <doctest.h>

#include <random>

#include "archpilot/errors.hpp"
#include "archpilot/pipeline_plan.hpp"
#include "oracles/chunk_oracle.hpp"

using namespace archpilot;

namespace {

const std::filesystem::path kData = ARCHPILOT_DATA_DIR;

DeviceProfile profile(std::map<std::string, double> costs) {
  return DeviceProfile{"test", 1u << 30, std::move(costs)};
}

void check_equal(const PlanResult& r, const oracle::BruteChunkResult& b) {
  REQUIRE(r.feasible() == b.best.has_value());
  CHECK(r.min_achievable_bytes == b.min_peak_bytes);
  if (!b.best) return;
  CHECK(r.plan->temporal_chunk == b.best->temporal_chunk);
  CHECK(r.plan->spatial_chunk == b.best->spatial_chunk);
  CHECK(r.plan->output_frames == b.best->output_frames);
  CHECK(r.plan->est_peak_bytes == b.best->peak_bytes);
  CHECK(r.plan->est_latency_s == b.best->latency_s);
}

}  // namespace

TEST_CASE("frames_of") {
  const LatentGeometry causal{8, TemporalMapping::causal_4x};
  const LatentGeometry linear{8, TemporalMapping::linear_quarter};
  CHECK(frames_of(5, causal) == 17);
  CHECK(frames_of(1, causal) == 1);
  CHECK(frames_of(4, linear) == 16);
  CHECK_THROWS_AS(frames_of(0, causal), ValidationError);
  for (std::uint64_t n = 1; n < 200; ++n) {
    CHECK(frames_of(n + 1, causal) > frames_of(n, causal));
    CHECK(frames_of(n + 1, linear) > frames_of(n, linear));
    CHECK(latent_frames_of(frames_of(n, causal), causal) == n);
    CHECK(latent_frames_of(frames_of(n, linear), linear) == n);
  }
  CHECK_FALSE(latent_frames_of(51, linear).has_value());
  CHECK_FALSE(latent_frames_of(51, causal).has_value());
  CHECK(latent_frames_of(49, causal) == 13);
}

TEST_CASE("demo pipeline estimate") {
  const auto iphone = load_profile(kData / "iphone16pm.json");
  PipelineSpec spec;
  const auto e = estimate_pipeline(spec, iphone);
  CHECK(std::abs(e.latency_s - 4.586) <= 1e-9);
  CHECK(e.latency_s < 5.0);
  double sum = 0.0;
  for (const auto& t : e.breakdown) sum += t.seconds;
  CHECK(sum == e.latency_s);
  CHECK(e.output_frames == 51);
  CHECK(e.height_px == 512);
  CHECK(e.width_px == 512);

  spec.cfg_enabled = true;
  const auto cfg = estimate_pipeline(spec, iphone);
  CHECK(cfg.breakdown[1].seconds == doctest::Approx(8.16).epsilon(1e-15));

  spec.steps = 0;
  CHECK_THROWS_AS(estimate_pipeline(spec, iphone), ValidationError);
}

TEST_CASE("missing or conflicting stages") {
  PipelineSpec spec;
  try {
    estimate_pipeline(spec, profile({{"text_encoder", 0.1}, {"vae_decode", 0.1}}));
    FAIL("expected missing stage");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("unet_step") != std::string::npos);
  }
  CHECK_THROWS_AS(estimate_pipeline(spec, profile({{"text_encoder", 0.1},
                                                   {"unet_step", 0.1},
                                                   {"vae_decode", 0.1},
                                                   {"vae_spatial_decode", 0.1}})),
                  ValidationError);
  const auto split = estimate_pipeline(
      spec, profile({{"text_encoder", 0.1}, {"unet_step", 1.0}, {"vae_temporal_decode", 0.2},
                     {"vae_spatial_decode", 0.3}}));
  CHECK(split.breakdown.size() == 4);
  CHECK(split.latency_s == doctest::Approx(4.6));
}

TEST_CASE("VAE speedup") {
  const auto original = load_profile(kData / "vae_original.json");
  const auto ours = load_profile(kData / "vae_ours.json");
  CHECK(speedup_report(original, ours) == 27.2 / 0.5);
  CHECK(std::abs(speedup_report(original, ours) - 54.5) / 54.5 <= 0.005);
  const auto base17 = load_profile(kData / "vae_baseline_17f.json");
  const auto eff17 = load_profile(kData / "vae_efficient_17f.json");
  CHECK(speedup_report(base17, eff17) == doctest::Approx(27200.0 / 540.0).epsilon(1e-12));
  CHECK(speedup_report(base17, eff17) >= 50.0);
  CHECK(speedup_report(ours, ours) == 1.0);
  CHECK_THROWS_AS(speedup_report(ours, profile({{"vae_decode", 0.0}})), ValidationError);
}

TEST_CASE("single chunk when the budget covers the whole decode") {
  const TensorShape latent{6, 4, 8, 8};
  const LatentGeometry geo{8, TemporalMapping::linear_quarter};
  const auto cost = AffineChunkCost::defaults();
  const auto r = plan_vae_decode(latent, geo, {}, 1ull << 40, cost);
  REQUIRE(r.feasible());
  CHECK(r.plan->temporal_chunk == 6);
  CHECK(r.plan->temporal_calls == 1);
  CHECK(r.plan->output_frames == 24);
}

TEST_CASE("infeasible below the one-frame footprint") {
  const TensorShape latent{6, 4, 8, 8};
  const LatentGeometry geo{8, TemporalMapping::linear_quarter};
  const auto r = plan_vae_decode(latent, geo, {}, 100, AffineChunkCost::defaults());
  CHECK_FALSE(r.feasible());
  CHECK(r.min_achievable_bytes > 100);
  CHECK_THROWS_AS(plan_vae_decode(latent, geo, {}, 0, AffineChunkCost::defaults()), ValidationError);
}

TEST_CASE("demo latent in 5-frame chunks decodes 51 frames") {
  const auto plan = evaluate_chunk_plan({15, 4, 64, 64}, {}, {}, AffineChunkCost::defaults(), 5, 17);
  REQUIRE(plan);
  CHECK(plan->output_frames == 51);
  CHECK(plan->temporal_calls == 3);
  CHECK(plan->spatial_calls == 3);
}

TEST_CASE("3 x 3 instance equals brute force") {
  const TensorShape latent{6, 4, 8, 8};
  const std::vector<std::uint64_t> tq{1, 3, 6}, sq{1, 4, 24};
  const auto cost = AffineChunkCost::defaults();
  for (const auto mapping : {TemporalMapping::linear_quarter, TemporalMapping::causal_4x}) {
    const LatentGeometry geo{8, mapping};
    for (std::uint64_t budget : {5'000ull, 60'000ull, 200'000ull, 1'000'000ull, 10'000'000ull}) {
      const auto r = plan_vae_decode(latent, geo, {}, budget, cost, {tq, sq, std::nullopt});
      const auto b = oracle::brute_force_plan(latent, mapping == TemporalMapping::causal_4x, 8, 2,
                                              3.0, 3, budget, cost, tq, sq);
      check_equal(r, b);
    }
  }
}

TEST_CASE("table cost model and target frames") {
  const TensorShape latent{6, 4, 4, 4};
  const TableChunkCost table({{1, 0.05}, {2, 0.08}, {3, 0.10}, {6, 0.25}},
                             {{1, 0.01}, {4, 0.03}, {8, 0.05}, {16, 0.09}});
  const LatentGeometry causal{8, TemporalMapping::causal_4x};
  const std::vector<std::uint64_t> tq{1, 2, 3, 6}, sq{1, 4, 8, 16};
  for (std::optional<std::uint64_t> target : {std::optional<std::uint64_t>{}, {18}, {21}}) {
    for (std::uint64_t budget : {10'000ull, 50'000ull, 1'000'000ull}) {
      const auto r = plan_vae_decode(latent, causal, {}, budget, table, {tq, sq, target});
      const auto b =
          oracle::brute_force_plan(latent, true, 8, 2, 3.0, 3, budget, table, tq, sq, target);
      check_equal(r, b);
      if (r.plan && target) CHECK(r.plan->output_frames == *target);
    }
  }
}

TEST_CASE("randomized planner equivalence and budget monotonicity") {
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<std::uint64_t> frames(1, 8), side(1, 6), coin(0, 1);
  std::uniform_real_distribution<double> coef(0.0, 0.01);
  for (int trial = 0; trial < 150; ++trial) {
    const TensorShape latent{frames(rng), 4, side(rng), side(rng)};
    const bool causal = coin(rng) == 1;
    const LatentGeometry geo{8, causal ? TemporalMapping::causal_4x : TemporalMapping::linear_quarter};
    const AffineChunkCost cost({coef(rng), coef(rng) * 1e-4}, {coef(rng), coef(rng) * 1e-5});
    std::vector<std::uint64_t> tq;
    for (std::uint64_t q = 1; q <= latent.frames; ++q) tq.push_back(q);
    std::vector<std::uint64_t> sq;
    for (std::size_t i = 0; i < 4; ++i) sq.push_back(1 + rng() % frames_of(latent.frames, geo));
    const DecodeMemoryModel mem{2, 1.0 + coef(rng) * 300, 3};

    double previous = INFINITY;
    for (std::uint64_t budget = 1000; budget < (1u << 24); budget *= 2) {
      const auto r = plan_vae_decode(latent, geo, mem, budget, cost, {tq, sq, std::nullopt});
      const auto b = oracle::brute_force_plan(latent, causal, 8, 2, mem.overhead_factor, 3, budget,
                                              cost, tq, sq);
      check_equal(r, b);
      if (r.plan) {
        CHECK(r.plan->est_peak_bytes <= budget);
        CHECK(r.plan->est_latency_s <= previous);
        previous = r.plan->est_latency_s;
      }
    }
  }
}

TEST_CASE("cost model JSON") {
  const auto affine = chunk_cost_from_json(nlohmann::json::parse(
      R"({"model": "affine", "temporal": {"per_call_s": 0.1, "per_element_s": 0.0},
          "spatial": {"per_call_s": 0.2, "per_element_s": 0.0}})"));
  CHECK(affine->temporal_call({1, 1, 10, 10}) == 0.1);
  const auto table = chunk_cost_from_json(nlohmann::json::parse(
      R"({"model": "table", "temporal": [{"frames": 2, "latency_s": 0.3}], "spatial": []})"));
  CHECK(table->temporal_call({2, 5, 1, 1}) == 0.3);
  CHECK_FALSE(table->spatial_call({2, 2, 1, 1}).has_value());
  CHECK_THROWS_AS(chunk_cost_from_json(nlohmann::json::parse(R"({"model": "cubic"})")),
                  ValidationError);
}
