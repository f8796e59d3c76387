#include "archpilot/pipeline_plan.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <tuple>

#include "archpilot/checked.hpp"
#include "archpilot/errors.hpp"

namespace archpilot {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw ValidationError(msg); }

std::uint64_t scaled_bytes(std::uint64_t dtype_bytes, std::uint64_t elements, double factor) {
  const double bytes =
      std::ceil(static_cast<double>(checked::mul(dtype_bytes, elements)) * factor);
  if (!(bytes < 18446744073709551616.0)) throw OverflowError("decode memory estimate overflows");
  return static_cast<std::uint64_t>(bytes);
}

// Sizes of successive calls when `total` items are processed `chunk` at a time.
std::vector<std::uint64_t> split(std::uint64_t total, std::uint64_t chunk) {
  std::vector<std::uint64_t> parts;
  for (std::uint64_t done = 0; done < total; done += chunk) {
    parts.push_back(std::min(chunk, total - done));
  }
  return parts;
}

}  // namespace

std::string_view to_string(TemporalMapping m) {
  switch (m) {
    case TemporalMapping::linear_quarter: return "linear_quarter";
    case TemporalMapping::causal_4x: return "causal_4x";
  }
  return "unknown";
}

TemporalMapping parse_temporal_mapping(std::string_view name) {
  if (name == "linear_quarter") return TemporalMapping::linear_quarter;
  if (name == "causal_4x") return TemporalMapping::causal_4x;
  fail("unknown temporal mapping '" + std::string(name) + "'");
}

void LatentGeometry::validate() const {
  if (spatial_factor < 1) fail("spatial_factor must be >= 1");
}

std::uint64_t frames_of(std::uint64_t latent_frames, const LatentGeometry& geometry) {
  geometry.validate();
  if (latent_frames < 1) fail("latent frame count must be >= 1");
  switch (geometry.temporal) {
    case TemporalMapping::linear_quarter: return checked::mul(4, latent_frames);
    case TemporalMapping::causal_4x: return checked::add(checked::mul(4, latent_frames - 1), 1);
  }
  fail("unknown temporal mapping");
}

std::optional<std::uint64_t> latent_frames_of(std::uint64_t frames,
                                              const LatentGeometry& geometry) {
  geometry.validate();
  if (frames < 1) return std::nullopt;
  switch (geometry.temporal) {
    case TemporalMapping::linear_quarter:
      if (frames % 4 != 0) return std::nullopt;
      return frames / 4;
    case TemporalMapping::causal_4x:
      if ((frames - 1) % 4 != 0) return std::nullopt;
      return (frames - 1) / 4 + 1;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Pipeline latency

double vae_decode_latency(const DeviceProfile& profile) {
  const bool combined = profile.fixed_costs.count(stage::vae_decode) > 0;
  const bool split_t = profile.fixed_costs.count(stage::vae_temporal_decode) > 0;
  const bool split_s = profile.fixed_costs.count(stage::vae_spatial_decode) > 0;
  if (combined && (split_t || split_s)) {
    fail("profile '" + profile.name +
         "' gives both vae_decode and split decoder stages; use one form");
  }
  if (combined) return profile.stage_latency(stage::vae_decode);
  return profile.stage_latency(stage::vae_temporal_decode) +
         profile.stage_latency(stage::vae_spatial_decode);
}

PipelineEstimate estimate_pipeline(const PipelineSpec& spec, const DeviceProfile& profile) {
  if (spec.steps < 1) fail("pipeline needs at least one denoising step");
  spec.latent.validate();
  spec.geometry.validate();

  PipelineEstimate e;
  e.breakdown.push_back({stage::text_encoder, profile.stage_latency(stage::text_encoder)});
  const double per_step = profile.stage_latency(stage::unet_step) * (spec.cfg_enabled ? 2.0 : 1.0);
  e.breakdown.push_back({"denoise", static_cast<double>(spec.steps) * per_step});
  vae_decode_latency(profile);  // validates the decoder stage form
  if (profile.fixed_costs.count(stage::vae_decode)) {
    e.breakdown.push_back({stage::vae_decode, profile.stage_latency(stage::vae_decode)});
  } else {
    e.breakdown.push_back(
        {stage::vae_temporal_decode, profile.stage_latency(stage::vae_temporal_decode)});
    e.breakdown.push_back(
        {stage::vae_spatial_decode, profile.stage_latency(stage::vae_spatial_decode)});
  }
  for (const auto& term : e.breakdown) e.latency_s += term.seconds;

  const auto chunk = spec.decode_chunk == 0 ? spec.latent.frames
                                            : std::min(spec.decode_chunk, spec.latent.frames);
  for (const auto q : split(spec.latent.frames, chunk)) {
    e.output_frames = checked::add(e.output_frames, frames_of(q, spec.geometry));
  }
  e.height_px = checked::mul(spec.latent.height, spec.geometry.spatial_factor);
  e.width_px = checked::mul(spec.latent.width, spec.geometry.spatial_factor);
  return e;
}

double speedup_report(const DeviceProfile& baseline, const DeviceProfile& optimized) {
  const double base = vae_decode_latency(baseline);
  const double opt = vae_decode_latency(optimized);
  if (!(opt > 0.0)) fail("optimized VAE decode latency must be > 0");
  return base / opt;
}

// ---------------------------------------------------------------------------
// Chunk cost models

void DecodeMemoryModel::validate() const {
  if (dtype_bytes < 1) fail("dtype_bytes must be >= 1");
  if (!(overhead_factor >= 1.0) || !std::isfinite(overhead_factor)) {
    fail("overhead_factor must be finite and >= 1");
  }
  if (pixel_channels < 1) fail("pixel_channels must be >= 1");
}

AffineChunkCost::AffineChunkCost(Coefficients temporal, Coefficients spatial)
    : temporal_(temporal), spatial_(spatial) {
  for (const auto& c : {temporal_, spatial_}) {
    if (!(c.per_call_s >= 0.0) || !(c.per_element_s >= 0.0)) {
      fail("affine chunk cost coefficients must be >= 0");
    }
  }
}

AffineChunkCost AffineChunkCost::defaults() {
  return AffineChunkCost({0.005, 1.0e-8}, {0.005, 2.0e-9});
}

std::optional<double> AffineChunkCost::temporal_call(const ChunkWork& w) const {
  return temporal_.per_call_s +
         temporal_.per_element_s * static_cast<double>(w.input_elements + w.output_elements);
}

std::optional<double> AffineChunkCost::spatial_call(const ChunkWork& w) const {
  return spatial_.per_call_s +
         spatial_.per_element_s * static_cast<double>(w.input_elements + w.output_elements);
}

TableChunkCost::TableChunkCost(std::map<std::uint64_t, double> temporal,
                               std::map<std::uint64_t, double> spatial)
    : temporal_(std::move(temporal)), spatial_(std::move(spatial)) {
  for (const auto* table : {&temporal_, &spatial_}) {
    for (const auto& [frames, s] : *table) {
      if (!(s >= 0.0) || !std::isfinite(s)) fail("chunk latency table has a negative entry");
    }
  }
}

std::optional<double> TableChunkCost::temporal_call(const ChunkWork& w) const {
  const auto it = temporal_.find(w.frames_in);
  if (it == temporal_.end()) return std::nullopt;
  return it->second;
}

std::optional<double> TableChunkCost::spatial_call(const ChunkWork& w) const {
  const auto it = spatial_.find(w.frames_in);
  if (it == spatial_.end()) return std::nullopt;
  return it->second;
}

// ---------------------------------------------------------------------------
// Planner

std::optional<ChunkPlan> evaluate_chunk_plan(const TensorShape& latent,
                                             const LatentGeometry& geometry,
                                             const DecodeMemoryModel& memory,
                                             const ChunkCostModel& cost,
                                             std::uint64_t temporal_chunk,
                                             std::uint64_t spatial_chunk) {
  latent.validate();
  memory.validate();
  if (temporal_chunk < 1 || temporal_chunk > latent.frames) {
    fail("temporal chunk must lie in [1, latent frames]");
  }
  if (spatial_chunk < 1) fail("spatial chunk must be >= 1");

  using checked::product;
  const auto latent_plane = product({latent.channels, latent.height, latent.width});
  const auto pixel_plane =
      product({memory.pixel_channels, latent.height, geometry.spatial_factor, latent.width,
               geometry.spatial_factor});

  ChunkPlan plan;
  plan.temporal_chunk = temporal_chunk;
  double latency = 0.0;
  std::uint64_t peak = 0;

  for (const auto q : split(latent.frames, temporal_chunk)) {
    ChunkWork w;
    w.frames_in = q;
    w.frames_out = frames_of(q, geometry);
    w.input_elements = checked::mul(q, latent_plane);
    w.output_elements = checked::mul(w.frames_out, latent_plane);
    const auto s = cost.temporal_call(w);
    if (!s) return std::nullopt;
    latency += *s;
    peak = std::max(peak, scaled_bytes(memory.dtype_bytes,
                                       checked::add(w.input_elements, w.output_elements),
                                       memory.overhead_factor));
    plan.output_frames = checked::add(plan.output_frames, w.frames_out);
    ++plan.temporal_calls;
  }

  plan.spatial_chunk = std::min(spatial_chunk, plan.output_frames);
  for (const auto f : split(plan.output_frames, plan.spatial_chunk)) {
    ChunkWork w;
    w.frames_in = f;
    w.frames_out = f;
    w.input_elements = checked::mul(f, latent_plane);
    w.output_elements = checked::mul(f, pixel_plane);
    const auto s = cost.spatial_call(w);
    if (!s) return std::nullopt;
    latency += *s;
    peak = std::max(peak, scaled_bytes(memory.dtype_bytes,
                                       checked::add(w.input_elements, w.output_elements),
                                       memory.overhead_factor));
    ++plan.spatial_calls;
  }

  plan.est_peak_bytes = peak;
  plan.est_latency_s = latency;
  return plan;
}

PlanResult plan_vae_decode(const TensorShape& latent, const LatentGeometry& geometry,
                           const DecodeMemoryModel& memory, std::uint64_t budget_bytes,
                           const ChunkCostModel& cost, const ChunkOptions& options) {
  if (budget_bytes == 0) fail("decode memory budget must be > 0");
  latent.validate();
  geometry.validate();
  memory.validate();

  std::vector<std::uint64_t> temporal = options.temporal_chunks;
  if (temporal.empty()) {
    for (std::uint64_t q = 1; q <= latent.frames; ++q) temporal.push_back(q);
  }
  std::vector<std::uint64_t> spatial = options.spatial_chunks;
  if (spatial.empty()) {
    const auto max_frames = frames_of(latent.frames, geometry);
    for (std::uint64_t s = 1; s < max_frames; s *= 2) spatial.push_back(s);
    spatial.push_back(max_frames);
  }

  PlanResult result;
  result.min_achievable_bytes = std::numeric_limits<std::uint64_t>::max();
  auto better = [](const ChunkPlan& a, const ChunkPlan& b) {
    if (a.est_latency_s != b.est_latency_s) return a.est_latency_s < b.est_latency_s;
    if (a.est_peak_bytes != b.est_peak_bytes) return a.est_peak_bytes < b.est_peak_bytes;
    return std::tie(a.temporal_chunk, a.spatial_chunk) > std::tie(b.temporal_chunk, b.spatial_chunk);
  };

  for (const auto q : temporal) {
    if (q < 1 || q > latent.frames) fail("temporal chunk option out of range");
    for (const auto s : spatial) {
      const auto plan = evaluate_chunk_plan(latent, geometry, memory, cost, q, s);
      if (!plan) continue;
      if (options.target_frames && plan->output_frames != *options.target_frames) continue;
      ++result.candidates;
      result.min_achievable_bytes = std::min(result.min_achievable_bytes, plan->est_peak_bytes);
      if (plan->est_peak_bytes > budget_bytes) continue;
      if (!result.plan || better(*plan, *result.plan)) result.plan = plan;
    }
  }
  if (result.candidates == 0) result.min_achievable_bytes = 0;
  return result;
}

// ---------------------------------------------------------------------------
// JSON

nlohmann::json to_json(const PipelineEstimate& e) {
  nlohmann::json breakdown = nlohmann::json::array();
  for (const auto& t : e.breakdown) breakdown.push_back({{"stage", t.stage}, {"seconds", t.seconds}});
  return {{"latency_s", e.latency_s},
          {"breakdown", std::move(breakdown)},
          {"output_frames", e.output_frames},
          {"height_px", e.height_px},
          {"width_px", e.width_px}};
}

nlohmann::json to_json(const ChunkPlan& p) {
  return {{"temporal_chunk", p.temporal_chunk},   {"spatial_chunk", p.spatial_chunk},
          {"temporal_calls", p.temporal_calls},   {"spatial_calls", p.spatial_calls},
          {"output_frames", p.output_frames},     {"est_peak_bytes", p.est_peak_bytes},
          {"est_latency_s", p.est_latency_s}};
}

nlohmann::json to_json(const PlanResult& r) {
  return {{"feasible", r.feasible()},
          {"plan", r.plan ? to_json(*r.plan) : nlohmann::json(nullptr)},
          {"min_achievable_bytes", r.min_achievable_bytes},
          {"candidates", r.candidates}};
}

std::unique_ptr<ChunkCostModel> chunk_cost_from_json(const nlohmann::json& j) {
  try {
    const auto model = j.at("model").get<std::string>();
    if (model == "affine") {
      auto coeffs = [&](const char* key) {
        const auto& c = j.at(key);
        return AffineChunkCost::Coefficients{c.at("per_call_s").get<double>(),
                                             c.at("per_element_s").get<double>()};
      };
      return std::make_unique<AffineChunkCost>(coeffs("temporal"), coeffs("spatial"));
    }
    if (model == "table") {
      auto table = [&](const char* key) {
        std::map<std::uint64_t, double> t;
        for (const auto& e : j.at(key)) {
          const auto frames = e.at("frames").get<std::uint64_t>();
          if (!t.emplace(frames, e.at("latency_s").get<double>()).second) {
            fail(std::string("duplicate ") + key + " chunk entry for frames " +
                 std::to_string(frames));
          }
        }
        return t;
      };
      return std::make_unique<TableChunkCost>(table("temporal"), table("spatial"));
    }
    fail("unknown chunk cost model '" + model + "'");
  } catch (const nlohmann::json::exception& ex) {
    throw ValidationError(std::string("chunk cost model: ") + ex.what());
  }
}

}  // namespace archpilot
