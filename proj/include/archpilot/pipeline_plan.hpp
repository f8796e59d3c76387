#pragma once

// End-to-end generation latency and the memory-bounded chunk planner for a
// separable (temporal then spatial) VAE decoder.

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "archpilot/device_lut.hpp"
#include "archpilot/op_cost.hpp"

namespace archpilot {

enum class TemporalMapping {
  linear_quarter,  // n = 4 * latent_frames
  causal_4x,       // n = 4 * (latent_frames - 1) + 1
};

std::string_view to_string(TemporalMapping m);
TemporalMapping parse_temporal_mapping(std::string_view name);

struct LatentGeometry {
  std::uint64_t spatial_factor = 8;
  TemporalMapping temporal = TemporalMapping::causal_4x;

  void validate() const;
};

std::uint64_t frames_of(std::uint64_t latent_frames, const LatentGeometry& geometry);
// Inverse of frames_of; empty when `frames` is not an image of the mapping.
std::optional<std::uint64_t> latent_frames_of(std::uint64_t frames, const LatentGeometry& geometry);

struct PipelineSpec {
  std::uint32_t steps = 4;
  bool cfg_enabled = false;
  TensorShape latent{15, 4, 64, 64};
  LatentGeometry geometry;
  // Latent frames per temporal decoder call; 0 decodes the latent in one call.
  std::uint64_t decode_chunk = 5;
};

struct StageTerm {
  std::string stage;
  double seconds = 0.0;
};

struct PipelineEstimate {
  double latency_s = 0.0;  // left-to-right sum of breakdown
  std::vector<StageTerm> breakdown;
  std::uint64_t output_frames = 0;
  std::uint64_t height_px = 0;
  std::uint64_t width_px = 0;
};

// text_encoder + steps * unet_step * (cfg ? 2 : 1) + VAE decode. The VAE term
// is either the profile's combined vae_decode or its temporal and spatial
// decoder stages.
PipelineEstimate estimate_pipeline(const PipelineSpec& spec, const DeviceProfile& profile);

// Sum of a profile's VAE decode stages.
double vae_decode_latency(const DeviceProfile& profile);
// baseline VAE decode latency / optimized VAE decode latency.
double speedup_report(const DeviceProfile& baseline, const DeviceProfile& optimized);

// ---------------------------------------------------------------------------
// Chunked VAE decode

struct DecodeMemoryModel {
  std::uint64_t dtype_bytes = kDefaultDtypeBytes;
  double overhead_factor = 3.0;
  std::uint64_t pixel_channels = 3;

  void validate() const;
};

// Work of one decoder call.
struct ChunkWork {
  std::uint64_t frames_in = 0;
  std::uint64_t frames_out = 0;
  std::uint64_t input_elements = 0;
  std::uint64_t output_elements = 0;
};

class ChunkCostModel {
public:
  virtual ~ChunkCostModel() = default;
  // Empty result: the call cannot be costed, so plans using it are skipped.
  virtual std::optional<double> temporal_call(const ChunkWork& work) const = 0;
  virtual std::optional<double> spatial_call(const ChunkWork& work) const = 0;
};

// latency = per_call_s + per_element_s * (input + output elements).
class AffineChunkCost final : public ChunkCostModel {
public:
  struct Coefficients {
    double per_call_s = 0.0;
    double per_element_s = 0.0;
  };

  AffineChunkCost(Coefficients temporal, Coefficients spatial);
  // Illustrative defaults; calibrate from measurements for a real device.
  static AffineChunkCost defaults();

  std::optional<double> temporal_call(const ChunkWork& work) const override;
  std::optional<double> spatial_call(const ChunkWork& work) const override;

  const Coefficients& temporal() const { return temporal_; }
  const Coefficients& spatial() const { return spatial_; }

private:
  Coefficients temporal_;
  Coefficients spatial_;
};

// Measured per-call latency keyed by the number of input frames of the call.
class TableChunkCost final : public ChunkCostModel {
public:
  TableChunkCost(std::map<std::uint64_t, double> temporal, std::map<std::uint64_t, double> spatial);

  std::optional<double> temporal_call(const ChunkWork& work) const override;
  std::optional<double> spatial_call(const ChunkWork& work) const override;

private:
  std::map<std::uint64_t, double> temporal_;
  std::map<std::uint64_t, double> spatial_;
};

struct ChunkOptions {
  std::vector<std::uint64_t> temporal_chunks;  // latent frames per temporal call; empty = 1..n~
  std::vector<std::uint64_t> spatial_chunks;   // frames per spatial call; empty = powers of 2 + all
  std::optional<std::uint64_t> target_frames;  // only accept plans decoding exactly this many
};

struct ChunkPlan {
  std::uint64_t temporal_chunk = 0;
  std::uint64_t spatial_chunk = 0;
  std::uint64_t temporal_calls = 0;
  std::uint64_t spatial_calls = 0;
  std::uint64_t output_frames = 0;
  std::uint64_t est_peak_bytes = 0;
  double est_latency_s = 0.0;
};

struct PlanResult {
  std::optional<ChunkPlan> plan;
  // Smallest modeled peak over every costable candidate (feasible or not).
  std::uint64_t min_achievable_bytes = 0;
  std::size_t candidates = 0;

  bool feasible() const { return plan.has_value(); }
};

// Modeled cost of one (temporal_chunk, spatial_chunk) pair; chunks decode
// independently. Empty when the cost model cannot price a call.
std::optional<ChunkPlan> evaluate_chunk_plan(const TensorShape& latent,
                                             const LatentGeometry& geometry,
                                             const DecodeMemoryModel& memory,
                                             const ChunkCostModel& cost,
                                             std::uint64_t temporal_chunk,
                                             std::uint64_t spatial_chunk);

// Exhaustive search over the option grid: minimum latency among plans whose
// peak fits the budget; ties prefer lower peak, then larger chunks.
PlanResult plan_vae_decode(const TensorShape& latent, const LatentGeometry& geometry,
                           const DecodeMemoryModel& memory, std::uint64_t budget_bytes,
                           const ChunkCostModel& cost, const ChunkOptions& options = {});

nlohmann::json to_json(const PipelineEstimate& e);
nlohmann::json to_json(const ChunkPlan& p);
nlohmann::json to_json(const PlanResult& r);

// Cost model document: { "model": "affine", "temporal": {"per_call_s", "per_element_s"},
// "spatial": {...} } or { "model": "table", "temporal": [{"frames", "latency_s"}],
// "spatial": [...] }.
std::unique_ptr<ChunkCostModel> chunk_cost_from_json(const nlohmann::json& j);

}  // namespace archpilot
