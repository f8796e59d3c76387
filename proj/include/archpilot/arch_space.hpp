#pragma once

// Temporal-layer architecture search over a UNet with fixed insertion
// stages. A genome assigns each stage at most one temporal operator kind,
// repeated up to the stage's max_repeats. Latency and memory of a genome are
// the backbone base cost plus the LUT cost of every inserted operator.
//
// The search loop (evolve) alternates three phases per step:
//   latency over budget -> remove the op with the smallest dQ/dLatency,
//   memory over budget  -> remove the op with the smallest dQ/dMemory,
//   otherwise           -> add the op with the best combined value score,
// and stops when no add improves quality within budget. A seeded refinement
// stage then perturbs the converged genome (remove + tabu + re-run) and keeps
// strict improvements. A final exchange pass reassigns up to exchange_width
// stages at once, takes the best feasible improvement, refills greedily and
// repeats until no reassignment helps.

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "archpilot/device_lut.hpp"
#include "archpilot/op_cost.hpp"

namespace archpilot {

enum class StageRole { down, bottleneck, up };

std::string_view to_string(StageRole role);
StageRole parse_stage_role(std::string_view name);

struct StageSpec {
  std::uint32_t stage_id = 0;
  StageRole role = StageRole::down;
  TensorShape shape;
  std::vector<OperatorSpec> candidates;  // one temporal operator per allowed kind
  std::uint32_t max_repeats = 1;

  std::vector<OpKind> allowed_kinds() const;
  const OperatorSpec* candidate(OpKind kind) const;
};

struct SearchSpace {
  std::vector<StageSpec> stages;
  double base_latency_s = 0.0;
  std::uint64_t base_memory_bytes = 0;

  // Stage ids equal positions; roles ordered down* bottleneck* up*; spatial
  // size non-increasing through down stages and non-decreasing through up
  // stages; candidates are temporal kinds matching the stage channels.
  void validate() const;
  // Number of (stage, kind, repetition) insertion units.
  std::size_t insertion_units() const;
};

struct StageSlot {
  std::optional<OpKind> kind;
  std::uint32_t count = 0;

  friend bool operator==(const StageSlot&, const StageSlot&) = default;
};

struct ArchGenome {
  std::vector<StageSlot> slots;  // indexed by stage_id

  static ArchGenome empty(const SearchSpace& space);
  std::string key() const;
  std::uint32_t total_ops() const;

  friend bool operator==(const ArchGenome&, const ArchGenome&) = default;
};

enum class ActionDirection { add, remove };

struct Action {
  ActionDirection direction = ActionDirection::add;
  std::uint32_t stage_id = 0;
  OpKind kind = OpKind::Conv1D;

  friend auto operator<=>(const Action&, const Action&) = default;
};

std::string to_string(const Action& a);

struct ActionScore {
  Action action;
  double delta_quality = 0.0;
  double delta_latency_s = 0.0;
  double delta_memory_bytes = 0.0;
  std::optional<double> value_latency;  // empty when delta_latency_s == 0
  std::optional<double> value_memory;   // empty when delta_memory_bytes == 0
};

struct Constraints {
  double max_latency_s = 0.0;
  std::uint64_t max_memory_bytes = 0;
};

struct GenomeCost {
  double latency_s = 0.0;
  std::uint64_t memory_bytes = 0;
};

class QualityOracle {
public:
  virtual ~QualityOracle() = default;
  // Must be deterministic and safe to call concurrently.
  virtual double evaluate(const ArchGenome& genome) const = 0;
};

// quality = sum over occupied stages of weight(stage, kind) * count^lambda,
// plus seeded per-genome noise uniform in [-noise, noise].
class SyntheticOracle final : public QualityOracle {
public:
  using WeightKey = std::pair<std::uint32_t, OpKind>;

  explicit SyntheticOracle(std::map<WeightKey, double> weights, double lambda = 0.7,
                           std::uint64_t seed = 0, double noise = 0.0);

  double evaluate(const ArchGenome& genome) const override;

  const std::map<WeightKey, double>& weights() const { return weights_; }
  double lambda() const { return lambda_; }
  std::uint64_t seed() const { return seed_; }
  double noise() const { return noise_; }

private:
  std::map<WeightKey, double> weights_;
  double lambda_;
  std::uint64_t seed_;
  double noise_;
};

SyntheticOracle synthetic_oracle(std::map<SyntheticOracle::WeightKey, double> weights,
                                 double lambda = 0.7, std::uint64_t seed = 0, double noise = 0.0);

// Raised when the quality oracle throws; carries the genome being evaluated.
class OracleError : public std::runtime_error {
public:
  OracleError(const std::string& what, ArchGenome genome)
      : std::runtime_error(what), genome_(std::move(genome)) {}
  const ArchGenome& genome() const { return genome_; }

private:
  ArchGenome genome_;
};

// Throws ValidationError if the genome does not fit the space or inserts an
// operator that the LUT does not report as measured.
void validate_genome(const ArchGenome& genome, const SearchSpace& space, const DeviceLUT& lut);

GenomeCost genome_cost(const ArchGenome& genome, const SearchSpace& space, const DeviceLUT& lut);

bool is_legal(const Action& action, const ArchGenome& genome, const SearchSpace& space);
ArchGenome apply_action(const ArchGenome& genome, const Action& action, const SearchSpace& space);

// Legal removes plus adds that respect no-mixing, max_repeats, LUT
// measurement (not OOM, not missing) and the remaining memory budget.
// Sorted by (stage_id, kind, direction).
std::vector<Action> enumerate_actions(const ArchGenome& genome, const SearchSpace& space,
                                      const DeviceLUT& lut, std::uint64_t memory_budget_bytes);

ActionScore score_action(const ArchGenome& genome, const Action& action,
                         const QualityOracle& oracle, const DeviceLUT& lut,
                         const SearchSpace& space);

enum class ValueCombiner {
  rank_sum,  // sum of ranks under the latency and memory value orderings
  latency,   // dQ/dLatency only
  memory,    // dQ/dMemory only
};

std::string_view to_string(ValueCombiner c);
ValueCombiner parse_value_combiner(std::string_view name);

struct SearchConfig {
  std::uint32_t max_steps = 200;
  std::uint64_t seed = 0;
  ValueCombiner combiner = ValueCombiner::rank_sum;
  std::uint32_t refine_rounds = 16;  // 0 runs the plain greedy loop only
  // Final local search over genomes differing in up to this many stages; 0 skips it.
  std::uint32_t exchange_width = 3;
  unsigned threads = 1;
  std::optional<ArchGenome> initial;
};

enum class SearchStatus { converged, max_steps, infeasible };
std::string_view to_string(SearchStatus s);

enum class StepPhase { repair_latency, repair_memory, add, mutate, accept, reject, exchange };
std::string_view to_string(StepPhase p);

struct TraceStep {
  std::uint32_t step = 0;
  // 0 for the initial descent, r for refinement round r, refine_rounds + 1 for
  // the exchange phase
  std::uint32_t round = 0;
  StepPhase phase = StepPhase::add;
  std::vector<Action> actions;
  std::optional<ActionScore> score;
  double latency_s = 0.0;  // state after the step
  std::uint64_t memory_bytes = 0;
  double quality = 0.0;
  bool latency_ok = false;
  bool memory_ok = false;
};

struct ParetoPoint {
  double latency_s = 0.0;
  std::uint64_t memory_bytes = 0;
  double quality = 0.0;
  std::string genome_id;

  friend bool operator==(const ParetoPoint&, const ParetoPoint&) = default;
};

struct SearchResult {
  ArchGenome genome;
  double quality = 0.0;
  GenomeCost cost;
  SearchStatus status = SearchStatus::converged;
  bool feasible = false;
  std::string message;
  std::vector<TraceStep> trace;
  std::vector<ParetoPoint> explored;  // every genome evaluated, in first-visit order
};

SearchResult evolve(const SearchSpace& space, const DeviceLUT& lut, const QualityOracle& oracle,
                    const Constraints& constraints, const SearchConfig& config);

// Non-dominated subset (lower latency, lower memory, higher quality are
// better), duplicates collapsed to their first occurrence, stably sorted by
// latency. Throws ValidationError on empty input.
std::vector<ParetoPoint> pareto_front(std::span<const ParetoPoint> points);
bool dominates(const ParetoPoint& a, const ParetoPoint& b);

// CSV with header latency_s,memory_bytes,quality,genome_id.
std::vector<ParetoPoint> read_points_csv(std::istream& in);
void write_points_csv(std::ostream& out, std::span<const ParetoPoint> points);

// JSON.
SearchSpace space_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SearchSpace& space);
ArchGenome genome_from_json(const nlohmann::json& j, const SearchSpace& space);
nlohmann::json to_json(const ArchGenome& genome);
nlohmann::json to_json(const Action& a);
nlohmann::json to_json(const ActionScore& s);
nlohmann::json to_json(const TraceStep& s);
nlohmann::json to_json(const SearchResult& r);
nlohmann::json to_json(const ParetoPoint& p);

// Search configuration document:
//   { "constraints": { "max_latency_s": x, "max_memory_bytes": n },
//     "max_steps": 200, "seed": 0, "combiner": "rank_sum", "refine_rounds": 16,
//     "exchange_width": 3,
//     "oracle": { "lambda": 0.7, "noise": 0.0,
//                 "weights": [ { "stage": 0, "kind": "SelfAttn1D", "weight": 0.6 } ] },
//     "initial": [ { "stage": 0, "kind": "Conv1D", "count": 1 } ] }
struct SearchJob {
  Constraints constraints;
  SearchConfig config;
  std::map<SyntheticOracle::WeightKey, double> weights;
  double lambda = 0.7;
  double noise = 0.0;
};

SearchJob search_job_from_json(const nlohmann::json& j, const SearchSpace& space);
nlohmann::json to_json(const SearchJob& job);

}  // namespace archpilot
