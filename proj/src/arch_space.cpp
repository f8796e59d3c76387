#include "archpilot/arch_space.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <exception>
#include <istream>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <thread>
#include <tuple>

#include "archpilot/errors.hpp"

namespace archpilot {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw ValidationError(msg); }

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

const StageSpec& stage_at(const SearchSpace& space, std::uint32_t id) {
  if (id >= space.stages.size()) fail("stage " + std::to_string(id) + " does not exist");
  return space.stages[id];
}

// Runs f(i) for i in [0, n) on up to `threads` workers.
template <class F>
void parallel_for(std::size_t n, unsigned threads, F&& f) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  const auto workers = std::min<std::size_t>(threads, n);
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  for (std::size_t t = 0; t < workers; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) f(i);
    });
  }
}

double checked_evaluate(const QualityOracle& oracle, const ArchGenome& g) {
  try {
    return oracle.evaluate(g);
  } catch (const OracleError&) {
    throw;
  } catch (const std::exception& ex) {
    throw OracleError("quality oracle failed on genome " + g.key() + ": " + ex.what(), g);
  }
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace

// ---------------------------------------------------------------------------
// Space and genome

std::string_view to_string(StageRole role) {
  switch (role) {
    case StageRole::down: return "down";
    case StageRole::bottleneck: return "bottleneck";
    case StageRole::up: return "up";
  }
  return "unknown";
}

StageRole parse_stage_role(std::string_view name) {
  if (name == "down") return StageRole::down;
  if (name == "bottleneck") return StageRole::bottleneck;
  if (name == "up") return StageRole::up;
  fail("unknown stage role '" + std::string(name) + "'");
}

std::vector<OpKind> StageSpec::allowed_kinds() const {
  std::vector<OpKind> kinds;
  for (const auto& c : candidates) kinds.push_back(c.kind);
  std::sort(kinds.begin(), kinds.end());
  return kinds;
}

const OperatorSpec* StageSpec::candidate(OpKind kind) const {
  for (const auto& c : candidates) {
    if (c.kind == kind) return &c;
  }
  return nullptr;
}

void SearchSpace::validate() const {
  if (stages.empty()) fail("search space has no stages");
  if (!std::isfinite(base_latency_s) || base_latency_s < 0.0) {
    fail("base_latency_s must be finite and >= 0");
  }
  int phase = 0;  // 0 down, 1 bottleneck, 2 up
  std::uint64_t prev_sites = 0;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const auto& st = stages[i];
    const auto label = "stage " + std::to_string(i);
    if (st.stage_id != i) fail(label + ": stage_id must equal its position");
    st.shape.validate();
    if (st.max_repeats < 1) fail(label + ": max_repeats must be >= 1");

    const int role_phase = static_cast<int>(st.role);
    if (role_phase < phase) fail(label + ": roles must be ordered down, bottleneck, up");
    const auto sites = st.shape.sites();
    if (i > 0) {
      const bool shrinking = st.role != StageRole::up;
      if (shrinking && sites > prev_sites) {
        fail(label + ": spatial size must not grow through down/bottleneck stages");
      }
      if (!shrinking && role_phase == phase && sites < prev_sites) {
        fail(label + ": spatial size must not shrink through up stages");
      }
    }
    phase = role_phase;
    prev_sites = sites;

    std::set<OpKind> seen;
    for (const auto& c : st.candidates) {
      if (c.kind == OpKind::SpatialBlock) fail(label + ": SpatialBlock is not a temporal operator");
      if (!seen.insert(c.kind).second) {
        fail(label + ": duplicate candidate kind " + std::string(to_string(c.kind)));
      }
      archpilot::validate(c, st.shape);
    }
  }
}

std::size_t SearchSpace::insertion_units() const {
  std::size_t n = 0;
  for (const auto& st : stages) n += st.candidates.size() * st.max_repeats;
  return n;
}

ArchGenome ArchGenome::empty(const SearchSpace& space) {
  ArchGenome g;
  g.slots.resize(space.stages.size());
  return g;
}

std::string ArchGenome::key() const {
  std::string k;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (i) k += '|';
    k += std::to_string(i);
    k += ':';
    if (slots[i].kind && slots[i].count > 0) {
      k += to_string(*slots[i].kind);
      k += '*';
      k += std::to_string(slots[i].count);
    } else {
      k += '-';
    }
  }
  return k;
}

std::uint32_t ArchGenome::total_ops() const {
  std::uint32_t n = 0;
  for (const auto& s : slots) n += s.count;
  return n;
}

std::string to_string(const Action& a) {
  return std::string(a.direction == ActionDirection::add ? "+" : "-") +
         std::string(to_string(a.kind)) + "[" + std::to_string(a.stage_id) + "]";
}

void validate_genome(const ArchGenome& genome, const SearchSpace& space, const DeviceLUT& lut) {
  if (genome.slots.size() != space.stages.size()) {
    fail("genome has " + std::to_string(genome.slots.size()) + " slots, space has " +
         std::to_string(space.stages.size()) + " stages");
  }
  for (std::size_t i = 0; i < genome.slots.size(); ++i) {
    const auto& slot = genome.slots[i];
    const auto& st = space.stages[i];
    if (slot.kind.has_value() != (slot.count > 0)) {
      fail("stage " + std::to_string(i) + ": kind and count must be set together");
    }
    if (!slot.kind) continue;
    const auto* op = st.candidate(*slot.kind);
    if (op == nullptr) {
      fail("stage " + std::to_string(i) + ": kind " + std::string(to_string(*slot.kind)) +
           " is not allowed");
    }
    if (slot.count > st.max_repeats) {
      fail("stage " + std::to_string(i) + ": count exceeds max_repeats");
    }
    const auto r = lut.query(*op, st.shape);
    if (!r.ok()) {
      fail("stage " + std::to_string(i) + ": " + to_string(*op) + " @ " + to_string(st.shape) +
           (r.status == LookupStatus::oom ? " is OOM on " : " is not measured on ") +
           lut.device());
    }
  }
}

GenomeCost genome_cost(const ArchGenome& genome, const SearchSpace& space, const DeviceLUT& lut) {
  GenomeCost c{space.base_latency_s, space.base_memory_bytes};
  for (std::size_t i = 0; i < genome.slots.size(); ++i) {
    const auto& slot = genome.slots[i];
    if (!slot.kind || slot.count == 0) continue;
    const auto& st = stage_at(space, static_cast<std::uint32_t>(i));
    const auto* op = st.candidate(*slot.kind);
    if (op == nullptr) fail("stage " + std::to_string(i) + ": kind not allowed");
    const auto r = lut.query(*op, st.shape);
    if (!r.ok()) fail("stage " + std::to_string(i) + ": operator not measured or OOM");
    c.latency_s += slot.count * r.value.latency_s;
    c.memory_bytes += slot.count * r.value.memory_bytes;
  }
  return c;
}

bool is_legal(const Action& action, const ArchGenome& genome, const SearchSpace& space) {
  if (action.stage_id >= space.stages.size() || action.stage_id >= genome.slots.size()) {
    return false;
  }
  const auto& st = space.stages[action.stage_id];
  if (st.candidate(action.kind) == nullptr) return false;
  const auto& slot = genome.slots[action.stage_id];
  if (action.direction == ActionDirection::remove) {
    return slot.kind == action.kind && slot.count > 0;
  }
  return (!slot.kind || *slot.kind == action.kind) && slot.count < st.max_repeats;
}

ArchGenome apply_action(const ArchGenome& genome, const Action& action, const SearchSpace& space) {
  if (!is_legal(action, genome, space)) fail("illegal action " + to_string(action));
  ArchGenome g = genome;
  auto& slot = g.slots[action.stage_id];
  if (action.direction == ActionDirection::add) {
    slot.kind = action.kind;
    ++slot.count;
  } else if (--slot.count == 0) {
    slot.kind.reset();
  }
  return g;
}

std::vector<Action> enumerate_actions(const ArchGenome& genome, const SearchSpace& space,
                                      const DeviceLUT& lut, std::uint64_t memory_budget_bytes) {
  const auto cost = genome_cost(genome, space, lut);
  const std::uint64_t remaining =
      cost.memory_bytes >= memory_budget_bytes ? 0 : memory_budget_bytes - cost.memory_bytes;

  std::vector<Action> out;
  for (const auto& st : space.stages) {
    for (const auto kind : st.allowed_kinds()) {
      const Action add{ActionDirection::add, st.stage_id, kind};
      if (is_legal(add, genome, space)) {
        const auto r = lut.query(*st.candidate(kind), st.shape);
        if (r.ok() && r.value.memory_bytes <= remaining) out.push_back(add);
      }
      const Action remove{ActionDirection::remove, st.stage_id, kind};
      if (is_legal(remove, genome, space)) out.push_back(remove);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

namespace {

ActionScore make_score(const Action& a, double q_before, double q_after, const GenomeCost& before,
                       const GenomeCost& after) {
  ActionScore s;
  s.action = a;
  s.delta_quality = q_after - q_before;
  s.delta_latency_s = after.latency_s - before.latency_s;
  s.delta_memory_bytes =
      static_cast<double>(after.memory_bytes) - static_cast<double>(before.memory_bytes);
  if (s.delta_latency_s != 0.0) s.value_latency = s.delta_quality / s.delta_latency_s;
  if (s.delta_memory_bytes != 0.0) s.value_memory = s.delta_quality / s.delta_memory_bytes;
  return s;
}

}  // namespace

ActionScore score_action(const ArchGenome& genome, const Action& action,
                         const QualityOracle& oracle, const DeviceLUT& lut,
                         const SearchSpace& space) {
  const auto after = apply_action(genome, action, space);
  return make_score(action, checked_evaluate(oracle, genome), checked_evaluate(oracle, after),
                    genome_cost(genome, space, lut), genome_cost(after, space, lut));
}

// ---------------------------------------------------------------------------
// Oracle

SyntheticOracle::SyntheticOracle(std::map<WeightKey, double> weights, double lambda,
                                 std::uint64_t seed, double noise)
    : weights_(std::move(weights)), lambda_(lambda), seed_(seed), noise_(noise) {
  if (!(lambda_ >= 0.0) || !std::isfinite(lambda_)) fail("oracle lambda must be >= 0");
  if (!(noise_ >= 0.0) || !std::isfinite(noise_)) fail("oracle noise must be >= 0");
}

double SyntheticOracle::evaluate(const ArchGenome& genome) const {
  double q = 0.0;
  for (std::size_t i = 0; i < genome.slots.size(); ++i) {
    const auto& slot = genome.slots[i];
    if (!slot.kind || slot.count == 0) continue;
    const auto it = weights_.find({static_cast<std::uint32_t>(i), *slot.kind});
    if (it == weights_.end()) continue;
    q += it->second * std::pow(static_cast<double>(slot.count), lambda_);
  }
  if (noise_ > 0.0) {
    const auto bits = splitmix64(fnv1a(genome.key()) ^ splitmix64(seed_));
    const double u = static_cast<double>(bits >> 11) * 0x1.0p-53;  // [0, 1)
    q += noise_ * (2.0 * u - 1.0);
  }
  return q;
}

SyntheticOracle synthetic_oracle(std::map<SyntheticOracle::WeightKey, double> weights,
                                 double lambda, std::uint64_t seed, double noise) {
  return SyntheticOracle(std::move(weights), lambda, seed, noise);
}

// ---------------------------------------------------------------------------
// Search

std::string_view to_string(ValueCombiner c) {
  switch (c) {
    case ValueCombiner::rank_sum: return "rank_sum";
    case ValueCombiner::latency: return "latency";
    case ValueCombiner::memory: return "memory";
  }
  return "unknown";
}

ValueCombiner parse_value_combiner(std::string_view name) {
  if (name == "rank_sum") return ValueCombiner::rank_sum;
  if (name == "latency") return ValueCombiner::latency;
  if (name == "memory") return ValueCombiner::memory;
  fail("unknown value combiner '" + std::string(name) + "'");
}

std::string_view to_string(SearchStatus s) {
  switch (s) {
    case SearchStatus::converged: return "converged";
    case SearchStatus::max_steps: return "max_steps";
    case SearchStatus::infeasible: return "infeasible";
  }
  return "unknown";
}

std::string_view to_string(StepPhase p) {
  switch (p) {
    case StepPhase::repair_latency: return "repair_latency";
    case StepPhase::repair_memory: return "repair_memory";
    case StepPhase::add: return "add";
    case StepPhase::mutate: return "mutate";
    case StepPhase::accept: return "accept";
    case StepPhase::reject: return "reject";
    case StepPhase::exchange: return "exchange";
  }
  return "unknown";
}

namespace {

// Ordering of add-phase candidates under one value score. A zero delta means
// the action is free in that resource, which ranks ahead of every finite
// ratio; free actions compare by quality gain.
bool value_better(const std::optional<double>& va, double dqa, const std::optional<double>& vb,
                  double dqb) {
  if (!va && vb) return true;
  if (va && !vb) return false;
  if (!va && !vb) return dqa > dqb;
  return *va > *vb;
}

// Competition ranks: number of candidates strictly better.
template <class Better>
std::vector<std::size_t> competition_ranks(const std::vector<ActionScore>& xs, Better better) {
  std::vector<std::size_t> r(xs.size(), 0);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    for (std::size_t j = 0; j < xs.size(); ++j) {
      if (j != i && better(xs[j], xs[i])) ++r[i];
    }
  }
  return r;
}

bool tie_order(const Action& a, const Action& b) {
  return std::tie(a.stage_id, a.kind) < std::tie(b.stage_id, b.kind);
}

class Searcher {
public:
  Searcher(const SearchSpace& space, const DeviceLUT& lut, const QualityOracle& oracle,
           const Constraints& constraints, const SearchConfig& config)
      : space_(space), lut_(lut), oracle_(oracle), limits_(constraints), config_(config) {}

  SearchResult run();

private:
  struct Evaluated {
    double quality;
    GenomeCost cost;
  };

  using Tabu = std::set<std::pair<std::uint32_t, OpKind>>;

  const Evaluated& evaluate(const ArchGenome& g);
  void evaluate_batch(const std::vector<ArchGenome>& genomes);
  std::vector<ActionScore> score_all(const ArchGenome& g, const std::vector<Action>& actions);
  SearchStatus descend(ArchGenome& g, std::uint32_t round, const Tabu& tabu);
  void exchange(ArchGenome& best, std::uint32_t round);
  std::vector<StageSlot> stage_settings(const StageSpec& st) const;
  std::optional<ActionScore> pick_add(std::vector<ActionScore> scores) const;
  void record(std::uint32_t round, StepPhase phase, std::vector<Action> actions,
              std::optional<ActionScore> score, const ArchGenome& g);

  bool latency_ok(const GenomeCost& c) const { return c.latency_s <= limits_.max_latency_s; }
  bool memory_ok(const GenomeCost& c) const { return c.memory_bytes <= limits_.max_memory_bytes; }

  const SearchSpace& space_;
  const DeviceLUT& lut_;
  const QualityOracle& oracle_;
  Constraints limits_;
  SearchConfig config_;

  std::map<std::string, Evaluated> memo_;
  std::vector<ParetoPoint> explored_;
  std::vector<TraceStep> trace_;
  std::uint32_t steps_ = 0;
};

const Searcher::Evaluated& Searcher::evaluate(const ArchGenome& g) {
  auto key = g.key();
  if (auto it = memo_.find(key); it != memo_.end()) return it->second;
  const Evaluated e{checked_evaluate(oracle_, g), genome_cost(g, space_, lut_)};
  explored_.push_back({e.cost.latency_s, e.cost.memory_bytes, e.quality, key});
  return memo_.emplace(std::move(key), e).first->second;
}

void Searcher::evaluate_batch(const std::vector<ArchGenome>& genomes) {
  std::vector<const ArchGenome*> todo;
  std::set<std::string> pending;
  for (const auto& g : genomes) {
    auto key = g.key();
    if (!memo_.count(key) && pending.insert(std::move(key)).second) todo.push_back(&g);
  }
  std::vector<double> q(todo.size(), 0.0);
  std::vector<std::exception_ptr> errors(todo.size());
  parallel_for(todo.size(), config_.threads, [&](std::size_t i) {
    try {
      q[i] = checked_evaluate(oracle_, *todo[i]);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  });
  // Insertion in candidate order keeps the memo and explored list independent
  // of thread scheduling.
  for (std::size_t i = 0; i < todo.size(); ++i) {
    if (errors[i]) std::rethrow_exception(errors[i]);
    const Evaluated e{q[i], genome_cost(*todo[i], space_, lut_)};
    auto key = todo[i]->key();
    explored_.push_back({e.cost.latency_s, e.cost.memory_bytes, e.quality, key});
    memo_.emplace(std::move(key), e);
  }
}

std::vector<ActionScore> Searcher::score_all(const ArchGenome& g,
                                             const std::vector<Action>& actions) {
  std::vector<ArchGenome> after;
  after.reserve(actions.size() + 1);
  after.push_back(g);
  for (const auto& a : actions) after.push_back(apply_action(g, a, space_));
  evaluate_batch(after);

  const auto& base = memo_.at(g.key());
  std::vector<ActionScore> out;
  out.reserve(actions.size());
  for (std::size_t i = 0; i < actions.size(); ++i) {
    const auto& e = memo_.at(after[i + 1].key());
    out.push_back(make_score(actions[i], base.quality, e.quality, base.cost, e.cost));
  }
  return out;
}

std::optional<ActionScore> Searcher::pick_add(std::vector<ActionScore> scores) const {
  if (scores.empty()) return std::nullopt;
  const auto lat_ranks = competition_ranks(scores, [](const ActionScore& a, const ActionScore& b) {
    return value_better(a.value_latency, a.delta_quality, b.value_latency, b.delta_quality);
  });
  const auto mem_ranks = competition_ranks(scores, [](const ActionScore& a, const ActionScore& b) {
    return value_better(a.value_memory, a.delta_quality, b.value_memory, b.delta_quality);
  });

  std::size_t best = 0;
  std::size_t best_key = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    std::size_t k = 0;
    switch (config_.combiner) {
      case ValueCombiner::rank_sum: k = lat_ranks[i] + mem_ranks[i]; break;
      case ValueCombiner::latency: k = lat_ranks[i]; break;
      case ValueCombiner::memory: k = mem_ranks[i]; break;
    }
    if (i == 0 || k < best_key ||
        (k == best_key && tie_order(scores[i].action, scores[best].action))) {
      best = i;
      best_key = k;
    }
  }
  return scores[best];
}

void Searcher::record(std::uint32_t round, StepPhase phase, std::vector<Action> actions,
                      std::optional<ActionScore> score, const ArchGenome& g) {
  const auto& e = evaluate(g);
  TraceStep s;
  s.step = steps_;
  s.round = round;
  s.phase = phase;
  s.actions = std::move(actions);
  s.score = std::move(score);
  s.latency_s = e.cost.latency_s;
  s.memory_bytes = e.cost.memory_bytes;
  s.quality = e.quality;
  s.latency_ok = latency_ok(e.cost);
  s.memory_ok = memory_ok(e.cost);
  trace_.push_back(std::move(s));
}

SearchStatus Searcher::descend(ArchGenome& g, std::uint32_t round, const Tabu& tabu) {
  while (true) {
    if (steps_ >= config_.max_steps) return SearchStatus::max_steps;
    const auto cost = evaluate(g).cost;
    const bool lat_ok = latency_ok(cost);
    const bool mem_ok = memory_ok(cost);
    const auto actions = enumerate_actions(g, space_, lut_, limits_.max_memory_bytes);

    if (!lat_ok || !mem_ok) {
      std::vector<Action> removals;
      for (const auto& a : actions) {
        if (a.direction == ActionDirection::remove) removals.push_back(a);
      }
      const auto scores = score_all(g, removals);
      // Repair only with moves that strictly reduce the violated resource.
      const ActionScore* pick = nullptr;
      for (const auto& s : scores) {
        const auto& value = !lat_ok ? s.value_latency : s.value_memory;
        const double delta = !lat_ok ? s.delta_latency_s : s.delta_memory_bytes;
        if (!(delta < 0.0) || !value) continue;
        if (pick == nullptr) {
          pick = &s;
          continue;
        }
        const auto& pv = !lat_ok ? *pick->value_latency : *pick->value_memory;
        if (*value < pv || (*value == pv && tie_order(s.action, pick->action))) pick = &s;
      }
      if (pick == nullptr) return SearchStatus::infeasible;
      g = apply_action(g, pick->action, space_);
      ++steps_;
      record(round, !lat_ok ? StepPhase::repair_latency : StepPhase::repair_memory,
             {pick->action}, *pick, g);
      continue;
    }

    std::vector<Action> adds;
    for (const auto& a : actions) {
      if (a.direction == ActionDirection::add && !tabu.count({a.stage_id, a.kind})) {
        adds.push_back(a);
      }
    }
    auto scores = score_all(g, adds);
    std::erase_if(scores, [&](const ActionScore& s) {
      if (!(s.delta_quality > 0.0)) return true;
      const auto& after = memo_.at(apply_action(g, s.action, space_).key()).cost;
      return !latency_ok(after) || !memory_ok(after);
    });
    const auto pick = pick_add(std::move(scores));
    if (!pick) return SearchStatus::converged;
    g = apply_action(g, pick->action, space_);
    ++steps_;
    record(round, StepPhase::add, {pick->action}, *pick, g);
  }
}

std::vector<StageSlot> Searcher::stage_settings(const StageSpec& st) const {
  std::vector<StageSlot> out{StageSlot{}};
  for (const auto kind : st.allowed_kinds()) {
    if (!lut_.query(*st.candidate(kind), st.shape).ok()) continue;
    for (std::uint32_t c = 1; c <= st.max_repeats; ++c) out.push_back({kind, c});
  }
  return out;
}

void Searcher::exchange(ArchGenome& best, std::uint32_t round) {
  std::vector<std::vector<StageSlot>> settings;
  for (const auto& st : space_.stages) settings.push_back(stage_settings(st));
  const auto n = best.slots.size();

  while (steps_ < config_.max_steps) {
    // Every genome differing from best in 1..exchange_width stages.
    std::vector<ArchGenome> cands;
    ArchGenome cur = best;
    const auto extend = [&](auto&& self, std::size_t from, std::uint32_t changed) -> void {
      for (std::size_t i = from; i < n; ++i) {
        for (const auto& setting : settings[i]) {
          if (setting == best.slots[i]) continue;
          cur.slots[i] = setting;
          cands.push_back(cur);
          if (changed + 1 < config_.exchange_width) self(self, i + 1, changed + 1);
        }
        cur.slots[i] = best.slots[i];
      }
    };
    extend(extend, 0, 0);
    evaluate_batch(cands);

    // Best strict improvement; the first in enumeration order wins ties.
    const double base = evaluate(best).quality;
    const ArchGenome* pick = nullptr;
    double pick_q = base;
    for (const auto& c : cands) {
      const auto& e = memo_.at(c.key());
      if (latency_ok(e.cost) && memory_ok(e.cost) && e.quality > pick_q) {
        pick = &c;
        pick_q = e.quality;
      }
    }
    if (pick == nullptr) return;

    ArchGenome cand = *pick;
    std::vector<Action> moves;
    for (std::size_t i = 0; i < n; ++i) {
      const auto& from = best.slots[i];
      const auto& to = cand.slots[i];
      if (from == to) continue;
      const auto id = static_cast<std::uint32_t>(i);
      for (std::uint32_t c = 0; c < from.count; ++c) {
        moves.push_back({ActionDirection::remove, id, *from.kind});
      }
      for (std::uint32_t c = 0; c < to.count; ++c) {
        moves.push_back({ActionDirection::add, id, *to.kind});
      }
    }
    ++steps_;
    record(round, StepPhase::exchange, std::move(moves), std::nullopt, cand);
    // The reassigned genome is feasible, so descent only adds.
    descend(cand, round, {});
    best = std::move(cand);
  }
}

SearchResult Searcher::run() {
  space_.validate();
  if (!(limits_.max_latency_s > 0.0) || limits_.max_memory_bytes == 0) {
    fail("constraints must be positive");
  }
  ArchGenome g = config_.initial.value_or(ArchGenome::empty(space_));
  validate_genome(g, space_, lut_);

  SearchResult result;
  result.status = descend(g, 0, {});
  ArchGenome best = g;

  if (result.status == SearchStatus::converged) {
    std::mt19937_64 rng(config_.seed);
    for (std::uint32_t round = 1; round <= config_.refine_rounds; ++round) {
      if (steps_ >= config_.max_steps) break;
      std::vector<std::uint32_t> occupied;
      for (std::uint32_t i = 0; i < best.slots.size(); ++i) {
        if (best.slots[i].count > 0) occupied.push_back(i);
      }
      if (occupied.empty()) break;

      // Fisher-Yates on the occupied stages; the first m are cleared.
      for (std::size_t i = occupied.size() - 1; i > 0; --i) {
        std::uniform_int_distribution<std::size_t> pick(0, i);
        std::swap(occupied[i], occupied[pick(rng)]);
      }
      const auto max_m = std::min<std::size_t>(2, occupied.size());
      const auto m = std::uniform_int_distribution<std::size_t>(1, max_m)(rng);

      ArchGenome cand = best;
      Tabu tabu;
      std::vector<Action> removed;
      for (std::size_t i = 0; i < m; ++i) {
        const auto stage = occupied[i];
        auto& slot = cand.slots[stage];
        tabu.insert({stage, *slot.kind});
        for (std::uint32_t c = 0; c < slot.count; ++c) {
          removed.push_back({ActionDirection::remove, stage, *slot.kind});
        }
        slot = StageSlot{};
      }
      std::sort(removed.begin(), removed.end());
      ++steps_;
      record(round, StepPhase::mutate, std::move(removed), std::nullopt, cand);

      auto st = descend(cand, round, tabu);
      if (st == SearchStatus::converged) st = descend(cand, round, {});
      const auto& ec = evaluate(cand);
      const bool better = st == SearchStatus::converged && latency_ok(ec.cost) &&
                          memory_ok(ec.cost) && ec.quality > evaluate(best).quality;
      record(round, better ? StepPhase::accept : StepPhase::reject, {}, std::nullopt, cand);
      if (better) best = cand;
    }
    if (config_.exchange_width > 0) exchange(best, config_.refine_rounds + 1);
  }

  const auto& e = evaluate(best);
  result.genome = best;
  result.quality = e.quality;
  result.cost = e.cost;
  result.feasible = latency_ok(e.cost) && memory_ok(e.cost);
  switch (result.status) {
    case SearchStatus::converged: result.message = "converged"; break;
    case SearchStatus::max_steps:
      result.message = "step limit reached before convergence";
      break;
    case SearchStatus::infeasible:
      result.message = "no removal can reduce the violated constraint; returning best-effort genome";
      break;
  }
  result.trace = std::move(trace_);
  result.explored = std::move(explored_);
  return result;
}

}  // namespace

SearchResult evolve(const SearchSpace& space, const DeviceLUT& lut, const QualityOracle& oracle,
                    const Constraints& constraints, const SearchConfig& config) {
  return Searcher(space, lut, oracle, constraints, config).run();
}

// ---------------------------------------------------------------------------
// Pareto

bool dominates(const ParetoPoint& a, const ParetoPoint& b) {
  const bool no_worse = a.latency_s <= b.latency_s && a.memory_bytes <= b.memory_bytes &&
                        a.quality >= b.quality;
  const bool better = a.latency_s < b.latency_s || a.memory_bytes < b.memory_bytes ||
                      a.quality > b.quality;
  return no_worse && better;
}

std::vector<ParetoPoint> pareto_front(std::span<const ParetoPoint> points) {
  if (points.empty()) fail("pareto_front requires at least one point");
  std::vector<ParetoPoint> front;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto& p = points[i];
    bool keep = true;
    for (std::size_t j = 0; j < points.size() && keep; ++j) {
      if (dominates(points[j], p)) keep = false;
    }
    for (const auto& f : front) {
      if (f.latency_s == p.latency_s && f.memory_bytes == p.memory_bytes &&
          f.quality == p.quality) {
        keep = false;
        break;
      }
    }
    if (keep) front.push_back(p);
  }
  std::stable_sort(front.begin(), front.end(), [](const ParetoPoint& a, const ParetoPoint& b) {
    return a.latency_s < b.latency_s;
  });
  return front;
}

std::vector<ParetoPoint> read_points_csv(std::istream& in) {
  std::vector<ParetoPoint> out;
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    for (std::string f; std::getline(ss, f, ',');) fields.push_back(f);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    if (!header_seen) {
      if (fields.size() < 3 || fields[0] != "latency_s" || fields[1] != "memory_bytes" ||
          fields[2] != "quality") {
        throw ParseError("CSV header must be latency_s,memory_bytes,quality[,genome_id]",
                         line_no, 1);
      }
      header_seen = true;
      continue;
    }
    if (fields.size() < 3 || fields.size() > 4) {
      throw ParseError("expected 3 or 4 CSV fields, got " + std::to_string(fields.size()),
                       line_no, 1);
    }
    ParetoPoint p;
    try {
      std::size_t used = 0;
      p.latency_s = std::stod(fields[0], &used);
      if (used != fields[0].size()) throw std::invalid_argument("latency_s");
      if (fields[1].find_first_not_of("0123456789") != std::string::npos || fields[1].empty()) {
        throw std::invalid_argument("memory_bytes");
      }
      p.memory_bytes = std::stoull(fields[1]);
      p.quality = std::stod(fields[2], &used);
      if (used != fields[2].size()) throw std::invalid_argument("quality");
    } catch (const std::exception& ex) {
      throw ParseError(std::string("malformed CSV value (") + ex.what() + ")", line_no, 1);
    }
    if (fields.size() == 4) p.genome_id = fields[3];
    out.push_back(std::move(p));
  }
  if (!header_seen) throw ParseError("empty CSV input", line_no, 1);
  return out;
}

void write_points_csv(std::ostream& out, std::span<const ParetoPoint> points) {
  out << "latency_s,memory_bytes,quality,genome_id\n";
  for (const auto& p : points) {
    out << format_double(p.latency_s) << ',' << p.memory_bytes << ','
        << format_double(p.quality) << ',' << p.genome_id << '\n';
  }
}

// ---------------------------------------------------------------------------
// JSON

namespace {

template <class T>
T get_field(const nlohmann::json& j, const char* key, const std::string& ctx) {
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& ex) {
    throw ValidationError(ctx + ": field '" + key + "': " + ex.what());
  }
}

std::uint64_t get_count(const nlohmann::json& j, const char* key, const std::string& ctx) {
  if (!j.contains(key)) throw ValidationError(ctx + ": missing field '" + key + "'");
  const auto& v = j.at(key);
  if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
    throw ValidationError(ctx + ": field '" + key + "' must be a non-negative integer");
  }
  return v.get<std::uint64_t>();
}

}  // namespace

SearchSpace space_from_json(const nlohmann::json& j) {
  SearchSpace s;
  s.base_latency_s = j.value("base_latency_s", 0.0);
  s.base_memory_bytes = j.contains("base_memory_bytes") ? get_count(j, "base_memory_bytes", "space")
                                                        : 0;
  const auto& stages = j.at("stages");
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const auto& js = stages[i];
    const auto ctx = "stage " + std::to_string(i);
    StageSpec st;
    st.stage_id = static_cast<std::uint32_t>(get_count(js, "stage_id", ctx));
    st.role = parse_stage_role(get_field<std::string>(js, "role", ctx));
    from_json(js.at("shape"), st.shape);
    st.max_repeats =
        js.contains("max_repeats") ? static_cast<std::uint32_t>(get_count(js, "max_repeats", ctx))
                                   : 1;
    for (const auto& c : js.at("candidates")) st.candidates.push_back(c.get<OperatorSpec>());
    s.stages.push_back(std::move(st));
  }
  s.validate();
  return s;
}

nlohmann::json to_json(const SearchSpace& space) {
  nlohmann::json stages = nlohmann::json::array();
  for (const auto& st : space.stages) {
    stages.push_back({{"stage_id", st.stage_id},
                      {"role", std::string(to_string(st.role))},
                      {"shape", st.shape},
                      {"max_repeats", st.max_repeats},
                      {"candidates", st.candidates}});
  }
  return {{"base_latency_s", space.base_latency_s},
          {"base_memory_bytes", space.base_memory_bytes},
          {"stages", std::move(stages)}};
}

ArchGenome genome_from_json(const nlohmann::json& j, const SearchSpace& space) {
  if (!j.is_array()) throw ValidationError("genome must be an array of {stage, kind, count}");
  ArchGenome g = ArchGenome::empty(space);
  for (const auto& e : j) {
    const auto stage = get_count(e, "stage", "genome");
    if (stage >= g.slots.size()) throw ValidationError("genome: stage out of range");
    auto& slot = g.slots[stage];
    if (slot.kind) throw ValidationError("genome: stage listed twice");
    slot.kind = parse_op_kind(get_field<std::string>(e, "kind", "genome"));
    slot.count = static_cast<std::uint32_t>(get_count(e, "count", "genome"));
    if (slot.count == 0) throw ValidationError("genome: count must be >= 1");
  }
  return g;
}

nlohmann::json to_json(const ArchGenome& genome) {
  nlohmann::json out = nlohmann::json::array();
  for (std::size_t i = 0; i < genome.slots.size(); ++i) {
    const auto& s = genome.slots[i];
    if (!s.kind || s.count == 0) continue;
    out.push_back({{"stage", i}, {"kind", std::string(to_string(*s.kind))}, {"count", s.count}});
  }
  return out;
}

nlohmann::json to_json(const Action& a) {
  return {{"direction", a.direction == ActionDirection::add ? "add" : "remove"},
          {"stage", a.stage_id},
          {"kind", std::string(to_string(a.kind))}};
}

nlohmann::json to_json(const ActionScore& s) {
  auto opt = [](const std::optional<double>& v) -> nlohmann::json {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  };
  return {{"action", to_json(s.action)},
          {"delta_quality", s.delta_quality},
          {"delta_latency_s", s.delta_latency_s},
          {"delta_memory_bytes", s.delta_memory_bytes},
          {"value_latency", opt(s.value_latency)},
          {"value_memory", opt(s.value_memory)}};
}

nlohmann::json to_json(const TraceStep& s) {
  nlohmann::json actions = nlohmann::json::array();
  for (const auto& a : s.actions) actions.push_back(to_json(a));
  return {{"step", s.step},
          {"round", s.round},
          {"phase", std::string(to_string(s.phase))},
          {"actions", std::move(actions)},
          {"score", s.score ? to_json(*s.score) : nlohmann::json(nullptr)},
          {"latency_s", s.latency_s},
          {"memory_bytes", s.memory_bytes},
          {"quality", s.quality},
          {"latency_ok", s.latency_ok},
          {"memory_ok", s.memory_ok}};
}

nlohmann::json to_json(const ParetoPoint& p) {
  return {{"latency_s", p.latency_s},
          {"memory_bytes", p.memory_bytes},
          {"quality", p.quality},
          {"genome_id", p.genome_id}};
}

nlohmann::json to_json(const SearchResult& r) {
  nlohmann::json trace = nlohmann::json::array();
  for (const auto& s : r.trace) trace.push_back(to_json(s));
  nlohmann::json explored = nlohmann::json::array();
  for (const auto& p : r.explored) explored.push_back(to_json(p));
  return {{"status", std::string(to_string(r.status))},
          {"feasible", r.feasible},
          {"message", r.message},
          {"genome", to_json(r.genome)},
          {"genome_id", r.genome.key()},
          {"quality", r.quality},
          {"latency_s", r.cost.latency_s},
          {"memory_bytes", r.cost.memory_bytes},
          {"trace", std::move(trace)},
          {"explored", std::move(explored)}};
}

SearchJob search_job_from_json(const nlohmann::json& j, const SearchSpace& space) {
  SearchJob job;
  const auto& c = j.at("constraints");
  job.constraints.max_latency_s = get_field<double>(c, "max_latency_s", "constraints");
  job.constraints.max_memory_bytes = get_count(c, "max_memory_bytes", "constraints");
  if (j.contains("max_steps")) {
    job.config.max_steps = static_cast<std::uint32_t>(get_count(j, "max_steps", "config"));
  }
  if (j.contains("seed")) job.config.seed = get_count(j, "seed", "config");
  if (j.contains("combiner")) {
    job.config.combiner = parse_value_combiner(get_field<std::string>(j, "combiner", "config"));
  }
  if (j.contains("refine_rounds")) {
    job.config.refine_rounds =
        static_cast<std::uint32_t>(get_count(j, "refine_rounds", "config"));
  }
  if (j.contains("exchange_width")) {
    job.config.exchange_width =
        static_cast<std::uint32_t>(get_count(j, "exchange_width", "config"));
  }
  if (j.contains("initial")) job.config.initial = genome_from_json(j.at("initial"), space);
  if (j.contains("oracle")) {
    const auto& o = j.at("oracle");
    job.lambda = o.value("lambda", 0.7);
    job.noise = o.value("noise", 0.0);
    for (const auto& w : o.value("weights", nlohmann::json::array())) {
      const auto stage = static_cast<std::uint32_t>(get_count(w, "stage", "oracle weight"));
      const auto kind = parse_op_kind(get_field<std::string>(w, "kind", "oracle weight"));
      job.weights[{stage, kind}] = get_field<double>(w, "weight", "oracle weight");
    }
  }
  return job;
}

nlohmann::json to_json(const SearchJob& job) {
  nlohmann::json weights = nlohmann::json::array();
  for (const auto& [k, w] : job.weights) {
    weights.push_back({{"stage", k.first}, {"kind", std::string(to_string(k.second))},
                       {"weight", w}});
  }
  nlohmann::json j = {
      {"constraints",
       {{"max_latency_s", job.constraints.max_latency_s},
        {"max_memory_bytes", job.constraints.max_memory_bytes}}},
      {"max_steps", job.config.max_steps},
      {"seed", job.config.seed},
      {"combiner", std::string(to_string(job.config.combiner))},
      {"refine_rounds", job.config.refine_rounds},
      {"exchange_width", job.config.exchange_width},
      {"oracle", {{"lambda", job.lambda}, {"noise", job.noise}, {"weights", weights}}}};
  if (job.config.initial) j["initial"] = to_json(*job.config.initial);
  return j;
}

}  // namespace archpilot
