#include "archpilot/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <thread>

#include "archpilot/arch_space.hpp"
#include "archpilot/device_lut.hpp"
#include "archpilot/errors.hpp"
#include "archpilot/flow_check.hpp"
#include "archpilot/op_cost.hpp"
#include "archpilot/pipeline_plan.hpp"

namespace archpilot::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// Result of a command that still produced a report but signals a status.
struct Outcome {
  int code = kOk;
};

void write_text(const std::string& path, std::string_view text, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << text;
    return;
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ValidationError("cannot open output file '" + path + "'");
  f << text;
  if (!f) throw ValidationError("failed writing output file '" + path + "'");
}

void write_json(const std::string& path, const json& j, std::ostream& out) {
  write_text(path, j.dump(2) + "\n", out);
}

std::uint64_t parse_count(std::string_view text, const char* what) {
  std::uint64_t v = 0;
  const auto* end = text.data() + text.size();
  const auto [p, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || p != end) {
    throw ValidationError(std::string(what) + ": '" + std::string(text) +
                          "' is not a non-negative integer");
  }
  return v;
}

std::vector<std::uint64_t> parse_count_list(const std::string& text, const char* what) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_count(item, what));
  if (out.empty()) throw ValidationError(std::string(what) + ": empty list");
  return out;
}

TensorShape parse_shape(const std::string& text) {
  const auto v = parse_count_list(text, "shape");
  if (v.size() != 4) throw ValidationError("shape must be frames,channels,height,width");
  TensorShape s{v[0], v[1], v[2], v[3]};
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------

struct CostArgs {
  std::string spec;
  std::string kind;
  std::uint64_t channels = 0;
  std::uint64_t kernel = 0;
  std::uint64_t heads = 0;
  std::uint64_t text_tokens = 0;
  std::string padding = "same";
  std::string shape;
  std::uint64_t dtype_bytes = kDefaultDtypeBytes;
  std::string out;
};

Outcome cmd_cost(const CostArgs& a, std::ostream& out) {
  OperatorSpec op;
  TensorShape shape;
  if (!a.spec.empty()) {
    const auto doc = parse_json_file(a.spec);
    op = doc.at("op").get<OperatorSpec>();
    shape = doc.at("shape").get<TensorShape>();
  } else {
    if (a.kind.empty() || a.shape.empty()) {
      throw ValidationError("cost needs --spec or both --kind and --shape");
    }
    shape = parse_shape(a.shape);
    op.kind = parse_op_kind(a.kind);
    op.channels = a.channels == 0 ? shape.channels : a.channels;
    op.kernel = a.kernel;
    op.heads = a.heads;
    op.text_tokens = a.text_tokens;
    if (a.padding == "same") {
      op.padding = Padding::same;
    } else if (a.padding == "valid") {
      op.padding = Padding::valid;
    } else {
      throw ValidationError("padding must be 'same' or 'valid'");
    }
  }
  const auto report = cost_report(op, shape, a.dtype_bytes);
  const auto b = flop_breakdown(op, shape);
  json j{{"op", op}, {"shape", shape}, {"dtype_bytes", a.dtype_bytes}, {"report", report},
         {"flop_breakdown",
          {{"conv", b.conv},
           {"projection", b.projection},
           {"score", b.score},
           {"softmax", b.softmax},
           {"weighted_sum", b.weighted_sum}}}};
  write_json(a.out, j, out);
  return {};
}

// ---------------------------------------------------------------------------

struct LutValidateArgs {
  std::string lut;
  std::string profile;
  std::string out;
};

Outcome cmd_lut_validate(const LutValidateArgs& a, std::ostream& out) {
  json j{{"valid", true}};
  if (!a.lut.empty()) {
    const auto lut = load_lut(fs::path(a.lut));
    std::size_t oom = 0;
    for (const auto& e : lut.entries()) oom += e.oom() ? 1 : 0;
    j["device"] = lut.device();
    j["entries"] = lut.size();
    j["measured"] = lut.size() - oom;
    j["oom"] = oom;
  }
  if (!a.profile.empty()) {
    const auto profile = load_profile(fs::path(a.profile));
    j["profile"] = to_json(profile);
  }
  if (a.lut.empty() && a.profile.empty()) {
    throw ValidationError("lut-validate needs --lut and/or --profile");
  }
  write_json(a.out, j, out);
  return {};
}

// ---------------------------------------------------------------------------

struct SearchArgs {
  std::string space;
  std::string lut;
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string front;
};

Outcome cmd_search(const SearchArgs& a, std::ostream& out) {
  const auto space = space_from_json(parse_json_file(a.space));
  const auto lut = load_lut(fs::path(a.lut));
  auto job = search_job_from_json(parse_json_file(a.config), space);
  if (a.seed) job.config.seed = *a.seed;
  job.config.threads = thread_budget();
  const auto oracle = synthetic_oracle(job.weights, job.lambda, job.config.seed, job.noise);
  const auto result = evolve(space, lut, oracle, job.constraints, job.config);

  write_json(a.out, to_json(result), out);
  if (!a.front.empty()) {
    std::ostringstream csv;
    write_points_csv(csv, pareto_front(result.explored));
    write_text(a.front, csv.str(), out);
  }
  return {result.feasible ? kOk : kInfeasible};
}

// ---------------------------------------------------------------------------

struct ParetoArgs {
  std::string in;
  std::string out;
  std::string format = "csv";
};

std::vector<ParetoPoint> read_points(const std::string& path) {
  if (fs::path(path).extension() == ".json") {
    const auto doc = parse_json_file(path);
    const auto& arr = doc.is_object() ? doc.at("points") : doc;
    std::vector<ParetoPoint> pts;
    for (const auto& p : arr) {
      pts.push_back({p.at("latency_s").get<double>(), p.at("memory_bytes").get<std::uint64_t>(),
                     p.at("quality").get<double>(), p.value("genome_id", std::string())});
    }
    return pts;
  }
  std::ifstream f(path);
  if (!f) throw ValidationError("cannot open '" + path + "'");
  return read_points_csv(f);
}

Outcome cmd_pareto(const ParetoArgs& a, std::ostream& out) {
  const auto front = pareto_front(read_points(a.in));
  if (a.format == "json") {
    json arr = json::array();
    for (const auto& p : front) arr.push_back(to_json(p));
    write_json(a.out, json{{"points", arr}}, out);
  } else {
    std::ostringstream csv;
    write_points_csv(csv, front);
    write_text(a.out, csv.str(), out);
  }
  return {};
}

// ---------------------------------------------------------------------------

struct PlanArgs {
  std::string latent = "15,4,64,64";
  std::uint64_t budget = 0;
  std::string mapping = "causal_4x";
  std::uint64_t spatial_factor = 8;
  double overhead = 3.0;
  std::uint64_t dtype_bytes = kDefaultDtypeBytes;
  std::string cost_model;
  std::optional<std::uint64_t> target_frames;
  std::string temporal_chunks;
  std::string spatial_chunks;
  std::string out;
};

Outcome cmd_plan_vae(const PlanArgs& a, std::ostream& out) {
  const auto latent = parse_shape(a.latent);
  const LatentGeometry geometry{a.spatial_factor, parse_temporal_mapping(a.mapping)};
  const DecodeMemoryModel memory{a.dtype_bytes, a.overhead, 3};
  std::unique_ptr<ChunkCostModel> cost;
  if (a.cost_model.empty()) {
    cost = std::make_unique<AffineChunkCost>(AffineChunkCost::defaults());
  } else {
    cost = chunk_cost_from_json(parse_json_file(a.cost_model));
  }
  ChunkOptions options;
  if (!a.temporal_chunks.empty()) {
    options.temporal_chunks = parse_count_list(a.temporal_chunks, "temporal chunks");
  }
  if (!a.spatial_chunks.empty()) {
    options.spatial_chunks = parse_count_list(a.spatial_chunks, "spatial chunks");
  }
  options.target_frames = a.target_frames;
  const auto result = plan_vae_decode(latent, geometry, memory, a.budget, *cost, options);
  auto j = to_json(result);
  j["budget_bytes"] = a.budget;
  j["mapping"] = std::string(to_string(geometry.temporal));
  write_json(a.out, j, out);
  return {result.feasible() ? kOk : kInfeasible};
}

// ---------------------------------------------------------------------------

struct EstimateArgs {
  std::string profile;
  std::uint32_t steps = 4;
  bool cfg = false;
  std::string latent = "15,4,64,64";
  std::string mapping = "causal_4x";
  std::uint64_t decode_chunk = 5;
  std::string out;
};

Outcome cmd_estimate(const EstimateArgs& a, std::ostream& out) {
  const auto profile = load_profile(fs::path(a.profile));
  PipelineSpec spec;
  spec.steps = a.steps;
  spec.cfg_enabled = a.cfg;
  spec.latent = parse_shape(a.latent);
  spec.geometry.temporal = parse_temporal_mapping(a.mapping);
  spec.decode_chunk = a.decode_chunk;
  const auto est = estimate_pipeline(spec, profile);
  auto j = to_json(est);
  j["device"] = profile.name;
  j["steps"] = spec.steps;
  j["cfg_enabled"] = spec.cfg_enabled;
  write_json(a.out, j, out);
  return {};
}

// ---------------------------------------------------------------------------

struct FlowCheckArgs {
  std::uint64_t seed = 0;
  std::string out;
};

Outcome cmd_flow_check(const FlowCheckArgs& a, std::ostream& out) {
  flow::FlowCheckOptions options;
  options.seed = a.seed;
  const auto report = flow::run_flow_checks(options);
  write_json(a.out, to_json(report), out);
  return {report.passed() ? kOk : kCheckFailed};
}

void report_error(std::ostream& err, const char* kind, const std::string& message,
                  const json& extra = json::object()) {
  json j{{"error", {{"kind", kind}, {"message", message}}}};
  for (const auto& [k, v] : extra.items()) j["error"][k] = v;
  err << j.dump() << "\n";
}

}  // namespace

unsigned thread_budget() {
  unsigned n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("ARCHPILOT_THREADS")) {
    std::uint64_t cap = 0;
    const std::string_view s(env);
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), cap);
    if (ec == std::errc() && p == s.data() + s.size() && cap > 0) {
      n = static_cast<unsigned>(std::min<std::uint64_t>(n, cap));
    }
  }
  return n;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Mobile video-diffusion deployment planner", "archpilot"};
  app.require_subcommand(1);

  CostArgs cost;
  auto* c_cost = app.add_subcommand("cost", "FLOPs, parameters and activation memory of an operator");
  c_cost->add_option("--spec", cost.spec, "JSON file {\"op\": {...}, \"shape\": [f,c,h,w]}");
  c_cost->add_option("--kind", cost.kind, "Operator kind, e.g. SelfAttn3D");
  c_cost->add_option("--channels", cost.channels, "Channels (defaults to the shape's)");
  c_cost->add_option("--kernel", cost.kernel, "Kernel size (convolutions)");
  c_cost->add_option("--heads", cost.heads, "Attention heads");
  c_cost->add_option("--text-tokens", cost.text_tokens, "Context length (cross-attention)");
  c_cost->add_option("--padding", cost.padding, "same or valid")->check(CLI::IsMember({"same", "valid"}));
  c_cost->add_option("--shape", cost.shape, "frames,channels,height,width");
  c_cost->add_option("--dtype-bytes", cost.dtype_bytes, "Bytes per element");
  c_cost->add_option("--out", cost.out, "Output file (default stdout)");

  LutValidateArgs lv;
  auto* c_lv = app.add_subcommand("lut-validate", "Validate a device LUT and/or profile");
  c_lv->add_option("--lut", lv.lut, "LUT JSON file");
  c_lv->add_option("--profile", lv.profile, "Device profile JSON file");
  c_lv->add_option("--out", lv.out, "Output file (default stdout)");

  SearchArgs search;
  auto* c_search = app.add_subcommand("search", "Latency/memory guided temporal-layer search");
  c_search->add_option("--space", search.space, "Search space JSON")->required();
  c_search->add_option("--lut", search.lut, "Device LUT JSON")->required();
  c_search->add_option("--config", search.config, "Search config JSON")->required();
  c_search->add_option("--seed", search.seed, "Seed for the oracle noise and refinement");
  c_search->add_option("--out", search.out, "Result and trace JSON (default stdout)");
  c_search->add_option("--front", search.front, "Write the Pareto front of explored genomes as CSV");

  ParetoArgs pareto;
  auto* c_pareto = app.add_subcommand("pareto", "Extract the non-dominated points");
  c_pareto->add_option("--in", pareto.in, "Points as CSV or JSON")->required();
  c_pareto->add_option("--out", pareto.out, "Output file (default stdout)");
  c_pareto->add_option("--format", pareto.format, "csv or json")->check(CLI::IsMember({"csv", "json"}));

  PlanArgs plan;
  auto* c_plan = app.add_subcommand("plan-vae", "Memory-bounded chunking of the VAE decode");
  c_plan->add_option("--latent", plan.latent, "Latent frames,channels,height,width");
  c_plan->add_option("--budget", plan.budget, "Peak memory budget in bytes")->required();
  c_plan->add_option("--mapping", plan.mapping, "causal_4x or linear_quarter");
  c_plan->add_option("--spatial-factor", plan.spatial_factor, "Pixel per latent, per axis");
  c_plan->add_option("--overhead", plan.overhead, "Decoder memory overhead factor");
  c_plan->add_option("--dtype-bytes", plan.dtype_bytes, "Bytes per element");
  c_plan->add_option("--cost-model", plan.cost_model, "Chunk cost model JSON");
  c_plan->add_option("--target-frames", plan.target_frames, "Only accept plans with this output length");
  c_plan->add_option("--temporal-chunks", plan.temporal_chunks, "Comma list of latent frames per call");
  c_plan->add_option("--spatial-chunks", plan.spatial_chunks, "Comma list of frames per call");
  c_plan->add_option("--out", plan.out, "Output file (default stdout)");

  EstimateArgs est;
  auto* c_est = app.add_subcommand("estimate", "End-to-end generation latency");
  c_est->add_option("--profile", est.profile, "Device profile JSON")->required();
  c_est->add_option("--steps", est.steps, "Denoising steps");
  c_est->add_flag("--cfg", est.cfg, "Classifier-free guidance (two denoiser calls per step)");
  c_est->add_option("--latent", est.latent, "Latent frames,channels,height,width");
  c_est->add_option("--mapping", est.mapping, "causal_4x or linear_quarter");
  c_est->add_option("--decode-chunk", est.decode_chunk, "Latent frames per decoder call (0 = all)");
  c_est->add_option("--out", est.out, "Output file (default stdout)");

  FlowCheckArgs fc;
  auto* c_fc = app.add_subcommand("flow-check", "Run the flow-matching numeric invariant suite");
  c_fc->add_option("--seed", fc.seed, "RNG seed");
  c_fc->add_option("--out", fc.out, "Output file (default stdout)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    report_error(err, "usage", e.what());
    return kUsage;
  }

  try {
    Outcome o;
    if (*c_cost) o = cmd_cost(cost, out);
    else if (*c_lv) o = cmd_lut_validate(lv, out);
    else if (*c_search) o = cmd_search(search, out);
    else if (*c_pareto) o = cmd_pareto(pareto, out);
    else if (*c_plan) o = cmd_plan_vae(plan, out);
    else if (*c_est) o = cmd_estimate(est, out);
    else if (*c_fc) o = cmd_flow_check(fc, out);
    return o.code;
  } catch (const ParseError& e) {
    report_error(err, "parse", e.what(), {{"line", e.line()}, {"column", e.column()}});
  } catch (const OverflowError& e) {
    report_error(err, "overflow", e.what());
  } catch (const ValidationError& e) {
    report_error(err, "validation", e.what());
  } catch (const OracleError& e) {
    report_error(err, "oracle", e.what(), {{"genome", to_json(e.genome())}});
  } catch (const nlohmann::json::exception& e) {
    report_error(err, "validation", e.what());
  } catch (const std::exception& e) {
    report_error(err, "validation", e.what());
  }
  return kValidation;
}

}  // namespace archpilot::cli
