#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "archpilot/arch_space.hpp"
#include "archpilot/cli.hpp"
#include "archpilot/device_lut.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path kData = ARCHPILOT_DATA_DIR;

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = archpilot::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "archpilot_cli_test";
  fs::create_directories(dir);
  return dir / name;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

std::string d(const char* file) { return (kData / file).string(); }

}  // namespace

TEST_CASE("estimate reproduces the demo figure") {
  const auto r = run({"estimate", "--profile", d("iphone16pm.json"), "--steps", "4"});
  REQUIRE(r.code == 0);
  const auto j = json::parse(r.out);
  CHECK(std::abs(j["latency_s"].get<double>() - 4.586) <= 1e-9);
  CHECK(j["breakdown"].size() == 3);
  CHECK(j["output_frames"] == 51);
  const auto cfg = run({"estimate", "--profile", d("iphone16pm.json"), "--cfg"});
  CHECK(std::abs(json::parse(cfg.out)["latency_s"].get<double>() - 8.666) <= 1e-9);
}

TEST_CASE("pareto on the 3-point CSV gives a 2-point front") {
  const auto out = scratch("front.csv");
  const auto r = run({"pareto", "--in", d("points3.csv"), "--out", out.string()});
  REQUIRE(r.code == 0);
  std::ifstream f(out);
  const auto pts = archpilot::read_points_csv(f);
  REQUIRE(pts.size() == 2);
  CHECK(pts[0].genome_id == "a");
  CHECK(pts[1].genome_id == "b");
  const auto j = run({"pareto", "--in", d("points3.csv"), "--format", "json"});
  CHECK(json::parse(j.out)["points"].size() == 2);
}

TEST_CASE("search is deterministic and its output round-trips") {
  const auto a = scratch("trace_a.json"), b = scratch("trace_b.json"), front = scratch("front_s.csv");
  const std::vector<std::string> base{"search", "--space", d("toy_space.json"), "--lut",
                                      d("toy_lut.json"), "--config", d("toy_search.json"),
                                      "--seed", "0"};
  auto args = base;
  args.insert(args.end(), {"--out", a.string(), "--front", front.string()});
  REQUIRE(run(args).code == 0);
  args = base;
  args.insert(args.end(), {"--out", b.string()});
  REQUIRE(run(args).code == 0);
  CHECK(slurp(a) == slurp(b));

  const auto result = json::parse(slurp(a));
  CHECK(result["feasible"] == true);
  CHECK(!result["trace"].empty());
  const auto space = archpilot::space_from_json(archpilot::parse_json_file(d("toy_space.json")));
  const auto g = archpilot::genome_from_json(result["genome"], space);
  CHECK(archpilot::to_json(g) == result["genome"]);
  std::ifstream f(front);
  CHECK(!archpilot::read_points_csv(f).empty());

  args = base;
  args[8] = "3";
  CHECK(json::parse(run(args).out).dump() != result.dump());
}

TEST_CASE("thread cap from the environment") {
  ::setenv("ARCHPILOT_THREADS", "1", 1);
  CHECK(archpilot::cli::thread_budget() == 1);
  ::setenv("ARCHPILOT_THREADS", "bogus", 1);
  CHECK(archpilot::cli::thread_budget() >= 1);
  ::unsetenv("ARCHPILOT_THREADS");
}

TEST_CASE("exit codes and error JSON") {
  SUBCASE("usage") {
    const auto r = run({"search", "--space", d("toy_space.json")});
    CHECK(r.code == archpilot::cli::kUsage);
    CHECK(json::parse(r.err)["error"]["kind"] == "usage");
    CHECK(run({}).code == archpilot::cli::kUsage);
    CHECK(run({"frobnicate"}).code == archpilot::cli::kUsage);
  }
  SUBCASE("validation") {
    const auto bad = scratch("bad_lut.json");
    std::ofstream(bad) << "{\"device\": \"x\",\n \"entries\": [ {\"kind\": \"Conv1D\" ";
    const auto r = run({"lut-validate", "--lut", bad.string()});
    CHECK(r.code == archpilot::cli::kValidation);
    const auto e = json::parse(r.err)["error"];
    CHECK(e["kind"] == "parse");
    CHECK(e["line"] == 2);
    const auto missing = run({"estimate", "--profile", d("vae_ours.json")});
    CHECK(missing.code == archpilot::cli::kValidation);
    CHECK(json::parse(missing.err)["error"]["message"].get<std::string>().find("text_encoder") !=
          std::string::npos);
  }
  SUBCASE("infeasible still writes the report") {
    const auto out = scratch("infeasible.json");
    const auto r = run({"plan-vae", "--latent", "15,4,64,64", "--budget", "1000", "--out", out.string()});
    CHECK(r.code == archpilot::cli::kInfeasible);
    const auto j = json::parse(slurp(out));
    CHECK(j["feasible"] == false);
    CHECK(j["min_achievable_bytes"].get<std::uint64_t>() > 1000);

    const auto cfg = scratch("tight.json");
    auto doc = archpilot::parse_json_file(d("toy_search.json"));
    doc["constraints"]["max_latency_s"] = 0.1;
    std::ofstream(cfg) << doc.dump();
    const auto trace = scratch("tight_trace.json");
    const auto s = run({"search", "--space", d("toy_space.json"), "--lut", d("toy_lut.json"),
                        "--config", cfg.string(), "--out", trace.string()});
    CHECK(s.code == archpilot::cli::kInfeasible);
    CHECK(json::parse(slurp(trace))["feasible"] == false);
  }
}

TEST_CASE("plan-vae, cost, lut-validate and flow-check") {
  const auto plan = run({"plan-vae", "--latent", "15,4,64,64", "--budget", "400000000",
                         "--target-frames", "51", "--cost-model", d("chunk_cost_affine.json")});
  REQUIRE(plan.code == 0);
  const auto pj = json::parse(plan.out);
  CHECK(pj["plan"]["output_frames"] == 51);
  CHECK(pj["plan"]["est_peak_bytes"].get<std::uint64_t>() <= 400000000);

  const auto cost = run({"cost", "--kind", "Conv1D", "--kernel", "3", "--shape", "1,8,1,1"});
  REQUIRE(cost.code == 0);
  CHECK(json::parse(cost.out)["report"]["params"] == 200);
  CHECK(run({"cost", "--kind", "SelfAttn1D", "--heads", "3", "--shape", "1,8,1,1"}).code ==
        archpilot::cli::kValidation);

  const auto lv = run({"lut-validate", "--lut", d("toy_lut.json"), "--profile", d("iphone16pm.json")});
  REQUIRE(lv.code == 0);
  const auto lj = json::parse(lv.out);
  CHECK(lj["entries"] == 9);
  CHECK(lj["oom"] == 1);

  const auto fc = run({"flow-check"});
  CHECK(fc.code == 0);
  CHECK(json::parse(fc.out)["passed"] == true);
}
