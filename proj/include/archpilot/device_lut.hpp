#pragma once

// Per-device measurement tables.
//
// LUT document:
//   { "device": "<name>",
//     "entries": [ { "kind": "SelfAttn1D", "channels": 320, "heads": 8,
//                    "shape": [frames, channels, height, width],
//                    "latency_s": 0.0042 | "OOM",
//                    "memory_bytes": 1048576 | "OOM" }, ... ] }
//
// Profile document (may share a file with a LUT):
//   { "device": "<name>", "memory_budget_bytes": N,
//     "fixed_costs": { "text_encoder": s, "unet_step": s,
//                      "vae_temporal_decode": s, "vae_spatial_decode": s } }
// A profile may give the combined "vae_decode" instead of the two split
// decoder stages.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "archpilot/op_cost.hpp"

namespace archpilot {

namespace stage {
inline constexpr const char* text_encoder = "text_encoder";
inline constexpr const char* unet_step = "unet_step";
inline constexpr const char* vae_temporal_decode = "vae_temporal_decode";
inline constexpr const char* vae_spatial_decode = "vae_spatial_decode";
inline constexpr const char* vae_decode = "vae_decode";
}  // namespace stage

inline constexpr const char* kOomMarker = "OOM";

struct DeviceProfile {
  std::string name;
  std::uint64_t memory_budget_bytes = 0;
  std::map<std::string, double> fixed_costs;  // stage -> seconds

  void validate() const;
  // Throws ValidationError naming the stage when absent.
  double stage_latency(const std::string& stage) const;
};

struct Measurement {
  double latency_s = 0.0;
  std::uint64_t memory_bytes = 0;

  friend bool operator==(const Measurement&, const Measurement&) = default;
};

struct LutEntry {
  OperatorSpec op;
  TensorShape shape;
  std::optional<Measurement> measured;  // empty: measured out-of-memory

  bool oom() const { return !measured.has_value(); }
  friend bool operator==(const LutEntry&, const LutEntry&) = default;
};

enum class LookupStatus { measured, missing, oom };

struct LookupResult {
  LookupStatus status = LookupStatus::missing;
  Measurement value;         // meaningful only when status == measured
  TensorShape matched_shape;  // the table shape that answered the query

  bool ok() const { return status == LookupStatus::measured; }
};

enum class QueryMode {
  exact,
  // Smallest measured shape that is >= the query in frames, height and width.
  nearest_larger,
};

class DeviceLUT {
public:
  DeviceLUT() = default;
  // Throws ValidationError on duplicate keys or invalid entries.
  DeviceLUT(std::string device, std::vector<LutEntry> entries);

  const std::string& device() const { return device_; }
  std::size_t size() const { return entries_.size(); }
  std::span<const LutEntry> entries() const { return entries_; }

  LookupResult query(const OperatorSpec& op, const TensorShape& shape,
                     QueryMode mode = QueryMode::exact) const;

private:
  using Key = std::pair<OperatorSpec, TensorShape>;

  std::string device_;
  std::vector<LutEntry> entries_;
  std::map<Key, std::size_t> index_;
};

DeviceLUT load_lut(std::istream& in);
DeviceLUT load_lut(const std::filesystem::path& path);
DeviceLUT lut_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const DeviceLUT& lut);
std::string serialize_lut(const DeviceLUT& lut);

DeviceProfile load_profile(std::istream& in);
DeviceProfile load_profile(const std::filesystem::path& path);
DeviceProfile profile_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const DeviceProfile& profile);

// Entries that are measured, not OOM, and use at most `budget_bytes`. When
// `shapes` is non-empty only entries at one of those shapes are returned.
std::vector<LutEntry> feasible_ops(const DeviceLUT& lut, std::span<const TensorShape> shapes,
                                   std::uint64_t budget_bytes);

// Parses a JSON document, converting parse failures to ParseError with a
// line/column position.
nlohmann::json parse_json_document(std::istream& in);
nlohmann::json parse_json_file(const std::filesystem::path& path);

}  // namespace archpilot
