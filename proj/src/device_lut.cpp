#include "archpilot/device_lut.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

#include "archpilot/errors.hpp"

namespace archpilot {

namespace {

bool is_oom_marker(const nlohmann::json& v) {
  return v.is_string() && v.get<std::string>() == kOomMarker;
}

std::string entry_label(std::size_t i, const OperatorSpec& op, const TensorShape& s) {
  std::ostringstream os;
  os << "entry " << i << " (" << to_string(op) << " @ " << to_string(s) << ")";
  return os.str();
}

LutEntry entry_from_json(const nlohmann::json& j, std::size_t index) {
  if (!j.is_object()) {
    throw ValidationError("entry " + std::to_string(index) + " is not an object");
  }
  LutEntry e;
  try {
    from_json(j, e.op);
    from_json(j.at("shape"), e.shape);
    validate(e.op, e.shape);
  } catch (const nlohmann::json::exception& ex) {
    throw ValidationError("entry " + std::to_string(index) + ": " + ex.what());
  } catch (const ValidationError& ex) {
    throw ValidationError("entry " + std::to_string(index) + ": " + ex.what());
  }
  const auto label = entry_label(index, e.op, e.shape);

  if (!j.contains("latency_s") || !j.contains("memory_bytes")) {
    throw ValidationError(label + ": latency_s and memory_bytes are required");
  }
  const auto& lat = j.at("latency_s");
  const auto& mem = j.at("memory_bytes");
  const bool lat_oom = is_oom_marker(lat);
  const bool mem_oom = is_oom_marker(mem);
  if (lat_oom != mem_oom) {
    throw ValidationError(label + ": latency_s and memory_bytes must both be measured or both OOM");
  }
  if (lat_oom) return e;

  if (!lat.is_number()) throw ValidationError(label + ": latency_s must be a number or \"OOM\"");
  const double latency = lat.get<double>();
  if (!std::isfinite(latency) || latency < 0.0) {
    throw ValidationError(label + ": negative or non-finite latency");
  }
  if (!mem.is_number_integer() || (!mem.is_number_unsigned() && mem.get<std::int64_t>() < 0)) {
    throw ValidationError(label + ": memory_bytes must be a non-negative integer or \"OOM\"");
  }
  e.measured = Measurement{latency, mem.get<std::uint64_t>()};
  return e;
}

nlohmann::json entry_to_json(const LutEntry& e) {
  nlohmann::json j = e.op;
  j["shape"] = e.shape;
  if (e.oom()) {
    j["latency_s"] = kOomMarker;
    j["memory_bytes"] = kOomMarker;
  } else {
    j["latency_s"] = e.measured->latency_s;
    j["memory_bytes"] = e.measured->memory_bytes;
  }
  return j;
}

std::pair<std::size_t, std::size_t> line_column(const std::string& text, std::size_t byte) {
  std::size_t line = 1;
  std::size_t col = 1;
  const auto end = std::min(byte, text.size());
  for (std::size_t i = 0; i + 1 < end; ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

}  // namespace

void DeviceProfile::validate() const {
  if (memory_budget_bytes == 0) {
    throw ValidationError("profile '" + name + "': memory_budget_bytes must be > 0");
  }
  for (const auto& [stage_name, seconds] : fixed_costs) {
    if (!std::isfinite(seconds) || seconds < 0.0) {
      throw ValidationError("profile '" + name + "': stage '" + stage_name +
                            "' has negative or non-finite latency");
    }
  }
}

double DeviceProfile::stage_latency(const std::string& stage_name) const {
  const auto it = fixed_costs.find(stage_name);
  if (it == fixed_costs.end()) {
    throw ValidationError("profile '" + name + "' is missing stage '" + stage_name + "'");
  }
  return it->second;
}

DeviceLUT::DeviceLUT(std::string device, std::vector<LutEntry> entries)
    : device_(std::move(device)), entries_(std::move(entries)) {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& e = entries_[i];
    validate(e.op, e.shape);
    if (e.measured && (!std::isfinite(e.measured->latency_s) || e.measured->latency_s < 0.0)) {
      throw ValidationError(entry_label(i, e.op, e.shape) + ": negative or non-finite latency");
    }
    const auto [it, inserted] = index_.emplace(Key{e.op, e.shape}, i);
    if (!inserted) {
      throw ValidationError("duplicate key " + to_string(e.op) + " @ " + to_string(e.shape) +
                            " (entries " + std::to_string(it->second) + " and " +
                            std::to_string(i) + ")");
    }
  }
}

LookupResult DeviceLUT::query(const OperatorSpec& op, const TensorShape& shape,
                              QueryMode mode) const {
  const LutEntry* hit = nullptr;
  if (const auto it = index_.find(Key{op, shape}); it != index_.end()) {
    hit = &entries_[it->second];
  } else if (mode == QueryMode::nearest_larger) {
    // Map order within one operator is lexicographic on shape, so ties on
    // token count resolve to the lexicographically smallest shape.
    for (auto it = index_.lower_bound(Key{op, TensorShape{0, 0, 0, 0}});
         it != index_.end() && it->first.first == op; ++it) {
      const auto& s = it->first.second;
      if (s.channels != shape.channels || s.frames < shape.frames || s.height < shape.height ||
          s.width < shape.width) {
        continue;
      }
      if (hit == nullptr || s.tokens() < hit->shape.tokens()) hit = &entries_[it->second];
    }
  }

  LookupResult r;
  if (hit == nullptr) return r;
  r.matched_shape = hit->shape;
  if (hit->oom()) {
    r.status = LookupStatus::oom;
  } else {
    r.status = LookupStatus::measured;
    r.value = *hit->measured;
  }
  return r;
}

nlohmann::json parse_json_document(std::istream& in) {
  const std::string text{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& ex) {
    const auto [line, col] = line_column(text, ex.byte);
    std::ostringstream os;
    os << "JSON parse error at line " << line << ", column " << col << " (offset " << ex.byte
       << "): " << ex.what();
    throw ParseError(os.str(), line, col);
  }
}

nlohmann::json parse_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open '" + path.string() + "'");
  return parse_json_document(in);
}

DeviceLUT lut_from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw ValidationError("LUT document must be a JSON object");
  if (!doc.contains("device") || !doc.at("device").is_string()) {
    throw ValidationError("LUT document requires a string 'device' field");
  }
  if (!doc.contains("entries") || !doc.at("entries").is_array()) {
    throw ValidationError("LUT document requires an 'entries' array");
  }
  std::vector<LutEntry> entries;
  const auto& arr = doc.at("entries");
  entries.reserve(arr.size());
  for (std::size_t i = 0; i < arr.size(); ++i) entries.push_back(entry_from_json(arr[i], i));
  return DeviceLUT(doc.at("device").get<std::string>(), std::move(entries));
}

DeviceLUT load_lut(std::istream& in) { return lut_from_json(parse_json_document(in)); }

DeviceLUT load_lut(const std::filesystem::path& path) {
  return lut_from_json(parse_json_file(path));
}

nlohmann::json to_json(const DeviceLUT& lut) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : lut.entries()) entries.push_back(entry_to_json(e));
  return nlohmann::json{{"device", lut.device()}, {"entries", std::move(entries)}};
}

std::string serialize_lut(const DeviceLUT& lut) { return to_json(lut).dump(2) + "\n"; }

DeviceProfile profile_from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw ValidationError("profile document must be a JSON object");
  DeviceProfile p;
  try {
    p.name = doc.at("device").get<std::string>();
    const auto& budget = doc.at("memory_budget_bytes");
    if (!budget.is_number_integer() ||
        (!budget.is_number_unsigned() && budget.get<std::int64_t>() < 0)) {
      throw ValidationError("memory_budget_bytes must be a non-negative integer");
    }
    p.memory_budget_bytes = budget.get<std::uint64_t>();
    for (const auto& [k, v] : doc.at("fixed_costs").items()) {
      if (!v.is_number()) throw ValidationError("stage '" + k + "' latency must be a number");
      p.fixed_costs[k] = v.get<double>();
    }
  } catch (const nlohmann::json::exception& ex) {
    throw ValidationError(std::string("profile: ") + ex.what());
  }
  p.validate();
  return p;
}

DeviceProfile load_profile(std::istream& in) { return profile_from_json(parse_json_document(in)); }

DeviceProfile load_profile(const std::filesystem::path& path) {
  return profile_from_json(parse_json_file(path));
}

nlohmann::json to_json(const DeviceProfile& p) {
  nlohmann::json costs = nlohmann::json::object();
  for (const auto& [k, v] : p.fixed_costs) costs[k] = v;
  return nlohmann::json{
      {"device", p.name}, {"memory_budget_bytes", p.memory_budget_bytes}, {"fixed_costs", costs}};
}

std::vector<LutEntry> feasible_ops(const DeviceLUT& lut, std::span<const TensorShape> shapes,
                                   std::uint64_t budget_bytes) {
  std::vector<LutEntry> out;
  for (const auto& e : lut.entries()) {
    if (e.oom() || e.measured->memory_bytes > budget_bytes) continue;
    if (!shapes.empty() && std::find(shapes.begin(), shapes.end(), e.shape) == shapes.end()) {
      continue;
    }
    out.push_back(e);
  }
  return out;
}

}  // namespace archpilot
