#include "archpilot/op_cost.hpp"

#include <algorithm>
#include <sstream>

#include "archpilot/checked.hpp"
#include "archpilot/errors.hpp"

namespace archpilot {

using checked::add;
using checked::mul;
using checked::product;
using checked::sum;

namespace {

struct KindName {
  OpKind kind;
  std::string_view name;
};

constexpr KindName kKindNames[] = {
    {OpKind::Conv1D, "Conv1D"},           {OpKind::Conv3D, "Conv3D"},
    {OpKind::SelfAttn1D, "SelfAttn1D"},   {OpKind::SelfAttn3D, "SelfAttn3D"},
    {OpKind::CrossAttn1D, "CrossAttn1D"}, {OpKind::CrossAttn3D, "CrossAttn3D"},
    {OpKind::SpatialBlock, "SpatialBlock"},
};

// Which of (frames, height, width) a convolution kernel spans.
struct ConvAxes {
  bool frames;
  bool spatial;
};

ConvAxes conv_axes(OpKind k) {
  switch (k) {
    case OpKind::Conv1D: return {true, false};
    case OpKind::Conv3D: return {true, true};
    case OpKind::SpatialBlock: return {false, true};
    default: return {false, false};
  }
}

std::uint64_t kernel_volume(const OperatorSpec& op) {
  const auto axes = conv_axes(op.kind);
  std::uint64_t v = 1;
  if (axes.frames) v = mul(v, op.kernel);
  if (axes.spatial) v = product({v, op.kernel, op.kernel});
  return v;
}

// Independent sequences and their length for self-attention.
struct Sequences {
  std::uint64_t count;
  std::uint64_t length;
};

Sequences self_attention_sequences(OpKind k, const TensorShape& s) {
  if (k == OpKind::SelfAttn1D) return {s.sites(), s.frames};
  return {1, s.tokens()};
}

// Number of times the text context is projected to K/V.
std::uint64_t context_copies(OpKind k, const TensorShape& s) {
  return k == OpKind::CrossAttn1D ? s.sites() : 1;
}

[[noreturn]] void fail(const std::string& msg) { throw ValidationError(msg); }

}  // namespace

std::string_view to_string(OpKind kind) {
  for (const auto& kn : kKindNames) {
    if (kn.kind == kind) return kn.name;
  }
  return "unknown";
}

OpKind parse_op_kind(std::string_view name) {
  for (const auto& kn : kKindNames) {
    if (kn.name == name) return kn.kind;
  }
  fail("unknown operator kind '" + std::string(name) + "'");
}

std::uint64_t TensorShape::sites() const { return mul(height, width); }
std::uint64_t TensorShape::tokens() const { return product({frames, height, width}); }
std::uint64_t TensorShape::elements() const { return mul(tokens(), channels); }

void TensorShape::validate() const {
  if (frames < 1 || channels < 1 || height < 1 || width < 1) {
    fail("tensor shape " + to_string(*this) + " has a dimension below 1");
  }
}

std::string to_string(const TensorShape& s) {
  std::ostringstream os;
  os << '[' << s.frames << ',' << s.channels << ',' << s.height << ',' << s.width << ']';
  return os.str();
}

void OperatorSpec::validate() const {
  const std::string name(to_string(kind));
  if (channels < 1) fail(name + ": channels must be >= 1");
  if (is_conv(kind)) {
    if (kernel < 1 || kernel % 2 == 0) fail(name + ": kernel must be odd and >= 1");
    if (heads != 0) fail(name + ": heads is only meaningful for attention kinds");
    if (text_tokens != 0) fail(name + ": text_tokens is only meaningful for cross-attention");
  } else {
    if (kernel != 0) fail(name + ": kernel is only meaningful for convolution kinds");
    if (padding != Padding::same) fail(name + ": padding is only meaningful for convolution kinds");
    if (heads < 1) fail(name + ": heads must be >= 1");
    if (channels % heads != 0) fail(name + ": heads must divide channels");
    if (is_cross_attention(kind)) {
      if (text_tokens < 1) fail(name + ": text_tokens must be >= 1");
    } else if (text_tokens != 0) {
      fail(name + ": text_tokens is only meaningful for cross-attention");
    }
  }
}

std::string to_string(const OperatorSpec& op) {
  std::ostringstream os;
  os << to_string(op.kind) << "(c=" << op.channels;
  if (is_conv(op.kind)) {
    os << ",k=" << op.kernel;
    if (op.padding == Padding::valid) os << ",valid";
  }
  if (is_attention(op.kind)) os << ",heads=" << op.heads;
  if (is_cross_attention(op.kind)) os << ",text=" << op.text_tokens;
  os << ')';
  return os.str();
}

void validate(const OperatorSpec& op, const TensorShape& shape) {
  op.validate();
  shape.validate();
  if (op.channels != shape.channels) {
    fail(to_string(op) + ": operator channels do not match shape " + to_string(shape));
  }
  if (is_conv(op.kind) && op.padding == Padding::valid) {
    const auto axes = conv_axes(op.kind);
    if (axes.frames && shape.frames < op.kernel) {
      fail(to_string(op) + ": frames < kernel with valid padding");
    }
    if (axes.spatial && (shape.height < op.kernel || shape.width < op.kernel)) {
      fail(to_string(op) + ": spatial extent < kernel with valid padding");
    }
  }
}

TensorShape output_shape(const OperatorSpec& op, const TensorShape& shape) {
  validate(op, shape);
  TensorShape out = shape;
  if (is_conv(op.kind) && op.padding == Padding::valid) {
    const auto axes = conv_axes(op.kind);
    const auto shrink = op.kernel - 1;
    if (axes.frames) out.frames -= shrink;
    if (axes.spatial) {
      out.height -= shrink;
      out.width -= shrink;
    }
  }
  return out;
}

std::uint64_t FlopBreakdown::total() const {
  return sum({conv, projection, score, softmax, weighted_sum});
}

FlopBreakdown flop_breakdown(const OperatorSpec& op, const TensorShape& shape) {
  const TensorShape out = output_shape(op, shape);
  const std::uint64_t c = op.channels;
  FlopBreakdown f;

  if (is_conv(op.kind)) {
    const auto positions = out.tokens();
    const auto macs = product({positions, c, c, kernel_volume(op)});
    f.conv = add(mul(2, macs), mul(positions, c));
    return f;
  }

  const auto tokens = shape.tokens();
  if (is_self_attention(op.kind)) {
    const auto seq = self_attention_sequences(op.kind, shape);
    const auto score_entries = product({seq.count, seq.length, seq.length});
    f.projection = add(product({4, 2, tokens, c, c}), product({4, tokens, c}));
    f.score = product({2, score_entries, c});
    f.softmax = product({kSoftmaxFlopsPerScore, score_entries, op.heads});
    f.weighted_sum = product({2, score_entries, c});
    return f;
  }

  // Cross-attention: queries from video tokens, keys/values from text tokens.
  const auto text = op.text_tokens;
  const auto copies = context_copies(op.kind, shape);
  const auto q_out = add(product({2, 2, tokens, c, c}), product({2, tokens, c}));
  const auto kv = mul(copies, add(product({2, 2, text, c, c}), product({2, text, c})));
  const auto score_entries = mul(tokens, text);
  f.projection = add(q_out, kv);
  f.score = product({2, score_entries, c});
  f.softmax = product({kSoftmaxFlopsPerScore, score_entries, op.heads});
  f.weighted_sum = product({2, score_entries, c});
  return f;
}

std::uint64_t flops_of(const OperatorSpec& op, const TensorShape& shape) {
  return flop_breakdown(op, shape).total();
}

std::uint64_t params_of(const OperatorSpec& op) {
  op.validate();
  const std::uint64_t c = op.channels;
  if (is_conv(op.kind)) return add(product({c, c, kernel_volume(op)}), c);
  return mul(4, add(mul(c, c), c));
}

std::uint64_t activation_memory_of(const OperatorSpec& op, const TensorShape& shape,
                                   std::uint64_t dtype_bytes) {
  if (dtype_bytes < 1) fail("dtype_bytes must be >= 1");
  const TensorShape out = output_shape(op, shape);
  const std::uint64_t c = op.channels;
  const auto in_elems = shape.elements();
  const auto out_elems = out.elements();

  std::uint64_t intermediate = 0;
  if (is_conv(op.kind)) {
    intermediate = out_elems;
  } else if (is_self_attention(op.kind)) {
    const auto seq = self_attention_sequences(op.kind, shape);
    const auto qkv = product({3, shape.tokens(), c});
    const auto scores = product({op.heads, seq.count, seq.length, seq.length});
    intermediate = add(qkv, scores);
  } else {
    const auto q = mul(shape.tokens(), c);
    const auto kv = product({2, context_copies(op.kind, shape), op.text_tokens, c});
    const auto scores = product({op.heads, shape.tokens(), op.text_tokens});
    intermediate = sum({q, kv, scores});
  }
  return mul(dtype_bytes, sum({in_elems, out_elems, intermediate}));
}

std::string_view cost_model_assumptions() {
  return "flops: multiply-add=2, bias add=1, softmax=5 per score entry; "
         "conv: every kernel tap counted (padded taps included), same padding unless stated; "
         "attention: 4 projections c x c with bias, score matrix materialized per head; "
         "cross-attention: context width = channels, 1D repeats context per spatial site; "
         "memory: dtype_bytes * (input + output + largest intermediate)";
}

CostReport cost_report(const OperatorSpec& op, const TensorShape& shape,
                       std::uint64_t dtype_bytes) {
  CostReport r;
  r.flops = flops_of(op, shape);
  r.params = params_of(op);
  r.peak_activation_bytes = activation_memory_of(op, shape, dtype_bytes);
  std::ostringstream os;
  os << cost_model_assumptions() << "; dtype_bytes=" << dtype_bytes;
  r.assumptions = os.str();
  return r;
}

// ---------------------------------------------------------------------------
// JSON

namespace {

std::uint64_t read_count(const nlohmann::json& j, const char* key) {
  const auto& v = j.at(key);
  if (!v.is_number_integer()) {
    throw ValidationError(std::string("field '") + key + "' must be an integer");
  }
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  const auto s = v.get<std::int64_t>();
  if (s < 0) throw ValidationError(std::string("field '") + key + "' must be >= 0");
  return static_cast<std::uint64_t>(s);
}

std::uint64_t read_optional_count(const nlohmann::json& j, const char* key) {
  return j.contains(key) ? read_count(j, key) : 0;
}

}  // namespace

void to_json(nlohmann::json& j, const TensorShape& s) {
  j = nlohmann::json::array({s.frames, s.channels, s.height, s.width});
}

void from_json(const nlohmann::json& j, TensorShape& s) {
  if (!j.is_array() || j.size() != 4) {
    throw ValidationError("shape must be an array [frames, channels, height, width]");
  }
  std::uint64_t dims[4];
  for (std::size_t i = 0; i < 4; ++i) {
    const auto& v = j[i];
    if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
      throw ValidationError("shape entries must be non-negative integers");
    }
    dims[i] = j[i].get<std::uint64_t>();
  }
  s = TensorShape{dims[0], dims[1], dims[2], dims[3]};
}

void to_json(nlohmann::json& j, const OperatorSpec& op) {
  j = nlohmann::json{{"kind", std::string(to_string(op.kind))}, {"channels", op.channels}};
  if (is_conv(op.kind)) {
    j["kernel"] = op.kernel;
    if (op.padding == Padding::valid) j["padding"] = "valid";
  }
  if (is_attention(op.kind)) j["heads"] = op.heads;
  if (is_cross_attention(op.kind)) j["text_tokens"] = op.text_tokens;
}

void from_json(const nlohmann::json& j, OperatorSpec& op) {
  OperatorSpec r;
  r.kind = parse_op_kind(j.at("kind").get<std::string>());
  r.channels = read_count(j, "channels");
  r.kernel = read_optional_count(j, "kernel");
  r.heads = read_optional_count(j, "heads");
  r.text_tokens = read_optional_count(j, "text_tokens");
  if (j.contains("padding")) {
    const auto p = j.at("padding").get<std::string>();
    if (p == "same") {
      r.padding = Padding::same;
    } else if (p == "valid") {
      r.padding = Padding::valid;
    } else {
      throw ValidationError("padding must be 'same' or 'valid'");
    }
  }
  r.validate();
  op = r;
}

void to_json(nlohmann::json& j, const CostReport& r) {
  j = nlohmann::json{{"flops", r.flops},
                     {"params", r.params},
                     {"peak_activation_bytes", r.peak_activation_bytes},
                     {"assumptions", r.assumptions}};
}

void from_json(const nlohmann::json& j, CostReport& r) {
  r.flops = read_count(j, "flops");
  r.params = read_count(j, "params");
  r.peak_activation_bytes = read_count(j, "peak_activation_bytes");
  r.assumptions = j.value("assumptions", std::string{});
}

}  // namespace archpilot
