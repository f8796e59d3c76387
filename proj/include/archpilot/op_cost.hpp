#pragma once

// Analytic cost model for temporal operator candidates and generic spatial
// blocks: FLOPs, parameter counts and peak activation memory.
//
// Conventions used throughout (also recorded in CostReport::assumptions):
//   * one multiply-add is 2 FLOPs, a bias add is 1 FLOP;
//   * softmax costs kSoftmaxFlopsPerScore FLOPs per score entry;
//   * convolutions evaluate every kernel tap, padded taps included;
//   * attention materializes the full score matrix per head;
//   * cross-attention context width equals the operator's channel count, and
//     1D cross-attention repeats the text context for every spatial site.

#include <compare>
#include <cstdint>
#include <string>
#include <string_view>

#include <json.hpp>

namespace archpilot {

enum class OpKind {
  Conv1D,
  Conv3D,
  SelfAttn1D,
  SelfAttn3D,
  CrossAttn1D,
  CrossAttn3D,
  SpatialBlock,
};

inline constexpr OpKind kAllOpKinds[] = {
    OpKind::Conv1D,      OpKind::Conv3D,      OpKind::SelfAttn1D,   OpKind::SelfAttn3D,
    OpKind::CrossAttn1D, OpKind::CrossAttn3D, OpKind::SpatialBlock,
};

std::string_view to_string(OpKind kind);
OpKind parse_op_kind(std::string_view name);

constexpr bool is_conv(OpKind k) {
  return k == OpKind::Conv1D || k == OpKind::Conv3D || k == OpKind::SpatialBlock;
}
constexpr bool is_self_attention(OpKind k) {
  return k == OpKind::SelfAttn1D || k == OpKind::SelfAttn3D;
}
constexpr bool is_cross_attention(OpKind k) {
  return k == OpKind::CrossAttn1D || k == OpKind::CrossAttn3D;
}
constexpr bool is_attention(OpKind k) { return is_self_attention(k) || is_cross_attention(k); }

enum class Padding { same, valid };

// Activation tensor (frames x channels x height x width). In latent space the
// frames/height/width are the compressed dimensions.
struct TensorShape {
  std::uint64_t frames = 1;
  std::uint64_t channels = 1;
  std::uint64_t height = 1;
  std::uint64_t width = 1;

  std::uint64_t sites() const;     // height * width
  std::uint64_t tokens() const;    // frames * height * width
  std::uint64_t elements() const;  // tokens * channels

  void validate() const;

  friend auto operator<=>(const TensorShape&, const TensorShape&) = default;
};

std::string to_string(const TensorShape& s);

struct OperatorSpec {
  OpKind kind = OpKind::Conv1D;
  std::uint64_t channels = 1;
  std::uint64_t kernel = 0;       // convolution kinds only
  std::uint64_t heads = 0;        // attention kinds only
  std::uint64_t text_tokens = 0;  // cross-attention kinds only
  Padding padding = Padding::same;  // convolution kinds only

  void validate() const;

  friend auto operator<=>(const OperatorSpec&, const OperatorSpec&) = default;
};

std::string to_string(const OperatorSpec& op);

inline constexpr std::uint64_t kSoftmaxFlopsPerScore = 5;
inline constexpr std::uint64_t kDefaultDtypeBytes = 2;  // fp16

// Per-term FLOP counts. Unused terms are zero for a given kind.
struct FlopBreakdown {
  std::uint64_t conv = 0;          // convolution multiply-adds + bias
  std::uint64_t projection = 0;    // Q/K/V/output projections + bias
  std::uint64_t score = 0;         // Q·K^T
  std::uint64_t softmax = 0;
  std::uint64_t weighted_sum = 0;  // softmax(scores)·V

  std::uint64_t total() const;
};

struct CostReport {
  std::uint64_t flops = 0;
  std::uint64_t params = 0;
  std::uint64_t peak_activation_bytes = 0;
  std::string assumptions;
};

// Throws ValidationError if `shape` cannot be fed to `op`.
void validate(const OperatorSpec& op, const TensorShape& shape);

TensorShape output_shape(const OperatorSpec& op, const TensorShape& shape);
FlopBreakdown flop_breakdown(const OperatorSpec& op, const TensorShape& shape);
std::uint64_t flops_of(const OperatorSpec& op, const TensorShape& shape);
std::uint64_t params_of(const OperatorSpec& op);

// dtype_bytes * (input + output + largest intermediate) elements.
std::uint64_t activation_memory_of(const OperatorSpec& op, const TensorShape& shape,
                                   std::uint64_t dtype_bytes = kDefaultDtypeBytes);

CostReport cost_report(const OperatorSpec& op, const TensorShape& shape,
                       std::uint64_t dtype_bytes = kDefaultDtypeBytes);

std::string_view cost_model_assumptions();

// JSON. Shapes serialize as [frames, channels, height, width].
void to_json(nlohmann::json& j, const TensorShape& s);
void from_json(const nlohmann::json& j, TensorShape& s);
void to_json(nlohmann::json& j, const OperatorSpec& op);
void from_json(const nlohmann::json& j, OperatorSpec& op);
void to_json(nlohmann::json& j, const CostReport& r);
void from_json(const nlohmann::json& j, CostReport& r);

}  // namespace archpilot
