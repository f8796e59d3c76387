#pragma once

// Brute-force FLOP counter: runs naive loop-nest implementations of each
// operator on a scalar type that counts every arithmetic operation.

#include <cstdint>

#include "archpilot/op_cost.hpp"

namespace oracle {

struct OpCounts {
  std::uint64_t mul = 0;
  std::uint64_t add = 0;    // additions and subtractions
  std::uint64_t other = 0;  // compare, exp, divide

  std::uint64_t total() const { return mul + add + other; }
};

struct OracleBreakdown {
  OpCounts conv;
  OpCounts projection;
  OpCounts score;
  OpCounts softmax;
  OpCounts weighted_sum;

  std::uint64_t total() const {
    return conv.total() + projection.total() + score.total() + softmax.total() +
           weighted_sum.total();
  }
};

// Executes the operator on dummy data. Padded convolution taps are executed
// against zero padding, as a naive padded-input kernel would.
OracleBreakdown count_flops(const archpilot::OperatorSpec& op, const archpilot::TensorShape& shape);

}  // namespace oracle
