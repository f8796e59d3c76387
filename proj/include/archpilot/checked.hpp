#pragma once

#include <cstdint>
#include <initializer_list>

#include "archpilot/errors.hpp"

namespace archpilot::checked {

inline std::uint64_t mul(std::uint64_t a, std::uint64_t b) {
  std::uint64_t r = 0;
  if (__builtin_mul_overflow(a, b, &r)) {
    throw OverflowError("count overflow in multiplication");
  }
  return r;
}

inline std::uint64_t add(std::uint64_t a, std::uint64_t b) {
  std::uint64_t r = 0;
  if (__builtin_add_overflow(a, b, &r)) {
    throw OverflowError("count overflow in addition");
  }
  return r;
}

inline std::uint64_t product(std::initializer_list<std::uint64_t> xs) {
  std::uint64_t r = 1;
  for (auto x : xs) r = mul(r, x);
  return r;
}

inline std::uint64_t sum(std::initializer_list<std::uint64_t> xs) {
  std::uint64_t r = 0;
  for (auto x : xs) r = add(r, x);
  return r;
}

}  // namespace archpilot::checked
