#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <string>
#include <string_view>

#include "ghostspec/error.hpp"

namespace ghostspec {

enum class DType { F64, F32, F16, BF16 };

constexpr std::size_t dtype_width(DType t) noexcept {
  switch (t) {
    case DType::F64: return 8;
    case DType::F32: return 4;
    case DType::F16:
    case DType::BF16: return 2;
  }
  return 0;
}

constexpr std::string_view dtype_name(DType t) noexcept {
  switch (t) {
    case DType::F64: return "F64";
    case DType::F32: return "F32";
    case DType::F16: return "F16";
    case DType::BF16: return "BF16";
  }
  return "?";
}

inline DType parse_dtype(std::string_view name) {
  if (name == "F64") return DType::F64;
  if (name == "F32") return DType::F32;
  if (name == "F16") return DType::F16;
  if (name == "BF16") return DType::BF16;
  throw InputError("unsupported dtype '" + std::string(name) + "'");
}

namespace detail {

// IEEE-style 16-bit float with ExpBits exponent bits and MantBits stored mantissa bits.
template <int ExpBits, int MantBits>
struct Half16 {
  static_assert(1 + ExpBits + MantBits == 16);
  static constexpr int kBias = (1 << (ExpBits - 1)) - 1;
  static constexpr std::uint16_t kExpMask = ((1u << ExpBits) - 1u) << MantBits;
  static constexpr std::uint16_t kMantMask = (1u << MantBits) - 1u;
  static constexpr int kMinNormalExp = 1 - kBias;
  static constexpr int kMaxExp = kBias;

  static double decode(std::uint16_t bits) noexcept {
    const bool negative = (bits & 0x8000u) != 0;
    const unsigned exp_field = (bits & kExpMask) >> MantBits;
    const unsigned mant = bits & kMantMask;
    double v;
    if (exp_field == (kExpMask >> MantBits)) {
      v = mant == 0 ? std::numeric_limits<double>::infinity()
                    : std::numeric_limits<double>::quiet_NaN();
    } else if (exp_field == 0) {
      v = std::ldexp(static_cast<double>(mant), kMinNormalExp - MantBits);
    } else {
      v = std::ldexp(static_cast<double>((1u << MantBits) | mant),
                     static_cast<int>(exp_field) - kBias - MantBits);
    }
    return negative ? -v : v;
  }

  // Round-to-nearest-even directly from double; no intermediate float rounding.
  static std::uint16_t encode(double x) noexcept {
    const std::uint16_t sign = std::signbit(x) ? 0x8000u : 0u;
    if (std::isnan(x)) return static_cast<std::uint16_t>(sign | kExpMask | 1u);
    const double a = std::abs(x);
    if (std::isinf(a)) return static_cast<std::uint16_t>(sign | kExpMask);
    if (a < std::ldexp(1.0, kMinNormalExp)) {
      // Subnormal range; a rounded-up result of 2^MantBits is the smallest normal.
      const double q = std::nearbyint(std::ldexp(a, MantBits - kMinNormalExp));
      return static_cast<std::uint16_t>(sign | static_cast<std::uint16_t>(q));
    }
    int e2 = 0;
    std::frexp(a, &e2);
    int e = e2 - 1;
    double m = std::nearbyint(std::ldexp(a, MantBits - e));
    if (m >= std::ldexp(1.0, MantBits + 1)) {
      m = std::ldexp(1.0, MantBits);
      ++e;
    }
    if (e > kMaxExp) return static_cast<std::uint16_t>(sign | kExpMask);
    const auto mant = static_cast<std::uint16_t>(static_cast<std::uint32_t>(m) & kMantMask);
    return static_cast<std::uint16_t>(sign | (static_cast<unsigned>(e + kBias) << MantBits) | mant);
  }
};

}  // namespace detail

using Float16Codec = detail::Half16<5, 10>;
using BFloat16Codec = detail::Half16<8, 7>;

/// Widen one little-endian element to double. Exact for every dtype.
inline double decode_element(DType t, const unsigned char* p) noexcept {
  switch (t) {
    case DType::F64: {
      std::uint64_t u = 0;
      for (int i = 7; i >= 0; --i) u = (u << 8) | p[i];
      return std::bit_cast<double>(u);
    }
    case DType::F32: {
      std::uint32_t u = 0;
      for (int i = 3; i >= 0; --i) u = (u << 8) | p[i];
      return static_cast<double>(std::bit_cast<float>(u));
    }
    case DType::F16:
      return Float16Codec::decode(static_cast<std::uint16_t>(p[0] | (p[1] << 8)));
    case DType::BF16:
      return BFloat16Codec::decode(static_cast<std::uint16_t>(p[0] | (p[1] << 8)));
  }
  return 0.0;
}

/// Narrow a double to the given dtype (round-to-nearest-even), little-endian.
inline void encode_element(DType t, double v, unsigned char* out) noexcept {
  auto put = [out](std::uint64_t u, int n) {
    for (int i = 0; i < n; ++i) out[i] = static_cast<unsigned char>((u >> (8 * i)) & 0xFFu);
  };
  switch (t) {
    case DType::F64: put(std::bit_cast<std::uint64_t>(v), 8); break;
    case DType::F32: put(std::bit_cast<std::uint32_t>(static_cast<float>(v)), 4); break;
    case DType::F16: put(Float16Codec::encode(v), 2); break;
    case DType::BF16: put(BFloat16Codec::encode(v), 2); break;
  }
}

}  // namespace ghostspec
