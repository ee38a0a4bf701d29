#pragma once

// Signed fixed-point values with explicit bit widths. Every operation
// saturates at the declared width; nothing wraps.

#include <cmath>
#include <cstdint>
#include <string>

#include "qfb/errors.hpp"

namespace qfb {

inline constexpr int kMinWidth = 2;
inline constexpr int kMaxWidth = 32;

/// ADC resolution: 14 bits over a nominal +-1 V range.
inline constexpr int kAdcWidth = 14;
inline constexpr double kAdcLsbVolts = 1.0 / 8192.0;  // 2^-13 V

constexpr std::int64_t min_raw(int width) { return -(std::int64_t{1} << (width - 1)); }
constexpr std::int64_t max_raw(int width) { return (std::int64_t{1} << (width - 1)) - 1; }

constexpr bool fits(std::int64_t raw, int width) {
  return raw >= min_raw(width) && raw <= max_raw(width);
}

/// Sticky flag set by any saturating operation that clips.
struct OverflowLatch {
  bool tripped = false;
  void clear() { tripped = false; }
};

inline void check_width(int width) {
  if (width < kMinWidth || width > kMaxWidth) {
    throw ConfigError("fixed-point width " + std::to_string(width) + " outside [2, 32]");
  }
}

constexpr std::int64_t saturate(std::int64_t raw, int width, OverflowLatch* latch = nullptr) {
  if (raw > max_raw(width)) {
    if (latch) latch->tripped = true;
    return max_raw(width);
  }
  if (raw < min_raw(width)) {
    if (latch) latch->tripped = true;
    return min_raw(width);
  }
  return raw;
}

class FxpSample {
 public:
  FxpSample() = default;

  /// Throws if raw does not fit or the scale is not positive.
  FxpSample(std::int64_t raw, int width, double lsb_volts) : raw_(raw), width_(width), lsb_(lsb_volts) {
    check_width(width);
    if (!(lsb_volts > 0.0) || !std::isfinite(lsb_volts)) {
      throw ConfigError("lsb_volts must be positive and finite");
    }
    if (!fits(raw, width)) {
      throw InputError("raw value " + std::to_string(raw) + " does not fit in " + std::to_string(width) +
                       " bits");
    }
  }

  static FxpSample adc(std::int64_t raw) { return FxpSample(raw, kAdcWidth, kAdcLsbVolts); }

  std::int64_t raw() const { return raw_; }
  int width() const { return width_; }
  double lsb_volts() const { return lsb_; }
  double to_volts() const { return static_cast<double>(raw_) * lsb_; }

  /// Sign bit of the two's-complement representation (1 iff negative).
  int sign_bit() const { return raw_ < 0 ? 1 : 0; }

  /// Same value at a different width, saturated.
  FxpSample resized(int width, OverflowLatch* latch = nullptr) const {
    check_width(width);
    return FxpSample(saturate(raw_, width, latch), width, lsb_);
  }

  friend bool operator==(const FxpSample& a, const FxpSample& b) {
    return a.raw_ == b.raw_ && a.width_ == b.width_ && a.lsb_ == b.lsb_;
  }

 private:
  std::int64_t raw_ = 0;
  int width_ = kAdcWidth;
  double lsb_ = kAdcLsbVolts;
};

/// Rounds half away from zero, then saturates.
inline FxpSample quantize(double volts, int width, double lsb_volts, OverflowLatch* latch = nullptr) {
  check_width(width);
  if (!std::isfinite(volts)) throw InputError("cannot quantize a non-finite voltage");
  if (!(lsb_volts > 0.0)) throw ConfigError("lsb_volts must be positive");
  double steps = std::round(volts / lsb_volts);
  // Clamp before the integer conversion so huge inputs stay defined.
  constexpr double kLimit = 4.0e18;
  if (steps > kLimit) steps = kLimit;
  if (steps < -kLimit) steps = -kLimit;
  return FxpSample(saturate(static_cast<std::int64_t>(steps), width, latch), width, lsb_volts);
}

inline void require_same_scale(const FxpSample& a, const FxpSample& b) {
  if (a.lsb_volts() != b.lsb_volts()) throw InputError("fixed-point operands have different scales");
}

inline FxpSample add_sat(const FxpSample& a, const FxpSample& b, int width, OverflowLatch* latch = nullptr) {
  require_same_scale(a, b);
  check_width(width);
  return FxpSample(saturate(a.raw() + b.raw(), width, latch), width, a.lsb_volts());
}

inline FxpSample sub_sat(const FxpSample& a, const FxpSample& b, int width, OverflowLatch* latch = nullptr) {
  require_same_scale(a, b);
  check_width(width);
  return FxpSample(saturate(a.raw() - b.raw(), width, latch), width, a.lsb_volts());
}

inline FxpSample negate_sat(const FxpSample& a, int width, OverflowLatch* latch = nullptr) {
  check_width(width);
  return FxpSample(saturate(-a.raw(), width, latch), width, a.lsb_volts());
}

inline constexpr int kMaxShift = 7;

/// Multiplies by 2^s. Left shifts saturate; right shifts are arithmetic
/// (floor toward minus infinity). The scale (lsb) is unchanged.
inline FxpSample shift_scale(const FxpSample& a, int s, int width, OverflowLatch* latch = nullptr) {
  if (s < -kMaxShift || s > kMaxShift) {
    throw ConfigError("shift exponent " + std::to_string(s) + " outside [-7, 7]");
  }
  check_width(width);
  std::int64_t r = a.raw();
  if (s >= 0) {
    r = r * (std::int64_t{1} << s);  // |raw| < 2^32, no int64 overflow
  } else {
    r >>= -s;  // arithmetic shift on signed int64 (C++20)
  }
  return FxpSample(saturate(r, width, latch), width, a.lsb_volts());
}

inline FxpSample shift_scale(const FxpSample& a, int s, OverflowLatch* latch = nullptr) {
  return shift_scale(a, s, a.width(), latch);
}

}  // namespace qfb
