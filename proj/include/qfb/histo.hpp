#pragma once

// Histogram module: 7-bit binning of preprocessed values and an emulated
// 2^21 x 16-bit count memory with 2D, correlation and time-resolved address
// layouts. A 64-bit shadow counter mirrors every word so counts past the
// 16-bit ceiling are not lost.

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "qfb/errors.hpp"
#include "qfb/fxp.hpp"

namespace qfb {

inline constexpr int kBinBits = 7;
inline constexpr int kBinCount = 1 << kBinBits;
inline constexpr int kQ5Bits = 5;
inline constexpr int kSegBits = 2;
inline constexpr int kMaxSegments = 1 << kSegBits;
inline constexpr int kTimeBits = 4;
inline constexpr int kTimeSlots = 1 << kTimeBits;
inline constexpr int kAddressBits = 21;
inline constexpr std::size_t kRamWords = std::size_t{1} << kAddressBits;
inline constexpr std::uint16_t kWordMax = 0xFFFF;
inline constexpr double kBinWidthVolts = kAdcLsbVolts * (1 << (kAdcWidth - kBinBits));  // 15.625 mV

enum class HistogramMode : std::uint8_t { kTwoD = 0, kCorrelation = 1, kTimeResolved = 2 };

inline std::string to_string(HistogramMode m) {
  switch (m) {
    case HistogramMode::kTwoD: return "2d";
    case HistogramMode::kCorrelation: return "correlation";
    case HistogramMode::kTimeResolved: return "time-resolved";
  }
  return "?";
}

/// Offset-binary top 7 bits of the value clipped to the +-1 V range, so
/// [-1, +1) maps monotonically onto 0..127 and zero lands on bin 64.
inline int bin7(const FxpSample& v) {
  const std::int64_t clipped = saturate(v.raw(), kAdcWidth);
  return static_cast<int>((clipped >> (kAdcWidth - kBinBits)) + kBinCount / 2);
}

/// Top 5 bits of a 7-bit bin.
inline int bin5(int b7) { return b7 >> (kBinBits - kQ5Bits); }

/// Lower edge of a bin in volts.
inline double bin_lower_volts(int bin) { return (bin - kBinCount / 2) * kBinWidthVolts; }

// ---------------------------------------------------------------------------
// Address layouts

struct CorrelationFields {
  int i2 = 0;
  int q5 = 0;
  int i1 = 0;
  int seg = 0;
  friend bool operator==(const CorrelationFields&, const CorrelationFields&) = default;
};

inline void check_field(int v, int bits, const char* name) {
  if (v < 0 || v >= (1 << bits)) throw InputError(std::string(name) + " field out of range: " + std::to_string(v));
}

inline std::uint32_t pack_correlation_address(int i2, int q5, int i1, int seg) {
  check_field(i2, kBinBits, "i2");
  check_field(q5, kQ5Bits, "q");
  check_field(i1, kBinBits, "i1");
  check_field(seg, kSegBits, "seg");
  return static_cast<std::uint32_t>((((i2 << kQ5Bits) + q5) << kBinBits) + i1) << kSegBits |
         static_cast<std::uint32_t>(seg);
}

inline CorrelationFields unpack_correlation_address(std::uint32_t addr) {
  if (addr >= kRamWords) throw InputError("address outside the 21-bit space");
  CorrelationFields f;
  f.seg = static_cast<int>(addr & ((1U << kSegBits) - 1));
  addr >>= kSegBits;
  f.i1 = static_cast<int>(addr & ((1U << kBinBits) - 1));
  addr >>= kBinBits;
  f.q5 = static_cast<int>(addr & ((1U << kQ5Bits) - 1));
  f.i2 = static_cast<int>(addr >> kQ5Bits);
  return f;
}

inline std::uint32_t pack_2d_address(int i_bin, int q_bin) {
  check_field(i_bin, kBinBits, "i");
  check_field(q_bin, kBinBits, "q");
  return static_cast<std::uint32_t>(q_bin * kBinCount + i_bin);
}

// Time-resolved layout, most significant first: seg(2) time(4) q(7) i(7).
inline constexpr int kTrIShift = 0;
inline constexpr int kTrQShift = kBinBits;
inline constexpr int kTrTimeShift = 2 * kBinBits;
inline constexpr int kTrSegShift = 2 * kBinBits + kTimeBits;

inline std::uint32_t pack_time_resolved_address(int i_bin, int q_bin, int time, int seg) {
  check_field(i_bin, kBinBits, "i");
  check_field(q_bin, kBinBits, "q");
  if (time < 0 || time >= kTimeSlots) throw SequencingError("time-resolved slot " + std::to_string(time) + " >= 16");
  if (seg < 0 || seg >= kMaxSegments) throw SequencingError("segment out of range");
  return static_cast<std::uint32_t>(seg) << kTrSegShift | static_cast<std::uint32_t>(time) << kTrTimeShift |
         static_cast<std::uint32_t>(q_bin) << kTrQShift | static_cast<std::uint32_t>(i_bin) << kTrIShift;
}

// ---------------------------------------------------------------------------
// Memory

class HistogramRam {
 public:
  explicit HistogramRam(HistogramMode mode = HistogramMode::kTwoD, int segment_count = 1)
      : mode_(mode), segment_count_(segment_count), words_(kRamWords, 0), shadow_(kRamWords, 0) {
    if (segment_count < 1 || segment_count > kMaxSegments) throw ConfigError("segment count must lie in [1, 4]");
  }

  HistogramMode mode() const { return mode_; }
  int segment_count() const { return segment_count_; }

  void increment(std::uint32_t addr) {
    if (addr >= kRamWords) throw InputError("address outside the 21-bit space");
    ++shadow_[addr];
    ++total_;
    if (words_[addr] < kWordMax) ++words_[addr];
  }

  std::uint16_t word(std::uint32_t addr) const { return words_.at(addr); }
  std::uint64_t shadow(std::uint32_t addr) const { return shadow_.at(addr); }
  const std::vector<std::uint16_t>& words() const { return words_; }
  const std::vector<std::uint64_t>& shadows() const { return shadow_; }
  std::uint64_t total_events() const { return total_; }

  /// Addresses whose shadow count exceeds what a 16-bit word can hold.
  std::vector<std::uint32_t> saturated_addresses() const {
    std::vector<std::uint32_t> out;
    for (std::size_t a = 0; a < kRamWords; ++a) {
      if (shadow_[a] > kWordMax) out.push_back(static_cast<std::uint32_t>(a));
    }
    return out;
  }

  void merge(const HistogramRam& other) {
    if (other.mode_ != mode_ || other.segment_count_ != segment_count_) {
      throw InputError("cannot merge histograms with different layouts");
    }
    for (std::size_t a = 0; a < kRamWords; ++a) {
      shadow_[a] += other.shadow_[a];
      words_[a] = static_cast<std::uint16_t>(std::min<std::uint64_t>(shadow_[a], kWordMax));
    }
    total_ += other.total_;
  }

  void clear() {
    std::fill(words_.begin(), words_.end(), 0);
    std::fill(shadow_.begin(), shadow_.end(), 0);
    total_ = 0;
  }

  // Binary dump: 64-byte little-endian header, then 2^21 16-bit words.
  static constexpr char kMagic[8] = {'Q', 'F', 'B', 'H', 'I', 'S', 'T', '1'};
  static constexpr std::uint16_t kFormatVersion = 1;
  static constexpr std::size_t kHeaderBytes = 64;

  void write_binary(std::ostream& os) const {
    std::array<unsigned char, kHeaderBytes> h{};
    std::memcpy(h.data(), kMagic, 8);
    put_le(h.data() + 8, kFormatVersion, 2);
    h[10] = static_cast<unsigned char>(mode_);
    h[11] = kAddressBits;
    h[12] = 16;
    h[13] = static_cast<unsigned char>(segment_count_);
    const auto fields = layout();
    for (std::size_t k = 0; k < fields.size(); ++k) {
      h[14 + 2 * k] = fields[k].first;
      h[15 + 2 * k] = fields[k].second;
    }
    put_le(h.data() + 24, total_, 8);
    put_le(h.data() + 32, saturated_addresses().size(), 8);
    os.write(reinterpret_cast<const char*>(h.data()), static_cast<std::streamsize>(h.size()));
    std::vector<unsigned char> body(kRamWords * 2);
    for (std::size_t a = 0; a < kRamWords; ++a) {
      body[2 * a] = static_cast<unsigned char>(words_[a] & 0xFF);
      body[2 * a + 1] = static_cast<unsigned char>(words_[a] >> 8);
    }
    os.write(reinterpret_cast<const char*>(body.data()), static_cast<std::streamsize>(body.size()));
  }

  /// Restores words; shadows are set equal to the words (exact counts past
  /// the ceiling are not part of the dump).
  static HistogramRam read_binary(std::istream& is) {
    std::array<unsigned char, kHeaderBytes> h{};
    if (!is.read(reinterpret_cast<char*>(h.data()), kHeaderBytes)) throw InputError("truncated histogram header");
    if (std::memcmp(h.data(), kMagic, 8) != 0) throw InputError("not a histogram dump");
    if (get_le(h.data() + 8, 2) != kFormatVersion) throw InputError("unsupported histogram dump version");
    if (h[10] > 2 || h[11] != kAddressBits || h[12] != 16) throw InputError("unsupported histogram layout");
    HistogramRam ram(static_cast<HistogramMode>(h[10]), h[13]);
    std::vector<unsigned char> body(kRamWords * 2);
    if (!is.read(reinterpret_cast<char*>(body.data()), static_cast<std::streamsize>(body.size()))) {
      throw InputError("truncated histogram body");
    }
    for (std::size_t a = 0; a < kRamWords; ++a) {
      ram.words_[a] = static_cast<std::uint16_t>(body[2 * a] | (body[2 * a + 1] << 8));
      ram.shadow_[a] = ram.words_[a];
      ram.total_ += ram.words_[a];
    }
    return ram;
  }

  /// (width, shift) of each address field, least significant first.
  std::array<std::pair<std::uint8_t, std::uint8_t>, 4> layout() const {
    switch (mode_) {
      case HistogramMode::kTwoD: return {{{kBinBits, 0}, {kBinBits, kBinBits}, {0, 0}, {0, 0}}};
      case HistogramMode::kCorrelation:
        return {{{kSegBits, 0},
                 {kBinBits, kSegBits},
                 {kQ5Bits, kSegBits + kBinBits},
                 {kBinBits, kSegBits + kBinBits + kQ5Bits}}};
      case HistogramMode::kTimeResolved:
        return {{{kBinBits, kTrIShift}, {kBinBits, kTrQShift}, {kTimeBits, kTrTimeShift}, {kSegBits, kTrSegShift}}};
    }
    return {};
  }

 private:
  static void put_le(unsigned char* p, std::uint64_t v, int n) {
    for (int k = 0; k < n; ++k) p[k] = static_cast<unsigned char>((v >> (8 * k)) & 0xFF);
  }
  static std::uint64_t get_le(const unsigned char* p, int n) {
    std::uint64_t v = 0;
    for (int k = n; k-- > 0;) v = (v << 8) | p[k];
    return v;
  }

  HistogramMode mode_;
  int segment_count_;
  std::vector<std::uint16_t> words_;
  std::vector<std::uint64_t> shadow_;
  std::uint64_t total_ = 0;
};

inline void require_mode(const HistogramRam& ram, HistogramMode mode) {
  if (ram.mode() != mode) throw InputError("histogram is in " + to_string(ram.mode()) + " mode");
}

inline void update_2d(HistogramRam& ram, int i_bin, int q_bin) {
  require_mode(ram, HistogramMode::kTwoD);
  ram.increment(pack_2d_address(i_bin, q_bin));
}

/// Buffer and segment counter of the correlation mode. The first fb_time
/// event of a repetition is buffered, the second one is counted together
/// with the buffered bin.
class CorrelationState {
 public:
  explicit CorrelationState(int segment_count = 1) : segment_count_(segment_count) {
    if (segment_count < 1 || segment_count > kMaxSegments) throw ConfigError("segment count must lie in [1, 4]");
  }

  int seg() const { return seg_; }
  bool pending() const { return pending_; }
  int buffered_i1() const { return buffered_i1_; }

  void on_fb_time(HistogramRam& ram, int i_bin, int q_bin5) {
    require_mode(ram, HistogramMode::kCorrelation);
    if (ram.segment_count() != segment_count_) throw InputError("segment count differs from the histogram's");
    if (!pending_) {
      check_field(i_bin, kBinBits, "i1");
      buffered_i1_ = i_bin;
      pending_ = true;
      return;
    }
    ram.increment(pack_correlation_address(i_bin, q_bin5, buffered_i1_, seg_));
    pending_ = false;
    paired_ = true;
  }

  /// Closes a repetition; exactly one pair of events must have arrived.
  void end_repetition() {
    if (pending_ || !paired_) throw SequencingError("correlation mode needs exactly two fb_time events per repetition");
    paired_ = false;
    seg_ = (seg_ + 1) % segment_count_;
  }

  /// Positions the segment counter for repetition `index` (used when
  /// repetitions are split across workers).
  void sync_to_repetition(std::uint64_t index) {
    if (pending_) throw SequencingError("cannot resync in the middle of a repetition");
    seg_ = static_cast<int>(index % static_cast<std::uint64_t>(segment_count_));
    paired_ = false;
  }

 private:
  int segment_count_;
  int seg_ = 0;
  int buffered_i1_ = 0;
  bool pending_ = false;
  bool paired_ = false;
};

inline void update_time_resolved(HistogramRam& ram, int i_bin, int q_bin, int time, int seg) {
  require_mode(ram, HistogramMode::kTimeResolved);
  if (seg >= ram.segment_count()) throw SequencingError("segment beyond the configured count");
  ram.increment(pack_time_resolved_address(i_bin, q_bin, time, seg));
}

// ---------------------------------------------------------------------------
// Analysis

using BinCounts = std::array<std::uint64_t, kBinCount>;

struct QuadrantCounts {
  std::uint64_t gg = 0, ge = 0, eg = 0, ee = 0;
  std::uint64_t total() const { return gg + ge + eg + ee; }
};

/// Fractions of (first, second) outcomes; bin >= threshold means E.
struct Quadrants {
  double gg = 0, ge = 0, eg = 0, ee = 0;
  double p_e1() const { return eg + ee; }
  double p_e2() const { return ge + ee; }
};

/// Correlation-mode counts split at `threshold_bin`. seg < 0 sums all segments.
inline QuadrantCounts quadrant_counts(const HistogramRam& ram, int threshold_bin, int seg = -1) {
  require_mode(ram, HistogramMode::kCorrelation);
  QuadrantCounts c;
  const auto& sh = ram.shadows();
  for (std::uint32_t a = 0; a < kRamWords; ++a) {
    if (sh[a] == 0) continue;
    const CorrelationFields f = unpack_correlation_address(a);
    if (seg >= 0 && f.seg != seg) continue;
    const bool e1 = f.i1 >= threshold_bin;
    const bool e2 = f.i2 >= threshold_bin;
    (e1 ? (e2 ? c.ee : c.eg) : (e2 ? c.ge : c.gg)) += sh[a];
  }
  return c;
}

inline Quadrants to_fractions(const QuadrantCounts& c) {
  const double n = static_cast<double>(c.total());
  if (n == 0) throw InputError("histogram is empty");
  return {c.gg / n, c.ge / n, c.eg / n, c.ee / n};
}

inline Quadrants quadrant_probabilities(const HistogramRam& ram, int threshold_bin, int seg = -1) {
  return to_fractions(quadrant_counts(ram, threshold_bin, seg));
}

struct CorrelationMarginals {
  BinCounts i1{};
  BinCounts i2{};
};

inline CorrelationMarginals correlation_marginals(const HistogramRam& ram, int seg = -1) {
  require_mode(ram, HistogramMode::kCorrelation);
  CorrelationMarginals m;
  const auto& sh = ram.shadows();
  for (std::uint32_t a = 0; a < kRamWords; ++a) {
    if (sh[a] == 0) continue;
    const CorrelationFields f = unpack_correlation_address(a);
    if (seg >= 0 && f.seg != seg) continue;
    m.i1[static_cast<std::size_t>(f.i1)] += sh[a];
    m.i2[static_cast<std::size_t>(f.i2)] += sh[a];
  }
  return m;
}

struct TwoDMarginals {
  BinCounts i{};
  BinCounts q{};
};

inline TwoDMarginals marginals_2d(const HistogramRam& ram) {
  require_mode(ram, HistogramMode::kTwoD);
  TwoDMarginals m;
  for (int q = 0; q < kBinCount; ++q) {
    for (int i = 0; i < kBinCount; ++i) {
      const std::uint64_t c = ram.shadow(pack_2d_address(i, q));
      m.i[static_cast<std::size_t>(i)] += c;
      m.q[static_cast<std::size_t>(q)] += c;
    }
  }
  return m;
}

/// I-bin distribution at one time slot of a time-resolved histogram.
inline BinCounts time_resolved_marginal_i(const HistogramRam& ram, int time, int seg) {
  require_mode(ram, HistogramMode::kTimeResolved);
  BinCounts out{};
  for (int q = 0; q < kBinCount; ++q) {
    for (int i = 0; i < kBinCount; ++i) {
      out[static_cast<std::size_t>(i)] += ram.shadow(pack_time_resolved_address(i, q, time, seg));
    }
  }
  return out;
}

inline void write_marginals_csv(std::ostream& os, const BinCounts& a, const BinCounts& b, const std::string& name_a,
                                const std::string& name_b) {
  os << "bin,lower_volts," << name_a << ',' << name_b << '\n';
  for (int k = 0; k < kBinCount; ++k) {
    os << k << ',' << bin_lower_volts(k) << ',' << a[static_cast<std::size_t>(k)] << ','
       << b[static_cast<std::size_t>(k)] << '\n';
  }
}

inline void write_quadrants_csv(std::ostream& os, const QuadrantCounts& c) {
  const Quadrants f = to_fractions(c);
  os << "region,count,probability\n";
  os << "GG," << c.gg << ',' << f.gg << '\n';
  os << "GE," << c.ge << ',' << f.ge << '\n';
  os << "EG," << c.eg << ',' << f.eg << '\n';
  os << "EE," << c.ee << ',' << f.ee << '\n';
}

}  // namespace qfb
