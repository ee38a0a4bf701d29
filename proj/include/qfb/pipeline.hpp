#pragma once

// Cycle-accurate model of the feedback signal processor: trigger
// synchronization, fs/4 mixer, moving average, offset/scale, sign-bit
// discrimination and feedback-trigger generation.
//
// Register map (state after clock edge n, x_n = sample latched into the ADC
// register at edge n, tr_n = trigger latched into the trigger input register):
//
//   adc         x_n
//   mixer       mix(x_{n-1})
//   moving avg  MA over mix(x_{n-l-1}) .. mix(x_{n-2})
//   outputs     i_t, q_t = preprocess(MA of previous edge); fb = LUT(i_t, q_t) & fb_time
//   trigger     input reg, z^-6 sync, z^-1 z^-1, rising edge, z^-d, output reg
//
// so x_n reaches the feedback outputs at edge n + 3 and a trigger rising at
// edge n0 produces fb_time at edge n0 + 6 + 2 + d + 1.

#include <array>
#include <bit>
#include <complex>
#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "qfb/errors.hpp"
#include "qfb/fxp.hpp"

namespace qfb {

inline constexpr int kMixerWidth = 15;
inline constexpr int kAccumulatorWidth = 21;  // 15 + ceil(log2(40))
inline constexpr int kFilterWidth = 15;
inline constexpr int kPreprocessWidth = 16;
inline constexpr int kProcessingLatencyCycles = 3;
inline constexpr int kDefaultTriggerSync = 6;
inline constexpr int kTriggerStageDelay = 2;
inline constexpr int kMaxDelay = 255;
inline constexpr int kMaxWindow = 40;

/// 4-entry feedback lookup table indexed by the sign bits (x, y).
struct Lut {
  std::array<std::uint8_t, 4> bits{};

  std::uint8_t operator()(int x, int y) const { return bits[static_cast<std::size_t>(x * 2 + y)]; }

  /// Bit string in (x,y) order 00, 01, 10, 11, e.g. "1100" = 1 iff x = 0.
  static Lut from_string(const std::string& s) {
    if (s.size() != 4) throw ConfigError("LUT must have exactly 4 entries: '" + s + "'");
    Lut lut;
    for (std::size_t k = 0; k < 4; ++k) {
      if (s[k] != '0' && s[k] != '1') throw ConfigError("LUT entries must be 0 or 1: '" + s + "'");
      lut.bits[k] = static_cast<std::uint8_t>(s[k] - '0');
    }
    return lut;
  }

  /// Bit k of `index` is the entry for (x,y) = (k/2, k%2).
  static Lut from_index(unsigned index) {
    Lut lut;
    for (unsigned k = 0; k < 4; ++k) lut.bits[k] = static_cast<std::uint8_t>((index >> k) & 1U);
    return lut;
  }

  static Lut i_non_negative() { return from_string("1100"); }

  std::string str() const {
    std::string s;
    for (auto b : bits) s += static_cast<char>('0' + b);
    return s;
  }

  friend bool operator==(const Lut&, const Lut&) = default;
};

struct PipelineConfig {
  int window = 4;   // l
  int delay = 10;   // d, clock cycles; d * 10 ns = tau_RO
  FxpSample c_i = FxpSample(0, kFilterWidth, kAdcLsbVolts);
  FxpSample c_q = FxpSample(0, kFilterWidth, kAdcLsbVolts);
  int shift_i = 0;  // m_I = 2^shift_i
  int shift_q = 0;
  Lut lut1 = Lut::i_non_negative();
  Lut lut2{};
  int trigger_sync = kDefaultTriggerSync;

  void validate() const {
    if (window < 2 || window > kMaxWindow || window % 2 != 0) {
      throw ConfigError("window l must be even and within [2, 40], got " + std::to_string(window));
    }
    if (!std::has_single_bit(static_cast<unsigned>(window))) {
      throw ConfigError("cycle-accurate moving average needs a power-of-two window, got " + std::to_string(window));
    }
    if (delay < 0 || delay > kMaxDelay) throw ConfigError("delay d must lie in [0, 255]");
    if (shift_i < -kMaxShift || shift_i > kMaxShift || shift_q < -kMaxShift || shift_q > kMaxShift) {
      throw ConfigError("shift exponents must lie in [-7, 7]");
    }
    if (trigger_sync < 0 || trigger_sync > 64) throw ConfigError("trigger sync stages out of range");
    if (c_i.lsb_volts() != kAdcLsbVolts || c_q.lsb_volts() != kAdcLsbVolts) {
      throw ConfigError("offsets must use the ADC scale");
    }
  }

  /// Edge at which fb_time rises for a trigger rising at edge 0.
  int trigger_to_fb_cycles() const { return trigger_sync + kTriggerStageDelay + delay + 1; }
};

struct TickOutput {
  std::uint64_t cycle = 0;
  std::int64_t adc_raw = 0;
  std::uint8_t tr = 0;
  std::int64_t re_sm = 0;
  std::int64_t im_sm = 0;
  std::int64_t i = 0;
  std::int64_t q = 0;
  std::int64_t i_t = 0;
  std::int64_t q_t = 0;
  std::uint8_t fb_time = 0;
  std::uint8_t fb = 0;
  std::uint8_t fb2 = 0;

  friend bool operator==(const TickOutput&, const TickOutput&) = default;
};

// ---------------------------------------------------------------------------
// Combinational blocks

struct MixerOutput {
  FxpSample re;
  FxpSample im;
};

/// fs/4 mixer: cos = (1, 0, -1, 0), -sin = (0, -1, 0, 1), by selection and
/// negation only.
inline MixerOutput mixer_fs4(const FxpSample& sample, int phase) {
  const FxpSample zero(0, kMixerWidth, sample.lsb_volts());
  const FxpSample pos = sample.resized(kMixerWidth);
  const FxpSample neg = negate_sat(sample, kMixerWidth);
  switch (phase & 3) {
    case 0: return {pos, zero};
    case 1: return {zero, neg};
    case 2: return {neg, zero};
    default: return {zero, pos};
  }
}

/// Offset subtraction followed by a power-of-two scale.
inline FxpSample preprocess(const FxpSample& v, const FxpSample& c, int s, OverflowLatch* latch = nullptr) {
  const FxpSample diff = sub_sat(v, c, kPreprocessWidth, latch);
  return shift_scale(diff, s, kPreprocessWidth, latch);
}

/// x, y are sign bits: 0 for values >= 0, 1 for negative.
inline std::uint8_t discriminate(int x, int y, const Lut& lut) { return lut(x, y); }

// ---------------------------------------------------------------------------
// Moving average

/// Delay line + subtractor + accumulator + final adder. The accumulator holds
/// the sum of the l samples before the current one; the extra adder folds the
/// current difference in so the output includes the newest sample.
class MovingAverage {
 public:
  explicit MovingAverage(int window) : window_(window), delay_(static_cast<std::size_t>(window), 0) {
    if (window < 2 || !std::has_single_bit(static_cast<unsigned>(window))) {
      throw ConfigError("moving average window must be a power of two >= 2");
    }
    log2_window_ = std::countr_zero(static_cast<unsigned>(window));
  }

  FxpSample step(const FxpSample& a, OverflowLatch* latch = nullptr) {
    const std::int64_t b = delay_[head_];
    delay_[head_] = a.raw();
    head_ = (head_ + 1) % delay_.size();
    const std::int64_t diff = a.raw() - b;
    const std::int64_t sum = saturate(accumulator_ + diff, kAccumulatorWidth, latch);
    accumulator_ = sum;
    last_sum_ = sum;
    return FxpSample(saturate(sum >> log2_window_, kFilterWidth, latch), kFilterWidth, a.lsb_volts());
  }

  /// Window sum produced by the most recent step, before normalization.
  std::int64_t last_sum() const { return last_sum_; }
  int window() const { return window_; }

 private:
  int window_;
  int log2_window_ = 0;
  std::vector<std::int64_t> delay_;
  std::size_t head_ = 0;
  std::int64_t accumulator_ = 0;
  std::int64_t last_sum_ = 0;
};

// ---------------------------------------------------------------------------
// Pipeline

struct OverflowFlags {
  OverflowLatch filter_i;
  OverflowLatch filter_q;
  OverflowLatch pre_i;
  OverflowLatch pre_q;

  bool any() const { return filter_i.tripped || filter_q.tripped || pre_i.tripped || pre_q.tripped; }
};

/// All registers of the processor. Copyable: a copy is a state snapshot.
class Pipeline {
 public:
  explicit Pipeline(PipelineConfig config)
      : config_((config.validate(), std::move(config))),
        ma_i_(config_.window),
        ma_q_(config_.window),
        sync_(static_cast<std::size_t>(config_.trigger_sync), 0),
        edge_ring_(static_cast<std::size_t>(config_.delay) + 1, 0) {}

  const PipelineConfig& config() const { return config_; }
  const OverflowFlags& overflow() const { return overflow_; }
  std::uint64_t cycle() const { return cycle_; }

  TickOutput tick(const FxpSample& adc_sample, bool tr) {
    if (adc_sample.width() != kAdcWidth || adc_sample.lsb_volts() != kAdcLsbVolts) {
      throw InputError("pipeline input must be a 14-bit ADC sample");
    }

    // Output register stage, fed by the moving-average register of the
    // previous edge through the combinational preprocess + LUT path.
    const FxpSample i_t = preprocess(ma_i_reg_, config_.c_i, config_.shift_i, &overflow_.pre_i);
    const FxpSample q_t = preprocess(ma_q_reg_, config_.c_q, config_.shift_q, &overflow_.pre_q);
    const int x = i_t.sign_bit();
    const int y = q_t.sign_bit();
    const std::uint8_t fb_time = edge_ring_[edge_head_];  // e_{n-1-d}
    out_.i_t = i_t.raw();
    out_.q_t = q_t.raw();
    out_.fb_time = fb_time;
    out_.fb = static_cast<std::uint8_t>(discriminate(x, y, config_.lut1) & fb_time);
    out_.fb2 = static_cast<std::uint8_t>(discriminate(x, y, config_.lut2) & fb_time);

    // Moving average register.
    ma_i_reg_ = ma_i_.step(mix_re_reg_, &overflow_.filter_i);
    ma_q_reg_ = ma_q_.step(mix_im_reg_, &overflow_.filter_q);

    // Mixer register, selecting on the phase the ADC sample was latched with.
    const MixerOutput mixed = mixer_fs4(adc_reg_, adc_phase_);
    mix_re_reg_ = mixed.re;
    mix_im_reg_ = mixed.im;

    // ADC register and phase counter.
    adc_reg_ = adc_sample;
    adc_phase_ = phase_counter_;
    phase_counter_ = (phase_counter_ + 1) & 3;

    // Trigger chain: input reg -> z^-sync -> z^-1 z^-1 -> edge -> z^-d.
    const std::uint8_t stage_in = stage2_;
    stage2_ = stage1_;
    stage1_ = sync_.empty() ? tr_in_ : sync_.back();
    for (std::size_t k = sync_.size(); k-- > 1;) sync_[k] = sync_[k - 1];
    if (!sync_.empty()) sync_[0] = tr_in_;
    tr_in_ = tr ? 1 : 0;
    const std::uint8_t edge = static_cast<std::uint8_t>(stage2_ && !stage_in);
    edge_ring_[edge_head_] = edge;
    edge_head_ = (edge_head_ + 1) % edge_ring_.size();

    out_.cycle = cycle_++;
    out_.adc_raw = adc_reg_.raw();
    out_.tr = tr_in_;
    out_.re_sm = mix_re_reg_.raw();
    out_.im_sm = mix_im_reg_.raw();
    out_.i = ma_i_reg_.raw();
    out_.q = ma_q_reg_.raw();
    return out_;
  }

  const TickOutput& last() const { return out_; }

 private:
  PipelineConfig config_;
  MovingAverage ma_i_;
  MovingAverage ma_q_;
  FxpSample adc_reg_ = FxpSample::adc(0);
  int adc_phase_ = 0;
  int phase_counter_ = 0;
  FxpSample mix_re_reg_ = FxpSample(0, kMixerWidth, kAdcLsbVolts);
  FxpSample mix_im_reg_ = FxpSample(0, kMixerWidth, kAdcLsbVolts);
  FxpSample ma_i_reg_ = FxpSample(0, kFilterWidth, kAdcLsbVolts);
  FxpSample ma_q_reg_ = FxpSample(0, kFilterWidth, kAdcLsbVolts);
  std::uint8_t tr_in_ = 0;
  std::vector<std::uint8_t> sync_;
  std::uint8_t stage1_ = 0;
  std::uint8_t stage2_ = 0;
  // Edge history e_{n-d} .. e_n; the slot at edge_head_ is the oldest.
  std::vector<std::uint8_t> edge_ring_;
  std::size_t edge_head_ = 0;
  OverflowFlags overflow_;
  TickOutput out_;
  std::uint64_t cycle_ = 0;
};

/// Folds `tick` over a stream, continuing from the pipeline's current state.
inline std::vector<TickOutput> run_stream(Pipeline& pipeline, std::span<const FxpSample> samples,
                                          std::span<const std::uint8_t> triggers) {
  if (samples.size() != triggers.size()) throw InputError("sample and trigger streams differ in length");
  std::vector<TickOutput> trace;
  trace.reserve(samples.size());
  for (std::size_t n = 0; n < samples.size(); ++n) trace.push_back(pipeline.tick(samples[n], triggers[n] != 0));
  return trace;
}

/// Runs from reset.
inline std::vector<TickOutput> run_stream(const PipelineConfig& config, std::span<const FxpSample> samples,
                                          std::span<const std::uint8_t> triggers) {
  Pipeline pipeline(config);
  return run_stream(pipeline, samples, triggers);
}

// ---------------------------------------------------------------------------
// Floating-point reference

/// Plain demodulation: (1/l) * sum over the last l samples of x_k e^{-i pi k/2},
/// with zero samples before index 0. Any even l up to 40 is accepted.
inline std::vector<std::complex<double>> reference_demodulate(std::span<const std::int64_t> raw, int window) {
  if (window < 2 || window > kMaxWindow || window % 2 != 0) throw ConfigError("reference window must be even in [2, 40]");
  static constexpr std::array<double, 4> kCos{1.0, 0.0, -1.0, 0.0};
  static constexpr std::array<double, 4> kNegSin{0.0, -1.0, 0.0, 1.0};
  std::vector<std::complex<double>> out(raw.size());
  for (std::size_t n = 0; n < raw.size(); ++n) {
    std::complex<double> acc{0.0, 0.0};
    for (int k = 0; k < window; ++k) {
      if (n < static_cast<std::size_t>(k)) break;
      const std::size_t m = n - static_cast<std::size_t>(k);
      const double v = static_cast<double>(raw[m]);
      acc += std::complex<double>(v * kCos[m & 3], v * kNegSin[m & 3]);
    }
    out[n] = acc / static_cast<double>(window);
  }
  return out;
}

/// Cycles from a sample entering the ADC register to the fb outputs, found by
/// perturbing single samples and watching the fb bit at the fb_time edge.
inline int measure_processing_latency(PipelineConfig config) {
  config.c_i = FxpSample(0, kFilterWidth, kAdcLsbVolts);
  config.c_q = FxpSample(0, kFilterWidth, kAdcLsbVolts);
  config.shift_i = 0;
  config.shift_q = 0;
  config.lut1 = Lut::from_string("1000");  // 1 iff I >= 0 and Q >= 0
  const int trigger_at = 4;
  const int fb_edge = trigger_at + config.trigger_to_fb_cycles();
  const std::size_t length = static_cast<std::size_t>(fb_edge) + 4;
  std::vector<std::uint8_t> tr(length, 0);
  for (std::size_t n = static_cast<std::size_t>(trigger_at); n < length; ++n) tr[n] = 1;

  int latest_influence = -1;
  for (int k = 0; k < fb_edge; ++k) {
    std::vector<FxpSample> samples(length, FxpSample::adc(0));
    // Pick the sign that drives whichever quadrature this phase feeds negative.
    const int phase = k & 3;
    const std::int64_t v = (phase == 0 || phase == 3) ? -4096 : 4096;
    samples[static_cast<std::size_t>(k)] = FxpSample::adc(v);
    const auto trace = run_stream(config, samples, tr);
    if (trace[static_cast<std::size_t>(fb_edge)].fb_time && !trace[static_cast<std::size_t>(fb_edge)].fb) {
      latest_influence = k;
    }
  }
  if (latest_influence < 0) throw std::logic_error("no sample influenced the feedback decision");
  return fb_edge - latest_influence;
}

inline void write_trace_csv(std::ostream& os, std::span<const TickOutput> trace) {
  os << "cycle,adc_raw,tr,re_sm,im_sm,i,q,i_t,q_t,fb_time,fb,fb2\n";
  for (const TickOutput& t : trace) {
    os << t.cycle << ',' << t.adc_raw << ',' << int{t.tr} << ',' << t.re_sm << ',' << t.im_sm << ',' << t.i << ','
       << t.q << ',' << t.i_t << ',' << t.q_t << ',' << int{t.fb_time} << ',' << int{t.fb} << ',' << int{t.fb2}
       << '\n';
  }
}

}  // namespace qfb
