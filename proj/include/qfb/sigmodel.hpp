#pragma once

// Analog signal model of a dispersively read-out transmon: stochastic
// two-level trajectories, first-order cavity response, and the digitized
// IF waveform as seen at the FPGA input pins.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <numbers>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "qfb/errors.hpp"
#include "qfb/fxp.hpp"

namespace qfb {

inline constexpr double kPlanck = 6.62607015e-34;      // J s
inline constexpr double kBoltzmann = 1.380649e-23;     // J / K
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

/// Two-level Boltzmann occupation of the excited state.
inline double thermal_population(double t_env_kelvin, double f_q_hz) {
  if (!(t_env_kelvin > 0.0)) throw InputError("environment temperature must be positive");
  const double x = std::exp(-kPlanck * f_q_hz / (kBoltzmann * t_env_kelvin));
  return x / (1.0 + x);
}

/// Inverse of thermal_population for 0 < p < 0.5.
inline double temperature_from_population(double p, double f_q_hz) {
  if (!(p > 0.0 && p < 0.5)) throw InputError("population must lie in (0, 0.5)");
  const double x = p / (1.0 - p);
  return kPlanck * f_q_hz / (kBoltzmann * std::log(1.0 / x));
}

enum class QubitState : std::uint8_t { kGround = 0, kExcited = 1 };

inline QubitState flipped(QubitState s) {
  return s == QubitState::kGround ? QubitState::kExcited : QubitState::kGround;
}

struct DeviceParams {
  double f_q = 6.148e9;                    // Hz
  double f_r = 7.133e9;                    // Hz
  double kappa = kTwoPi * 6.3e6;           // rad/s, resonator linewidth
  double chi = kTwoPi * 1.1e6;             // rad/s, dispersive shift
  double f_if = 25e6;                      // Hz
  double f_s = 100e6;                      // samples/s
  double t1 = 1.4e-6;                      // s; +inf disables relaxation
  double p_therm = 0.07;
  double amp_ss = 0.6;                     // V, full steady-state amplitude at the ADC
  double noise_sigma = 0.066;              // V, additive Gaussian per sample
  int adc_latency_cycles = 6;              // data-line delay compensated by the trigger sync

  double clock_period() const { return 1.0 / f_s; }
  double gamma_down() const { return std::isinf(t1) ? 0.0 : 1.0 / t1; }
  double gamma_up() const { return gamma_down() * p_therm / (1.0 - p_therm); }

  void validate() const {
    if (!(p_therm >= 0.0 && p_therm < 0.5)) throw ConfigError("p_therm must lie in [0, 0.5)");
    if (!(t1 > 0.0)) throw ConfigError("T1 must be positive");
    if (!(kappa > 0.0)) throw ConfigError("kappa must be positive");
    if (!(f_s > 0.0) || !(f_if >= 0.0)) throw ConfigError("sampling and IF frequencies must be positive");
    if (!(amp_ss >= 0.0) || !(noise_sigma >= 0.0)) throw ConfigError("amplitude and noise must be non-negative");
    if (adc_latency_cycles < 0 || adc_latency_cycles > 64) throw ConfigError("adc latency out of range");
  }
};

enum class Gate : std::uint8_t { kPiHalf, kPi, kConditionalPi };

struct ReadoutPulse {
  double start = 0.0;     // s
  double duration = 0.0;  // s
  double end() const { return start + duration; }
};

struct GateEvent {
  double time = 0.0;  // s, instantaneous at the pulse center
  Gate gate = Gate::kPi;
};

/// One repetition. Only [t_begin, t_end) is simulated; the qubit is assumed
/// to be in equilibrium (or the stated initial state) at t_begin.
struct PulseSchedule {
  std::vector<ReadoutPulse> readouts;
  std::vector<GateEvent> gates;
  double repetition_period = 10e-6;
  double t_begin = 0.0;
  double t_end = 0.0;

  void validate() const {
    if (!(t_end > t_begin)) throw ConfigError("schedule window is empty");
    if (t_end - t_begin > repetition_period) throw ConfigError("schedule window exceeds the repetition period");
    for (std::size_t k = 0; k < readouts.size(); ++k) {
      if (!(readouts[k].duration > 0.0)) throw ConfigError("readout pulse with non-positive duration");
      if (readouts[k].start < t_begin || readouts[k].end() > t_end) {
        throw ConfigError("readout pulse outside the schedule window");
      }
      if (k > 0 && readouts[k].start < readouts[k - 1].end()) {
        throw ConfigError("readout pulses overlap or are out of order");
      }
    }
    for (std::size_t k = 0; k < gates.size(); ++k) {
      if (gates[k].time < t_begin || gates[k].time >= t_end) throw ConfigError("gate outside the schedule window");
      if (k > 0 && gates[k].time < gates[k - 1].time) throw ConfigError("gate events out of order");
    }
  }
};

struct TrajectorySegment {
  double t_start = 0.0;
  QubitState state = QubitState::kGround;
};

/// Piecewise-constant qubit state. Segments alternate and are contiguous up
/// to t_end.
struct QubitTrajectory {
  std::vector<TrajectorySegment> segments;
  double t_end = 0.0;
  std::uint64_t rng_seed = 0;

  QubitState state_at(double t) const {
    auto it = std::upper_bound(segments.begin(), segments.end(), t,
                               [](double v, const TrajectorySegment& s) { return v < s.t_start; });
    if (it == segments.begin()) return segments.front().state;
    return std::prev(it)->state;
  }

  /// Start time of the first segment beginning strictly after t, or +inf.
  double next_change_after(double t) const {
    auto it = std::upper_bound(segments.begin(), segments.end(), t,
                               [](double v, const TrajectorySegment& s) { return v < s.t_start; });
    return it == segments.end() ? std::numeric_limits<double>::infinity() : it->t_start;
  }

  /// Total time spent in the excited state over [segments.front().t_start, t_end).
  double excited_duration() const {
    double total = 0.0;
    for (std::size_t k = 0; k < segments.size(); ++k) {
      const double stop = k + 1 < segments.size() ? segments[k + 1].t_start : t_end;
      if (segments[k].state == QubitState::kExcited) total += stop - segments[k].t_start;
    }
    return total;
  }
};

enum class InitialState : std::uint8_t { kGround, kExcited, kThermal };

/// Samples a trajectory incrementally using exact exponential waiting
/// times. Gates can be applied between advances, so a feedback decision made
/// from earlier data can steer the rest of the repetition.
class TrajectorySampler {
 public:
  TrajectorySampler(const DeviceParams& params, InitialState initial, double t_start, std::uint64_t seed)
      : rng_(seed), gamma_down_(params.gamma_down()), gamma_up_(params.gamma_up()), now_(t_start) {
    traj_.rng_seed = seed;
    QubitState s = QubitState::kGround;
    switch (initial) {
      case InitialState::kGround: s = QubitState::kGround; break;
      case InitialState::kExcited: s = QubitState::kExcited; break;
      case InitialState::kThermal:
        s = uniform_(rng_) < params.p_therm ? QubitState::kExcited : QubitState::kGround;
        break;
    }
    traj_.segments.push_back({t_start, s});
    traj_.t_end = t_start;
  }

  QubitState state() const { return traj_.segments.back().state; }
  double time() const { return now_; }

  void advance_to(double t) {
    while (now_ < t) {
      const double rate = state() == QubitState::kExcited ? gamma_down_ : gamma_up_;
      if (rate <= 0.0) {
        now_ = t;
        break;
      }
      const double wait = std::exponential_distribution<double>(rate)(rng_);
      if (now_ + wait >= t) {
        now_ = t;  // memoryless: the residual wait is redrawn on the next advance
        break;
      }
      now_ += wait;
      set_state(flipped(state()));
    }
    traj_.t_end = std::max(traj_.t_end, now_);
  }

  /// Advances to `t` and applies the gate there. kConditionalPi acts only
  /// when `feedback_flag` is set.
  void apply_gate(double t, Gate gate, bool feedback_flag = false) {
    advance_to(t);
    switch (gate) {
      case Gate::kPi: set_state(flipped(state())); break;
      case Gate::kPiHalf:
        set_state(uniform_(rng_) < 0.5 ? QubitState::kExcited : QubitState::kGround);
        break;
      case Gate::kConditionalPi:
        if (feedback_flag) set_state(flipped(state()));
        break;
    }
  }

  const QubitTrajectory& trajectory() const { return traj_; }

 private:
  void set_state(QubitState s) {
    if (s == state()) return;
    if (traj_.segments.back().t_start == now_) {
      traj_.segments.pop_back();  // zero-length segment
      if (!traj_.segments.empty() && traj_.segments.back().state == s) return;
    }
    traj_.segments.push_back({now_, s});
  }

  std::mt19937_64 rng_;
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
  double gamma_down_;
  double gamma_up_;
  double now_;
  QubitTrajectory traj_;
};

/// Whole-window trajectory. Every kConditionalPi uses `feedback_flag`.
inline QubitTrajectory sample_trajectory(const DeviceParams& params, const PulseSchedule& schedule,
                                         InitialState initial, std::uint64_t seed, bool feedback_flag = false) {
  schedule.validate();
  TrajectorySampler sampler(params, initial, schedule.t_begin, seed);
  for (const GateEvent& g : schedule.gates) sampler.apply_gate(g.time, g.gate, feedback_flag);
  sampler.advance_to(schedule.t_end);
  return sampler.trajectory();
}

// ---------------------------------------------------------------------------
// Cavity response

inline double state_sign(QubitState s) { return s == QubitState::kGround ? 1.0 : -1.0; }

inline std::complex<double> relaxation_rate(const DeviceParams& p, QubitState s) {
  return {p.kappa / 2.0, state_sign(s) * p.chi};
}

/// Driven steady state for a probe at the center frequency.
inline std::complex<double> steady_state(const DeviceParams& p, QubitState s) {
  return (p.kappa / 2.0) / relaxation_rate(p, s);
}

/// Demodulation phase that puts alpha_e - alpha_g on the +I axis.
inline double demod_phase(const DeviceParams& p) {
  return -std::arg(steady_state(p, QubitState::kExcited) - steady_state(p, QubitState::kGround));
}

/// Evolves the normalized intra-cavity envelope along a trajectory, one
/// non-decreasing time at a time. Jumps and pulse edges are handled exactly.
class CavityField {
 public:
  CavityField(const DeviceParams& params, std::vector<ReadoutPulse> pulses, double t_start)
      : params_(params), pulses_(std::move(pulses)), now_(t_start) {}

  std::complex<double> alpha() const { return alpha_; }
  double time() const { return now_; }

  std::complex<double> advance(const QubitTrajectory& traj, double t) {
    while (now_ < t) {
      const double stop = std::min({t, traj.next_change_after(now_), next_pulse_edge(now_)});
      const QubitState s = traj.state_at(now_);
      const std::complex<double> target = driven_at(now_) ? steady_state(params_, s) : 0.0;
      alpha_ = target + (alpha_ - target) * std::exp(-relaxation_rate(params_, s) * (stop - now_));
      now_ = stop;
    }
    return alpha_;
  }

 private:
  bool driven_at(double t) const {
    return std::any_of(pulses_.begin(), pulses_.end(),
                       [t](const ReadoutPulse& p) { return t >= p.start && t < p.end(); });
  }

  double next_pulse_edge(double t) const {
    double next = std::numeric_limits<double>::infinity();
    for (const ReadoutPulse& p : pulses_) {
      if (p.start > t) next = std::min(next, p.start);
      if (p.end() > t) next = std::min(next, p.end());
    }
    return next;
  }

  DeviceParams params_;
  std::vector<ReadoutPulse> pulses_;
  double now_;
  std::complex<double> alpha_{0.0, 0.0};
};

/// Envelope at time t for a single readout pulse, starting from an empty
/// cavity at the beginning of the trajectory.
inline std::complex<double> cavity_envelope(const DeviceParams& params, const QubitTrajectory& traj,
                                            const ReadoutPulse& pulse, double t) {
  CavityField field(params, {pulse}, traj.segments.front().t_start);
  return field.advance(traj, t);
}

// ---------------------------------------------------------------------------
// ADC stream

/// Samples and trigger bits indexed by FPGA clock cycle. The data line lags
/// the trigger line by `adc_latency_cycles`.
struct AdcStream {
  std::vector<FxpSample> samples;
  std::vector<std::uint8_t> trigger;
  std::size_t saturations = 0;
  double t_begin = 0.0;
  double clock_period = 1e-8;
};

class AdcSynthesizer {
 public:
  AdcSynthesizer(const DeviceParams& params, const PulseSchedule& schedule, std::uint64_t noise_seed)
      : params_(params),
        schedule_(schedule),
        cavity_(params, schedule.readouts, schedule.t_begin),
        rng_(noise_seed),
        phase0_(demod_phase(params)) {
    params.validate();
    schedule.validate();
    stream_.t_begin = schedule.t_begin;
    stream_.clock_period = params.clock_period();
    const double span = (schedule.t_end - schedule.t_begin) / params.clock_period();
    total_cycles_ = static_cast<std::size_t>(std::ceil(span - 1e-9)) + static_cast<std::size_t>(params.adc_latency_cycles);
  }

  std::size_t total_cycles() const { return total_cycles_; }
  std::size_t produced() const { return stream_.samples.size(); }

  double clock_time(std::size_t n) const { return schedule_.t_begin + static_cast<double>(n) * params_.clock_period(); }
  double data_time(std::size_t n) const {
    return clock_time(n) - static_cast<double>(params_.adc_latency_cycles) * params_.clock_period();
  }

  /// Noise-free analog voltage for cycle n given the envelope at its data time.
  double analog_sample(std::complex<double> alpha, std::size_t n) const {
    const double cycles = std::fmod(params_.f_if * static_cast<double>(n) / params_.f_s, 1.0);
    const std::complex<double> carrier = std::polar(1.0, kTwoPi * cycles + phase0_);
    return params_.amp_ss * (alpha * carrier).real();
  }

  /// Produces cycles up to (excluding) n_end. The trajectory must already
  /// cover the data time of cycle n_end - 1.
  void synthesize_until(const QubitTrajectory& traj, std::size_t n_end) {
    n_end = std::min(n_end, total_cycles_);
    OverflowLatch latch;
    for (std::size_t n = stream_.samples.size(); n < n_end; ++n) {
      const double td = data_time(n);
      std::complex<double> alpha{0.0, 0.0};
      if (td >= schedule_.t_begin) alpha = cavity_.advance(traj, td);
      double v = analog_sample(alpha, n);
      if (params_.noise_sigma > 0.0) v += params_.noise_sigma * normal_(rng_);
      latch.clear();
      stream_.samples.push_back(quantize(v, kAdcWidth, kAdcLsbVolts, &latch));
      if (latch.tripped) ++stream_.saturations;
      stream_.trigger.push_back(trigger_at(n) ? 1 : 0);
    }
  }

  const AdcStream& stream() const { return stream_; }
  AdcStream take() { return std::move(stream_); }

 private:
  bool trigger_at(std::size_t n) const {
    const double lo = clock_time(n);
    const double hi = clock_time(n + 1);
    const double eps = 1e-6 * params_.clock_period();
    return std::any_of(schedule_.readouts.begin(), schedule_.readouts.end(),
                       [&](const ReadoutPulse& p) { return p.start >= lo - eps && p.start < hi - eps; });
  }

  DeviceParams params_;
  PulseSchedule schedule_;
  CavityField cavity_;
  std::mt19937_64 rng_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  double phase0_;
  std::size_t total_cycles_ = 0;
  AdcStream stream_;
};

inline AdcStream synthesize_adc_stream(const DeviceParams& params, const PulseSchedule& schedule,
                                       const QubitTrajectory& traj, std::uint64_t noise_seed) {
  AdcSynthesizer synth(params, schedule, noise_seed);
  synth.synthesize_until(traj, synth.total_cycles());
  return synth.take();
}

/// Debug dump: one row per clock cycle.
inline void write_stream_csv(std::ostream& os, const AdcStream& s) {
  os << "t_ns,raw,tr\n";
  for (std::size_t n = 0; n < s.samples.size(); ++n) {
    const double t_ns = (s.t_begin + static_cast<double>(n) * s.clock_period) * 1e9;
    os << std::llround(t_ns) << ',' << s.samples[n].raw() << ',' << int{s.trigger[n]} << '\n';
  }
}

}  // namespace qfb
