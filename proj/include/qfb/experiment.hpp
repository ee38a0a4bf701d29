#pragma once

// Qubit-initialization experiment: pulse sequence, Monte Carlo through the
// signal model, pipeline and correlation histogram; a rate-equation oracle;
// readout-fidelity analysis; noise and threshold calibration.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "qfb/errors.hpp"
#include "qfb/fxp.hpp"
#include "qfb/histo.hpp"
#include "qfb/latency.hpp"
#include "qfb/pipeline.hpp"
#include "qfb/rng.hpp"
#include "qfb/sigmodel.hpp"

namespace qfb {

enum class Scenario : std::uint8_t {
  kPiHalfInit,   // pi/2 before M1
  kThermalInit,  // no preparation pulse
  kNoPulse,      // readout calibration, qubit left in equilibrium
  kPiPulse,      // readout calibration, pi before M1
};

enum class FeedbackMode : std::uint8_t { kOff, kOn, kAlternate };

/// Where the conditional pi lands relative to M1.
enum class CpiReference : std::uint8_t {
  kAfterIntegration,  // M1 start + tau_RO + tau_ELtot + tau_AP/2
  kAfterPulseStart,   // M1 start + tau_ELtot
};

inline std::string to_string(Scenario s) {
  switch (s) {
    case Scenario::kPiHalfInit: return "pi_half";
    case Scenario::kThermalInit: return "thermal";
    case Scenario::kNoPulse: return "no_pulse";
    case Scenario::kPiPulse: return "pi_pulse";
  }
  return "?";
}

inline std::string to_string(FeedbackMode m) {
  switch (m) {
    case FeedbackMode::kOff: return "off";
    case FeedbackMode::kOn: return "on";
    case FeedbackMode::kAlternate: return "alternate";
  }
  return "?";
}

inline std::string to_string(CpiReference r) {
  return r == CpiReference::kAfterIntegration ? "after_integration" : "after_pulse_start";
}

struct ExperimentTiming {
  double t_begin = -40e-9;
  double t_end = 560e-9;
  double prep_gate = -14e-9;  // center of the 28 ns preparation pulse
  double m1_start = 0.0;
  double m2_start = 360e-9;
  double readout_duration = 160e-9;
  double gate_duration = 28e-9;
  CpiReference cpi_reference = CpiReference::kAfterIntegration;
};

struct ExperimentConfig {
  DeviceParams device;
  PipelineConfig pipeline = default_pipeline();
  LatencyBudget latency;
  ExperimentTiming timing;
  Scenario scenario = Scenario::kPiHalfInit;
  FeedbackMode feedback = FeedbackMode::kOff;
  std::uint64_t repetitions = std::uint64_t{1} << 17;
  std::uint64_t master_seed = 20180910;
  double threshold_volts = 0.016;  // on the scaled, offset-free I axis
  bool auto_offset_q = true;
  int jobs = 1;

  static PipelineConfig default_pipeline() {
    PipelineConfig p;
    p.window = 4;
    p.delay = 10;
    p.shift_i = 3;
    p.shift_q = 3;
    return p;
  }

  double clock_period() const { return device.clock_period(); }

  /// Integration window end relative to M1 start.
  double readout_time() const { return pipeline.delay * clock_period(); }

  /// Center of the l-sample window, relative to the pulse start.
  double window_center() const { return readout_time() - 0.5 * (pipeline.window - 1) * clock_period(); }

  double cpi_time() const {
    const double el = total_electronic_delay(latency).value * 1e-9;
    if (timing.cpi_reference == CpiReference::kAfterPulseStart) return timing.m1_start + el;
    return timing.m1_start + readout_time() + el + 0.5 * timing.gate_duration;
  }

  bool uses_feedback() const { return feedback != FeedbackMode::kOff; }
  int segment_count() const { return feedback == FeedbackMode::kAlternate ? 2 : 1; }

  bool feedback_for(std::uint64_t repetition) const {
    switch (feedback) {
      case FeedbackMode::kOff: return false;
      case FeedbackMode::kOn: return true;
      case FeedbackMode::kAlternate: return repetition % 2 == 1;
    }
    return false;
  }

  void validate() const {
    device.validate();
    pipeline.validate();
    latency.validate();
    if (repetitions < 1) throw ConfigError("repetitions must be >= 1");
    if (jobs < 1) throw ConfigError("jobs must be >= 1");
    if (!std::isfinite(threshold_volts)) throw ConfigError("threshold must be finite");
    const ExperimentTiming& t = timing;
    if (!(t.readout_duration > 0.0)) throw ConfigError("readout duration must be positive");
    if (readout_time() > t.readout_duration + 1e-15) {
      throw ConfigError("integration window end d*T lies beyond the readout pulse");
    }
    if (readout_time() < (pipeline.window - 1) * clock_period()) {
      throw ConfigError("integration window starts before the readout pulse");
    }
    if (!(t.m1_start - t.t_begin >= 0.0) || t.prep_gate < t.t_begin || t.prep_gate >= t.m1_start) {
      throw ConfigError("preparation gate must lie between the window start and M1");
    }
    if (t.m1_start + t.readout_duration > t.m2_start) throw ConfigError("readout pulses overlap");
    const double cpi = cpi_time();
    if (cpi <= t.m1_start + readout_time()) {
      throw SequencingError("conditional pi is scheduled before the M1 decision exists");
    }
    if (uses_feedback() && cpi + 0.5 * t.gate_duration > t.m2_start + 1e-15) {
      throw SequencingError("conditional pi overlaps M2");
    }
    if (t.m2_start + t.readout_duration > t.t_end) throw ConfigError("M2 extends past the simulated window");
    const double cycles = (t.m1_start - t.t_begin) / clock_period();
    if (std::abs(cycles - std::round(cycles)) > 1e-6) {
      throw ConfigError("M1 start must fall on a clock edge relative to the window start");
    }
  }
};

// ---------------------------------------------------------------------------
// Schedule and readout levels

inline PulseSchedule make_schedule(const ExperimentConfig& cfg, bool with_cpi) {
  PulseSchedule s;
  s.t_begin = cfg.timing.t_begin;
  s.t_end = cfg.timing.t_end;
  s.readouts = {{cfg.timing.m1_start, cfg.timing.readout_duration}, {cfg.timing.m2_start, cfg.timing.readout_duration}};
  switch (cfg.scenario) {
    case Scenario::kPiHalfInit: s.gates.push_back({cfg.timing.prep_gate, Gate::kPiHalf}); break;
    case Scenario::kPiPulse: s.gates.push_back({cfg.timing.prep_gate, Gate::kPi}); break;
    case Scenario::kThermalInit:
    case Scenario::kNoPulse: break;
  }
  if (with_cpi) s.gates.push_back({cfg.cpi_time(), Gate::kConditionalPi});
  return s;
}

/// Noise-free, decay-free M1 readout levels of the filtered I/Q (ADC LSB
/// units, before offset and scaling).
struct ReadoutLevels {
  double i_g = 0, q_g = 0, i_e = 0, q_e = 0;
  double separation() const { return i_e - i_g; }
};

inline ReadoutLevels noiseless_levels(const ExperimentConfig& cfg) {
  DeviceParams dev = cfg.device;
  dev.noise_sigma = 0.0;
  dev.t1 = std::numeric_limits<double>::infinity();
  dev.p_therm = 0.0;
  PipelineConfig pc = cfg.pipeline;
  pc.c_i = pc.c_q = FxpSample(0, kFilterWidth, kAdcLsbVolts);
  pc.shift_i = pc.shift_q = 0;
  PulseSchedule sched;
  sched.t_begin = cfg.timing.t_begin;
  sched.t_end = cfg.timing.t_end;
  sched.readouts = {{cfg.timing.m1_start, cfg.timing.readout_duration}};

  ReadoutLevels lv;
  for (QubitState s : {QubitState::kGround, QubitState::kExcited}) {
    const InitialState init = s == QubitState::kGround ? InitialState::kGround : InitialState::kExcited;
    const QubitTrajectory traj = sample_trajectory(dev, sched, init, 0);
    const AdcStream stream = synthesize_adc_stream(dev, sched, traj, 0);
    const auto trace = run_stream(pc, stream.samples, stream.trigger);
    auto it = std::find_if(trace.begin(), trace.end(), [](const TickOutput& t) { return t.fb_time != 0; });
    if (it == trace.end()) throw ConfigError("readout decision falls outside the simulated window");
    // The decision row uses the window that ends three samples earlier.
    const std::size_t last = static_cast<std::size_t>(it - trace.begin()) - kProcessingLatencyCycles;
    std::vector<std::int64_t> raw(stream.samples.size());
    for (std::size_t n = 0; n < raw.size(); ++n) raw[n] = stream.samples[n].raw();
    const auto ref = reference_demodulate(raw, pc.window);
    (s == QubitState::kGround ? lv.i_g : lv.i_e) = ref[last].real();
    (s == QubitState::kGround ? lv.q_g : lv.q_e) = ref[last].imag();
  }
  return lv;
}

/// Pipeline configuration with offsets derived from the threshold and, if
/// requested, the Q midpoint.
inline PipelineConfig resolved_pipeline(const ExperimentConfig& cfg, const ReadoutLevels& lv) {
  PipelineConfig pc = cfg.pipeline;
  const double c_i = cfg.threshold_volts / std::ldexp(1.0, pc.shift_i);
  pc.c_i = quantize(c_i, kFilterWidth, kAdcLsbVolts);
  if (cfg.auto_offset_q) {
    pc.c_q = FxpSample(saturate(std::llround(0.5 * (lv.q_g + lv.q_e)), kFilterWidth), kFilterWidth, kAdcLsbVolts);
  }
  return pc;
}

/// Standard deviation of the filtered I noise in ADC LSB.
inline double filtered_noise_lsb(double noise_sigma, int window) {
  return noise_sigma / kAdcLsbVolts * std::sqrt(1.0 / (2.0 * window));
}

struct OverlapErrors {
  double eps_g = 0;  // g classified as E
  double eps_e = 0;  // e classified as G
  double total() const { return eps_g + eps_e; }
};

inline OverlapErrors analytic_overlap(const ReadoutLevels& lv, double c_i_lsb, double noise_sigma, int window) {
  OverlapErrors o;
  const double s = filtered_noise_lsb(noise_sigma, window);
  if (s <= 0.0) {
    o.eps_g = lv.i_g >= c_i_lsb ? 1.0 : 0.0;
    o.eps_e = lv.i_e < c_i_lsb ? 1.0 : 0.0;
    return o;
  }
  o.eps_g = 0.5 * std::erfc((c_i_lsb - lv.i_g) / (s * std::sqrt(2.0)));
  o.eps_e = 0.5 * std::erfc((lv.i_e - c_i_lsb) / (s * std::sqrt(2.0)));
  return o;
}

inline OverlapErrors analytic_overlap(const ExperimentConfig& cfg) {
  const ReadoutLevels lv = noiseless_levels(cfg);
  const PipelineConfig pc = resolved_pipeline(cfg, lv);
  return analytic_overlap(lv, static_cast<double>(pc.c_i.raw()), cfg.device.noise_sigma, pc.window);
}

// ---------------------------------------------------------------------------
// Monte Carlo

struct RepetitionOutcome {
  std::int64_t i_t1 = 0, q_t1 = 0, i_t2 = 0, q_t2 = 0;
  int i1_bin = 0, q1_bin = 0, i2_bin = 0, q2_bin = 0;
  bool fb = false;        // decision from M1
  bool feedback = false;  // whether the conditional pi was armed
  std::size_t adc_saturations = 0;
  bool pipeline_overflow = false;
};

/// Everything that is shared between repetitions of one run.
class ExperimentContext {
 public:
  explicit ExperimentContext(const ExperimentConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    levels_ = noiseless_levels(cfg_);
    pipeline_ = resolved_pipeline(cfg_, levels_);
    schedule_off_ = make_schedule(cfg_, false);
    schedule_on_ = make_schedule(cfg_, true);
    schedule_on_.validate();
  }

  const ExperimentConfig& config() const { return cfg_; }
  const PipelineConfig& pipeline() const { return pipeline_; }
  const ReadoutLevels& levels() const { return levels_; }

  RepetitionOutcome run(std::uint64_t index) const {
    const bool armed = cfg_.feedback_for(index);
    const PulseSchedule& sched = armed ? schedule_on_ : schedule_off_;
    const DeviceParams& dev = cfg_.device;
    TrajectorySampler sampler(dev, InitialState::kThermal, sched.t_begin, derive_seed(cfg_.master_seed, index, 0));
    AdcSynthesizer synth(dev, sched, derive_seed(cfg_.master_seed, index, 1));
    Pipeline pipe(pipeline_);

    RepetitionOutcome out;
    out.feedback = armed;
    int events = 0;
    auto tick_until = [&](double t_limit) {
      // Produce every cycle whose data time precedes t_limit.
      while (synth.produced() < synth.total_cycles() && synth.data_time(synth.produced()) < t_limit) {
        synth.synthesize_until(sampler.trajectory(), synth.produced() + 1);
        const std::size_t n = synth.produced() - 1;
        const TickOutput t = pipe.tick(synth.stream().samples[n], synth.stream().trigger[n] != 0);
        if (!t.fb_time) continue;
        if (events == 0) {
          out.i_t1 = t.i_t;
          out.q_t1 = t.q_t;
          out.fb = t.fb != 0;
        } else if (events == 1) {
          out.i_t2 = t.i_t;
          out.q_t2 = t.q_t;
        }
        ++events;
      }
    };

    std::size_t gate_idx = 0;
    for (; gate_idx < sched.gates.size(); ++gate_idx) {
      const GateEvent& g = sched.gates[gate_idx];
      if (g.gate == Gate::kConditionalPi) {
        sampler.advance_to(g.time);
        tick_until(g.time);
        if (events < 1) throw SequencingError("M1 decision not available before the conditional pi");
        sampler.apply_gate(g.time, g.gate, out.fb);
      } else {
        sampler.apply_gate(g.time, g.gate);
      }
    }
    sampler.advance_to(sched.t_end);
    tick_until(std::numeric_limits<double>::infinity());
    if (events != 2) throw SequencingError("expected two fb_time events per repetition, got " + std::to_string(events));

    out.i1_bin = bin7(FxpSample(out.i_t1, kPreprocessWidth, kAdcLsbVolts));
    out.q1_bin = bin7(FxpSample(out.q_t1, kPreprocessWidth, kAdcLsbVolts));
    out.i2_bin = bin7(FxpSample(out.i_t2, kPreprocessWidth, kAdcLsbVolts));
    out.q2_bin = bin7(FxpSample(out.q_t2, kPreprocessWidth, kAdcLsbVolts));
    out.adc_saturations = synth.stream().saturations;
    out.pipeline_overflow = pipe.overflow().any();
    return out;
  }

 private:
  ExperimentConfig cfg_;
  ReadoutLevels levels_;
  PipelineConfig pipeline_;
  PulseSchedule schedule_off_;
  PulseSchedule schedule_on_;
};

// ---------------------------------------------------------------------------
// Rate-equation oracle

/// Excited population after time dt starting from p0, relaxing toward p_therm.
inline double relax_population(const DeviceParams& dev, double p0, double dt) {
  const double gamma = dev.gamma_down() + dev.gamma_up();
  return dev.p_therm + (p0 - dev.p_therm) * std::exp(-gamma * dt);
}

struct OraclePrediction {
  Quadrants quadrants;
  double p_e1() const { return quadrants.p_e1(); }
  double p_e2() const { return quadrants.p_e2(); }
};

/// Two-point Markov chain: populations evaluated at the integration-window
/// centers, symmetric misclassification eps, conditional pi on a measured E.
inline OraclePrediction oracle_probabilities(const ExperimentConfig& cfg, bool feedback, double eps) {
  const DeviceParams& dev = cfg.device;
  const ExperimentTiming& t = cfg.timing;
  double p_prep = dev.p_therm;
  switch (cfg.scenario) {
    case Scenario::kPiHalfInit: p_prep = 0.5; break;
    case Scenario::kPiPulse: p_prep = 1.0 - dev.p_therm; break;
    case Scenario::kThermalInit:
    case Scenario::kNoPulse: break;
  }
  const bool has_prep = cfg.scenario == Scenario::kPiHalfInit || cfg.scenario == Scenario::kPiPulse;
  const double t_prep = has_prep ? t.prep_gate : t.m1_start;
  const double t1c = t.m1_start + cfg.window_center();
  const double t2c = t.m2_start + cfg.window_center();
  const double t_cpi = cfg.cpi_time();

  const double p1 = relax_population(dev, p_prep, t1c - t_prep);
  auto measured_e = [eps](double p) { return p * (1.0 - eps) + (1.0 - p) * eps; };

  OraclePrediction out;
  Quadrants& q = out.quadrants;
  for (int s1 = 0; s1 < 2; ++s1) {
    const double w_s1 = s1 ? p1 : 1.0 - p1;
    for (int m1 = 0; m1 < 2; ++m1) {
      const double w_m1 = m1 ? (s1 ? 1.0 - eps : eps) : (s1 ? eps : 1.0 - eps);
      double p_c = relax_population(dev, s1, t_cpi - t1c);
      if (feedback && m1) p_c = 1.0 - p_c;
      const double p2 = relax_population(dev, p_c, t2c - t_cpi);
      const double e2 = measured_e(p2);
      const double w = w_s1 * w_m1;
      (m1 ? q.ee : q.ge) += w * e2;
      (m1 ? q.eg : q.gg) += w * (1.0 - e2);
    }
  }
  return out;
}

inline OraclePrediction oracle_probabilities(const ExperimentConfig& cfg, bool feedback) {
  return oracle_probabilities(cfg, feedback, 0.5 * analytic_overlap(cfg).total());
}

// ---------------------------------------------------------------------------
// Reports

struct Estimate {
  double value = 0;
  double sigma = 0;
};

inline Estimate binomial(std::uint64_t k, std::uint64_t n) {
  if (n == 0) return {};
  const double p = static_cast<double>(k) / static_cast<double>(n);
  return {p, std::sqrt(p * (1.0 - p) / static_cast<double>(n))};
}

struct SegmentReport {
  int seg = 0;
  bool feedback = false;
  std::uint64_t repetitions = 0;
  std::uint64_t fb_count = 0;
  QuadrantCounts counts;
  Quadrants quadrants;
  Estimate p_e1;
  Estimate p_e2;
  std::array<Estimate, 4> quadrant_estimates{};  // gg, ge, eg, ee
  OraclePrediction oracle;
  CorrelationMarginals marginals;
};

struct ExperimentReport {
  ExperimentConfig config;
  PipelineConfig pipeline;  // with resolved offsets
  ReadoutLevels levels;
  OverlapErrors overlap;
  std::vector<SegmentReport> segments;
  std::uint64_t adc_saturations = 0;
  bool pipeline_overflow = false;
  HistogramRam histogram{HistogramMode::kCorrelation, 1};

  const SegmentReport& segment(bool feedback) const {
    for (const auto& s : segments) {
      if (s.feedback == feedback) return s;
    }
    throw InputError(std::string("report has no segment with feedback ") + (feedback ? "on" : "off"));
  }
};

inline constexpr int kThresholdBin = kBinCount / 2;  // offset subtraction puts the threshold at zero

inline ExperimentReport run_experiment(const ExperimentConfig& cfg) {
  const ExperimentContext ctx(cfg);
  const int segs = cfg.segment_count();
  const std::uint64_t n = cfg.repetitions;
  const unsigned workers = static_cast<unsigned>(std::min<std::uint64_t>(static_cast<std::uint64_t>(cfg.jobs), n));

  struct Partial {
    HistogramRam ram;
    std::array<std::uint64_t, kMaxSegments> reps{};
    std::array<std::uint64_t, kMaxSegments> fb{};
    std::uint64_t saturations = 0;
    bool overflow = false;
    std::exception_ptr error;
  };
  std::vector<Partial> partials;
  partials.reserve(workers);
  for (unsigned w = 0; w < workers; ++w) {
    partials.push_back({HistogramRam(HistogramMode::kCorrelation, segs), {}, {}, 0, false, nullptr});
  }

  auto work = [&](unsigned w) {
    Partial& part = partials[w];
    try {
      const std::uint64_t lo = n * w / workers;
      const std::uint64_t hi = n * (w + 1) / workers;
      CorrelationState corr(segs);
      corr.sync_to_repetition(lo);
      for (std::uint64_t i = lo; i < hi; ++i) {
        const RepetitionOutcome r = ctx.run(i);
        const int seg = corr.seg();
        corr.on_fb_time(part.ram, r.i1_bin, bin5(r.q1_bin));
        corr.on_fb_time(part.ram, r.i2_bin, bin5(r.q2_bin));
        corr.end_repetition();
        ++part.reps[static_cast<std::size_t>(seg)];
        if (r.fb) ++part.fb[static_cast<std::size_t>(seg)];
        part.saturations += r.adc_saturations;
        part.overflow = part.overflow || r.pipeline_overflow;
      }
    } catch (...) {
      part.error = std::current_exception();
    }
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::thread> threads;
    for (unsigned w = 0; w < workers; ++w) threads.emplace_back(work, w);
    for (auto& t : threads) t.join();
  }

  ExperimentReport rep;
  rep.config = cfg;
  rep.pipeline = ctx.pipeline();
  rep.levels = ctx.levels();
  rep.overlap = analytic_overlap(rep.levels, static_cast<double>(rep.pipeline.c_i.raw()), cfg.device.noise_sigma,
                                 rep.pipeline.window);
  rep.histogram = HistogramRam(HistogramMode::kCorrelation, segs);
  std::array<std::uint64_t, kMaxSegments> reps{}, fb{};
  for (Partial& p : partials) {
    if (p.error) std::rethrow_exception(p.error);
    rep.histogram.merge(p.ram);
    for (int s = 0; s < segs; ++s) {
      reps[static_cast<std::size_t>(s)] += p.reps[static_cast<std::size_t>(s)];
      fb[static_cast<std::size_t>(s)] += p.fb[static_cast<std::size_t>(s)];
    }
    rep.adc_saturations += p.saturations;
    rep.pipeline_overflow = rep.pipeline_overflow || p.overflow;
  }
  partials.clear();

  const double eps = 0.5 * rep.overlap.total();
  for (int s = 0; s < segs; ++s) {
    SegmentReport sr;
    sr.seg = s;
    sr.feedback = cfg.feedback_for(static_cast<std::uint64_t>(s));
    sr.repetitions = reps[static_cast<std::size_t>(s)];
    sr.fb_count = fb[static_cast<std::size_t>(s)];
    if (sr.repetitions == 0) continue;
    sr.counts = quadrant_counts(rep.histogram, kThresholdBin, s);
    sr.quadrants = to_fractions(sr.counts);
    const std::uint64_t total = sr.counts.total();
    sr.p_e1 = binomial(sr.counts.eg + sr.counts.ee, total);
    sr.p_e2 = binomial(sr.counts.ge + sr.counts.ee, total);
    sr.quadrant_estimates = {binomial(sr.counts.gg, total), binomial(sr.counts.ge, total),
                             binomial(sr.counts.eg, total), binomial(sr.counts.ee, total)};
    sr.oracle = oracle_probabilities(cfg, sr.feedback, eps);
    sr.marginals = correlation_marginals(rep.histogram, s);
    rep.segments.push_back(sr);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Readout fidelity and calibration

struct FidelityReport {
  double f_r = 0;
  Estimate p_e_no_pulse;
  Estimate p_g_pi_pulse;
  double p_therm = 0;
  double p_decay = 0;  // 1 - exp(-t_center / T1), t_center = M1 window center
  double p_overlap = 0;
  double budget() const { return 2.0 * p_therm + p_decay + p_overlap; }
  BinCounts i1_no_pulse{};
  BinCounts i1_pi_pulse{};
  double threshold_volts = 0;
  int shift_i = 0;
};

inline FidelityReport readout_fidelity(const ExperimentConfig& cfg) {
  ExperimentConfig c = cfg;
  c.feedback = FeedbackMode::kOff;
  c.scenario = Scenario::kNoPulse;
  const ExperimentReport no_pulse = run_experiment(c);
  c.scenario = Scenario::kPiPulse;
  const ExperimentReport pi_pulse = run_experiment(c);

  FidelityReport f;
  const SegmentReport& a = no_pulse.segments.front();
  const SegmentReport& b = pi_pulse.segments.front();
  f.p_e_no_pulse = a.p_e1;
  f.p_g_pi_pulse = {1.0 - b.p_e1.value, b.p_e1.sigma};
  f.f_r = 1.0 - f.p_e_no_pulse.value - f.p_g_pi_pulse.value;
  f.p_therm = cfg.device.p_therm;
  f.p_decay = 1.0 - std::exp(-cfg.window_center() * cfg.device.gamma_down());
  f.p_overlap = no_pulse.overlap.total();
  f.i1_no_pulse = a.marginals.i1;
  f.i1_pi_pulse = b.marginals.i1;
  f.threshold_volts = cfg.threshold_volts;
  f.shift_i = cfg.pipeline.shift_i;
  return f;
}

/// Bisection on noise_sigma until the analytic overlap (eps_g + eps_e) of the
/// noiseless g/e levels matches `target` within 1e-3 absolute.
inline double calibrate_noise(double target, const ExperimentConfig& cfg) {
  if (!(target > 0.0 && target < 0.5)) throw CalibrationError("overlap target must lie in (0, 0.5)");
  const ReadoutLevels lv = noiseless_levels(cfg);
  const PipelineConfig pc = resolved_pipeline(cfg, lv);
  const double c = static_cast<double>(pc.c_i.raw());
  if (!(lv.separation() > 0.0) || c <= lv.i_g || c >= lv.i_e) {
    throw CalibrationError("threshold does not separate the g and e readout levels");
  }
  auto overlap = [&](double sigma) { return analytic_overlap(lv, c, sigma, pc.window).total(); };
  double lo = 0.0;
  double hi = 1e-3;
  while (overlap(hi) < target) {
    hi *= 2.0;
    if (hi > 1e3) throw CalibrationError("overlap target is unattainable");
  }
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (overlap(mid) < target ? lo : hi) = mid;
    if (hi - lo < 1e-12) break;
  }
  const double sigma = 0.5 * (lo + hi);
  if (std::abs(overlap(sigma) - target) > 1e-3) throw CalibrationError("bisection did not converge");
  return sigma;
}

/// Monte Carlo misclassification with relaxation and thermal excitation
/// switched off: P(E | g) + P(G | e) at M1.
inline OverlapErrors measure_overlap(const ExperimentConfig& cfg) {
  ExperimentConfig c = cfg;
  c.device.t1 = std::numeric_limits<double>::infinity();
  c.device.p_therm = 0.0;
  c.feedback = FeedbackMode::kOff;
  c.scenario = Scenario::kNoPulse;
  const double eps_g = run_experiment(c).segments.front().p_e1.value;
  c.scenario = Scenario::kPiPulse;
  const double eps_e = 1.0 - run_experiment(c).segments.front().p_e1.value;
  return {eps_g, eps_e};
}

/// Threshold maximizing P(E | pi) - P(E | no pulse) over I-bin boundaries.
/// Histograms are binned relative to the current threshold; the result is
/// in the same (scaled) volts as `current_threshold`.
inline double optimize_threshold(const BinCounts& no_pulse, const BinCounts& pi_pulse, double current_threshold) {
  std::uint64_t n0 = 0, n1 = 0;
  for (int k = 0; k < kBinCount; ++k) {
    n0 += no_pulse[static_cast<std::size_t>(k)];
    n1 += pi_pulse[static_cast<std::size_t>(k)];
  }
  if (n0 == 0 || n1 == 0) throw CalibrationError("calibration histograms are empty");
  // Integer cross-multiplied scores avoid ties broken by rounding.
  std::array<long double, kBinCount + 1> score{};
  std::uint64_t above0 = 0, above1 = 0;
  for (int b = kBinCount; b >= 0; --b) {
    if (b < kBinCount) {
      above0 += no_pulse[static_cast<std::size_t>(b)];
      above1 += pi_pulse[static_cast<std::size_t>(b)];
    }
    score[static_cast<std::size_t>(b)] =
        static_cast<long double>(above1) * n0 - static_cast<long double>(above0) * n1;
  }
  const auto [mn, mx] = std::minmax_element(score.begin(), score.end());
  if (*mn == *mx) throw CalibrationError("fidelity is flat; no signal to optimize on");
  int first = -1, last = -1;
  for (int b = 0; b <= kBinCount; ++b) {
    if (score[static_cast<std::size_t>(b)] == *mx) {
      if (first < 0) first = b;
      last = b;
    }
  }
  const double best = 0.5 * (first + last);
  return current_threshold + (best - kThresholdBin) * kBinWidthVolts;
}

inline double optimize_threshold(const FidelityReport& f) {
  // Bin edges live on the scaled axis, which is also the threshold's axis.
  return optimize_threshold(f.i1_no_pulse, f.i1_pi_pulse, f.threshold_volts);
}

inline double optimize_threshold(const ExperimentConfig& cfg) { return optimize_threshold(readout_fidelity(cfg)); }

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::ordered_json to_json(const Estimate& e) { return {{"value", e.value}, {"sigma", e.sigma}}; }

inline nlohmann::ordered_json to_json(const Quadrants& q) {
  return {{"GG", q.gg}, {"GE", q.ge}, {"EG", q.eg}, {"EE", q.ee}};
}

inline nlohmann::ordered_json to_json(const LatencyBudget& b) {
  const Timing el = total_electronic_delay(b);
  const Timing fb = total_feedback_latency(b);
  return {{"tau_proc_ns", b.tau_proc},
          {"tau_adcdio_ns", {b.tau_adcdio, b.sigma_adcdio}},
          {"tau_awg_ns", b.tau_awg},
          {"tau_awg_inferred", b.tau_awg_inferred},
          {"tau_g_ns", {b.tau_g, b.sigma_g}},
          {"tau_ro_ns", {b.tau_ro, b.sigma_ro}},
          {"tau_ap_ns", b.tau_ap},
          {"tau_el_tot_ns", {el.value, el.sigma}},
          {"tau_fb_ns", {fb.value, fb.sigma}}};
}

inline nlohmann::ordered_json to_json(const ExperimentConfig& c) {
  const DeviceParams& d = c.device;
  const PipelineConfig& p = c.pipeline;
  return {{"device",
           {{"f_q_hz", d.f_q},
            {"f_r_hz", d.f_r},
            {"kappa_rad_s", d.kappa},
            {"chi_rad_s", d.chi},
            {"f_if_hz", d.f_if},
            {"f_s_hz", d.f_s},
            {"t1_s", std::isinf(d.t1) ? -1.0 : d.t1},
            {"p_therm", d.p_therm},
            {"amp_ss_v", d.amp_ss},
            {"noise_sigma_v", d.noise_sigma},
            {"adc_latency_cycles", d.adc_latency_cycles}}},
          {"pipeline",
           {{"window", p.window},
            {"delay", p.delay},
            {"shift_i", p.shift_i},
            {"shift_q", p.shift_q},
            {"lut1", p.lut1.str()},
            {"lut2", p.lut2.str()},
            {"trigger_sync", p.trigger_sync}}},
          {"experiment",
           {{"scenario", to_string(c.scenario)},
            {"feedback", to_string(c.feedback)},
            {"repetitions", c.repetitions},
            {"master_seed", c.master_seed},
            {"threshold_v", c.threshold_volts},
            {"auto_offset_q", c.auto_offset_q},
            {"m1_start_s", c.timing.m1_start},
            {"m2_start_s", c.timing.m2_start},
            {"readout_duration_s", c.timing.readout_duration},
            {"prep_gate_s", c.timing.prep_gate},
            {"gate_duration_s", c.timing.gate_duration},
            {"t_begin_s", c.timing.t_begin},
            {"t_end_s", c.timing.t_end},
            {"cpi_reference", to_string(c.timing.cpi_reference)},
            {"cpi_time_s", c.cpi_time()},
            {"readout_time_s", c.readout_time()}}}};
}

inline nlohmann::ordered_json to_json(const ExperimentReport& r) {
  nlohmann::ordered_json segs = nlohmann::ordered_json::array();
  for (const SegmentReport& s : r.segments) {
    const auto& e = s.quadrant_estimates;
    segs.push_back({{"segment", s.seg},
                    {"feedback", s.feedback},
                    {"repetitions", s.repetitions},
                    {"fb_asserted", s.fb_count},
                    {"p_e1", to_json(s.p_e1)},
                    {"p_e2", to_json(s.p_e2)},
                    {"quadrants",
                     {{"GG", to_json(e[0])}, {"GE", to_json(e[1])}, {"EG", to_json(e[2])}, {"EE", to_json(e[3])}}},
                    {"counts", {{"GG", s.counts.gg}, {"GE", s.counts.ge}, {"EG", s.counts.eg}, {"EE", s.counts.ee}}},
                    {"oracle",
                     {{"p_e1", s.oracle.p_e1()}, {"p_e2", s.oracle.p_e2()}, {"quadrants", to_json(s.oracle.quadrants)}}}});
  }
  return {{"config", to_json(r.config)},
          {"resolved",
           {{"c_i_raw", r.pipeline.c_i.raw()},
            {"c_q_raw", r.pipeline.c_q.raw()},
            {"levels_lsb", {{"i_g", r.levels.i_g}, {"q_g", r.levels.q_g}, {"i_e", r.levels.i_e}, {"q_e", r.levels.q_e}}},
            {"overlap", {{"eps_g", r.overlap.eps_g}, {"eps_e", r.overlap.eps_e}, {"total", r.overlap.total()}}},
            {"threshold_bin", kThresholdBin}}},
          {"segments", segs},
          {"diagnostics",
           {{"adc_saturations", r.adc_saturations},
            {"pipeline_overflow", r.pipeline_overflow},
            {"histogram_events", r.histogram.total_events()},
            {"histogram_saturated_words", r.histogram.saturated_addresses().size()}}},
          {"latency", to_json(r.config.latency)},
          {"notes",
           {"tau_awg is inferred from the electronic-delay closure, not measured",
            "oracle: rate equations evaluated at integration-window centers with symmetric readout error"}}};
}

inline nlohmann::ordered_json to_json(const FidelityReport& f) {
  return {{"f_r", f.f_r},
          {"p_e_no_pulse", to_json(f.p_e_no_pulse)},
          {"p_g_pi_pulse", to_json(f.p_g_pi_pulse)},
          {"budget",
           {{"p_therm", f.p_therm}, {"p_decay", f.p_decay}, {"p_overlap", f.p_overlap}, {"sum", f.budget()}}},
          {"threshold_v", f.threshold_volts}};
}

}  // namespace qfb
