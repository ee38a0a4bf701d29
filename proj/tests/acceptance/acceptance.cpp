// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "qfb/qfb.hpp"

using namespace qfb;

namespace {

struct Verdict {
  bool pass = true;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

int hw_jobs() { return static_cast<int>(std::max(1U, std::thread::hardware_concurrency())); }

// Default device with noise calibrated to a 3 % overlap.
ExperimentConfig calibrated_config() {
  ExperimentConfig c;
  c.device.noise_sigma = calibrate_noise(0.03, c);
  c.jobs = hw_jobs();
  return c;
}

Verdict mixer_equivalence() {
  const auto t0 = Clock::now();
  Verdict v;
  for (int phase = 0; phase < 4; ++phase) {
    const double angle = std::numbers::pi / 2 * phase;
    const auto c = static_cast<std::int64_t>(std::llround(std::cos(angle)));
    const auto ns = static_cast<std::int64_t>(std::llround(-std::sin(angle)));
    for (std::int64_t raw = -8192; raw <= 8191; ++raw) {
      const MixerOutput m = mixer_fs4(FxpSample::adc(raw), phase);
      if (m.re.raw() != raw * c || m.im.raw() != raw * ns) v.pass = false;
    }
  }
  const double dt = seconds_since(t0);
  v.pass = v.pass && dt < 1.0;
  v.detail = "65536 cases, " + fmt("%.3f s", dt);
  return v;
}

Verdict moving_average_identity() {
  const auto t0 = Clock::now();
  Verdict v;
  std::mt19937_64 rng(2018);
  std::uniform_int_distribution<std::int64_t> d(-8192, 8191);
  int streams = 0;
  for (int l : {2, 4, 8, 16, 32}) {
    for (int s = 0; s < 100; ++s, ++streams) {
      std::vector<std::int64_t> x(10000);
      for (auto& e : x) e = d(rng);
      MovingAverage ma(l);
      for (std::size_t n = 0; n < x.size(); ++n) {
        std::int64_t direct = 0;
        for (std::size_t k = n + 1 - std::min<std::size_t>(n + 1, static_cast<std::size_t>(l)); k <= n; ++k) {
          direct += x[k];
        }
        ma.step(FxpSample(x[n], kMixerWidth, kAdcLsbVolts));
        if (ma.last_sum() != direct) v.pass = false;
      }
    }
  }
  const double dt = seconds_since(t0);
  v.pass = v.pass && dt < 10.0;
  v.detail = std::to_string(streams) + " streams x 10^4 samples, " + fmt("%.2f s", dt);
  return v;
}

Verdict demodulation() {
  const auto t0 = Clock::now();
  Verdict v;
  std::mt19937_64 rng(25);
  std::uniform_real_distribution<double> amp(0.05, 0.95), phase(-std::numbers::pi, std::numbers::pi);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const double a = amp(rng), phi = phase(rng);
    std::vector<FxpSample> x;
    for (int k = 0; k < 64; ++k) {
      x.push_back(quantize(a * std::cos(std::numbers::pi / 2 * k + phi), kAdcWidth, kAdcLsbVolts));
    }
    const auto trace = run_stream(ExperimentConfig::default_pipeline(), x, std::vector<std::uint8_t>(x.size(), 0));
    const double i_ref = a / 2 * std::cos(phi) / kAdcLsbVolts;
    const double q_ref = a / 2 * std::sin(phi) / kAdcLsbVolts;
    for (std::size_t n = 8; n < trace.size(); ++n) {
      worst = std::max({worst, std::abs(trace[n].i - i_ref), std::abs(trace[n].q - q_ref)});
    }
  }
  const double dt = seconds_since(t0);
  v.pass = worst <= 2.0 && dt < 5.0;
  v.detail = "max error " + fmt("%.2f LSB", worst) + ", " + fmt("%.3f s", dt);
  return v;
}

Verdict latency() {
  Verdict v;
  const LatencyBudget b;
  const double t1 = trigger_to_fb_delay(1, b);
  const double el = total_electronic_delay(b).value;
  const double fb = total_feedback_latency(b).value;
  const int cycles = measure_processing_latency(ExperimentConfig::default_pipeline());
  v.pass = t1 == 110.0 && el == 219.0 && fb == 352.0 && cycles == 3 && cycles * kClockPeriodNs == 30.0;
  std::ostringstream os;
  os << "trigger->fb(d=1) " << t1 << " ns, tau_el " << el << " ns, tau_fb " << fb << " ns, measured " << cycles
     << " cycles";
  v.detail = os.str();
  return v;
}

Verdict discrimination() {
  Verdict v;
  for (unsigned idx = 0; idx < 16; ++idx) {
    const Lut lut = Lut::from_index(idx);
    for (int x = 0; x < 2; ++x) {
      for (int y = 0; y < 2; ++y) {
        if (discriminate(x, y, lut) != ((idx >> (x * 2 + y)) & 1U)) v.pass = false;
      }
    }
  }
  PipelineConfig pc = ExperimentConfig::default_pipeline();
  pc.lut1 = Lut::from_index(0xF);
  pc.lut2 = Lut::from_string("1100");
  Pipeline p(pc);
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<std::int64_t> d(-8192, 8191);
  std::uint64_t fb = 0, fb_time = 0;
  for (int n = 0; n < 1000000; ++n) {
    const TickOutput t = p.tick(FxpSample::adc(d(rng)), (rng() & 7) == 0);
    if ((t.fb || t.fb2) && !t.fb_time) v.pass = false;
    fb += t.fb;
    fb_time += t.fb_time;
  }
  v.pass = v.pass && fb > 0 && fb == fb_time;
  v.detail = "64 truth-table cases, 10^6 ticks, " + std::to_string(fb_time) + " fb_time pulses";
  return v;
}

Verdict thermal() {
  Verdict v;
  const double p = thermal_population(0.114, 6.148e9);
  v.pass = std::abs(p - 0.070) <= 0.003;
  v.detail = "P_therm(114 mK) = " + fmt("%.4f", p);
  return v;
}

std::string pct(double p) { return fmt("%.2f %%", 100.0 * p); }

Verdict pi_half_experiment(const ExperimentConfig& base) {
  ExperimentConfig c = base;
  c.scenario = Scenario::kPiHalfInit;
  c.feedback = FeedbackMode::kAlternate;
  c.repetitions = std::uint64_t{1} << 18;  // 2^17 per segment
  const auto t0 = Clock::now();
  const ExperimentReport r = run_experiment(c);
  const double dt = seconds_since(t0);
  const Quadrants& off = r.segment(false).quadrants;
  const double e2_on = r.segment(true).p_e2.value;
  const double sim[4] = {0.5074, 0.0218, 0.1137, 0.3571};
  const double got[4] = {off.gg, off.ge, off.eg, off.ee};
  Verdict v;
  for (int k = 0; k < 4; ++k) v.pass = v.pass && std::abs(got[k] - sim[k]) <= 0.03;
  v.pass = v.pass && e2_on >= 0.08 && e2_on <= 0.16;
  v.detail = "off GG/GE/EG/EE " + pct(got[0]) + " / " + pct(got[1]) + " / " + pct(got[2]) + " / " + pct(got[3]) +
             ", on P[E2] " + pct(e2_on) + ", " + fmt("%.1f s", dt) + " at " + std::to_string(c.jobs) + " workers";
  return v;
}

Verdict thermal_experiment(const ExperimentConfig& base) {
  ExperimentConfig c = base;
  c.scenario = Scenario::kThermalInit;
  c.feedback = FeedbackMode::kAlternate;
  c.repetitions = std::uint64_t{1} << 18;
  const auto t0 = Clock::now();
  const ExperimentReport r = run_experiment(c);
  const double dt = seconds_since(t0);
  const double e1_off = r.segment(false).p_e1.value;
  const double ee_on = r.segment(true).quadrants.ee;
  Verdict v;
  v.pass = std::abs(e1_off - 0.082) <= 0.015 && ee_on >= 0.0145 - 0.015 && ee_on <= 0.0279 + 0.015;
  v.detail = "off P[E1] " + pct(e1_off) + ", on P[R_EE] " + pct(ee_on) + ", " + fmt("%.1f s", dt);
  return v;
}

Verdict fidelity(const ExperimentConfig& base) {
  ExperimentConfig c = base;
  c.repetitions = std::uint64_t{1} << 17;
  const FidelityReport f = readout_fidelity(c);
  const double budget = 2.0 * f.p_therm + f.p_decay + f.p_overlap;
  const double gap = std::abs((1.0 - f.f_r) - budget);
  Verdict v;
  v.pass = std::abs(f.f_r - 0.77) <= 0.03 && gap < 0.02;
  v.detail = "F_r " + pct(f.f_r) + ", 1-F_r " + pct(1.0 - f.f_r) + " vs budget " + pct(budget) + " (gap " + pct(gap) +
             "), tau_RO " + fmt("%.0f ns", c.readout_time() * 1e9);
  return v;
}

Verdict histogram_integrity() {
  Verdict v;
  std::mt19937_64 rng(10);
  // Conservation against an independent count array.
  HistogramRam ram(HistogramMode::kTwoD);
  std::vector<std::uint32_t> log(kRamWords, 0);
  std::normal_distribution<double> g(64.0, 3.0);
  const std::uint64_t n = 10000000;
  for (std::uint64_t k = 0; k < n; ++k) {
    const int i = std::clamp(static_cast<int>(g(rng)), 0, 127);
    const int q = static_cast<int>(rng() % 128);
    update_2d(ram, i, q);
    ++log[static_cast<std::size_t>(q) * 128 + static_cast<std::size_t>(i)];
  }
  std::uint64_t total = 0;
  bool words_ok = true;
  for (std::uint32_t a = 0; a < kRamWords; ++a) {
    total += ram.shadow(a);
    if (ram.shadow(a) != log[a]) v.pass = false;
    if (ram.word(a) != std::min<std::uint32_t>(log[a], 65535)) words_ok = false;
  }
  v.pass = v.pass && words_ok && total == n && ram.total_events() == n;

  // Bijection on random tuples.
  int roundtrips = 0;
  for (int k = 0; k < 100000; ++k) {
    const CorrelationFields f{static_cast<int>(rng() % 128), static_cast<int>(rng() % 32),
                              static_cast<int>(rng() % 128), static_cast<int>(rng() % 4)};
    const std::uint32_t a = pack_correlation_address(f.i2, f.q5, f.i1, f.seg);
    if (a < kRamWords && unpack_correlation_address(a) == f) ++roundtrips;
  }
  v.pass = v.pass && roundtrips == 100000;

  // Marginals against directly accumulated 1D histograms.
  HistogramRam small(HistogramMode::kTwoD);
  BinCounts hi{}, hq{};
  for (int k = 0; k < 100000; ++k) {
    const int i = static_cast<int>(rng() % 128), q = static_cast<int>(rng() % 128);
    update_2d(small, i, q);
    ++hi[static_cast<std::size_t>(i)];
    ++hq[static_cast<std::size_t>(q)];
  }
  const TwoDMarginals m = marginals_2d(small);
  v.pass = v.pass && m.i == hi && m.q == hq;
  v.detail = "10^7 updates conserved, " + std::to_string(roundtrips) + " round trips, marginals " +
             (m.i == hi && m.q == hq ? "equal" : "differ");
  return v;
}

Verdict determinism(const ExperimentConfig& base) {
  ExperimentConfig c = base;
  c.feedback = FeedbackMode::kAlternate;
  c.repetitions = 8192;
  auto dump = [](const ExperimentConfig& cfg) {
    const ExperimentReport r = run_experiment(cfg);
    std::ostringstream bin;
    r.histogram.write_binary(bin);
    return std::make_pair(to_json(r).dump(2), bin.str());
  };
  const auto a = dump(c);
  const auto b = dump(c);
  c.jobs = 1;
  const auto s = dump(c);
  Verdict v;
  v.pass = a == b && a == s;
  v.detail = "report " + std::to_string(a.first.size()) + " bytes, dump " + std::to_string(a.second.size()) +
             " bytes, identical across runs and worker counts";
  if (!v.pass) v.detail = "outputs differ";
  return v;
}

}  // namespace

int main() {
  const ExperimentConfig cfg = calibrated_config();
  std::printf("calibrated noise_sigma = %.4f V for a 3 %% overlap\n", cfg.device.noise_sigma);
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
      {"mixer equivalence", mixer_equivalence},
      {"moving-average identity", moving_average_identity},
      {"demodulation", demodulation},
      {"latency", latency},
      {"state discrimination", discrimination},
      {"thermal population", thermal},
      {"pi/2 experiment", [&] { return pi_half_experiment(cfg); }},
      {"thermal experiment", [&] { return thermal_experiment(cfg); }},
      {"readout fidelity", [&] { return fidelity(cfg); }},
      {"histogram integrity", histogram_integrity},
      {"determinism", [&] { return determinism(cfg); }},
  };
  int failures = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    Verdict v;
    try {
      v = criteria[k].second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failures += v.pass ? 0 : 1;
    std::printf("%s criterion %zu: %s (%s)\n", v.pass ? "PASS" : "FAIL", k + 1, criteria[k].first.c_str(),
                v.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
