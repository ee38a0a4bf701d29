#pragma once

// Feedback latency budget and related conversions. All times in ns.

#include <cmath>
#include <ostream>
#include <string>
#include <vector>

#include "qfb/errors.hpp"

namespace qfb {

inline constexpr double kClockPeriodNs = 10.0;
inline constexpr double kSpeedOfLight = 299'792'458.0;  // m/s

struct Timing {
  double value = 0.0;
  double sigma = 0.0;
};

struct LatencyBudget {
  double tau_proc = 30.0;
  double tau_adcdio = 80.0;
  double tau_awg = 40.0;  // not measured directly; closes the electronic-delay sum
  double tau_g = 69.0;
  double tau_ro = 105.0;
  double tau_ap = 28.0;

  double sigma_proc = 0.0;
  double sigma_adcdio = 3.0;
  double sigma_awg = 0.0;
  double sigma_g = 7.0;
  double sigma_ro = 2.0;
  double sigma_ap = 0.0;

  bool tau_awg_inferred = true;

  void validate() const {
    for (double v : {tau_proc, tau_adcdio, tau_awg, tau_g, tau_ro, tau_ap, sigma_proc, sigma_adcdio, sigma_awg,
                     sigma_g, sigma_ro, sigma_ap}) {
      if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("latency components must be finite and >= 0");
    }
    const double cycles = tau_proc / kClockPeriodNs;
    if (std::abs(cycles - std::round(cycles)) > 1e-9) {
      throw ConfigError("tau_proc must be a whole number of 10 ns clock cycles");
    }
  }

  static LatencyBudget zero() {
    LatencyBudget b;
    b.tau_proc = b.tau_adcdio = b.tau_awg = b.tau_g = b.tau_ro = b.tau_ap = 0.0;
    b.sigma_proc = b.sigma_adcdio = b.sigma_awg = b.sigma_g = b.sigma_ro = b.sigma_ap = 0.0;
    b.tau_awg_inferred = false;
    return b;
  }
};

inline double quadrature(std::initializer_list<double> parts) {
  double s = 0.0;
  for (double p : parts) s += p * p;
  return std::sqrt(s);
}

/// Electronic delay tau_proc + tau_ADC+DIO + tau_AWG + tau_G.
inline Timing total_electronic_delay(const LatencyBudget& b) {
  b.validate();
  return {b.tau_proc + b.tau_adcdio + b.tau_awg + b.tau_g,
          quadrature({b.sigma_proc, b.sigma_adcdio, b.sigma_awg, b.sigma_g})};
}

inline Timing total_feedback_latency(const LatencyBudget& b) {
  const Timing el = total_electronic_delay(b);
  return {el.value + b.tau_ro + b.tau_ap, quadrature({el.sigma, b.sigma_ro, b.sigma_ap})};
}

/// Trigger input to feedback output, anchored at d = 1.
inline double trigger_to_fb_delay(int d, const LatencyBudget& b = {}) {
  if (d < 1) throw ConfigError("delay d must be >= 1");
  return b.tau_adcdio + b.tau_proc + (d - 1) * kClockPeriodNs;
}

inline double readout_time_ns(int d) { return d * kClockPeriodNs; }

inline double cable_length(double tau_g_ns, double eps_eff) {
  if (!(eps_eff >= 1.0)) throw InputError("effective dielectric constant must be >= 1");
  if (!(tau_g_ns >= 0.0)) throw InputError("group delay must be >= 0");
  return tau_g_ns * 1e-9 * kSpeedOfLight / std::sqrt(eps_eff);
}

inline void write_latency_table(std::ostream& os, const LatencyBudget& b) {
  const Timing el = total_electronic_delay(b);
  const Timing fb = total_feedback_latency(b);
  auto row = [&os](const std::string& name, double v, double s, const std::string& note = "") {
    os << "  " << name;
    for (std::size_t k = name.size(); k < 14; ++k) os << ' ';
    os << v << " ns";
    if (s > 0.0) os << " +- " << s << " ns";
    if (!note.empty()) os << "  (" << note << ")";
    os << '\n';
  };
  os << "latency budget\n";
  row("tau_proc", b.tau_proc, b.sigma_proc, std::to_string(static_cast<int>(b.tau_proc / kClockPeriodNs)) + " cycles");
  row("tau_adc+dio", b.tau_adcdio, b.sigma_adcdio);
  row("tau_awg", b.tau_awg, b.sigma_awg, b.tau_awg_inferred ? "inferred" : "");
  row("tau_g", b.tau_g, b.sigma_g);
  row("tau_el,tot", el.value, el.sigma);
  row("tau_ro", b.tau_ro, b.sigma_ro);
  row("tau_ap", b.tau_ap, b.sigma_ap);
  row("tau_fb", fb.value, fb.sigma);
  os << "readout delay d -> tau_ro = d * 10 ns, trigger -> fb\n";
  for (int d : {1, 2, 8, 10, 11, 14, 16}) {
    os << "  d=" << d << "  tau_ro=" << readout_time_ns(d) << " ns  trigger->fb=" << trigger_to_fb_delay(d, b)
       << " ns\n";
  }
}

}  // namespace qfb
