#pragma once

// Plain-text run configuration: one `section.key = value [unit]` per line,
// `#` starts a comment. Dimensioned values must carry a unit; unknown keys
// are rejected. All problems are collected and reported together.

#include <cmath>
#include <cstdlib>
#include <functional>
#include <istream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "qfb/errors.hpp"
#include "qfb/experiment.hpp"

namespace qfb {

struct RunConfig {
  ExperimentConfig experiment;
  bool noise_auto = false;       // calibrate noise_sigma before running
  double overlap_target = 0.03;  // used when noise_auto is set
  std::map<std::string, std::string> entries;  // as written, for echoing
};

enum class Dimension { kFrequency, kTime, kVoltage, kTemperature, kFraction, kNone };

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline double unit_scale(Dimension dim, const std::string& unit) {
  static const std::map<std::string, double> freq{{"Hz", 1.0}, {"kHz", 1e3}, {"MHz", 1e6}, {"GHz", 1e9}};
  static const std::map<std::string, double> time{{"s", 1.0}, {"ms", 1e-3}, {"us", 1e-6}, {"ns", 1e-9}};
  static const std::map<std::string, double> volt{{"V", 1.0}, {"mV", 1e-3}, {"uV", 1e-6}};
  static const std::map<std::string, double> temp{{"K", 1.0}, {"mK", 1e-3}};
  const std::map<std::string, double>* table = nullptr;
  switch (dim) {
    case Dimension::kFrequency: table = &freq; break;
    case Dimension::kTime: table = &time; break;
    case Dimension::kVoltage: table = &volt; break;
    case Dimension::kTemperature: table = &temp; break;
    case Dimension::kFraction:
      if (unit.empty()) return 1.0;
      if (unit == "%") return 0.01;
      throw ConfigError("expected a fraction or a percentage, got unit '" + unit + "'");
    case Dimension::kNone:
      if (!unit.empty()) throw ConfigError("unexpected unit '" + unit + "'");
      return 1.0;
  }
  if (unit.empty()) throw ConfigError("missing unit");
  const auto it = table->find(unit);
  if (it == table->end()) throw ConfigError("unknown unit '" + unit + "'");
  return it->second;
}

}  // namespace detail

/// Parses "<number> <unit>" (the space is optional). "inf" is accepted with or
/// without a unit.
inline double parse_quantity(const std::string& text, Dimension dim) {
  const std::string s = detail::trim(text);
  if (s.empty()) throw ConfigError("empty value");
  std::size_t pos = 0;
  double v = 0.0;
  if (s.rfind("inf", 0) == 0) {
    v = std::numeric_limits<double>::infinity();
    pos = 3;
  } else {
    const char* begin = s.c_str();
    char* end = nullptr;
    v = std::strtod(begin, &end);
    if (end == begin) throw ConfigError("not a number: '" + s + "'");
    pos = static_cast<std::size_t>(end - begin);
  }
  const std::string unit = detail::trim(s.substr(pos));
  if (std::isinf(v) && unit.empty()) return v;
  return v * detail::unit_scale(dim, unit);
}

inline long long parse_integer(const std::string& text) {
  const std::string s = detail::trim(text);
  std::size_t pos = 0;
  long long v = 0;
  try {
    v = std::stoll(s, &pos, 0);
  } catch (const std::exception&) {
    throw ConfigError("not an integer: '" + s + "'");
  }
  if (pos != s.size()) throw ConfigError("not an integer: '" + s + "'");
  return v;
}

inline bool parse_bool(const std::string& text) {
  const std::string s = detail::trim(text);
  if (s == "true" || s == "on" || s == "1") return true;
  if (s == "false" || s == "off" || s == "0") return false;
  throw ConfigError("not a boolean: '" + s + "'");
}

class ConfigParser {
 public:
  ConfigParser() { register_keys(); }

  /// Applies every assignment in `in` to `rc`. Throws one ConfigError listing
  /// all problems found, including cross-field validation.
  void parse(std::istream& in, RunConfig& rc) const {
    std::vector<std::string> errors;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      line = detail::trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        errors.push_back("line " + std::to_string(lineno) + ": expected 'key = value'");
        continue;
      }
      const std::string key = detail::trim(line.substr(0, eq));
      const std::string value = detail::trim(line.substr(eq + 1));
      const auto it = setters_.find(key);
      if (it == setters_.end()) {
        errors.push_back("line " + std::to_string(lineno) + ": unknown key '" + key + "'");
        continue;
      }
      try {
        it->second(value, rc);
        rc.entries[key] = value;
      } catch (const std::exception& e) {
        errors.push_back("line " + std::to_string(lineno) + ": " + key + ": " + e.what());
      }
    }
    if (errors.empty()) {
      try {
        rc.experiment.validate();
      } catch (const std::exception& e) {
        errors.push_back(e.what());
      }
    }
    if (!errors.empty()) {
      std::string msg = "invalid configuration:";
      for (const auto& e : errors) msg += "\n  " + e;
      throw ConfigError(msg);
    }
  }

  std::vector<std::string> keys() const {
    std::vector<std::string> out;
    for (const auto& [k, _] : setters_) out.push_back(k);
    return out;
  }

 private:
  using Setter = std::function<void(const std::string&, RunConfig&)>;

  void quantity(const std::string& key, Dimension dim, std::function<void(RunConfig&, double)> apply) {
    setters_[key] = [dim, apply](const std::string& v, RunConfig& rc) { apply(rc, parse_quantity(v, dim)); };
  }
  void integer(const std::string& key, std::function<void(RunConfig&, long long)> apply) {
    setters_[key] = [apply](const std::string& v, RunConfig& rc) { apply(rc, parse_integer(v)); };
  }

  void register_keys() {
    using D = Dimension;
    quantity("device.f_q", D::kFrequency, [](RunConfig& r, double v) { r.experiment.device.f_q = v; });
    quantity("device.f_r", D::kFrequency, [](RunConfig& r, double v) { r.experiment.device.f_r = v; });
    // Linewidth and dispersive shift are written as ordinary frequencies (x / 2pi).
    quantity("device.kappa", D::kFrequency, [](RunConfig& r, double v) { r.experiment.device.kappa = kTwoPi * v; });
    quantity("device.chi", D::kFrequency, [](RunConfig& r, double v) { r.experiment.device.chi = kTwoPi * v; });
    quantity("device.f_if", D::kFrequency, [](RunConfig& r, double v) { r.experiment.device.f_if = v; });
    quantity("device.f_s", D::kFrequency, [](RunConfig& r, double v) { r.experiment.device.f_s = v; });
    quantity("device.t1", D::kTime, [](RunConfig& r, double v) { r.experiment.device.t1 = v; });
    quantity("device.p_therm", D::kFraction, [](RunConfig& r, double v) { r.experiment.device.p_therm = v; });
    quantity("device.t_env", D::kTemperature, [](RunConfig& r, double v) {
      r.experiment.device.p_therm = thermal_population(v, r.experiment.device.f_q);
    });
    quantity("device.amp_ss", D::kVoltage, [](RunConfig& r, double v) { r.experiment.device.amp_ss = v; });
    setters_["device.noise_sigma"] = [](const std::string& v, RunConfig& r) {
      if (detail::trim(v) == "auto") {
        r.noise_auto = true;
        return;
      }
      r.noise_auto = false;
      r.experiment.device.noise_sigma = parse_quantity(v, Dimension::kVoltage);
    };
    integer("device.adc_latency", [](RunConfig& r, long long v) {
      r.experiment.device.adc_latency_cycles = static_cast<int>(v);
    });

    integer("pipeline.window", [](RunConfig& r, long long v) { r.experiment.pipeline.window = static_cast<int>(v); });
    integer("pipeline.delay", [](RunConfig& r, long long v) { r.experiment.pipeline.delay = static_cast<int>(v); });
    integer("pipeline.shift_i", [](RunConfig& r, long long v) { r.experiment.pipeline.shift_i = static_cast<int>(v); });
    integer("pipeline.shift_q", [](RunConfig& r, long long v) { r.experiment.pipeline.shift_q = static_cast<int>(v); });
    integer("pipeline.trigger_sync",
            [](RunConfig& r, long long v) { r.experiment.pipeline.trigger_sync = static_cast<int>(v); });
    setters_["pipeline.lut1"] = [](const std::string& v, RunConfig& r) { r.experiment.pipeline.lut1 = Lut::from_string(v); };
    setters_["pipeline.lut2"] = [](const std::string& v, RunConfig& r) { r.experiment.pipeline.lut2 = Lut::from_string(v); };
    setters_["pipeline.c_q"] = [](const std::string& v, RunConfig& r) {
      if (detail::trim(v) == "auto") {
        r.experiment.auto_offset_q = true;
        return;
      }
      r.experiment.auto_offset_q = false;
      r.experiment.pipeline.c_q = quantize(parse_quantity(v, Dimension::kVoltage), kFilterWidth, kAdcLsbVolts);
    };

    setters_["experiment.scenario"] = [](const std::string& v, RunConfig& r) {
      const std::string s = detail::trim(v);
      if (s == "pi_half") r.experiment.scenario = Scenario::kPiHalfInit;
      else if (s == "thermal") r.experiment.scenario = Scenario::kThermalInit;
      else if (s == "no_pulse") r.experiment.scenario = Scenario::kNoPulse;
      else if (s == "pi_pulse") r.experiment.scenario = Scenario::kPiPulse;
      else throw ConfigError("scenario must be pi_half, thermal, no_pulse or pi_pulse");
    };
    setters_["experiment.feedback"] = [](const std::string& v, RunConfig& r) {
      const std::string s = detail::trim(v);
      if (s == "off" || s == "false") r.experiment.feedback = FeedbackMode::kOff;
      else if (s == "on" || s == "true") r.experiment.feedback = FeedbackMode::kOn;
      else if (s == "alternate") r.experiment.feedback = FeedbackMode::kAlternate;
      else throw ConfigError("feedback must be off, on or alternate");
    };
    integer("experiment.repetitions", [](RunConfig& r, long long v) {
      if (v < 1) throw ConfigError("repetitions must be >= 1");
      r.experiment.repetitions = static_cast<std::uint64_t>(v);
    });
    setters_["experiment.seed"] = [](const std::string& v, RunConfig& r) {
      r.experiment.master_seed = std::stoull(detail::trim(v), nullptr, 0);
    };
    quantity("experiment.threshold", D::kVoltage, [](RunConfig& r, double v) { r.experiment.threshold_volts = v; });
    quantity("experiment.overlap_target", D::kFraction, [](RunConfig& r, double v) { r.overlap_target = v; });
    setters_["experiment.cpi_reference"] = [](const std::string& v, RunConfig& r) {
      const std::string s = detail::trim(v);
      if (s == "after_integration") r.experiment.timing.cpi_reference = CpiReference::kAfterIntegration;
      else if (s == "after_pulse_start") r.experiment.timing.cpi_reference = CpiReference::kAfterPulseStart;
      else throw ConfigError("cpi_reference must be after_integration or after_pulse_start");
    };
    quantity("experiment.t_begin", D::kTime, [](RunConfig& r, double v) { r.experiment.timing.t_begin = v; });
    quantity("experiment.t_end", D::kTime, [](RunConfig& r, double v) { r.experiment.timing.t_end = v; });
    quantity("experiment.prep_gate", D::kTime, [](RunConfig& r, double v) { r.experiment.timing.prep_gate = v; });
    quantity("experiment.m1_start", D::kTime, [](RunConfig& r, double v) { r.experiment.timing.m1_start = v; });
    quantity("experiment.m2_start", D::kTime, [](RunConfig& r, double v) { r.experiment.timing.m2_start = v; });
    quantity("experiment.readout_duration", D::kTime,
             [](RunConfig& r, double v) { r.experiment.timing.readout_duration = v; });
    quantity("experiment.gate_duration", D::kTime,
             [](RunConfig& r, double v) { r.experiment.timing.gate_duration = v; });

    auto ns = [](double seconds) { return seconds * 1e9; };
    quantity("latency.tau_proc", D::kTime, [ns](RunConfig& r, double v) { r.experiment.latency.tau_proc = ns(v); });
    quantity("latency.tau_adcdio", D::kTime, [ns](RunConfig& r, double v) { r.experiment.latency.tau_adcdio = ns(v); });
    quantity("latency.tau_awg", D::kTime, [ns](RunConfig& r, double v) {
      r.experiment.latency.tau_awg = ns(v);
      r.experiment.latency.tau_awg_inferred = false;
    });
    quantity("latency.tau_g", D::kTime, [ns](RunConfig& r, double v) { r.experiment.latency.tau_g = ns(v); });
    quantity("latency.tau_ro", D::kTime, [ns](RunConfig& r, double v) { r.experiment.latency.tau_ro = ns(v); });
    quantity("latency.tau_ap", D::kTime, [ns](RunConfig& r, double v) { r.experiment.latency.tau_ap = ns(v); });
  }

  std::map<std::string, Setter> setters_;
};

inline RunConfig load_config(std::istream& in) {
  RunConfig rc;
  ConfigParser().parse(in, rc);
  return rc;
}

inline RunConfig load_config_string(const std::string& text) {
  std::istringstream in(text);
  return load_config(in);
}

}  // namespace qfb
