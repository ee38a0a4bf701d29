// qfb: command-line front end for the feedback processor model.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>

#include "CLI11.hpp"
#include "qfb/qfb.hpp"

namespace fs = std::filesystem;
using namespace qfb;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

struct Globals {
  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_given = false;
  int jobs = 0;
  bool json = false;
};

RunConfig load_run_config(const Globals& g) {
  RunConfig rc;
  if (!g.config_path.empty()) {
    std::ifstream in(g.config_path);
    if (!in) throw InputError("cannot open config file '" + g.config_path + "'");
    ConfigParser().parse(in, rc);
  }
  if (const char* env = std::getenv("QFB_SEED")) {
    try {
      rc.experiment.master_seed = std::stoull(env, nullptr, 0);
    } catch (const std::exception&) {
      throw ConfigError(std::string("QFB_SEED is not an integer: '") + env + "'");
    }
  }
  if (g.seed_given) rc.experiment.master_seed = g.seed;
  const unsigned hw = std::max(1U, std::thread::hardware_concurrency());
  rc.experiment.jobs = g.jobs > 0 ? g.jobs : static_cast<int>(hw);
  return rc;
}

/// Applies noise calibration if the config asks for it.
void resolve_noise(RunConfig& rc) {
  if (rc.noise_auto) rc.experiment.device.noise_sigma = calibrate_noise(rc.overlap_target, rc.experiment);
}

void print_json(const nlohmann::ordered_json& j) { std::cout << j.dump(2) << '\n'; }

std::string pct(double p) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << 100.0 * p << " %";
  return os.str();
}

std::string pct(const Estimate& e) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << 100.0 * e.value << " +- " << 100.0 * e.sigma << " %";
  return os.str();
}

// ---------------------------------------------------------------------------

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(detail::trim(cell));
  return out;
}

/// Reads a stream CSV with a header naming at least `raw`; `tr` is optional.
AdcStream read_stream_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || detail::trim(line).empty()) throw InputError("input stream is empty");
  const auto header = split_csv(line);
  int raw_col = -1, tr_col = -1;
  for (std::size_t k = 0; k < header.size(); ++k) {
    if (header[k] == "raw" || header[k] == "adc_raw") raw_col = static_cast<int>(k);
    if (header[k] == "tr") tr_col = static_cast<int>(k);
  }
  if (raw_col < 0) throw InputError("input header must contain a 'raw' column");
  AdcStream s;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const auto cells = split_csv(line);
    try {
      const long long raw = parse_integer(cells.at(static_cast<std::size_t>(raw_col)));
      s.samples.push_back(FxpSample::adc(raw));
      s.trigger.push_back(tr_col >= 0 && parse_integer(cells.at(static_cast<std::size_t>(tr_col))) != 0 ? 1 : 0);
    } catch (const std::exception& e) {
      throw InputError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (s.samples.empty()) throw InputError("input stream has no samples");
  return s;
}

/// One M1 readout with the qubit held in `state`.
AdcStream synthetic_stream(const ExperimentConfig& cfg, QubitState state, bool noisy) {
  DeviceParams dev = cfg.device;
  dev.t1 = std::numeric_limits<double>::infinity();
  dev.p_therm = 0.0;
  if (!noisy) dev.noise_sigma = 0.0;
  PulseSchedule sched;
  sched.t_begin = cfg.timing.t_begin;
  sched.t_end = cfg.timing.m1_start + cfg.timing.readout_duration + 100e-9;
  sched.readouts = {{cfg.timing.m1_start, cfg.timing.readout_duration}};
  const InitialState init = state == QubitState::kGround ? InitialState::kGround : InitialState::kExcited;
  const QubitTrajectory traj = sample_trajectory(dev, sched, init, derive_seed(cfg.master_seed, 0, 0));
  return synthesize_adc_stream(dev, sched, traj, derive_seed(cfg.master_seed, 0, 1));
}

int cmd_simulate_pipeline(const Globals& g, const std::string& input, const std::string& state,
                          const std::string& output, bool noisy, bool dump_stream) {
  RunConfig rc = load_run_config(g);
  resolve_noise(rc);
  const ExperimentConfig& cfg = rc.experiment;
  AdcStream stream;
  if (!input.empty()) {
    std::ifstream in(input);
    if (!in) throw InputError("cannot open input '" + input + "'");
    stream = read_stream_csv(in);
  } else if (state == "g" || state == "e") {
    stream = synthetic_stream(cfg, state == "g" ? QubitState::kGround : QubitState::kExcited, noisy);
  } else {
    throw InputError("give --input FILE or --state g|e");
  }
  const PipelineConfig pc = resolved_pipeline(cfg, noiseless_levels(cfg));
  const auto trace = run_stream(pc, stream.samples, stream.trigger);

  std::ofstream file;
  std::ostream* os = &std::cout;
  if (!output.empty()) {
    file.open(output);
    if (!file) throw InputError("cannot write '" + output + "'");
    os = &file;
  }
  if (dump_stream) {
    write_stream_csv(*os, stream);
  } else {
    write_trace_csv(*os, trace);
  }
  return kExitOk;
}

void print_report_text(const ExperimentReport& r) {
  const ExperimentConfig& c = r.config;
  std::cout << "scenario " << to_string(c.scenario) << ", feedback " << to_string(c.feedback) << ", "
            << c.repetitions << " repetitions, seed " << c.master_seed << '\n';
  std::cout << "noise_sigma " << c.device.noise_sigma * 1e3 << " mV, overlap " << pct(r.overlap.total())
            << ", tau_RO " << c.readout_time() * 1e9 << " ns, conditional pi at " << c.cpi_time() * 1e9 << " ns\n";
  for (const SegmentReport& s : r.segments) {
    std::cout << "segment " << s.seg << " (feedback " << (s.feedback ? "on" : "off") << ")\n";
    const char* names[4] = {"P[R_GG]", "P[R_GE]", "P[R_EG]", "P[R_EE]"};
    const double oracle[4] = {s.oracle.quadrants.gg, s.oracle.quadrants.ge, s.oracle.quadrants.eg,
                              s.oracle.quadrants.ee};
    for (int k = 0; k < 4; ++k) {
      std::cout << "  " << names[k] << "  " << std::setw(18) << pct(s.quadrant_estimates[static_cast<std::size_t>(k)])
                << "   oracle " << pct(oracle[k]) << '\n';
    }
    std::cout << "  P[E1]    " << std::setw(18) << pct(s.p_e1) << "   oracle " << pct(s.oracle.p_e1()) << '\n';
    std::cout << "  P[E2]    " << std::setw(18) << pct(s.p_e2) << "   oracle " << pct(s.oracle.p_e2()) << '\n';
  }
  if (r.adc_saturations > 0) std::cout << "warning: " << r.adc_saturations << " ADC samples saturated\n";
  if (r.pipeline_overflow) std::cout << "warning: pipeline overflow flag latched\n";
}

int cmd_run_experiment(const Globals& g, long long repetitions, const std::string& out_dir) {
  RunConfig rc = load_run_config(g);
  if (repetitions != -1) {
    if (repetitions < 1) throw ConfigError("--repetitions must be >= 1");
    rc.experiment.repetitions = static_cast<std::uint64_t>(repetitions);
  }
  rc.experiment.validate();
  resolve_noise(rc);
  const ExperimentReport report = run_experiment(rc.experiment);
  const auto json = to_json(report);

  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    std::ofstream(fs::path(out_dir) / "report.json") << json.dump(2) << '\n';
    for (const SegmentReport& s : report.segments) {
      const std::string tag = "_seg" + std::to_string(s.seg) + ".csv";
      std::ofstream q(fs::path(out_dir) / ("quadrants" + tag));
      write_quadrants_csv(q, s.counts);
      std::ofstream m(fs::path(out_dir) / ("marginals" + tag));
      write_marginals_csv(m, s.marginals.i1, s.marginals.i2, "i1", "i2");
    }
    std::ofstream bin(fs::path(out_dir) / "histogram.bin", std::ios::binary);
    report.histogram.write_binary(bin);
    if (!bin) throw std::runtime_error("failed to write histogram dump");
  }
  if (g.json) {
    print_json(json);
  } else {
    print_report_text(report);
    if (!out_dir.empty()) std::cout << "outputs written to " << out_dir << '\n';
  }
  return kExitOk;
}

int cmd_latency_report(const Globals& g) {
  RunConfig rc = load_run_config(g);
  const LatencyBudget& b = rc.experiment.latency;
  const int measured = measure_processing_latency(rc.experiment.pipeline);
  if (g.json) {
    nlohmann::ordered_json j = to_json(b);
    j["measured_processing_cycles"] = measured;
    nlohmann::ordered_json map = nlohmann::ordered_json::array();
    for (int d = 1; d <= 16; ++d) {
      map.push_back({{"d", d}, {"tau_ro_ns", readout_time_ns(d)}, {"trigger_to_fb_ns", trigger_to_fb_delay(d, b)}});
    }
    j["delay_map"] = map;
    j["cable_length_m"] = cable_length(b.tau_g, 2.0);
    print_json(j);
  } else {
    write_latency_table(std::cout, b);
    std::cout << "pipeline processing latency (measured): " << measured << " cycles = "
              << measured * kClockPeriodNs << " ns\n";
    std::cout << "cable length for tau_g at eps_eff = 2: " << cable_length(b.tau_g, 2.0) << " m\n";
    std::cout << "ADC full scale: -1 V .. +1 V - 1 LSB (2^-13 V); +1 V is not representable\n";
  }
  return kExitOk;
}

int cmd_calibrate_noise(const Globals& g, double target, bool verify) {
  RunConfig rc = load_run_config(g);
  const double sigma = calibrate_noise(target, rc.experiment);
  ExperimentConfig c = rc.experiment;
  c.device.noise_sigma = sigma;
  const OverlapErrors analytic = analytic_overlap(c);
  nlohmann::ordered_json j = {{"target", target},
                              {"noise_sigma_v", sigma},
                              {"analytic_overlap", analytic.total()},
                              {"master_seed", c.master_seed}};
  if (verify) {
    const OverlapErrors mc = measure_overlap(c);
    j["verification"] = {{"repetitions", c.repetitions}, {"eps_g", mc.eps_g}, {"eps_e", mc.eps_e},
                         {"overlap", mc.total()}};
  }
  if (g.json) {
    print_json(j);
  } else {
    std::cout << "noise_sigma = " << sigma * 1e3 << " mV for overlap target " << pct(target) << '\n';
    if (verify) std::cout << "verification overlap (Monte Carlo) = " << pct(j["verification"]["overlap"].get<double>()) << '\n';
  }
  return kExitOk;
}

int cmd_readout_fidelity(const Globals& g, bool optimize) {
  RunConfig rc = load_run_config(g);
  resolve_noise(rc);
  const FidelityReport f = readout_fidelity(rc.experiment);
  nlohmann::ordered_json j = to_json(f);
  j["master_seed"] = rc.experiment.master_seed;
  j["repetitions"] = rc.experiment.repetitions;
  if (optimize) j["optimal_threshold_v"] = optimize_threshold(f);
  if (g.json) {
    print_json(j);
  } else {
    std::cout << "F_r = " << pct(f.f_r) << "  (P[E|no pulse] " << pct(f.p_e_no_pulse) << ", P[G|pi] "
              << pct(f.p_g_pi_pulse) << ")\n";
    std::cout << "budget 2 P_therm + P_decay + P_overlap = " << pct(f.budget()) << "  vs 1 - F_r = " << pct(1.0 - f.f_r)
              << '\n';
    if (optimize) {
      std::cout << "optimal threshold " << j["optimal_threshold_v"].get<double>() * 1e3 << " mV (current "
                << f.threshold_volts * 1e3 << " mV)\n";
    }
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cycle-accurate model of a low-latency qubit-readout feedback processor"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("-c,--config", g.config_path, "configuration file (key = value [unit])");
  auto* seed_opt = app.add_option("--seed", g.seed, "master seed (overrides QFB_SEED and the config)");
  app.add_option("-j,--jobs", g.jobs, "worker threads (default: all cores)")->check(CLI::PositiveNumber);
  app.add_flag("--json", g.json, "machine-readable output");

  std::string input, state, output;
  bool noisy = false, dump_stream = false;
  auto* sim = app.add_subcommand("simulate-pipeline", "per-cycle pipeline trace as CSV");
  sim->add_option("-i,--input", input, "stream CSV with 'raw' and 'tr' columns");
  sim->add_option("--state", state, "synthesize one readout with the qubit held in g or e");
  sim->add_flag("--noisy", noisy, "add the configured noise to the synthetic readout");
  sim->add_flag("--dump-stream", dump_stream, "write the ADC stream (t_ns,raw,tr) instead of the trace");
  sim->add_option("-o,--output", output, "output file (default: stdout)");

  long long repetitions = -1;
  std::string out_dir;
  auto* run = app.add_subcommand("run-experiment", "two-readout feedback experiment");
  run->add_option("-n,--repetitions", repetitions, "number of repetitions");
  run->add_option("-o,--out", out_dir, "directory for report.json, CSVs and histogram.bin");

  app.add_subcommand("latency-report", "latency budget and delay mapping");

  double target = 0.03;
  bool verify = false;
  auto* cal = app.add_subcommand("calibrate-noise", "noise level for a given readout overlap error");
  cal->add_option("-t,--target", target, "overlap error P(E|g) + P(G|e), fraction");
  cal->add_flag("--verify", verify, "re-measure the overlap by Monte Carlo");

  app.add_subcommand("optimize-threshold", "threshold maximizing the readout fidelity");
  app.add_subcommand("readout-fidelity", "single-shot readout fidelity and its error budget");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }
  g.seed_given = seed_opt->count() > 0;

  try {
    if (sim->parsed()) return cmd_simulate_pipeline(g, input, state, output, noisy, dump_stream);
    if (run->parsed()) return cmd_run_experiment(g, repetitions, out_dir);
    if (app.got_subcommand("latency-report")) return cmd_latency_report(g);
    if (cal->parsed()) return cmd_calibrate_noise(g, target, verify);
    if (app.got_subcommand("optimize-threshold")) return cmd_readout_fidelity(g, true);
    if (app.got_subcommand("readout-fidelity")) return cmd_readout_fidelity(g, false);
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const SequencingError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}
