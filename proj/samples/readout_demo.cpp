// Pushes a noiseless g and e readout through the pipeline and prints the
// cycles around the feedback decision, then runs a small feedback experiment.

#include <iostream>

#include "qfb/qfb.hpp"

int main() {
  using namespace qfb;
  ExperimentConfig cfg;
  cfg.device.noise_sigma = 0.0;
  cfg.device.t1 = std::numeric_limits<double>::infinity();

  const ReadoutLevels levels = noiseless_levels(cfg);
  const PipelineConfig pc = resolved_pipeline(cfg, levels);
  PulseSchedule sched;
  sched.t_begin = cfg.timing.t_begin;
  sched.t_end = 300e-9;
  sched.readouts = {{0.0, 160e-9}};

  for (auto [name, init] : {std::pair{"g", InitialState::kGround}, std::pair{"e", InitialState::kExcited}}) {
    const auto traj = sample_trajectory(cfg.device, sched, init, 1);
    const auto stream = synthesize_adc_stream(cfg.device, sched, traj, 2);
    const auto trace = run_stream(pc, stream.samples, stream.trigger);
    std::cout << "state " << name << '\n';
    for (const TickOutput& t : trace) {
      if (t.cycle < 18 || t.cycle > 26) continue;
      std::cout << "  cycle " << t.cycle << "  I " << t.i << "  I~ " << t.i_t << "  fb_time " << int{t.fb_time}
                << "  fb " << int{t.fb} << '\n';
    }
  }

  cfg.device = DeviceParams{};
  cfg.device.noise_sigma = calibrate_noise(0.03, cfg);
  cfg.repetitions = 1 << 14;
  cfg.feedback = FeedbackMode::kAlternate;
  const ExperimentReport r = run_experiment(cfg);
  for (const SegmentReport& s : r.segments) {
    std::cout << "feedback " << (s.feedback ? "on " : "off") << "  P[E1] " << s.p_e1.value << "  P[E2] "
              << s.p_e2.value << '\n';
  }
}
