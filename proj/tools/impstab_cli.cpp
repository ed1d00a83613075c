// impstab: synthesize and verify periodic impulse feedback laws.

#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "impstab/app/config.hpp"
#include "impstab/app/tasks.hpp"

namespace {

using namespace impstab;
using namespace impstab::app;

struct Flags {
  std::string config;
  std::string out;
  std::string csv;
  std::optional<double> tol;
  std::optional<int> max_periods;
  std::optional<std::uint64_t> seed;
  std::string mode;
};

void add_common(CLI::App* sub, Flags& f) {
  sub->add_option("--config", f.config, "Config file (JSON)")->required();
  sub->add_option("--out", f.out, "Write the result record here instead of stdout");
  sub->add_option("--csv", f.csv, "Write the trajectory CSV here");
  sub->add_option("--tol", f.tol, "Riccati convergence tolerance");
  sub->add_option("--max-periods", f.max_periods, "Riccati period cap");
  sub->add_option("--seed", f.seed, "Random seed");
  sub->add_option("--mode", f.mode, "Weak observability mode")->check(CLI::IsMember({"search", "sufficient"}));
}

int emit(const ResultRecord& rec, const Flags& f) {
  const std::string text = rec.to_json().dump(2) + "\n";
  if (f.out.empty()) {
    std::cout << text;
  } else {
    std::ofstream o(f.out);
    if (!o) {
      std::cerr << "error: cannot write " << f.out << "\n";
      return kExitInternal;
    }
    o << text;
  }
  if (!f.csv.empty()) {
    if (!rec.trajectory) {
      std::cerr << "warning: task produced no trajectory; " << f.csv << " not written\n";
    } else {
      std::ofstream c(f.csv);
      if (!c) {
        std::cerr << "error: cannot write " << f.csv << "\n";
        return kExitInternal;
      }
      c << trajectory_csv(*rec.trajectory);
    }
  }
  return rec.exit_code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Periodic impulse feedback synthesis and verification"};
  app.require_subcommand(1);
  Flags flags;
  auto* synth = app.add_subcommand("synthesize", "Solve the periodic Riccati equation and synthesize feedback");
  auto* sim = app.add_subcommand("simulate", "Simulate the closed loop and write the trajectory");
  auto* obs = app.add_subcommand("check-obs", "Weak observability, steering and concatenated controls");
  auto* heat = app.add_subcommand("heat-analyze", "Rank tests and verdicts for heat truncations");
  auto* battery = app.add_subcommand("battery", "Random verdict-agreement battery");
  for (auto* s : {synth, sim, obs, heat, battery}) add_common(s, flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    RunConfig cfg = load_config(flags.config);
    Overrides o;
    o.tol = flags.tol;
    o.max_periods = flags.max_periods;
    o.seed = flags.seed;
    apply_overrides(cfg, o);
    std::optional<WeakObsMode> mode;
    if (flags.mode == "search") mode = WeakObsMode::kSearch;
    if (flags.mode == "sufficient") mode = WeakObsMode::kSufficient;

    ResultRecord rec;
    if (synth->parsed()) {
      rec = run_synthesize(cfg);
    } else if (sim->parsed()) {
      rec = run_simulate(cfg);
    } else if (obs->parsed()) {
      rec = run_check_obs(cfg, mode);
    } else if (heat->parsed()) {
      rec = run_heat_analyze(cfg);
    } else {
      rec = run_battery(cfg);
    }
    return emit(rec, flags);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
}
