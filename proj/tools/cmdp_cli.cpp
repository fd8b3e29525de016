// Command-line front end: experiments, oracle queries and instance generation.
#include "cmdp/experiment.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

constexpr int kPass = 0;
constexpr int kFail = 1;
constexpr int kConfigError = 2;

// Bad generator arguments are configuration errors, not run failures.
template <class Fn>
cmdp::Cmdp as_config_error(Fn&& make) {
  try {
    return make();
  } catch (const cmdp::Error& e) {
    throw cmdp::ConfigError(e.what());
  }
}

int cmd_solve(const std::string& config_path) {
  auto cfg = cmdp::load_experiment(config_path);
  auto res = cmdp::run_experiment(cfg);
  for (const auto& s : res.seeds) {
    if (!s.error.empty()) {
      std::cerr << "seed " << s.seed << ": " << s.error << '\n';
      continue;
    }
    std::cout << "seed " << s.seed << "  gap " << cmdp::format_double(s.gap) << " (bound "
              << cmdp::format_double(res.bounds.gap) << ")  violation " << cmdp::format_double(s.violation)
              << " (bound " << cmdp::format_double(res.bounds.violation) << ")  "
              << (s.pass_gap && s.pass_violation ? "PASS" : "FAIL") << '\n';
  }
  std::cout << "summary: " << res.summary_path << '\n';
  return res.pass ? kPass : kFail;
}

int cmd_oracle(const std::string& instance_path) {
  auto m = cmdp::load_cmdp(instance_path);
  auto sol = cmdp::solve_lp(m);
  std::cout << cmdp::lp_solution_json(sol).dump(2) << '\n';
  return sol.status == cmdp::LpStatus::optimal ? kPass : kFail;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Constrained MDP solvers and oracles"};
  app.require_subcommand(1);

  std::string config_path;
  auto* solve = app.add_subcommand("solve", "Run an experiment config and write CSVs plus summary.json");
  solve->add_option("--config", config_path, "Experiment JSON")->required();

  std::string instance_path;
  auto* oracle = app.add_subcommand("oracle", "Solve an instance by linear programming and print the result");
  oracle->add_option("--instance", instance_path, "Instance JSON")->required();

  std::uint64_t seed = 0;
  int states = 10, actions = 5;
  double gamma = 0.9, b_quantile = 0.5, b = 0.8;
  auto* gen = app.add_subcommand("gen", "Print a random instance");
  gen->add_option("--seed", seed)->required();
  gen->add_option("--states", states)->required()->check(CLI::PositiveNumber);
  gen->add_option("--actions", actions)->required()->check(CLI::PositiveNumber);
  gen->add_option("--gamma", gamma)->capture_default_str();
  gen->add_option("--b-quantile", b_quantile)->capture_default_str();

  auto* fig = app.add_subcommand("figure1", "Print the two-step nonconvexity example");
  fig->add_option("--gamma", gamma)->capture_default_str();
  fig->add_option("--b", b)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kPass : kConfigError;
  }

  try {
    if (*solve) return cmd_solve(config_path);
    if (*oracle) return cmd_oracle(instance_path);
    if (*gen) {
      auto make = [&] { return cmdp::random_cmdp(seed, states, actions, gamma, b_quantile); };
      std::cout << cmdp::cmdp_to_json(as_config_error(make));
      return kPass;
    }
    if (*fig) {
      std::cout << cmdp::cmdp_to_json(as_config_error([&] { return cmdp::figure1_cmdp(gamma, b); }));
      return kPass;
    }
  } catch (const cmdp::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFail;
  }
  return kConfigError;
}
