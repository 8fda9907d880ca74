#include "dicekit/analytic.hpp"
#include "dicekit/data.hpp"
#include "dicekit/envs.hpp"
#include "dicekit/errors.hpp"
#include "dicekit/harness.hpp"
#include "dicekit/mdp.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using namespace dicekit;

namespace {

nlohmann::json to_json_vec(const VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open " + path.string());
  return nlohmann::json::parse(in);
}

int cmd_run(const fs::path& config_path, const fs::path& out_dir, std::optional<std::size_t> n_seeds) {
  auto config = config_from_json(read_json(config_path));
  if (n_seeds) config.seeds = default_seeds(*n_seeds);
  fs::create_directories(out_dir);
  const auto records = run_experiment(config);
  nlohmann::json summary = nlohmann::json::array();
  for (const auto& r : records) {
    write_run_csv(r, out_dir / ("run_seed" + std::to_string(r.seed) + ".csv"));
    summary.push_back({{"seed", r.seed},
                       {"config_hash", r.config_hash},
                       {"final_mse_tau", r.diverged ? nlohmann::json(nullptr) : nlohmann::json(r.final_mse())},
                       {"diverged", r.diverged},
                       {"wall_seconds", r.wall_seconds}});
  }
  std::cout << summary.dump(2) << '\n';
  return 0;
}

int cmd_sweep(const fs::path& config_path, const fs::path& out_dir, std::optional<std::size_t> n_seeds,
              bool full_grid) {
  const auto doc = read_json(config_path);
  auto base = config_from_json(doc.contains("base") ? doc.at("base") : doc);
  if (n_seeds) base.seeds = default_seeds(*n_seeds);
  SweepGrid grid = doc.contains("grid") ? grid_from_json(doc.at("grid"), base.algo) : SweepGrid{};
  if (full_grid) {
    auto algos = grid.algos;
    grid = SweepGrid::standard(algos.empty() ? std::vector<Algo>{base.algo} : algos);
  }
  fs::create_directories(out_dir);
  const auto result = sweep(base, grid);
  write_sweep_summary(result, out_dir / "summary.csv");
  write_selection(result, out_dir / "selection.csv");
  write_long_format(result, out_dir / "long.csv");
  std::ofstream(out_dir / "sweep.json") << nlohmann::json{{"base", to_json(base)}, {"grid", to_json(grid)}}.dump(2)
                                        << '\n';
  std::cout << "algo,gamma,alpha,xi,mean_final_mse\n";
  for (const auto& s : result.best) {
    const auto& c = result.cells[s.cell];
    std::cout << to_string(s.algo) << ',' << s.gamma << ',' << c.config.lr.alpha << ',' << c.config.xi << ','
              << c.mean_final_mse << '\n';
  }
  return 0;
}

int cmd_ground_truth(const std::string& env_name, std::optional<double> gamma) {
  const auto env = make_env(env_name, gamma);
  const auto model = build_occupancy(env.mdp, env.policy, env.d_mu);
  const auto erg = check_ergodicity(model.P_pi);
  const nlohmann::json out{{"env", env.name},
                           {"gamma", model.gamma},
                           {"n_pairs", model.n_pairs()},
                           {"irreducible", erg.irreducible},
                           {"period", erg.period},
                           {"policy_value", policy_value(model, env.mdp)},
                           {"d_mu", to_json_vec(model.d_mu)},
                           {"d_gamma", to_json_vec(model.d_gamma)},
                           {"tau_star", to_json_vec(model.tau_star)}};
  std::cout << out.dump(2) << '\n';
  return 0;
}

// Consistency checks for one environment: fixed point of T, eigenvalue
// certificate and the closed-form limit.
struct Check {
  std::string name;
  std::string value;
  std::string tolerance;
  bool pass;
};

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  return buf;
}

int cmd_verify(const std::string& env_name, std::optional<double> gamma, const std::string& features,
               double lambda, double xi, bool as_json) {
  const auto env = make_env(env_name, gamma);
  const auto model = build_occupancy(env.mdp, env.policy, env.d_mu);
  const auto X = make_features(env, feature_kind_from_string(features));
  std::vector<Check> checks;

  const auto erg = check_ergodicity(model.P_pi);
  if (model.gamma == 1.0) {
    checks.push_back({"ergodic chain", erg.ergodic() ? "yes" : "no", "required at gamma = 1", erg.ergodic()});
  }
  const double residual = (apply_T(model, model.tau_star) - model.d_mu.cwiseProduct(model.tau_star)).norm();
  checks.push_back({"fixed point |T(D tau*) - D tau*|", sci(residual), "< 1e-8", residual < 1e-8});
  const double mass = model.d_mu.dot(model.tau_star);
  checks.push_back({"normalization |d_mu . tau* - 1|", sci(std::abs(mass - 1.0)), "< 1e-10",
                    std::abs(mass - 1.0) < 1e-10});

  std::optional<double> limit_mse;
  const auto eu = expected_update(model, X, lambda, xi);
  try {
    const auto cert = eigen_certificate(eu);
    checks.push_back({"max Re(eig G)", sci(cert.max_real_part), "< 0", cert.max_real_part < 0.0});
    checks.push_back({"det G nonzero", cert.det_nonzero ? "yes" : "no", "", cert.det_nonzero});
    const auto cf = closed_form(eu);
    const double gap_kkt = (cf.w_inf - cf.w_kkt).lpNorm<Eigen::Infinity>();
    const double gap_limit = (cf.w_inf - cf.w_limit).lpNorm<Eigen::Infinity>();
    checks.push_back({"block formula vs KKT solve", sci(gap_kkt), "< 1e-8", gap_kkt < 1e-8});
    checks.push_back({"block formula vs -G^-1 g", sci(gap_limit), "< 1e-8", gap_limit < 1e-8});
    limit_mse = mse_tau(X.X() * cf.w_inf, model);
  } catch (const AssumptionViolated& e) {
    checks.push_back({"assumptions on A and G", e.what(), "", false});
  }

  bool ok = true;
  for (const auto& c : checks) ok = ok && c.pass;

  if (as_json) {
    nlohmann::json out{{"env", env.name}, {"gamma", model.gamma}, {"features", features},
                       {"lambda", lambda},  {"xi", xi},          {"ok", ok}};
    for (const auto& c : checks) out["checks"].push_back({{"name", c.name}, {"value", c.value}, {"pass", c.pass}});
    if (limit_mse) out["limit_mse_tau"] = *limit_mse;
    std::cout << out.dump(2) << '\n';
    return ok ? 0 : 1;
  }

  std::cout << env.name << "  gamma=" << model.gamma << "  features=" << features << "  lambda=" << lambda
            << "  xi=" << xi << '\n';
  for (const auto& c : checks) {
    std::printf("  %-4s  %-34s %-12s %s\n", c.pass ? "PASS" : "FAIL", c.name.c_str(), c.value.c_str(),
                c.tolerance.c_str());
  }
  if (limit_mse) std::printf("  MSE(tau) of the GradientDICE limit: %.6g\n", *limit_mse);
  std::cout << (ok ? "all checks passed" : "some checks failed") << '\n';
  return ok ? 0 : 1;
}

int cmd_dataset(const std::string& env_name, std::optional<double> gamma, std::size_t n, std::uint64_t seed,
                double noise, const fs::path& out) {
  const auto env = make_env(env_name, gamma);
  const auto model = build_occupancy(env.mdp, env.policy, env.d_mu);
  save_dataset(sample_dataset(env, model, n, seed, noise), out);
  std::cout << "wrote " << n << " samples to " << out.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dicekit: density-ratio estimation for off-policy evaluation"};
  app.require_subcommand(1);

  fs::path config_path;
  fs::path out_dir = "results";
  std::optional<std::size_t> n_seeds;
  bool full_grid = false;
  bool as_json = false;
  std::string env_name;
  std::optional<double> gamma;
  std::string features = "tabular";
  double lambda = 1.0;
  double xi = 0.0;
  std::size_t n = 30000;
  std::uint64_t seed = 0;
  double noise = 0.0;
  fs::path dataset_out = "dataset.csv";

  auto* run = app.add_subcommand("run", "Run one experiment config (all seeds)");
  run->add_option("config", config_path, "Experiment config JSON")->required()->check(CLI::ExistingFile);
  run->add_option("--out", out_dir, "Output directory for per-run CSVs");
  run->add_option("--seeds", n_seeds, "Override with seeds 0..N-1");

  auto* sw = app.add_subcommand("sweep", "Grid sweep with per-(algo, gamma) selection");
  sw->add_option("config", config_path, "Sweep JSON: {\"base\": config, \"grid\": grid}")
      ->required()
      ->check(CLI::ExistingFile);
  sw->add_option("--out", out_dir, "Output directory");
  sw->add_option("--seeds", n_seeds, "Override with seeds 0..N-1");
  sw->add_flag("--full-grid", full_grid, "Use the full alpha/xi/gamma tuning grid");

  auto* verify = app.add_subcommand("verify", "Check occupancy, eigenvalue certificate and closed form");
  verify->add_option("env", env_name, "Environment name")->required();
  verify->add_option("--gamma", gamma, "Discount factor");
  verify->add_option("--features", features, "tabular | boyan-linear");
  verify->add_option("--lambda", lambda, "Penalty coefficient");
  verify->add_option("--xi", xi, "Ridge coefficient");
  verify->add_flag("--json", as_json, "Print JSON instead of a table");

  auto* gt = app.add_subcommand("ground-truth", "Print tau*, d_gamma and the policy value");
  gt->add_option("env", env_name, "Environment name")->required();
  gt->add_option("--gamma", gamma, "Discount factor");

  auto* data = app.add_subcommand("dataset", "Sample a dataset to CSV (+ JSON sidecar)");
  data->add_option("env", env_name, "Environment name")->required();
  data->add_option("--gamma", gamma, "Discount factor");
  data->add_option("-n", n, "Number of samples");
  data->add_option("--seed", seed, "Sampler seed");
  data->add_option("--noise", noise, "Reward noise standard deviation");
  data->add_option("--out", dataset_out, "Output CSV path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(config_path, out_dir, n_seeds);
    if (*sw) return cmd_sweep(config_path, out_dir, n_seeds, full_grid);
    if (*verify) return cmd_verify(env_name, gamma, features, lambda, xi, as_json);
    if (*gt) return cmd_ground_truth(env_name, gamma);
    if (*data) return cmd_dataset(env_name, gamma, n, seed, noise, dataset_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
