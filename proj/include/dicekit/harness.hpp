#pragma once

#include "dicekit/data.hpp"
#include "dicekit/envs.hpp"
#include "dicekit/learners.hpp"
#include "dicekit/mdp.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace dicekit {

enum class GradientMode { Stochastic, Exact };

/// Seeds 0..n-1.
std::vector<std::uint64_t> default_seeds(std::size_t n = 30);

struct ExperimentConfig {
  std::string env = "boyan-continuing";
  Algo algo = Algo::GradientDICE;
  FeatureKind features = FeatureKind::Tabular;
  /// Unset means the environment default.
  std::optional<double> gamma;
  double lambda = 1.0;
  double xi = 0.0;
  LrSchedule lr = LrSchedule::constant(1.0 / 64.0);
  std::size_t steps = 30000;
  std::size_t eval_every = 300;
  std::vector<std::uint64_t> seeds = default_seeds();
  std::size_t dataset_size = 30000;
  /// Draw new transitions every step instead of cycling a fixed dataset.
  bool fresh = false;
  std::size_t batch_size = 1;
  GradientMode gradient = GradientMode::Stochastic;
  double reward_noise_std = 0.0;
  bool track_rho = false;
  double dual_lr_scale = 1.0;

  /// Initial parameters: empty picks the algorithm default (theta = 1 for
  /// GenDICE, zero otherwise), one value is broadcast, K values are used as is.
  std::vector<double> init_w;
  std::vector<double> init_kappa;
  double init_eta = 0.0;

  // Projected GradientDICE only; n is taken from `steps`.
  double radius_w = 10.0;
  double radius_y = 10.0;
  double proj_c = 1.0;
  double m_star = 1.0;

  /// Throws InvalidArgument on violated invariants.
  void validate() const;
};

nlohmann::json to_json(const ExperimentConfig& config);
ExperimentConfig config_from_json(const nlohmann::json& doc);
ExperimentConfig load_config(const std::filesystem::path& path);

/// FNV-1a of the compact JSON dump, as 16 hex digits.
std::string config_hash(const ExperimentConfig& config);

/// (1/N_sa) sum (pred - tau*)^2.
double mse_tau(const VectorXd& pred, const OccupancyModel& model);

/// (1/N) sum tau(s_i, a_i) r_i over the dataset.
double estimate_rho(const VectorXd& pred_tau, const Dataset& ds);

struct EvalPoint {
  std::size_t step = 0;
  double mse_tau = 0.0;
  std::optional<double> mse_rho;
};

struct RunRecord {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::vector<EvalPoint> evals;
  VectorXd final_w;
  VectorXd final_kappa;
  double final_eta = 0.0;
  bool diverged = false;
  std::size_t diverged_at = 0;
  double wall_seconds = 0.0;

  /// +inf for diverged runs.
  double final_mse() const;
};

/// Variance of the MSE curve over its first / last quarter of evaluation
/// points. +inf for diverged runs.
double first_quartile_variance(const RunRecord& record);
double last_quartile_variance(const RunRecord& record);

/// Evaluates at step 0, every eval_every steps and at the final step.
RunRecord run_single(const ExperimentConfig& config, std::uint64_t seed);
std::vector<RunRecord> run_experiment(const ExperimentConfig& config);

/// step,mse_tau[,mse_rho]; contains nothing time-dependent.
std::string run_csv(const RunRecord& record);
void write_run_csv(const RunRecord& record, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

struct SweepGrid {
  std::vector<Algo> algos;
  std::vector<double> alphas;
  std::vector<double> xis;
  std::vector<double> gammas;
  /// Tune xi only in the gamma = 1 setting; other settings keep the base xi.
  bool xi_only_at_gamma_one = true;

  /// alpha in {4^-6..4^-1}, xi in {0, 1e-3, 1e-2, 1e-1},
  /// gamma in {0.1, 0.3, 0.5, 0.7, 0.9, 1}.
  static SweepGrid standard(std::vector<Algo> algos);
};

nlohmann::json to_json(const SweepGrid& grid);
SweepGrid grid_from_json(const nlohmann::json& doc, Algo fallback_algo);

struct SweepCell {
  ExperimentConfig config;
  std::vector<RunRecord> records;
  double mean_final_mse = 0.0;
  double std_final_mse = 0.0;
  /// std / mean of the final MSE across seeds.
  double cv_final_mse = 0.0;
  double mean_first_quartile_var = 0.0;
  double mean_last_quartile_var = 0.0;
  std::size_t n_diverged = 0;
};

/// Fills the summary statistics from `records`. Any diverged seed makes the
/// cell score +inf.
void summarize(SweepCell& cell);

struct Selection {
  Algo algo;
  double gamma;
  std::size_t cell;
};

struct SweepResult {
  std::vector<SweepCell> cells;
  std::vector<Selection> best;

  const SweepCell& best_cell(Algo algo, double gamma) const;
};

/// Boyan environments switch to the episodic chain for gamma < 1 and the
/// continuing chain for gamma = 1. Other environments keep their name.
std::string env_for_gamma(const std::string& env, double gamma);

/// Cells run in parallel on min(DICEKIT_THREADS, hardware) workers.
SweepResult sweep(const ExperimentConfig& base, const SweepGrid& grid);

/// Cells whose mean final MSE is the minimum per (algo, gamma).
std::vector<Selection> select_best(const std::vector<SweepCell>& cells);

std::size_t worker_count();

void write_sweep_summary(const SweepResult& result, const std::filesystem::path& path);
void write_selection(const SweepResult& result, const std::filesystem::path& path);
/// algo,gamma,alpha,xi,seed,step,mse_tau
void write_long_format(const SweepResult& result, const std::filesystem::path& path);

}  // namespace dicekit
