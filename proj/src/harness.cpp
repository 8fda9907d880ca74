#include "dicekit/harness.hpp"

#include "dicekit/errors.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <thread>

namespace dicekit {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::string fmt(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[32];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

nlohmann::json lr_to_json(const LrSchedule& lr) {
  if (lr.kind == LrSchedule::Kind::Constant) return {{"kind", "constant"}, {"alpha", lr.alpha}};
  return {{"kind", "robbins-monro"}, {"alpha", lr.alpha}, {"power", lr.power}};
}

LrSchedule lr_from_json(const nlohmann::json& j) {
  if (j.is_number()) return LrSchedule::constant(j.get<double>());
  const auto kind = j.value("kind", std::string("constant"));
  const double alpha = j.at("alpha").get<double>();
  if (kind == "constant") return LrSchedule::constant(alpha);
  if (kind == "robbins-monro" || kind == "RobbinsMonro") return LrSchedule::robbins_monro(alpha, j.value("power", 1.0));
  throw InvalidArgument("unknown learning-rate kind '" + kind + "'");
}

std::vector<double> number_or_list(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return {};
  const auto& v = j.at(key);
  if (v.is_number()) return {v.get<double>()};
  return v.get<std::vector<double>>();
}

VectorXd init_vector(const std::vector<double>& values, std::size_t dim, double fallback) {
  const auto K = static_cast<Eigen::Index>(dim);
  if (values.empty()) return VectorXd::Constant(K, fallback);
  if (values.size() == 1) return VectorXd::Constant(K, values.front());
  if (values.size() != dim) {
    throw InvalidArgument("initial vector has " + std::to_string(values.size()) + " entries, expected " +
                          std::to_string(dim));
  }
  return Eigen::Map<const VectorXd>(values.data(), K);
}

// Everything a seed needs that does not depend on the seed.
struct RunContext {
  EnvInstance env;
  OccupancyModel model;
  FeatureMap X;
  double rho_true = 0.0;
};

RunContext make_context(const ExperimentConfig& config) {
  auto env = make_env(config.env, config.gamma);
  auto model = build_occupancy(env.mdp, env.policy, env.d_mu);
  auto X = make_features(env, config.features);
  const double rho = policy_value(model, env.mdp);
  return {std::move(env), std::move(model), std::move(X), rho};
}

double quartile_variance(const RunRecord& r, bool last) {
  if (r.diverged) return kInf;
  const std::size_t n = r.evals.size();
  if (n == 0) return 0.0;
  const std::size_t q = std::max<std::size_t>(1, n / 4);
  const std::size_t begin = last ? n - q : 0;
  double mean = 0.0;
  for (std::size_t i = begin; i < begin + q; ++i) mean += r.evals[i].mse_tau;
  mean /= static_cast<double>(q);
  double var = 0.0;
  for (std::size_t i = begin; i < begin + q; ++i) var += (r.evals[i].mse_tau - mean) * (r.evals[i].mse_tau - mean);
  return var / static_cast<double>(q);
}

RunRecord run_with_context(const ExperimentConfig& config, const RunContext& ctx, std::uint64_t seed) {
  const auto t_start = std::chrono::steady_clock::now();
  const auto& model = ctx.model;
  const auto& X = ctx.X;
  const std::size_t K = X.dim();
  const std::size_t A = ctx.env.mdp.n_actions();
  const bool projected = config.algo == Algo::ProjectedGradientDICE;
  const bool exact = config.gradient == GradientMode::Exact;

  RunRecord rec;
  rec.config_hash = config_hash(config);
  rec.seed = seed;

  std::optional<Dataset> ds;
  std::optional<MinibatchStream> stream;
  std::optional<TransitionSampler> sampler;
  std::vector<TransitionSample> fresh_batch;
  if (!exact) {
    if (config.fresh) {
      sampler.emplace(model, ctx.env.mdp, ctx.env.policy, seed, config.reward_noise_std);
    } else {
      ds = sample_dataset(ctx.env, model, config.dataset_size, seed, config.reward_noise_std);
      stream.emplace(*ds, config.batch_size);
    }
  }
  std::optional<Dataset> rho_ds;
  if (config.track_rho) {
    if (ds) {
      rho_ds = ds;
    } else {
      rho_ds = sample_dataset(ctx.env, model, config.dataset_size, seed ^ 0x5bd1e995ULL, config.reward_noise_std);
    }
  }

  LearnerState state = LearnerState::zeros(K, A, model.gamma, config.lambda, config.xi, config.lr);
  state.dual_lr_scale = config.dual_lr_scale;
  state.w = init_vector(config.init_w, K, config.algo == Algo::GenDICE ? 1.0 : 0.0);
  state.kappa = init_vector(config.init_kappa, K, 0.0);
  state.eta = config.init_eta;

  std::optional<ProjectedGradientDice> proj;
  if (projected) {
    if (exact) throw InvalidArgument("exact gradients are not available for Projected GradientDICE");
    ProjectedConfig pc;
    pc.lambda = config.lambda;
    pc.xi = config.xi;
    pc.radius_w = config.radius_w;
    pc.radius_y = config.radius_y;
    pc.c = config.proj_c;
    pc.m_star = config.m_star;
    pc.n = config.steps;
    proj.emplace(X, A, model.gamma, pc);
  }

  auto evaluate = [&](std::size_t step) {
    const LearnerState& s = proj ? proj->state() : state;
    const VectorXd pred = predict_tau(s, X, config.algo);
    EvalPoint e;
    e.step = step;
    e.mse_tau = mse_tau(pred, model);
    if (rho_ds) {
      const double err = estimate_rho(pred, *rho_ds) - ctx.rho_true;
      e.mse_rho = err * err;
    }
    rec.evals.push_back(e);
  };

  evaluate(0);
  try {
    for (std::size_t t = 1; t <= config.steps; ++t) {
      if (exact) {
        expected_step(config.algo, state, model, X);
      } else {
        std::span<const TransitionSample> batch;
        if (sampler) {
          fresh_batch.clear();
          for (std::size_t i = 0; i < config.batch_size; ++i) fresh_batch.push_back(sampler->draw());
          batch = fresh_batch;
        } else {
          batch = stream->next();
        }
        if (proj) {
          for (const auto& x : batch) proj->step(x);
        } else {
          batch_step(config.algo, state, batch, X);
        }
      }
      if (t % config.eval_every == 0 || t == config.steps) evaluate(t);
    }
  } catch (const Diverged&) {
    rec.diverged = true;
    rec.diverged_at = static_cast<std::size_t>((proj ? proj->state() : state).t);
  }

  const LearnerState& s = proj ? proj->state() : state;
  rec.final_w = proj ? proj->avg_w() : s.w;
  rec.final_kappa = s.kappa;
  rec.final_eta = s.eta;
  rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return rec;
}

}  // namespace

std::vector<std::uint64_t> default_seeds(std::size_t n) {
  std::vector<std::uint64_t> seeds(n);
  for (std::size_t i = 0; i < n; ++i) seeds[i] = i;
  return seeds;
}

void ExperimentConfig::validate() const {
  if (!(lambda > 0.0)) throw InvalidArgument("lambda must be positive");
  if (!(xi >= 0.0)) throw InvalidArgument("xi must be non-negative");
  if (eval_every < 1) throw InvalidArgument("eval_every must be at least 1");
  if (steps < eval_every) throw InvalidArgument("steps must be at least eval_every");
  if (seeds.empty()) throw InvalidArgument("seeds must be nonempty");
  if (dataset_size < 1) throw InvalidArgument("dataset_size must be at least 1");
  if (batch_size < 1) throw InvalidArgument("batch_size must be at least 1");
  if (reward_noise_std < 0.0) throw InvalidArgument("reward_noise_std must be non-negative");
  if (!(dual_lr_scale > 0.0)) throw InvalidArgument("dual_lr_scale must be positive");
  if (algo == Algo::ProjectedGradientDICE) {
    if (!(radius_w > 0.0) || !(radius_y > 0.0)) throw InvalidArgument("projection radii must be positive");
    if (!(proj_c > 0.0) || !(m_star > 0.0)) throw InvalidArgument("proj_c and m_star must be positive");
    if (batch_size != 1) throw InvalidArgument("Projected GradientDICE runs with batch size 1");
  }
}

nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["env"] = c.env;
  j["algo"] = to_string(c.algo);
  j["features"] = to_string(c.features);
  j["gamma"] = c.gamma ? nlohmann::json(*c.gamma) : nlohmann::json(nullptr);
  j["lambda"] = c.lambda;
  j["xi"] = c.xi;
  j["lr"] = lr_to_json(c.lr);
  j["steps"] = c.steps;
  j["eval_every"] = c.eval_every;
  j["seeds"] = c.seeds;
  j["dataset_size"] = c.dataset_size;
  j["fresh"] = c.fresh;
  j["batch_size"] = c.batch_size;
  j["gradient"] = c.gradient == GradientMode::Exact ? "exact" : "stochastic";
  j["reward_noise_std"] = c.reward_noise_std;
  j["track_rho"] = c.track_rho;
  j["dual_lr_scale"] = c.dual_lr_scale;
  j["init_w"] = c.init_w;
  j["init_kappa"] = c.init_kappa;
  j["init_eta"] = c.init_eta;
  j["projected"] = {{"radius_w", c.radius_w}, {"radius_y", c.radius_y}, {"c", c.proj_c}, {"m_star", c.m_star}};
  return j;
}

ExperimentConfig config_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  try {
    c.env = j.value("env", c.env);
    if (j.contains("algo")) c.algo = algo_from_string(j.at("algo").get<std::string>());
    if (j.contains("features")) c.features = feature_kind_from_string(j.at("features").get<std::string>());
    if (j.contains("gamma") && !j.at("gamma").is_null()) c.gamma = j.at("gamma").get<double>();
    c.lambda = j.value("lambda", c.lambda);
    c.xi = j.value("xi", c.xi);
    if (j.contains("lr")) c.lr = lr_from_json(j.at("lr"));
    c.steps = j.value("steps", c.steps);
    c.eval_every = j.value("eval_every", c.eval_every);
    if (j.contains("seeds")) {
      const auto& s = j.at("seeds");
      c.seeds = s.is_number() ? default_seeds(s.get<std::size_t>()) : s.get<std::vector<std::uint64_t>>();
    }
    c.dataset_size = j.value("dataset_size", c.dataset_size);
    c.fresh = j.value("fresh", c.fresh);
    c.batch_size = j.value("batch_size", c.batch_size);
    const auto mode = j.value("gradient", std::string("stochastic"));
    if (mode == "exact") {
      c.gradient = GradientMode::Exact;
    } else if (mode != "stochastic") {
      throw InvalidArgument("gradient must be 'stochastic' or 'exact'");
    }
    c.reward_noise_std = j.value("reward_noise_std", c.reward_noise_std);
    c.track_rho = j.value("track_rho", c.track_rho);
    c.dual_lr_scale = j.value("dual_lr_scale", c.dual_lr_scale);
    c.init_w = number_or_list(j, "init_w");
    c.init_kappa = number_or_list(j, "init_kappa");
    c.init_eta = j.value("init_eta", c.init_eta);
    if (j.contains("projected")) {
      const auto& p = j.at("projected");
      c.radius_w = p.value("radius_w", c.radius_w);
      c.radius_y = p.value("radius_y", c.radius_y);
      c.proj_c = p.value("c", c.proj_c);
      c.m_star = p.value("m_star", c.m_star);
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("bad experiment config: ") + e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open " + path.string());
  return config_from_json(nlohmann::json::parse(in));
}

std::string config_hash(const ExperimentConfig& config) {
  const std::string text = to_json(config).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

double mse_tau(const VectorXd& pred, const OccupancyModel& model) {
  if (pred.size() != model.tau_star.size()) throw InvalidArgument("mse_tau: size mismatch");
  return (pred - model.tau_star).squaredNorm() / static_cast<double>(pred.size());
}

double estimate_rho(const VectorXd& pred_tau, const Dataset& ds) {
  if (ds.size() == 0) return 0.0;
  double total = 0.0;
  for (const auto& x : ds.samples) {
    total += pred_tau(static_cast<Eigen::Index>(x.s * ds.n_actions + x.a)) * x.r;
  }
  return total / static_cast<double>(ds.size());
}

double RunRecord::final_mse() const {
  if (diverged || evals.empty()) return kInf;
  return evals.back().mse_tau;
}

double first_quartile_variance(const RunRecord& record) { return quartile_variance(record, false); }
double last_quartile_variance(const RunRecord& record) { return quartile_variance(record, true); }

RunRecord run_single(const ExperimentConfig& config, std::uint64_t seed) {
  config.validate();
  return run_with_context(config, make_context(config), seed);
}

std::vector<RunRecord> run_experiment(const ExperimentConfig& config) {
  config.validate();
  const RunContext ctx = make_context(config);
  std::vector<RunRecord> out;
  out.reserve(config.seeds.size());
  for (const auto seed : config.seeds) out.push_back(run_with_context(config, ctx, seed));
  return out;
}

std::string run_csv(const RunRecord& record) {
  const bool rho = !record.evals.empty() && record.evals.front().mse_rho.has_value();
  std::ostringstream out;
  out << (rho ? "step,mse_tau,mse_rho\n" : "step,mse_tau\n");
  for (const auto& e : record.evals) {
    out << e.step << ',' << fmt(e.mse_tau);
    if (rho) out << ',' << fmt(e.mse_rho.value_or(kInf));
    out << '\n';
  }
  return out.str();
}

void write_run_csv(const RunRecord& record, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidArgument("cannot write " + path.string());
  out << run_csv(record);
}

SweepGrid SweepGrid::standard(std::vector<Algo> algos) {
  SweepGrid g;
  g.algos = std::move(algos);
  for (int k = 6; k >= 1; --k) g.alphas.push_back(std::pow(4.0, -k));
  g.xis = {0.0, 1e-3, 1e-2, 1e-1};
  g.gammas = {0.1, 0.3, 0.5, 0.7, 0.9, 1.0};
  return g;
}

nlohmann::json to_json(const SweepGrid& grid) {
  nlohmann::json algos = nlohmann::json::array();
  for (const auto a : grid.algos) algos.push_back(to_string(a));
  return {{"algos", algos},
          {"alpha", grid.alphas},
          {"xi", grid.xis},
          {"gamma", grid.gammas},
          {"xi_only_at_gamma_one", grid.xi_only_at_gamma_one}};
}

SweepGrid grid_from_json(const nlohmann::json& j, Algo fallback_algo) {
  SweepGrid g;
  if (j.value("preset", std::string()) == "standard") g = SweepGrid::standard({fallback_algo});
  if (j.contains("algos")) {
    g.algos.clear();
    for (const auto& a : j.at("algos")) g.algos.push_back(algo_from_string(a.get<std::string>()));
  }
  if (g.algos.empty()) g.algos = {fallback_algo};
  if (j.contains("alpha")) g.alphas = j.at("alpha").get<std::vector<double>>();
  if (j.contains("xi")) g.xis = j.at("xi").get<std::vector<double>>();
  if (j.contains("gamma")) g.gammas = j.at("gamma").get<std::vector<double>>();
  g.xi_only_at_gamma_one = j.value("xi_only_at_gamma_one", g.xi_only_at_gamma_one);
  return g;
}

void summarize(SweepCell& cell) {
  const auto n = static_cast<double>(cell.records.size());
  cell.n_diverged = 0;
  double sum = 0.0, sq = 0.0, fq = 0.0, lq = 0.0;
  for (const auto& r : cell.records) {
    if (r.diverged) ++cell.n_diverged;
    const double m = r.final_mse();
    sum += m;
    sq += m * m;
    fq += first_quartile_variance(r);
    lq += last_quartile_variance(r);
  }
  if (cell.records.empty() || cell.n_diverged > 0) {
    cell.mean_final_mse = cell.std_final_mse = cell.cv_final_mse = kInf;
    cell.mean_first_quartile_var = cell.mean_last_quartile_var = kInf;
    return;
  }
  cell.mean_final_mse = sum / n;
  cell.std_final_mse = std::sqrt(std::max(0.0, sq / n - cell.mean_final_mse * cell.mean_final_mse));
  cell.cv_final_mse = cell.mean_final_mse > 0.0 ? cell.std_final_mse / cell.mean_final_mse : 0.0;
  cell.mean_first_quartile_var = fq / n;
  cell.mean_last_quartile_var = lq / n;
}

const SweepCell& SweepResult::best_cell(Algo algo, double gamma) const {
  for (const auto& s : best) {
    if (s.algo == algo && s.gamma == gamma) return cells.at(s.cell);
  }
  throw InvalidArgument("no selection for " + to_string(algo) + " at gamma " + fmt(gamma));
}

std::string env_for_gamma(const std::string& env, double gamma) {
  if (env.starts_with("boyan")) return gamma < 1.0 ? "boyan-episodic" : "boyan-continuing";
  return env;
}

std::size_t worker_count() {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* cap = std::getenv("DICEKIT_THREADS")) {
    const long v = std::strtol(cap, nullptr, 10);
    if (v >= 1) n = std::min(n, static_cast<std::size_t>(v));
  }
  return n;
}

std::vector<Selection> select_best(const std::vector<SweepCell>& cells) {
  std::vector<Selection> best;
  std::map<std::pair<int, double>, std::size_t> index;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const auto& c = cells[i].config;
    const auto key = std::make_pair(static_cast<int>(c.algo), c.gamma.value_or(-1.0));
    const auto it = index.find(key);
    if (it == index.end()) {
      index.emplace(key, best.size());
      best.push_back({c.algo, key.second, i});
    } else if (cells[i].mean_final_mse < cells[best[it->second].cell].mean_final_mse) {
      best[it->second].cell = i;
    }
  }
  return best;
}

SweepResult sweep(const ExperimentConfig& base, const SweepGrid& grid) {
  base.validate();
  const auto algos = grid.algos.empty() ? std::vector<Algo>{base.algo} : grid.algos;
  const auto gammas = grid.gammas.empty() ? std::vector<double>{make_env(base.env, base.gamma).mdp.gamma()}
                                          : grid.gammas;
  SweepResult result;
  for (const auto algo : algos) {
    for (const double gamma : gammas) {
      std::vector<double> xis = {base.xi};
      if (!grid.xis.empty() && (!grid.xi_only_at_gamma_one || gamma == 1.0)) xis = grid.xis;
      for (const double xi : xis) {
        const std::size_t n_alpha = std::max<std::size_t>(1, grid.alphas.size());
        for (std::size_t k = 0; k < n_alpha; ++k) {
          SweepCell cell;
          cell.config = base;
          cell.config.algo = algo;
          cell.config.gamma = gamma;
          cell.config.env = env_for_gamma(base.env, gamma);
          cell.config.xi = xi;
          if (!grid.alphas.empty()) cell.config.lr = LrSchedule::constant(grid.alphas[k]);
          result.cells.push_back(std::move(cell));
        }
      }
    }
  }

  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(result.cells.size());
  auto worker = [&] {
    for (std::size_t i = next++; i < result.cells.size(); i = next++) {
      try {
        auto& cell = result.cells[i];
        cell.records = run_experiment(cell.config);
        summarize(cell);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t n_workers = std::min(worker_count(), result.cells.size());
  if (n_workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < n_workers; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  result.best = select_best(result.cells);
  return result;
}

void write_sweep_summary(const SweepResult& result, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidArgument("cannot write " + path.string());
  out << "algo,gamma,env,alpha,xi,mean_final_mse,std_final_mse,cv_final_mse,mean_first_quartile_var,"
         "mean_last_quartile_var,n_seeds,n_diverged,selected\n";
  for (std::size_t i = 0; i < result.cells.size(); ++i) {
    const auto& c = result.cells[i];
    const bool selected = std::any_of(result.best.begin(), result.best.end(),
                                      [&](const Selection& s) { return s.cell == i; });
    out << to_string(c.config.algo) << ',' << fmt(c.config.gamma.value_or(-1.0)) << ',' << c.config.env << ','
        << fmt(c.config.lr.alpha) << ',' << fmt(c.config.xi) << ',' << fmt(c.mean_final_mse) << ','
        << fmt(c.std_final_mse) << ',' << fmt(c.cv_final_mse) << ',' << fmt(c.mean_first_quartile_var) << ','
        << fmt(c.mean_last_quartile_var) << ',' << c.records.size() << ',' << c.n_diverged << ','
        << (selected ? 1 : 0) << '\n';
  }
}

void write_selection(const SweepResult& result, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidArgument("cannot write " + path.string());
  out << "algo,gamma,env,alpha,xi,mean_final_mse,mean_last_quartile_var,n_diverged\n";
  for (const auto& s : result.best) {
    const auto& c = result.cells[s.cell];
    out << to_string(s.algo) << ',' << fmt(s.gamma) << ',' << c.config.env << ',' << fmt(c.config.lr.alpha) << ','
        << fmt(c.config.xi) << ',' << fmt(c.mean_final_mse) << ',' << fmt(c.mean_last_quartile_var) << ','
        << c.n_diverged << '\n';
  }
}

void write_long_format(const SweepResult& result, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidArgument("cannot write " + path.string());
  out << "algo,gamma,alpha,xi,seed,step,mse_tau\n";
  for (const auto& c : result.cells) {
    const std::string prefix = to_string(c.config.algo) + ',' + fmt(c.config.gamma.value_or(-1.0)) + ',' +
                               fmt(c.config.lr.alpha) + ',' + fmt(c.config.xi) + ',';
    for (const auto& r : c.records) {
      for (const auto& e : r.evals) out << prefix << r.seed << ',' << e.step << ',' << fmt(e.mse_tau) << '\n';
    }
  }
}

}  // namespace dicekit
