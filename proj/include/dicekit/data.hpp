#pragma once

#include "dicekit/envs.hpp"
#include "dicekit/mdp.hpp"

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace dicekit {

/// One training tuple. (init_s, init_a) ~ mu0 is drawn independently of the
/// transition (s, a) ~ d_mu, s_next ~ p(.|s,a), a_next ~ pi(.|s_next).
struct TransitionSample {
  std::uint32_t init_s = 0;
  std::uint32_t init_a = 0;
  std::uint32_t s = 0;
  std::uint32_t a = 0;
  double r = 0.0;
  std::uint32_t s_next = 0;
  std::uint32_t a_next = 0;

  friend bool operator==(const TransitionSample&, const TransitionSample&) = default;
};

/// Flattened pair indices of a sample for an MDP with `n_actions` actions.
struct PairIndices {
  std::size_t init;
  std::size_t cur;
  std::size_t next;
};
inline PairIndices pair_indices(const TransitionSample& x, std::size_t n_actions) {
  return {x.init_s * n_actions + x.init_a, x.s * n_actions + x.a, x.s_next * n_actions + x.a_next};
}

struct Dataset {
  std::vector<TransitionSample> samples;
  std::uint64_t seed = 0;
  std::string source;
  double reward_noise_std = 0.0;
  std::size_t n_actions = 1;

  std::size_t size() const { return samples.size(); }
};

/// Stateful i.i.d. sampler; `sample_dataset` drains one of these.
class TransitionSampler {
 public:
  TransitionSampler(const OccupancyModel& model, const FiniteMdp& mdp, const PolicyTable& policy,
                    std::uint64_t seed, double reward_noise_std = 0.0);

  TransitionSample draw();

 private:
  const FiniteMdp* mdp_;
  std::mt19937_64 rng_;
  double noise_std_;
  std::discrete_distribution<std::size_t> init_dist_;
  std::discrete_distribution<std::size_t> pair_dist_;
  std::vector<std::discrete_distribution<std::size_t>> next_state_;
  std::vector<std::discrete_distribution<std::size_t>> next_action_;
  std::normal_distribution<double> noise_;
};

Dataset sample_dataset(const OccupancyModel& model, const FiniteMdp& mdp, const PolicyTable& policy,
                       std::size_t n, std::uint64_t seed, double reward_noise_std = 0.0,
                       std::string source = {});

inline Dataset sample_dataset(const EnvInstance& env, const OccupancyModel& model, std::size_t n,
                              std::uint64_t seed, double reward_noise_std = 0.0) {
  return sample_dataset(model, env.mdp, env.policy, n, seed, reward_noise_std, env.name);
}

/// Cycles through a dataset in shuffled epochs. The shuffle is seeded from
/// the dataset seed, so two streams over the same dataset agree. The last
/// batch of an epoch is short when the batch size does not divide n.
class MinibatchStream {
 public:
  MinibatchStream(const Dataset& ds, std::size_t batch_size);

  std::span<const TransitionSample> next();
  std::size_t batches_per_epoch() const;
  std::size_t epoch() const { return epoch_; }

 private:
  void reshuffle();

  const Dataset* ds_;
  std::size_t batch_size_;
  std::mt19937_64 rng_;
  std::vector<std::size_t> order_;
  std::vector<TransitionSample> batch_;
  std::size_t cursor_ = 0;
  std::size_t epoch_ = 0;
};

/// CSV with header init_s,init_a,s,a,r,s_next,a_next plus a JSON sidecar
/// {seed, source, n, reward_noise_std} written next to it.
void save_dataset(const Dataset& ds, const std::filesystem::path& csv_path);
Dataset load_dataset(const std::filesystem::path& csv_path, std::size_t n_actions);
std::filesystem::path sidecar_path(const std::filesystem::path& csv_path);

}  // namespace dicekit
