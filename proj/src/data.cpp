#include "dicekit/data.hpp"

#include "dicekit/errors.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace dicekit {

namespace {

template <typename Vec>
std::discrete_distribution<std::size_t> categorical(const Vec& weights) {
  std::vector<double> w(static_cast<std::size_t>(weights.size()));
  for (Eigen::Index i = 0; i < weights.size(); ++i) w[static_cast<std::size_t>(i)] = weights(i);
  return std::discrete_distribution<std::size_t>(w.begin(), w.end());
}

std::string format_double(double v) {
  char buf[32];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

}  // namespace

TransitionSampler::TransitionSampler(const OccupancyModel& model, const FiniteMdp& mdp,
                                     const PolicyTable& policy, std::uint64_t seed,
                                     double reward_noise_std)
    : mdp_(&mdp),
      rng_(seed),
      noise_std_(reward_noise_std),
      init_dist_(categorical(model.mu0)),
      pair_dist_(categorical(model.d_mu)),
      noise_(0.0, reward_noise_std > 0.0 ? reward_noise_std : 1.0) {
  if (reward_noise_std < 0.0) throw InvalidArgument("reward_noise_std must be non-negative");
  for (std::size_t i = 0; i < mdp.n_pairs(); ++i) {
    next_state_.push_back(categorical(mdp.transition().row(static_cast<Eigen::Index>(i))));
  }
  for (std::size_t s = 0; s < mdp.n_states(); ++s) {
    next_action_.push_back(categorical(policy.probs().row(static_cast<Eigen::Index>(s))));
  }
}

TransitionSample TransitionSampler::draw() {
  const std::size_t A = mdp_->n_actions();
  TransitionSample x;
  const std::size_t init = init_dist_(rng_);
  x.init_s = static_cast<std::uint32_t>(init / A);
  x.init_a = static_cast<std::uint32_t>(init % A);
  const std::size_t pair = pair_dist_(rng_);
  x.s = static_cast<std::uint32_t>(pair / A);
  x.a = static_cast<std::uint32_t>(pair % A);
  x.r = mdp_->reward()(static_cast<Eigen::Index>(pair));
  if (noise_std_ > 0.0) x.r += noise_(rng_);
  x.s_next = static_cast<std::uint32_t>(next_state_[pair](rng_));
  x.a_next = static_cast<std::uint32_t>(next_action_[x.s_next](rng_));
  return x;
}

Dataset sample_dataset(const OccupancyModel& model, const FiniteMdp& mdp, const PolicyTable& policy,
                       std::size_t n, std::uint64_t seed, double reward_noise_std, std::string source) {
  if (n == 0) throw InvalidArgument("sample_dataset: n must be at least 1");
  TransitionSampler sampler(model, mdp, policy, seed, reward_noise_std);
  Dataset ds;
  ds.seed = seed;
  ds.source = std::move(source);
  ds.reward_noise_std = reward_noise_std;
  ds.n_actions = mdp.n_actions();
  ds.samples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) ds.samples.push_back(sampler.draw());
  return ds;
}

MinibatchStream::MinibatchStream(const Dataset& ds, std::size_t batch_size)
    : ds_(&ds), batch_size_(batch_size), rng_(ds.seed ^ 0x9e3779b97f4a7c15ULL), order_(ds.size()) {
  if (batch_size == 0) throw InvalidArgument("MinibatchStream: batch_size must be at least 1");
  if (ds.size() == 0) throw InvalidArgument("MinibatchStream: empty dataset");
  reshuffle();
}

void MinibatchStream::reshuffle() {
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  std::shuffle(order_.begin(), order_.end(), rng_);
  cursor_ = 0;
}

std::size_t MinibatchStream::batches_per_epoch() const {
  return (ds_->size() + batch_size_ - 1) / batch_size_;
}

std::span<const TransitionSample> MinibatchStream::next() {
  if (cursor_ == order_.size()) {
    ++epoch_;
    reshuffle();
  }
  const std::size_t end = std::min(cursor_ + batch_size_, order_.size());
  batch_.clear();
  for (std::size_t i = cursor_; i < end; ++i) batch_.push_back(ds_->samples[order_[i]]);
  cursor_ = end;
  return batch_;
}

std::filesystem::path sidecar_path(const std::filesystem::path& csv_path) {
  auto p = csv_path;
  p.replace_extension(".json");
  return p;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& csv_path) {
  std::ofstream out(csv_path);
  if (!out) throw InvalidArgument("cannot open " + csv_path.string() + " for writing");
  out << "init_s,init_a,s,a,r,s_next,a_next\n";
  for (const auto& x : ds.samples) {
    out << x.init_s << ',' << x.init_a << ',' << x.s << ',' << x.a << ',' << format_double(x.r) << ','
        << x.s_next << ',' << x.a_next << '\n';
  }
  std::ofstream meta(sidecar_path(csv_path));
  if (!meta) throw InvalidArgument("cannot write dataset sidecar");
  meta << nlohmann::json{{"seed", ds.seed},
                         {"source", ds.source},
                         {"n", ds.size()},
                         {"reward_noise_std", ds.reward_noise_std}}
              .dump(2)
       << '\n';
}

Dataset load_dataset(const std::filesystem::path& csv_path, std::size_t n_actions) {
  std::ifstream in(csv_path);
  if (!in) throw InvalidArgument("cannot open " + csv_path.string());
  std::string line;
  std::getline(in, line);
  if (line != "init_s,init_a,s,a,r,s_next,a_next") throw InvalidArgument("unexpected dataset header: " + line);
  Dataset ds;
  ds.n_actions = n_actions;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    TransitionSample x;
    char sep[6];
    std::istringstream row(line);
    row >> x.init_s >> sep[0] >> x.init_a >> sep[1] >> x.s >> sep[2] >> x.a >> sep[3] >> x.r >> sep[4] >>
        x.s_next >> sep[5] >> x.a_next;
    if (!row || std::any_of(sep, sep + 6, [](char c) { return c != ','; })) {
      throw InvalidArgument("malformed dataset row: " + line);
    }
    if (x.init_a >= n_actions || x.a >= n_actions || x.a_next >= n_actions) {
      throw InvalidArgument("dataset action index out of range: " + line);
    }
    ds.samples.push_back(x);
  }
  const auto meta_path = sidecar_path(csv_path);
  if (std::filesystem::exists(meta_path)) {
    std::ifstream meta_in(meta_path);
    const auto meta = nlohmann::json::parse(meta_in);
    ds.seed = meta.at("seed").get<std::uint64_t>();
    ds.source = meta.at("source").get<std::string>();
    ds.reward_noise_std = meta.at("reward_noise_std").get<double>();
    if (meta.at("n").get<std::size_t>() != ds.size()) {
      throw InvalidArgument("dataset sidecar n does not match the CSV row count");
    }
  }
  return ds;
}

}  // namespace dicekit
