#include "relstack/her_replay.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <string>

namespace relstack {

ReplayBuffer::ReplayBuffer(size_t capacity, RewardParams reward_params)
    : capacity_(capacity), reward_params_(reward_params) {
  if (capacity_ == 0) throw Error("ReplayBuffer: capacity must be positive");
}

void ReplayBuffer::store_episode(StoredEpisode ep) {
  const int L = ep.length();
  if (L < 1) throw Error("store_episode: empty episode");
  if (ep.n < 1 || ep.n > 9) throw Error("store_episode: block count out of range");
  require_shape(ep.ee, L + 1, 8, "store_episode ee");
  require_shape(ep.blocks, (L + 1) * ep.n, 15, "store_episode blocks");
  require_shape(ep.achieved, (L + 1) * ep.n, 3, "store_episode achieved");
  require_shape(ep.goals, ep.n, 3, "store_episode goals");
  require_shape(ep.actions, L, 4, "store_episode actions");
  require_shape(ep.rewards, L, 1, "store_episode rewards");
  for (int r = 0; r < ep.achieved.rows(); ++r)
    for (int k = 0; k < 3; ++k)
      if (ep.achieved.at(r, k) != ep.blocks.at(r, k))
        throw Error("store_episode: achieved-goal chain inconsistent at row " +
                    std::to_string(r) + " (achieved goals must equal block positions)");
  if (static_cast<size_t>(L) > capacity_)
    throw Error("store_episode: episode longer than the whole buffer");

  episodes_.push_back(std::move(ep));
  total_transitions_ += L;
  while (total_transitions_ > capacity_) {
    total_transitions_ -= episodes_.front().length();
    episodes_.pop_front();
  }
  cumulative_.clear();
  cumulative_.reserve(episodes_.size());
  size_t acc = 0;
  for (const auto& e : episodes_) {
    acc += e.length();
    cumulative_.push_back(acc);
  }
}

Observation ReplayBuffer::observation_at(const StoredEpisode& ep, int t) const {
  Observation obs;
  obs.ee = Tensor(1, 8);
  for (int k = 0; k < 8; ++k) obs.ee[k] = ep.ee.at(t, k);
  obs.blocks = Tensor(ep.n, 15);
  obs.achieved = Tensor(ep.n, 3);
  for (int i = 0; i < ep.n; ++i) {
    for (int k = 0; k < 15; ++k) obs.blocks.at(i, k) = ep.blocks.at(t * ep.n + i, k);
    for (int k = 0; k < 3; ++k) obs.achieved.at(i, k) = ep.achieved.at(t * ep.n + i, k);
  }
  obs.goals = ep.goals;
  return obs;
}

Transition ReplayBuffer::materialize(const StoredEpisode& ep, int t) const {
  Transition tr;
  tr.obs = observation_at(ep, t);
  tr.next_obs = observation_at(ep, t + 1);
  tr.action = Tensor(1, 4);
  for (int k = 0; k < 4; ++k) tr.action[k] = ep.actions.at(t, k);
  tr.reward = ep.rewards.at(t, 0);
  tr.done = t == ep.length() - 1;
  tr.index = t;
  tr.source_step = t;
  return tr;
}

std::vector<Transition> ReplayBuffer::sample(int batch_size, double relabel_fraction,
                                             Rng& rng) const {
  if (batch_size < 1) throw Error("sample: batch_size must be positive");
  if (static_cast<size_t>(batch_size) > total_transitions_)
    throw Error("sample: batch size exceeds stored transitions");
  if (relabel_fraction < 0.0 || relabel_fraction > 1.0)
    throw Error("sample: relabel_fraction outside [0,1]");

  const int relabel_count =
      static_cast<int>(std::lround(relabel_fraction * batch_size));
  std::vector<Transition> batch;
  batch.reserve(batch_size);

  for (int b = 0; b < batch_size; ++b) {
    const size_t global = rng.uniform_int(0, total_transitions_ - 1);
    const size_t e =
        std::upper_bound(cumulative_.begin(), cumulative_.end(), global) -
        cumulative_.begin();
    const StoredEpisode& ep = episodes_[e];
    const int t = static_cast<int>(global - (e == 0 ? 0 : cumulative_[e - 1]));

    Transition tr = materialize(ep, t);
    if (b < relabel_count) {
      const int u = static_cast<int>(rng.uniform_int(t, ep.length() - 1));
      Tensor new_goals(ep.n, 3);
      for (int i = 0; i < ep.n; ++i)
        for (int k = 0; k < 3; ++k)
          new_goals.at(i, k) = ep.achieved.at((u + 1) * ep.n + i, k);
      tr.obs.goals = new_goals;
      tr.next_obs.goals = std::move(new_goals);
      const Vec3 gripper(tr.next_obs.ee[0], tr.next_obs.ee[1], tr.next_obs.ee[2]);
      tr.reward =
          compute_reward(tr.next_obs.achieved, tr.next_obs.goals, gripper, reward_params_);
      tr.relabeled = true;
      tr.source_step = u;
    }
    batch.push_back(std::move(tr));
  }
  return batch;
}

namespace {
void write_tensor(std::ostream& out, const Tensor& t) {
  out.write(reinterpret_cast<const char*>(t.data()), sizeof(double) * t.size());
}
void read_tensor(std::istream& in, Tensor& t) {
  in.read(reinterpret_cast<char*>(t.data()), sizeof(double) * t.size());
}
}  // namespace

void ReplayBuffer::save(std::ostream& out) const {
  out << "relstack-replay v1 " << episodes_.size() << "\n";
  for (const auto& ep : episodes_) {
    out << ep.n << " " << ep.length() << "\n";
    write_tensor(out, ep.ee);
    write_tensor(out, ep.blocks);
    write_tensor(out, ep.achieved);
    write_tensor(out, ep.goals);
    write_tensor(out, ep.actions);
    write_tensor(out, ep.rewards);
  }
  if (!out) throw Error("ReplayBuffer::save: write failed");
}

void ReplayBuffer::load(std::istream& in) {
  std::string tag, version;
  size_t count = 0;
  in >> tag >> version >> count;
  if (tag != "relstack-replay" || version != "v1")
    throw Error("ReplayBuffer::load: bad header");
  episodes_.clear();
  cumulative_.clear();
  total_transitions_ = 0;
  for (size_t e = 0; e < count; ++e) {
    int n = 0, L = 0;
    in >> n >> L;
    in.ignore(1);
    StoredEpisode ep;
    ep.n = n;
    ep.ee = Tensor(L + 1, 8);
    ep.blocks = Tensor((L + 1) * n, 15);
    ep.achieved = Tensor((L + 1) * n, 3);
    ep.goals = Tensor(n, 3);
    ep.actions = Tensor(L, 4);
    ep.rewards = Tensor(L, 1);
    read_tensor(in, ep.ee);
    read_tensor(in, ep.blocks);
    read_tensor(in, ep.achieved);
    read_tensor(in, ep.goals);
    read_tensor(in, ep.actions);
    read_tensor(in, ep.rewards);
    if (!in) throw Error("ReplayBuffer::load: truncated stream");
    store_episode(std::move(ep));
  }
}

}  // namespace relstack
