#include "relstack/blocksworld.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "json.hpp"

namespace relstack {

namespace {

double clamp(double v, double lo, double hi) { return std::min(std::max(v, lo), hi); }

bool cubes_overlap(const Vec3& a, const Vec3& b, double side) {
  return std::fabs(a.x() - b.x()) < side && std::fabs(a.y() - b.y()) < side &&
         std::fabs(a.z() - b.z()) < side;
}

bool footprints_overlap(const Vec3& a, const Vec3& b, double side) {
  return std::fabs(a.x() - b.x()) < side && std::fabs(a.y() - b.y()) < side;
}

bool penalty_indicator(bool all_at_goal, const Tensor& goals, const Vec3& gripper_pos,
                       const RewardParams& rp) {
  if (!all_at_goal) return false;
  Vec3 mean_goal = Vec3::Zero();
  for (int i = 0; i < goals.rows(); ++i)
    mean_goal += Vec3(goals.at(i, 0), goals.at(i, 1), goals.at(i, 2));
  mean_goal /= goals.rows();
  const bool near = (gripper_pos - mean_goal).norm() < rp.grip_away_radius;
  return rp.penalize_when_near ? near : !near;
}

}  // namespace

double compute_reward(const Tensor& achieved, const Tensor& goals, const Vec3& gripper_pos,
                      const RewardParams& rp) {
  require_same_shape(achieved, goals, "compute_reward");
  if (achieved.cols() != 3) throw ShapeError("compute_reward: expected N x 3 inputs");
  int at = 0;
  for (int i = 0; i < achieved.rows(); ++i) {
    const double dx = achieved.at(i, 0) - goals.at(i, 0);
    const double dy = achieved.at(i, 1) - goals.at(i, 1);
    const double dz = achieved.at(i, 2) - goals.at(i, 2);
    if (std::sqrt(dx * dx + dy * dy + dz * dz) < rp.delta) ++at;
  }
  const bool all = at == achieved.rows();
  return at - (penalty_indicator(all, goals, gripper_pos, rp) ? 1 : 0);
}

void settle(std::vector<BlockState>& blocks, const WorldConfig& cfg) {
  const int n = static_cast<int>(blocks.size());
  const double side = cfg.block_side;

  for (int sweep = 0; sweep <= n + 1; ++sweep) {
    std::vector<int> order;
    for (int i = 0; i < n; ++i)
      if (!blocks[i].grasped) order.push_back(i);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      if (blocks[a].pos.z() != blocks[b].pos.z()) return blocks[a].pos.z() < blocks[b].pos.z();
      return a < b;
    });

    bool changed = false;
    std::vector<int> placed;
    for (int i : order) {
      Vec3 p = blocks[i].pos;
      // Walk down: stack on a stable blocker, topple off an unstable one.
      for (int guard = 0;; ++guard) {
        if (guard > 100) throw Error("settle: toppling failed to find a resting spot");
        int blocker = -1;
        for (int j : placed) {
          if (!footprints_overlap(p, blocks[j].pos, side)) continue;
          if (blocker < 0 || blocks[j].pos.z() > blocks[blocker].pos.z()) blocker = j;
        }
        if (blocker < 0) {
          p.z() = cfg.rest_z();
          break;
        }
        const Vec3& bp = blocks[blocker].pos;
        const double ox = p.x() - bp.x();
        const double oy = p.y() - bp.y();
        if (std::fabs(ox) <= cfg.stable_offset && std::fabs(oy) <= cfg.stable_offset) {
          p.z() = bp.z() + side;
          break;
        }
        // Unstable: slide off along the dominant offset axis, then fall on.
        if (std::fabs(ox) >= std::fabs(oy))
          p.x() = bp.x() + (ox >= 0.0 ? cfg.topple_clearance : -cfg.topple_clearance);
        else
          p.y() = bp.y() + (oy >= 0.0 ? cfg.topple_clearance : -cfg.topple_clearance);
      }
      if ((p - blocks[i].pos).norm() > 1e-12) {
        blocks[i].pos = p;
        changed = true;
      }
      placed.push_back(i);
    }

    if (!changed) return;
    if (sweep == n + 1) throw Error("settle: no fixpoint reached");
  }
}

bool is_success(const Observation& obs, double delta) {
  require_same_shape(obs.achieved, obs.goals, "is_success");
  for (int i = 0; i < obs.achieved.rows(); ++i) {
    const double dx = obs.achieved.at(i, 0) - obs.goals.at(i, 0);
    const double dy = obs.achieved.at(i, 1) - obs.goals.at(i, 1);
    const double dz = obs.achieved.at(i, 2) - obs.goals.at(i, 2);
    if (std::sqrt(dx * dx + dy * dy + dz * dz) >= delta) return false;
  }
  return true;
}

BlocksWorld::BlocksWorld(WorldConfig cfg) : cfg_(std::move(cfg)) {}

Observation BlocksWorld::reset(int n_blocks, const Tensor& goals, uint64_t seed) {
  if (n_blocks < 1 || n_blocks > 9)
    throw Error("reset: n_blocks must be in [1, 9]");
  require_shape(goals, n_blocks, 3, "reset goals");
  if (!goals.all_finite()) throw Error("reset: non-finite goal");

  Rng rng(seed);
  blocks_.assign(n_blocks, BlockState{});
  for (int i = 0; i < n_blocks; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
      const double x = rng.uniform(cfg_.spawn_min_x, cfg_.spawn_max_x);
      const double y = rng.uniform(cfg_.spawn_min_y, cfg_.spawn_max_y);
      bool clear = true;
      for (int j = 0; j < i; ++j) {
        if (std::fabs(x - blocks_[j].pos.x()) < cfg_.block_side &&
            std::fabs(y - blocks_[j].pos.y()) < cfg_.block_side) {
          clear = false;
          break;
        }
      }
      if (clear) {
        blocks_[i].pos = Vec3(x, y, cfg_.rest_z());
        placed = true;
      }
    }
    if (!placed) throw Error("reset: could not place blocks without overlap; spawn region too small");
  }

  gripper_ = GripperState{};
  gripper_.pos = cfg_.gripper_home;
  gripper_.gap = cfg_.home_gap;
  goals_ = goals;
  grasped_index_ = -1;
  step_count_ = 0;
  time_limit_ = cfg_.steps_per_block * n_blocks;
  active_ = true;
  return observe();
}

void BlocksWorld::apply_grasp_release(double target_gap) {
  if (grasped_index_ < 0 && target_gap < cfg_.grasp_close_gap) {
    int best = -1;
    double best_dist = 0.0;
    for (int i = 0; i < n_blocks(); ++i) {
      const Vec3 d = blocks_[i].pos - gripper_.pos;
      const double horiz = std::sqrt(d.x() * d.x() + d.y() * d.y());
      if (horiz > cfg_.grasp_horizontal || std::fabs(d.z()) > cfg_.grasp_vertical) continue;
      const double dist = d.norm();
      if (best < 0 || dist < best_dist) {
        best = i;
        best_dist = dist;
      }
    }
    if (best >= 0) {
      grasped_index_ = best;
      blocks_[best].grasped = true;
      blocks_[best].pos = gripper_.pos;  // held block rides at the gripper point
    }
  } else if (grasped_index_ >= 0 && target_gap > cfg_.release_open_gap) {
    blocks_[grasped_index_].grasped = false;
    grasped_index_ = -1;
  }
}

void BlocksWorld::resolve_push() {
  const double half = cfg_.block_side / 2.0;
  for (auto& b : blocks_) {
    if (b.grasped) continue;
    const double dx = gripper_.pos.x() - b.pos.x();
    const double dy = gripper_.pos.y() - b.pos.y();
    const double dz = gripper_.pos.z() - b.pos.z();
    if (std::fabs(dx) >= half || std::fabs(dy) >= half || std::fabs(dz) >= half) continue;
    const double pen_x = half - std::fabs(dx);
    const double pen_y = half - std::fabs(dy);
    // Expel along the cheaper horizontal axis, block moving away from the hand.
    if (pen_x <= pen_y)
      b.pos.x() += dx <= 0.0 ? pen_x : -pen_x;
    else
      b.pos.y() += dy <= 0.0 ? pen_y : -pen_y;
  }
}

void BlocksWorld::resolve_block_overlaps(const std::vector<bool>& moved_in) {
  std::vector<bool> moved = moved_in;
  const double side = cfg_.block_side;
  const int n = n_blocks();
  for (int sweep = 0; sweep < 10 * n + 10; ++sweep) {
    bool any = false;
    for (int a = 0; a < n && !any; ++a) {
      for (int b = a + 1; b < n && !any; ++b) {
        if (!cubes_overlap(blocks_[a].pos, blocks_[b].pos, side)) continue;
        int give = b, keep = a;  // displace `give` away from `keep`
        if (blocks_[a].grasped) {
          give = b, keep = a;
        } else if (blocks_[b].grasped) {
          give = a, keep = b;
        } else if (moved[a] != moved[b]) {
          give = moved[a] ? a : b;
          keep = moved[a] ? b : a;
        }
        const Vec3& kp = blocks_[keep].pos;
        Vec3& gp = blocks_[give].pos;
        const double dx = gp.x() - kp.x();
        const double dy = gp.y() - kp.y();
        const double pen_x = side - std::fabs(dx);
        const double pen_y = side - std::fabs(dy);
        if (pen_x <= pen_y)
          gp.x() += dx >= 0.0 ? pen_x : -pen_x;
        else
          gp.y() += dy >= 0.0 ? pen_y : -pen_y;
        moved[give] = true;
        any = true;
      }
    }
    if (!any) return;
  }
  throw Error("overlap resolution did not converge");
}

StepInfo BlocksWorld::make_info() const {
  StepInfo info;
  info.at_goal.resize(n_blocks());
  int at = 0;
  for (int i = 0; i < n_blocks(); ++i) {
    const Vec3 g(goals_.at(i, 0), goals_.at(i, 1), goals_.at(i, 2));
    info.at_goal[i] = (blocks_[i].pos - g).norm() < cfg_.reward.delta;
    at += info.at_goal[i] ? 1 : 0;
  }
  info.all_at_goal = at == n_blocks();
  info.penalty_applied =
      penalty_indicator(info.all_at_goal, goals_, gripper_.pos, cfg_.reward);
  return info;
}

StepResult BlocksWorld::step(const Action& a) {
  if (!active_) throw Error("step: episode is over, call reset");
  for (double v : {a.delta[0], a.delta[1], a.delta[2], a.grip})
    if (!std::isfinite(v)) throw Error("step: non-finite action component");

  std::vector<Vec3> start_pos(n_blocks());
  for (int i = 0; i < n_blocks(); ++i) start_pos[i] = blocks_[i].pos;

  const Vec3 old_gpos = gripper_.pos;
  Vec3 target = old_gpos;
  for (int k = 0; k < 3; ++k)
    target[k] += cfg_.action_scale * clamp(a.delta[k], -1.0, 1.0);
  for (int k = 0; k < 3; ++k)
    target[k] = clamp(target[k], cfg_.workspace_min[k], cfg_.workspace_max[k]);
  gripper_.vel = target - old_gpos;
  gripper_.pos = target;

  const double target_gap = (clamp(a.grip, -1.0, 1.0) + 1.0) / 2.0 * cfg_.max_gap;
  gripper_.gap_vel = target_gap - gripper_.gap;
  gripper_.gap = target_gap;

  if (grasped_index_ >= 0) blocks_[grasped_index_].pos = gripper_.pos;
  apply_grasp_release(target_gap);
  resolve_push();

  std::vector<bool> moved(n_blocks(), false);
  for (int i = 0; i < n_blocks(); ++i)
    moved[i] = (blocks_[i].pos - start_pos[i]).norm() > 1e-12;
  resolve_block_overlaps(moved);

  settle(blocks_, cfg_);

  for (int i = 0; i < n_blocks(); ++i) blocks_[i].vel = blocks_[i].pos - start_pos[i];

  ++step_count_;
  const bool done = step_count_ >= time_limit_;
  if (done) active_ = false;

  StepResult res;
  res.obs = observe();
  res.info = make_info();
  res.reward = compute_reward(res.obs.achieved, goals_, gripper_.pos, cfg_.reward);
  res.done = done;
  return res;
}

bool BlocksWorld::is_success() const {
  return relstack::is_success(observe(), cfg_.reward.delta);
}

Observation BlocksWorld::observe() const {
  Observation obs;
  obs.ee = Tensor(1, 8);
  for (int k = 0; k < 3; ++k) {
    obs.ee[k] = gripper_.pos[k];
    obs.ee[3 + k] = gripper_.vel[k];
  }
  obs.ee[6] = gripper_.gap;
  obs.ee[7] = gripper_.gap_vel;

  const int n = n_blocks();
  obs.blocks = Tensor(n, 15);
  obs.goals = goals_;
  obs.achieved = Tensor(n, 3);
  for (int i = 0; i < n; ++i) {
    const BlockState& b = blocks_[i];
    for (int k = 0; k < 3; ++k) {
      obs.blocks.at(i, k) = b.pos[k];                          // position
      obs.blocks.at(i, 3 + k) = 0.0;                           // orientation
      obs.blocks.at(i, 6 + k) = b.pos[k] - gripper_.pos[k];    // relative position
      obs.blocks.at(i, 9 + k) = b.vel[k];                      // velocity
      obs.blocks.at(i, 12 + k) = 0.0;                          // angular velocity
      obs.achieved.at(i, k) = b.pos[k];
    }
  }
  return obs;
}

std::string BlocksWorld::trace_line(const Action& a, double reward,
                                    const StepInfo& info) const {
  nlohmann::json j;
  j["step"] = step_count_;
  j["gripper"] = {{"pos", {gripper_.pos.x(), gripper_.pos.y(), gripper_.pos.z()}},
                  {"vel", {gripper_.vel.x(), gripper_.vel.y(), gripper_.vel.z()}},
                  {"gap", gripper_.gap},
                  {"gap_vel", gripper_.gap_vel}};
  nlohmann::json jb = nlohmann::json::array();
  for (const auto& b : blocks_) {
    jb.push_back({{"pos", {b.pos.x(), b.pos.y(), b.pos.z()}},
                  {"vel", {b.vel.x(), b.vel.y(), b.vel.z()}},
                  {"grasped", b.grasped}});
  }
  j["blocks"] = jb;
  j["action"] = {a.delta[0], a.delta[1], a.delta[2], a.grip};
  j["reward"] = reward;
  j["at_goal"] = info.at_goal;
  j["all_at_goal"] = info.all_at_goal;
  j["penalty"] = info.penalty_applied;
  return j.dump();
}

}  // namespace relstack
