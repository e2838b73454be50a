#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

#include "relstack/rng.hpp"
#include "relstack/tensor.hpp"

namespace relstack {

using Vec3 = Eigen::Vector3d;

struct BlockState {
  Vec3 pos = Vec3::Zero();  // center, meters
  Vec3 vel = Vec3::Zero();  // displacement per step
  bool grasped = false;
};

struct GripperState {
  Vec3 pos = Vec3::Zero();
  Vec3 vel = Vec3::Zero();
  double gap = 0.10;      // finger opening, meters in [0, 0.10]
  double gap_vel = 0.0;
};

struct Action {
  double delta[3] = {0.0, 0.0, 0.0};  // each in [-1,1], scaled to meters
  double grip = 0.0;                  // target finger gap command in [-1,1]
};

/// What the agent sees. Per-block feature layout (15-D):
/// [position(3), orientation(3, always zero), position relative to
/// gripper(3), velocity(3), angular velocity(3, always zero)].
/// Gripper layout (8-D): [position(3), velocity(3), gap(1), gap velocity(1)].
struct Observation {
  Tensor ee;        // [1,8]
  Tensor blocks;    // [N,15]
  Tensor goals;     // [N,3] desired block positions
  Tensor achieved;  // [N,3] current block positions, for goal relabeling
  int n() const { return blocks.rows(); }
};

struct RewardParams {
  double delta = 0.05;            // at-goal radius, equals block side
  double grip_away_radius = 0.10; // 2*delta, measured from the mean goal
  // true: penalize when everything is at goal and the hand lingers within
  // the radius (pushes the hand away). false: penalize when everything is
  // at goal and the hand is beyond the radius (rewards staying close, which
  // is what holding a block at an aerial goal requires).
  bool penalize_when_near = true;
};

struct StepInfo {
  std::vector<bool> at_goal;
  bool all_at_goal = false;
  bool penalty_applied = false;
};

struct StepResult {
  Observation obs;
  double reward = 0.0;
  bool done = false;
  StepInfo info;
};

struct WorldConfig {
  Vec3 workspace_min{0.0, 0.0, 0.40};
  Vec3 workspace_max{0.5, 0.7, 0.90};
  double spawn_min_x = 0.125, spawn_max_x = 0.375;
  double spawn_min_y = 0.175, spawn_max_y = 0.525;
  Vec3 gripper_home{0.25, 0.35, 0.55};
  double home_gap = 0.10;
  double max_gap = 0.10;
  double action_scale = 0.05;   // meters of gripper travel per unit delta
  double block_side = 0.05;
  double grasp_horizontal = 0.025;
  double grasp_vertical = 0.03;
  double grasp_close_gap = 0.05;   // command below this closes on a block
  double release_open_gap = 0.06;  // command above this lets go
  double stable_offset = 0.025;    // per-axis center offset for stacking
  double topple_clearance = 0.055; // landing offset of a toppled block
  int steps_per_block = 50;        // episode length is this times N
  RewardParams reward;

  double table_z() const { return workspace_min.z(); }
  double rest_z() const { return table_z() + block_side / 2.0; }
};

/// Sum over blocks of 1{|achieved_i - goal_i| < delta}, with the grip-away
/// penalty of 1 subtracted when all blocks are in place and the gripper is
/// on the penalized side of the radius around the mean goal.
double compute_reward(const Tensor& achieved, const Tensor& goals, const Vec3& gripper_pos,
                      const RewardParams& rp);

/// Drops every ungrasped block to its highest support (table or a block top
/// within the per-axis stability offset); unstably placed blocks topple to
/// the table, displaced along the dominant offset axis. Runs sweeps until a
/// fixpoint; more than N+1 sweeps without one is an internal rule bug.
void settle(std::vector<BlockState>& blocks, const WorldConfig& cfg);

bool is_success(const Observation& obs, double delta);

/// Deterministic kinematic blocks world: a point gripper that can grasp one
/// block at a time, push blocks it moves through, and stack them. Physics
/// is a small set of closed-form rules (grasp, release, push, settle), so
/// trajectories are a pure function of (seed, actions).
class BlocksWorld {
 public:
  explicit BlocksWorld(WorldConfig cfg = {});

  /// goals is [n_blocks, 3]. Blocks spawn at non-overlapping uniform table
  /// positions; throws after 1000 failed placement attempts.
  Observation reset(int n_blocks, const Tensor& goals, uint64_t seed);

  StepResult step(const Action& a);

  bool is_success() const;
  Observation observe() const;

  int n_blocks() const { return static_cast<int>(blocks_.size()); }
  int step_count() const { return step_count_; }
  int time_limit() const { return time_limit_; }
  bool episode_active() const { return active_; }
  const GripperState& gripper() const { return gripper_; }
  const std::vector<BlockState>& blocks() const { return blocks_; }
  const Tensor& goals() const { return goals_; }
  const WorldConfig& config() const { return cfg_; }

  /// One JSON object per step for the trace/replay tooling.
  std::string trace_line(const Action& a, double reward, const StepInfo& info) const;

 private:
  void apply_grasp_release(double target_gap);
  void resolve_push();
  void resolve_block_overlaps(const std::vector<bool>& moved);
  StepInfo make_info() const;

  WorldConfig cfg_;
  GripperState gripper_;
  std::vector<BlockState> blocks_;
  Tensor goals_;
  int grasped_index_ = -1;
  int step_count_ = 0;
  int time_limit_ = 0;
  bool active_ = false;
};

}  // namespace relstack
