#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "beliefnet/rng.hpp"

namespace beliefnet::sim {

struct Vec2 {
  double x{0}, y{0};
};

struct Role {
  enum Kind { kPlayer, kGoalkeeper, kBall };
  Kind kind{kPlayer};
  int team{0};
  int index{0};
  bool is_ball() const { return kind == kBall; }
};

std::string role_to_string(const Role& r);
Role role_from_string(const std::string& s);

// Ground-truth positions for one game clip. `frames[t][k]` is agent k at
// frame t in normalized field coordinates; `camera`, when non-empty, holds
// one {x0,y0,x1,y1} view rectangle per frame.
struct Episode {
  std::vector<Role> roles;
  std::vector<std::vector<Vec2>> frames;
  std::vector<std::array<double, 4>> camera;
  uint64_t seed{0};
  int num_agents() const { return static_cast<int>(roles.size()); }
  int num_frames() const { return static_cast<int>(frames.size()); }
  bool has_camera() const { return !camera.empty(); }
};

struct TrajectorySet {
  enum class Split { kTrain, kTest };
  enum class Provenance { kLoaded, kSynthetic, kSimulated };
  std::vector<Episode> episodes;
  Split split{Split::kTrain};
  Provenance provenance{Provenance::kSynthetic};
};

// JSONL wire format: one object per line with fields k, roles, frames, seed
// and an optional camera array. UTF-8, LF line endings.
void save_jsonl(const TrajectorySet& set, const std::filesystem::path& path);
TrajectorySet load_jsonl(const std::filesystem::path& path);

// Basketball-format loader: keeps the five team-0 players plus the ball,
// drops defenders, and takes a 50-frame window (seed-chosen for longer
// sources). Positions must already be in the unit square.
TrajectorySet load_basketball(const std::filesystem::path& path);

struct SynthConfig {
  int agents{3};  // includes one ball agent
  int episodes{1};
  int frames{10};
  double interaction{1.0};  // global strength; 0 freezes all forces
  double repulsion{1.0};    // pairwise repulsion multiplier
  double damping{0.05};
  double init_speed{0.01};
  double carrier_switch_prob{0.02};
};

// Damped second-order dynamics with pairwise repulsion and wall reflection;
// the last agent is a ball pulled toward a randomly switching carrier.
TrajectorySet gen_synthetic(const SynthConfig& cfg, uint64_t seed);

struct SoccerConfig {
  int team_size{5};  // per team, goalkeeper included; K = 2*team_size + 1
  double duration_s{30.0};
  int ticks_per_s{4};
  double camera_w{0.4};
  double camera_h{0.4};
  double player_speed{0.012};
  double kick_prob{0.3};
  double contact_radius{0.02};
};

Episode simulate_soccer(const SoccerConfig& cfg, uint64_t seed);

struct Action {
  enum Kind { kMove, kKick, kIdle };
  Kind kind{kIdle};
  Vec2 target;
  double power{0};
};

struct AgentState {
  Role role;
  Vec2 pos;
  Vec2 home;
  int id{0};
};

struct WorldState {
  Vec2 ball;
  int carrier{-1};          // agent id holding the ball, -1 if free
  int nearest_to_ball{-1};  // non-goalkeeper player closest to the ball
  double opponent_goal_x{1.0};
  double kick_prob{0.3};
};

// Fixed probabilistic tree: goalkeepers idle, the carrier kicks toward the
// opponent goal with probability kick_prob (else dribbles), the nearest
// player chases the ball, everyone else drifts between home and ball.
Action decision_tree_step(const AgentState& agent, const WorldState& world, Rng& rng);

// View rectangle centered on the ball, clamped into the unit square.
std::array<double, 4> camera_window(Vec2 ball, double win_w, double win_h);

}  // namespace beliefnet::sim
