#include "beliefnet/sim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace beliefnet::sim {

using nlohmann::json;

std::string role_to_string(const Role& r) {
  switch (r.kind) {
    case Role::kBall: return "ball";
    case Role::kGoalkeeper: return "goalkeeper:" + std::to_string(r.team);
    case Role::kPlayer:
      return "player:" + std::to_string(r.team) + ":" + std::to_string(r.index);
  }
  return "?";
}

Role role_from_string(const std::string& s) {
  Role r;
  if (s == "ball") {
    r.kind = Role::kBall;
    return r;
  }
  if (s.rfind("goalkeeper:", 0) == 0) {
    r.kind = Role::kGoalkeeper;
    r.team = std::stoi(s.substr(11));
    return r;
  }
  if (s.rfind("player:", 0) == 0) {
    r.kind = Role::kPlayer;
    size_t second = s.find(':', 7);
    if (second == std::string::npos) throw std::runtime_error("bad role string: " + s);
    r.team = std::stoi(s.substr(7, second - 7));
    r.index = std::stoi(s.substr(second + 1));
    return r;
  }
  throw std::runtime_error("bad role string: " + s);
}

void save_jsonl(const TrajectorySet& set, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  for (const Episode& ep : set.episodes) {
    json j;
    j["k"] = ep.num_agents();
    json roles = json::array();
    for (const Role& r : ep.roles) roles.push_back(role_to_string(r));
    j["roles"] = std::move(roles);
    json frames = json::array();
    for (const auto& fr : ep.frames) {
      json f = json::array();
      for (const Vec2& p : fr) f.push_back({p.x, p.y});
      frames.push_back(std::move(f));
    }
    j["frames"] = std::move(frames);
    j["seed"] = ep.seed;
    if (ep.has_camera()) {
      json cam = json::array();
      for (const auto& c : ep.camera) cam.push_back({c[0], c[1], c[2], c[3]});
      j["camera"] = std::move(cam);
    }
    out << j.dump() << "\n";
  }
}

TrajectorySet load_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path.string());
  TrajectorySet set;
  set.provenance = TrajectorySet::Provenance::kLoaded;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const std::exception& e) {
      throw std::runtime_error("parse error at line " + std::to_string(lineno) + ": " + e.what());
    }
    Episode ep;
    try {
      int k = j.at("k").get<int>();
      for (const auto& r : j.at("roles")) ep.roles.push_back(role_from_string(r.get<std::string>()));
      if (static_cast<int>(ep.roles.size()) != k)
        throw std::runtime_error("k does not match roles length");
      for (const auto& fr : j.at("frames")) {
        std::vector<Vec2> frame;
        for (const auto& p : fr) frame.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
        if (static_cast<int>(frame.size()) != k)
          throw std::runtime_error("frame agent count does not match k");
        ep.frames.push_back(std::move(frame));
      }
      ep.seed = j.value("seed", uint64_t{0});
      if (j.contains("camera")) {
        for (const auto& c : j.at("camera"))
          ep.camera.push_back({c.at(0).get<double>(), c.at(1).get<double>(), c.at(2).get<double>(),
                               c.at(3).get<double>()});
        if (ep.camera.size() != ep.frames.size())
          throw std::runtime_error("camera length does not match frames");
      }
    } catch (const std::exception& e) {
      throw std::runtime_error("parse error at line " + std::to_string(lineno) + ": " + e.what());
    }
    set.episodes.push_back(std::move(ep));
  }
  return set;
}

namespace {

void validate_in_unit_square(const Episode& ep, int episode_index) {
  for (int t = 0; t < ep.num_frames(); ++t) {
    for (int k = 0; k < ep.num_agents(); ++k) {
      const Vec2& p = ep.frames[size_t(t)][size_t(k)];
      if (!(p.x >= 0.0 && p.x <= 1.0 && p.y >= 0.0 && p.y <= 1.0))
        throw std::runtime_error("episode " + std::to_string(episode_index) + " frame " +
                                 std::to_string(t) + ": coordinate out of range after rescale (" +
                                 std::to_string(p.x) + "," + std::to_string(p.y) + ")");
    }
  }
}

}  // namespace

TrajectorySet load_basketball(const std::filesystem::path& path) {
  constexpr int kWindow = 50;
  TrajectorySet raw = load_jsonl(path);
  TrajectorySet out;
  out.provenance = TrajectorySet::Provenance::kLoaded;
  for (size_t e = 0; e < raw.episodes.size(); ++e) {
    const Episode& src = raw.episodes[e];
    std::vector<int> keep;
    for (int k = 0; k < src.num_agents(); ++k) {
      const Role& r = src.roles[size_t(k)];
      if (r.is_ball() || r.team == 0) keep.push_back(k);
    }
    Episode ep;
    ep.seed = src.seed;
    for (int k : keep) ep.roles.push_back(src.roles[size_t(k)]);
    if (ep.num_agents() != 6)
      throw std::runtime_error("episode " + std::to_string(e) + ": expected 5 offense + ball, got " +
                               std::to_string(ep.num_agents()) + " agents after dropping defense");
    if (src.num_frames() < kWindow)
      throw std::runtime_error("episode " + std::to_string(e) + ": needs at least 50 frames, has " +
                               std::to_string(src.num_frames()));
    int span = src.num_frames() - kWindow;
    int offset = span == 0 ? 0 : static_cast<int>(src.seed % uint64_t(span + 1));
    for (int t = offset; t < offset + kWindow; ++t) {
      std::vector<Vec2> frame;
      for (int k : keep) frame.push_back(src.frames[size_t(t)][size_t(k)]);
      ep.frames.push_back(std::move(frame));
    }
    validate_in_unit_square(ep, static_cast<int>(e));
    out.episodes.push_back(std::move(ep));
  }
  return out;
}

// ---------------------------------------------------------------------------
// synthetic generator

TrajectorySet gen_synthetic(const SynthConfig& cfg, uint64_t seed) {
  if (cfg.agents < 2) throw std::runtime_error("gen_synthetic: need at least 2 agents");
  constexpr double kRepulseRange = 0.15;
  constexpr double kRepulseGain = 0.01;
  constexpr double kBallGain = 0.006;

  TrajectorySet set;
  set.provenance = TrajectorySet::Provenance::kSynthetic;
  const int k = cfg.agents;
  const int ball = k - 1;
  for (int e = 0; e < cfg.episodes; ++e) {
    Rng rng = Rng(seed).child(uint64_t(e), 0x5e0);
    Episode ep;
    ep.seed = Rng::mix(seed ^ uint64_t(e));
    for (int i = 0; i < k - 1; ++i) ep.roles.push_back(Role{Role::kPlayer, 0, i});
    ep.roles.push_back(Role{Role::kBall, 0, 0});

    std::vector<Vec2> pos(static_cast<size_t>(k)), vel(static_cast<size_t>(k));
    for (int i = 0; i < k; ++i) {
      pos[size_t(i)] = {rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)};
      vel[size_t(i)] = {rng.uniform(-1.0, 1.0) * cfg.init_speed,
                        rng.uniform(-1.0, 1.0) * cfg.init_speed};
    }
    int carrier = static_cast<int>(rng.below(uint64_t(k - 1)));

    for (int t = 0; t < cfg.frames; ++t) {
      ep.frames.push_back(pos);
      if (rng.uniform() < cfg.carrier_switch_prob)
        carrier = static_cast<int>(rng.below(uint64_t(k - 1)));
      std::vector<Vec2> acc(static_cast<size_t>(k));
      for (int i = 0; i < k; ++i) {
        for (int j = 0; j < k; ++j) {
          if (j == i) continue;
          double dx = pos[size_t(i)].x - pos[size_t(j)].x;
          double dy = pos[size_t(i)].y - pos[size_t(j)].y;
          double d = std::sqrt(dx * dx + dy * dy);
          if (d < kRepulseRange && d > 1e-12) {
            double f = cfg.interaction * cfg.repulsion * kRepulseGain * (kRepulseRange - d) /
                       (kRepulseRange * d);
            acc[size_t(i)].x += f * dx;
            acc[size_t(i)].y += f * dy;
          }
        }
        acc[size_t(i)].x -= cfg.damping * vel[size_t(i)].x;
        acc[size_t(i)].y -= cfg.damping * vel[size_t(i)].y;
      }
      acc[size_t(ball)].x += cfg.interaction * kBallGain * (pos[size_t(carrier)].x - pos[size_t(ball)].x);
      acc[size_t(ball)].y += cfg.interaction * kBallGain * (pos[size_t(carrier)].y - pos[size_t(ball)].y);
      for (int i = 0; i < k; ++i) {
        vel[size_t(i)].x += acc[size_t(i)].x;
        vel[size_t(i)].y += acc[size_t(i)].y;
        pos[size_t(i)].x += vel[size_t(i)].x;
        pos[size_t(i)].y += vel[size_t(i)].y;
        // reflect; speed magnitude is conserved exactly
        for (int axis = 0; axis < 2; ++axis) {
          double& p = axis == 0 ? pos[size_t(i)].x : pos[size_t(i)].y;
          double& v = axis == 0 ? vel[size_t(i)].x : vel[size_t(i)].y;
          while (p < 0.0 || p > 1.0) {
            if (p < 0.0) p = -p;
            if (p > 1.0) p = 2.0 - p;
            v = -v;
          }
        }
      }
    }
    set.episodes.push_back(std::move(ep));
  }
  return set;
}

// ---------------------------------------------------------------------------
// soccer world

std::array<double, 4> camera_window(Vec2 ball, double win_w, double win_h) {
  double x0 = std::clamp(ball.x - win_w / 2.0, 0.0, 1.0 - win_w);
  double y0 = std::clamp(ball.y - win_h / 2.0, 0.0, 1.0 - win_h);
  return {x0, y0, x0 + win_w, y0 + win_h};
}

Action decision_tree_step(const AgentState& agent, const WorldState& world, Rng& rng) {
  if (agent.role.kind == Role::kGoalkeeper) return Action{Action::kIdle, agent.home, 0.0};
  if (agent.id == world.carrier) {
    Vec2 goal{world.opponent_goal_x, 0.5};
    if (rng.uniform() < world.kick_prob)
      return Action{Action::kKick, goal, rng.uniform(0.5, 1.0)};
    return Action{Action::kMove, goal, 0.0};
  }
  if (agent.id == world.nearest_to_ball) return Action{Action::kMove, world.ball, 0.0};
  double w = 0.7;
  Vec2 blend{w * agent.home.x + (1.0 - w) * world.ball.x,
             w * agent.home.y + (1.0 - w) * world.ball.y};
  return Action{Action::kMove, blend, 0.0};
}

Episode simulate_soccer(const SoccerConfig& cfg, uint64_t seed) {
  if (cfg.team_size < 2) throw std::runtime_error("simulate_soccer: team size must be >= 2");
  const int per_team = cfg.team_size;
  const int k = 2 * per_team + 1;
  const int ball = k - 1;
  const int frames = static_cast<int>(cfg.duration_s * cfg.ticks_per_s);
  constexpr double kGkJitter = 0.0025;
  constexpr double kGkMaxOffset = 0.01;  // under half of one 1/24 grid cell
  constexpr double kBallFriction = 0.88;
  constexpr double kKickSpeed = 0.06;

  Rng rng(seed);
  Episode ep;
  ep.seed = seed;
  std::vector<Vec2> home(static_cast<size_t>(k));
  for (int team = 0; team < 2; ++team) {
    int base = team * per_team;
    ep.roles.push_back(Role{Role::kGoalkeeper, team, 0});
    home[size_t(base)] = {team == 0 ? 0.04 : 0.96, 0.5};
    for (int i = 1; i < per_team; ++i) {
      ep.roles.push_back(Role{Role::kPlayer, team, i});
      // everyone but the goalkeepers starts at a random post per episode
      double lo = team == 0 ? 0.08 : 0.5;
      double hi = team == 0 ? 0.5 : 0.92;
      home[size_t(base + i)] = {rng.uniform(lo, hi), rng.uniform(0.1, 0.9)};
    }
  }
  ep.roles.push_back(Role{Role::kBall, 0, 0});

  std::vector<Vec2> pos = home;
  pos[size_t(ball)] = {0.5, 0.5};
  Vec2 ball_vel{0, 0};
  int carrier = -1;

  for (int t = 0; t < frames; ++t) {
    ep.frames.push_back(pos);
    ep.camera.push_back(camera_window(pos[size_t(ball)], cfg.camera_w, cfg.camera_h));

    // possession: nearest player within contact radius takes the ball
    if (carrier < 0) {
      double best = cfg.contact_radius;
      for (int i = 0; i < k - 1; ++i) {
        if (ep.roles[size_t(i)].kind == Role::kGoalkeeper) continue;
        double d = std::hypot(pos[size_t(i)].x - pos[size_t(ball)].x,
                              pos[size_t(i)].y - pos[size_t(ball)].y);
        if (d <= best) {
          best = d;
          carrier = i;
        }
      }
    } else {
      // tackle simplification: any opponent on contact steals possession
      for (int i = 0; i < k - 1; ++i) {
        if (i == carrier || ep.roles[size_t(i)].kind == Role::kGoalkeeper) continue;
        if (ep.roles[size_t(i)].team == ep.roles[size_t(carrier)].team) continue;
        double d = std::hypot(pos[size_t(i)].x - pos[size_t(ball)].x,
                              pos[size_t(i)].y - pos[size_t(ball)].y);
        if (d <= cfg.contact_radius) {
          carrier = i;
          break;
        }
      }
    }

    int nearest = -1;
    double nearest_d = 1e9;
    for (int i = 0; i < k - 1; ++i) {
      if (ep.roles[size_t(i)].kind == Role::kGoalkeeper) continue;
      double d = std::hypot(pos[size_t(i)].x - pos[size_t(ball)].x,
                            pos[size_t(i)].y - pos[size_t(ball)].y);
      if (d < nearest_d) {
        nearest_d = d;
        nearest = i;
      }
    }

    std::vector<Vec2> next = pos;
    for (int i = 0; i < k - 1; ++i) {
      WorldState world;
      world.ball = pos[size_t(ball)];
      world.carrier = carrier;
      world.nearest_to_ball = nearest;
      world.opponent_goal_x = ep.roles[size_t(i)].team == 0 ? 1.0 : 0.0;
      world.kick_prob = cfg.kick_prob;
      AgentState st{ep.roles[size_t(i)], pos[size_t(i)], home[size_t(i)], i};
      Rng agent_rng = rng.child(uint64_t(t), uint64_t(i), 0xac7);
      Action a = decision_tree_step(st, world, agent_rng);
      if (a.kind == Action::kIdle) {
        Vec2 p{pos[size_t(i)].x + agent_rng.uniform(-kGkJitter, kGkJitter),
               pos[size_t(i)].y + agent_rng.uniform(-kGkJitter, kGkJitter)};
        p.x = std::clamp(p.x, home[size_t(i)].x - kGkMaxOffset, home[size_t(i)].x + kGkMaxOffset);
        p.y = std::clamp(p.y, home[size_t(i)].y - kGkMaxOffset, home[size_t(i)].y + kGkMaxOffset);
        next[size_t(i)] = p;
      } else if (a.kind == Action::kMove) {
        double dx = a.target.x - pos[size_t(i)].x;
        double dy = a.target.y - pos[size_t(i)].y;
        double d = std::hypot(dx, dy);
        if (d > 1e-9) {
          double step = std::min(cfg.player_speed, d);
          next[size_t(i)].x += step * dx / d;
          next[size_t(i)].y += step * dy / d;
        }
      } else if (a.kind == Action::kKick && i == carrier) {
        double dx = a.target.x - pos[size_t(ball)].x;
        double dy = a.target.y - pos[size_t(ball)].y;
        double d = std::hypot(dx, dy);
        if (d > 1e-9) {
          ball_vel = {a.power * kKickSpeed * dx / d, a.power * kKickSpeed * dy / d};
          carrier = -1;
        }
      }
      next[size_t(i)].x = std::clamp(next[size_t(i)].x, 0.0, 1.0);
      next[size_t(i)].y = std::clamp(next[size_t(i)].y, 0.0, 1.0);
    }

    if (carrier >= 0) {
      // dribble: ball rides slightly ahead of the carrier
      Vec2 c = next[size_t(carrier)];
      double lead = 0.008;
      double gx = ep.roles[size_t(carrier)].team == 0 ? 1.0 : 0.0;
      double dir = gx > c.x ? 1.0 : -1.0;
      next[size_t(ball)] = {std::clamp(c.x + dir * lead, 0.0, 1.0), c.y};
      ball_vel = {0, 0};
    } else {
      Vec2 b = pos[size_t(ball)];
      b.x += ball_vel.x;
      b.y += ball_vel.y;
      for (int axis = 0; axis < 2; ++axis) {
        double& p = axis == 0 ? b.x : b.y;
        double& v = axis == 0 ? ball_vel.x : ball_vel.y;
        while (p < 0.0 || p > 1.0) {
          if (p < 0.0) p = -p;
          if (p > 1.0) p = 2.0 - p;
          v = -v;
        }
      }
      ball_vel.x *= kBallFriction;
      ball_vel.y *= kBallFriction;
      next[size_t(ball)] = b;
    }
    pos = std::move(next);
  }
  return ep;
}

}  // namespace beliefnet::sim
