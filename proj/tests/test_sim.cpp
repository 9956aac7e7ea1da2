#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "beliefnet/sim.hpp"

using namespace beliefnet;
using namespace beliefnet::sim;

namespace {

std::filesystem::path temp_file(const char* name) {
  auto p = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove(p);
  return p;
}

}  // namespace

TEST_CASE("roles round trip through strings") {
  Role ball{Role::kBall, 0, 0};
  Role gk{Role::kGoalkeeper, 1, 0};
  Role pl{Role::kPlayer, 0, 3};
  CHECK(role_to_string(ball) == "ball");
  CHECK(role_from_string("goalkeeper:1").kind == Role::kGoalkeeper);
  CHECK(role_from_string(role_to_string(pl)).index == 3);
  CHECK(role_from_string(role_to_string(gk)).team == 1);
  CHECK_THROWS(role_from_string("referee"));
}

TEST_CASE("jsonl round trip is lossless") {
  SynthConfig cfg;
  cfg.agents = 4;
  cfg.episodes = 3;
  cfg.frames = 12;
  TrajectorySet set = gen_synthetic(cfg, 99);
  auto path = temp_file("bn_roundtrip.jsonl");
  save_jsonl(set, path);
  TrajectorySet back = load_jsonl(path);
  REQUIRE(back.episodes.size() == set.episodes.size());
  for (size_t e = 0; e < set.episodes.size(); ++e) {
    const Episode& a = set.episodes[e];
    const Episode& b = back.episodes[e];
    REQUIRE(a.num_frames() == b.num_frames());
    CHECK(a.seed == b.seed);
    for (int t = 0; t < a.num_frames(); ++t) {
      for (int k = 0; k < a.num_agents(); ++k) {
        CHECK(a.frames[size_t(t)][size_t(k)].x == b.frames[size_t(t)][size_t(k)].x);
        CHECK(a.frames[size_t(t)][size_t(k)].y == b.frames[size_t(t)][size_t(k)].y);
      }
    }
  }
  std::filesystem::remove(path);
}

TEST_CASE("basketball loader keeps offense plus ball over fifty frames") {
  // 11 agents in the source: 5 offense, 5 defense, ball
  TrajectorySet set;
  for (int e = 0; e < 2; ++e) {
    Episode ep;
    for (int i = 0; i < 5; ++i) ep.roles.push_back({Role::kPlayer, 0, i});
    for (int i = 0; i < 5; ++i) ep.roles.push_back({Role::kPlayer, 1, i});
    ep.roles.push_back({Role::kBall, 0, 0});
    ep.seed = uint64_t(e);
    for (int t = 0; t < 50; ++t) {
      std::vector<Vec2> fr;
      for (int k = 0; k < 11; ++k)
        fr.push_back({0.1 + 0.01 * k + 0.001 * t, 0.5});
      ep.frames.push_back(fr);
    }
    set.episodes.push_back(ep);
  }
  auto path = temp_file("bn_basketball.jsonl");
  save_jsonl(set, path);
  TrajectorySet loaded = load_basketball(path);
  REQUIRE(loaded.episodes.size() == 2);
  for (const auto& ep : loaded.episodes) {
    CHECK(ep.num_agents() == 6);
    CHECK(ep.num_frames() == 50);
    int balls = 0;
    for (const auto& r : ep.roles) {
      CHECK((r.is_ball() || r.team == 0));
      balls += r.is_ball() ? 1 : 0;
    }
    CHECK(balls == 1);
  }
  std::filesystem::remove(path);
}

TEST_CASE("basketball loader accepts an empty file") {
  auto path = temp_file("bn_empty.jsonl");
  std::ofstream(path).close();
  TrajectorySet loaded = load_basketball(path);
  CHECK(loaded.episodes.empty());
  std::filesystem::remove(path);
}

TEST_CASE("basketball loader rejects out-of-range coordinates with location") {
  TrajectorySet set;
  Episode ep;
  for (int i = 0; i < 5; ++i) ep.roles.push_back({Role::kPlayer, 0, i});
  ep.roles.push_back({Role::kBall, 0, 0});
  for (int t = 0; t < 50; ++t) {
    std::vector<Vec2> fr(6, Vec2{0.5, 0.5});
    if (t == 7) fr[2] = {1.2, 0.5};
    ep.frames.push_back(fr);
  }
  set.episodes.push_back(ep);
  auto path = temp_file("bn_oob.jsonl");
  // bypass save-side validation by writing directly
  save_jsonl(set, path);
  CHECK_THROWS_WITH_AS((void)load_basketball(path), doctest::Contains("frame 7"),
                       std::runtime_error);
  std::filesystem::remove(path);
}

TEST_CASE("basketball loader reports parse errors with line numbers") {
  auto path = temp_file("bn_badline.jsonl");
  std::ofstream out(path);
  out << "{\"k\": 1, \"roles\": [\"ball\"], \"frames\": [[[0.1, 0.2]]], \"seed\": 0}\n";
  out << "this is not json\n";
  out.close();
  CHECK_THROWS_WITH_AS((void)load_jsonl(path), doctest::Contains("line 2"), std::runtime_error);
  std::filesystem::remove(path);
}

TEST_CASE("synthetic generator is stationary without interaction or speed") {
  SynthConfig cfg;
  cfg.agents = 3;
  cfg.frames = 50;
  cfg.interaction = 0.0;
  cfg.init_speed = 0.0;
  TrajectorySet set = gen_synthetic(cfg, 5);
  const Episode& ep = set.episodes.front();
  for (int t = 1; t < ep.num_frames(); ++t) {
    for (int k = 0; k < 3; ++k) {
      CHECK(ep.frames[size_t(t)][size_t(k)].x == ep.frames[0][size_t(k)].x);
      CHECK(ep.frames[size_t(t)][size_t(k)].y == ep.frames[0][size_t(k)].y);
    }
  }
}

TEST_CASE("synthetic generator is deterministic per seed") {
  SynthConfig cfg;
  cfg.agents = 5;
  cfg.episodes = 2;
  cfg.frames = 40;
  TrajectorySet a = gen_synthetic(cfg, 123);
  TrajectorySet b = gen_synthetic(cfg, 123);
  for (size_t e = 0; e < a.episodes.size(); ++e) {
    for (int t = 0; t < a.episodes[e].num_frames(); ++t) {
      for (int k = 0; k < cfg.agents; ++k) {
        CHECK(a.episodes[e].frames[size_t(t)][size_t(k)].x ==
              b.episodes[e].frames[size_t(t)][size_t(k)].x);
      }
    }
  }
}

TEST_CASE("repulsion increases the minimum pairwise distance") {
  SynthConfig on;
  on.agents = 6;
  on.frames = 1000;
  on.repulsion = 1.0;
  SynthConfig off = on;
  off.repulsion = 0.0;
  auto min_dist = [](const Episode& ep) {
    double best = 1e9;
    for (const auto& fr : ep.frames) {
      for (size_t i = 0; i < fr.size(); ++i)
        for (size_t j = i + 1; j < fr.size(); ++j)
          best = std::min(best, std::hypot(fr[i].x - fr[j].x, fr[i].y - fr[j].y));
    }
    return best;
  };
  double with = min_dist(gen_synthetic(on, 77).episodes.front());
  double without = min_dist(gen_synthetic(off, 77).episodes.front());
  CHECK(with > without);
}

TEST_CASE("wall reflection conserves speed magnitude") {
  SynthConfig cfg;
  cfg.agents = 2;
  cfg.frames = 2000;
  cfg.interaction = 0.0;
  cfg.damping = 0.0;
  cfg.init_speed = 0.04;  // fast enough to bounce many times
  TrajectorySet set = gen_synthetic(cfg, 3);
  const Episode& ep = set.episodes.front();
  auto near_wall = [](Vec2 p) {
    return p.x < 0.05 || p.x > 0.95 || p.y < 0.05 || p.y > 0.95;
  };
  for (int k = 0; k < 2; ++k) {
    double v0 = std::hypot(ep.frames[1][size_t(k)].x - ep.frames[0][size_t(k)].x,
                           ep.frames[1][size_t(k)].y - ep.frames[0][size_t(k)].y);
    REQUIRE(v0 > 0.0);
    int bounces_seen = 0;
    int clean_after_bounce = 0;
    for (int t = 1; t + 1 < ep.num_frames(); ++t) {
      const Vec2& a = ep.frames[size_t(t)][size_t(k)];
      const Vec2& b = ep.frames[size_t(t) + 1][size_t(k)];
      if (near_wall(a)) ++bounces_seen;
      if (near_wall(a) || near_wall(b)) continue;  // a fold may hide inside this step
      double v = std::hypot(b.x - a.x, b.y - a.y);
      CHECK(std::abs(v - v0) < 1e-9);
      if (bounces_seen > 0) ++clean_after_bounce;
    }
    CHECK(bounces_seen > 0);           // walls were actually hit
    CHECK(clean_after_bounce > 0);     // and speed survived the reflections
    for (const auto& fr : ep.frames) {
      CHECK(fr[size_t(k)].x >= 0.0);
      CHECK(fr[size_t(k)].x <= 1.0);
      CHECK(fr[size_t(k)].y >= 0.0);
      CHECK(fr[size_t(k)].y <= 1.0);
    }
  }
}

TEST_CASE("camera window centers and clamps") {
  auto r1 = camera_window({0.5, 0.5}, 0.4, 0.4);
  CHECK(r1[0] == doctest::Approx(0.3));
  CHECK(r1[1] == doctest::Approx(0.3));
  CHECK(r1[2] == doctest::Approx(0.7));
  CHECK(r1[3] == doctest::Approx(0.7));
  auto r2 = camera_window({0.0, 0.0}, 0.4, 0.4);
  CHECK(r2[0] == 0.0);
  CHECK(r2[1] == 0.0);
  CHECK(r2[2] == doctest::Approx(0.4));
  CHECK(r2[3] == doctest::Approx(0.4));
}

TEST_CASE("camera window always contains the ball") {
  Rng rng(17);
  for (int i = 0; i < 1000; ++i) {
    Vec2 ball{rng.uniform(), rng.uniform()};
    auto r = camera_window(ball, 0.4, 0.3);
    CHECK(ball.x >= r[0]);
    CHECK(ball.x <= r[2]);
    CHECK(ball.y >= r[1]);
    CHECK(ball.y <= r[3]);
  }
}

TEST_CASE("decision tree: goalkeepers always idle") {
  Rng rng(4);
  AgentState gk{{Role::kGoalkeeper, 0, 0}, {0.04, 0.5}, {0.04, 0.5}, 0};
  WorldState w;
  w.ball = {0.05, 0.5};
  w.carrier = 0;  // even as nominal carrier
  w.nearest_to_ball = 0;
  for (int i = 0; i < 100; ++i) CHECK(decision_tree_step(gk, w, rng).kind == Action::kIdle);
}

TEST_CASE("decision tree: unique nearest player chases a free ball") {
  Rng rng(5);
  AgentState p{{Role::kPlayer, 0, 1}, {0.2, 0.2}, {0.3, 0.3}, 3};
  WorldState w;
  w.ball = {0.6, 0.6};
  w.carrier = -1;
  w.nearest_to_ball = 3;
  Action a = decision_tree_step(p, w, rng);
  CHECK(a.kind == Action::kMove);
  CHECK(a.target.x == doctest::Approx(0.6));
  CHECK(a.target.y == doctest::Approx(0.6));
}

TEST_CASE("decision tree: carrier kicks at the configured frequency") {
  Rng rng(6);
  AgentState p{{Role::kPlayer, 0, 1}, {0.4, 0.5}, {0.3, 0.3}, 2};
  WorldState w;
  w.ball = {0.4, 0.5};
  w.carrier = 2;
  w.nearest_to_ball = 2;
  w.kick_prob = 0.3;
  int kicks = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    Rng step_rng = rng.child(uint64_t(i));
    if (decision_tree_step(p, w, step_rng).kind == Action::kKick) ++kicks;
  }
  double freq = double(kicks) / n;
  CHECK(freq > 0.28);
  CHECK(freq < 0.32);
}

TEST_CASE("soccer world: goalkeepers stay under half a grid cell of home") {
  SoccerConfig cfg;
  cfg.duration_s = 60;
  Episode ep = simulate_soccer(cfg, 21);
  const double half_cell = 0.5 / 24.0;
  for (int k = 0; k < ep.num_agents(); ++k) {
    if (ep.roles[size_t(k)].kind != Role::kGoalkeeper) continue;
    Vec2 home = ep.frames[0][size_t(k)];
    for (const auto& fr : ep.frames) {
      CHECK(std::abs(fr[size_t(k)].x - home.x) < half_cell);
      CHECK(std::abs(fr[size_t(k)].y - home.y) < half_cell);
    }
  }
}

TEST_CASE("soccer world: ball stays inside the field and camera") {
  SoccerConfig cfg;
  cfg.duration_s = 60;
  Episode ep = simulate_soccer(cfg, 8);
  const int ball = ep.num_agents() - 1;
  REQUIRE(ep.camera.size() == ep.frames.size());
  for (size_t t = 0; t < ep.frames.size(); ++t) {
    const Vec2& b = ep.frames[t][size_t(ball)];
    CHECK(b.x >= 0.0);
    CHECK(b.x <= 1.0);
    CHECK(b.y >= 0.0);
    CHECK(b.y <= 1.0);
    const auto& r = ep.camera[t];
    CHECK(b.x >= r[0]);
    CHECK(b.x <= r[2]);
    CHECK(b.y >= r[1]);
    CHECK(b.y <= r[3]);
  }
}

TEST_CASE("soccer world: identical seeds give identical episodes") {
  SoccerConfig cfg;
  cfg.duration_s = 20;
  Episode a = simulate_soccer(cfg, 99);
  Episode b = simulate_soccer(cfg, 99);
  REQUIRE(a.num_frames() == b.num_frames());
  for (int t = 0; t < a.num_frames(); ++t)
    for (int k = 0; k < a.num_agents(); ++k) {
      CHECK(a.frames[size_t(t)][size_t(k)].x == b.frames[size_t(t)][size_t(k)].x);
      CHECK(a.frames[size_t(t)][size_t(k)].y == b.frames[size_t(t)][size_t(k)].y);
    }
}

TEST_CASE("generators reject degenerate sizes") {
  SynthConfig sc;
  sc.agents = 1;
  CHECK_THROWS((void)gen_synthetic(sc, 1));
  SoccerConfig so;
  so.team_size = 1;
  CHECK_THROWS((void)simulate_soccer(so, 1));
}
