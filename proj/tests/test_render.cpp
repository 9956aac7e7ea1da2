#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "beliefnet/dataset.hpp"
#include "beliefnet/render.hpp"

using namespace beliefnet;
using namespace beliefnet::render;
using beliefnet::sim::Vec2;

namespace {

RenderConfig default_cfg() { return RenderConfig{}; }

std::vector<sim::Role> player_roles(int k) {
  std::vector<sim::Role> roles;
  for (int i = 0; i < k - 1; ++i) roles.push_back({sim::Role::kPlayer, 0, i});
  roles.push_back({sim::Role::kBall, 0, 0});
  return roles;
}

}  // namespace

TEST_CASE("all-hidden mask renders an empty grid") {
  auto cfg = default_cfg();
  auto roles = player_roles(3);
  auto colors = palette(roles);
  std::vector<Vec2> pos{{0.2, 0.2}, {0.5, 0.5}, {0.8, 0.8}};
  MaskRow mask(3, 0);
  Grid g = render_frame(pos, mask, colors, cfg, 2);
  for (double v : g.px) CHECK(v == 0.0);
}

TEST_CASE("a single agent paints only near its center") {
  auto cfg = default_cfg();
  auto roles = player_roles(2);
  auto colors = palette(roles);
  std::vector<Vec2> pos{{0.5, 0.5}, {0.9, 0.9}};
  MaskRow mask{1, 0};
  Grid g = render_frame(pos, mask, colors, cfg, 1);
  double cx = 0.5 * cfg.raster_w, cy = 0.5 * cfg.raster_h;
  for (int y = 0; y < g.h; ++y) {
    for (int x = 0; x < g.w; ++x) {
      bool lit = g.at(y, x, 0) + g.at(y, x, 1) + g.at(y, x, 2) > 0;
      double d = std::hypot(x + 0.5 - cx, y + 0.5 - cy);
      if (lit) CHECK(d <= cfg.radius_px);
    }
  }
  int lit_count = 0;
  for (double v : g.px) lit_count += v > 0 ? 1 : 0;
  CHECK(lit_count > 0);
}

TEST_CASE("rendering is a pure function") {
  auto cfg = default_cfg();
  auto roles = player_roles(4);
  auto colors = palette(roles);
  std::vector<Vec2> pos{{0.21, 0.31}, {0.4, 0.6}, {0.42, 0.61}, {0.4, 0.62}};
  MaskRow mask(4, 1);
  Grid a = render_frame(pos, mask, colors, cfg, 3);
  Grid b = render_frame(pos, mask, colors, cfg, 3);
  CHECK(a.px == b.px);
}

TEST_CASE("ball is painted over a colliding player") {
  auto cfg = default_cfg();
  auto roles = player_roles(2);
  auto colors = palette(roles);
  std::vector<Vec2> pos{{0.5, 0.5}, {0.5, 0.5}};  // ball exactly on player 0
  MaskRow mask{1, 1};
  Grid g = render_frame(pos, mask, colors, cfg, 1);
  int cx = int(0.5 * cfg.raster_w), cy = int(0.5 * cfg.raster_h);
  CHECK(g.at(cy, cx, 0) == colors[1][0]);
  CHECK(g.at(cy, cx, 1) == colors[1][1]);
  CHECK(g.at(cy, cx, 2) == colors[1][2]);
}

TEST_CASE("palette keeps the ball yellow") {
  auto roles = player_roles(5);
  auto colors = palette(roles);
  CHECK(colors.back()[0] == 1.0);
  CHECK(colors.back()[1] == 1.0);
  CHECK(colors.back()[2] == 0.0);
  // distinct hues for the rest
  for (size_t i = 0; i + 1 < colors.size(); ++i)
    for (size_t j = i + 1; j + 1 < colors.size(); ++j) CHECK(colors[i] != colors[j]);
}

TEST_CASE("occlusion schedule hides exactly one agent per window") {
  for (uint64_t seed = 0; seed < 40; ++seed) {
    VisibilityMask m = apply_occlusion_schedule(50, 6, 10, seed);
    REQUIRE(m.rows.size() == 50);
    for (int w = 0; w < 5; ++w) {
      int hidden_agent = -1;
      for (int t = w * 10; t < (w + 1) * 10; ++t) {
        int hidden_count = 0;
        for (int k = 0; k < 6; ++k) {
          if (!m.rows[size_t(t)][size_t(k)]) {
            ++hidden_count;
            if (hidden_agent < 0) hidden_agent = k;
            CHECK(k == hidden_agent);  // same agent through the window
          }
        }
        CHECK(hidden_count == 1);
      }
    }
  }
}

TEST_CASE("occlusion schedule with one agent hides it always") {
  VisibilityMask m = apply_occlusion_schedule(20, 1, 10, 3);
  for (const auto& row : m.rows) CHECK(row[0] == 0);
}

TEST_CASE("occlusion schedule is deterministic and validates the period") {
  VisibilityMask a = apply_occlusion_schedule(50, 6, 10, 11);
  VisibilityMask b = apply_occlusion_schedule(50, 6, 10, 11);
  for (size_t t = 0; t < a.rows.size(); ++t) CHECK(a.rows[t] == b.rows[t]);
  CHECK_THROWS_WITH_AS((void)apply_occlusion_schedule(55, 6, 10, 0), doctest::Contains("period"),
                       std::runtime_error);
}

TEST_CASE("camera crop maps and hides") {
  std::array<double, 4> whole{0.0, 0.0, 1.0, 1.0};
  std::vector<Vec2> pos{{0.1, 0.9}, {0.5, 0.5}};
  auto [local, mask] = crop_camera(pos, whole);
  CHECK(mask[0] == 1);
  CHECK(mask[1] == 1);
  CHECK(local[0].x == doctest::Approx(0.1));
  CHECK(local[0].y == doctest::Approx(0.9));

  std::array<double, 4> rect{0.25, 0.25, 0.75, 0.75};
  std::vector<Vec2> pos2{{0.25, 0.25}, {0.75, 0.75}, {0.24, 0.5}, {0.5, 0.5}};
  auto [local2, mask2] = crop_camera(pos2, rect);
  CHECK(mask2[0] == 1);  // boundary is closed
  CHECK(mask2[1] == 1);
  CHECK(mask2[2] == 0);
  CHECK(mask2[3] == 1);
  CHECK(local2[0].x == doctest::Approx(0.0));
  CHECK(local2[1].x == doctest::Approx(1.0));
  CHECK(local2[3].x == doctest::Approx(0.5));
}

TEST_CASE("the ball is visible in every soccer frame over 100 episodes") {
  sim::SoccerConfig cfg;
  cfg.duration_s = 5;
  for (uint64_t seed = 0; seed < 100; ++seed) {
    sim::Episode ep = sim::simulate_soccer(cfg, seed);
    const int ball = ep.num_agents() - 1;
    for (int t = 0; t < ep.num_frames(); ++t) {
      auto [local, mask] = crop_camera(ep.frames[size_t(t)], ep.camera[size_t(t)]);
      CHECK(mask[size_t(ball)] == 1);
    }
  }
}

TEST_CASE("discretize corners and center") {
  auto cfg = default_cfg();
  CHECK(discretize({0.0, 0.0}, cfg) == 0);
  CHECK(discretize({1.0, 1.0}, cfg) == 383);
  CHECK(discretize({0.5, 0.5}, cfg) == 8 * 24 + 12);
  CHECK_THROWS((void)discretize({1.2, 0.5}, cfg));
}

TEST_CASE("heatmap to coordinates: one-hot and uniform") {
  auto cfg = default_cfg();
  std::vector<double> onehot(size_t(cfg.cells()), 0.0);
  onehot[0] = 1.0;
  Vec2 p = heatmap_to_coords(onehot, cfg);
  CHECK(p.x == doctest::Approx(1.0 / 48.0).epsilon(1e-12));
  CHECK(p.y == doctest::Approx(1.0 / 32.0).epsilon(1e-12));

  std::vector<double> uniform(size_t(cfg.cells()), 1.0 / cfg.cells());
  Vec2 c = heatmap_to_coords(uniform, cfg);
  CHECK(std::abs(c.x - 0.5) < 1e-12);
  CHECK(std::abs(c.y - 0.5) < 1e-12);
}

TEST_CASE("heatmap to coordinates matches the brute-force weighting") {
  auto cfg = default_cfg();
  Rng rng(77);
  std::vector<double> heat(size_t(cfg.cells()));
  double total = 0;
  for (double& v : heat) {
    v = rng.uniform();
    total += v;
  }
  for (double& v : heat) v /= total;
  Vec2 got = heatmap_to_coords(heat, cfg);
  double ex = 0, ey = 0;
  for (int c = 0; c < cfg.cells(); ++c) {
    int row = c / cfg.grid_cols, col = c % cfg.grid_cols;
    ex += heat[size_t(c)] * (col + 0.5) / cfg.grid_cols;
    ey += heat[size_t(c)] * (row + 0.5) / cfg.grid_rows;
  }
  CHECK(std::abs(got.x - ex) < 1e-12);
  CHECK(std::abs(got.y - ey) < 1e-12);
}

TEST_CASE("discretize then soft-argmax lands within half a cell diagonal") {
  auto cfg = default_cfg();
  Rng rng(5);
  double half_diag = 0.5 * std::hypot(1.0 / cfg.grid_cols, 1.0 / cfg.grid_rows);
  for (int i = 0; i < 2000; ++i) {
    Vec2 p{rng.uniform(), rng.uniform()};
    std::vector<double> onehot(size_t(cfg.cells()), 0.0);
    onehot[size_t(discretize(p, cfg))] = 1.0;
    Vec2 back = heatmap_to_coords(onehot, cfg);
    CHECK(std::hypot(back.x - p.x, back.y - p.y) <= half_diag + 1e-12);
  }
}

TEST_CASE("pgm export scales the peak to 255") {
  auto cfg = default_cfg();
  std::vector<double> heat(size_t(cfg.cells()), 0.0);
  heat[5] = 0.25;
  heat[100] = 0.75;
  auto path = std::filesystem::temp_directory_path() / "bn_heat.pgm";
  write_pgm(path, heat, cfg);
  std::ifstream in(path);
  std::string magic;
  int w, h, maxval;
  in >> magic >> w >> h >> maxval;
  CHECK(magic == "P2");
  CHECK(w == 24);
  CHECK(h == 16);
  CHECK(maxval == 255);
  std::vector<int> vals;
  int v;
  while (in >> v) vals.push_back(v);
  REQUIRE(vals.size() == size_t(cfg.cells()));
  CHECK(vals[100] == 255);
  CHECK(vals[5] == 85);
  std::filesystem::remove(path);
}

TEST_CASE("ppm export writes the raster") {
  auto cfg = default_cfg();
  auto roles = player_roles(2);
  auto colors = palette(roles);
  std::vector<Vec2> pos{{0.5, 0.5}, {0.2, 0.2}};
  MaskRow mask(2, 1);
  Grid g = render_frame(pos, mask, colors, cfg, 1);
  auto path = std::filesystem::temp_directory_path() / "bn_frame.ppm";
  write_ppm(path, g);
  std::ifstream in(path);
  std::string magic;
  int w, h, maxval;
  in >> magic >> w >> h >> maxval;
  CHECK(magic == "P3");
  CHECK(w == 48);
  CHECK(h == 32);
  CHECK(maxval == 255);
  std::filesystem::remove(path);
}

TEST_CASE("build_example groups frames and extracts targets") {
  sim::SynthConfig sc;
  sc.agents = 3;
  sc.frames = 20;
  sim::TrajectorySet set = sim::gen_synthetic(sc, 9);
  data::PipelineConfig pc;
  pc.frames_per_step = 2;
  pc.t_obs = 6;
  pc.t_fore = 4;
  pc.occlusion_period = 2;
  data::ModelExample ex = data::build_example(set.episodes.front(), 0, pc);
  REQUIRE(ex.steps.size() == 10);
  for (int t = 0; t < 10; ++t) {
    const auto& st = ex.steps[size_t(t)];
    CHECK(st.target_cell.size() == 3);
    if (t < 6) {
      CHECK(st.grid.px.size() == size_t(48 * 32 * 3));
      int hidden = 0;
      for (auto v : st.visible) hidden += v ? 0 : 1;
      CHECK(hidden == 1);  // occlusion hides exactly one agent
    } else {
      CHECK(st.grid.px.empty());
      for (auto v : st.visible) CHECK(v == 0);
    }
    const sim::Episode& ep = set.episodes.front();
    for (int k = 0; k < 3; ++k) {
      Vec2 gt = ep.frames[size_t(t * 2 + 1)][size_t(k)];  // last frame of the step
      CHECK(st.target_pos[size_t(k)].x == gt.x);
      CHECK(st.target_cell[size_t(k)] == discretize(gt, pc.render));
    }
  }
}

TEST_CASE("build_example needs enough frames") {
  sim::SynthConfig sc;
  sc.agents = 2;
  sc.frames = 5;
  sim::TrajectorySet set = sim::gen_synthetic(sc, 9);
  data::PipelineConfig pc;
  CHECK_THROWS_WITH_AS((void)data::build_example(set.episodes.front(), 0, pc),
                       doctest::Contains("frames"), std::runtime_error);
}
