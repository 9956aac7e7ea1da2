#include "beliefnet/render.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace beliefnet::render {

namespace {

std::array<double, 3> hsv_to_rgb(double h, double s, double v) {
  double c = v * s;
  double hp = h * 6.0;
  double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  if (hp < 1) { r = c; g = x; }
  else if (hp < 2) { r = x; g = c; }
  else if (hp < 3) { g = c; b = x; }
  else if (hp < 4) { g = x; b = c; }
  else if (hp < 5) { r = x; b = c; }
  else { r = c; b = x; }
  double m = v - c;
  return {r + m, g + m, b + m};
}

}  // namespace

std::vector<std::array<double, 3>> palette(const std::vector<sim::Role>& roles) {
  const int k = static_cast<int>(roles.size());
  std::vector<std::array<double, 3>> colors;
  colors.resize(size_t(k));
  for (int i = 0; i < k; ++i) {
    if (roles[size_t(i)].is_ball())
      colors[size_t(i)] = {1.0, 1.0, 0.0};
    else
      colors[size_t(i)] = hsv_to_rgb(double(i) / double(k), 1.0, 1.0);
  }
  return colors;
}

Grid render_frame(std::span<const sim::Vec2> positions, const MaskRow& mask,
                  const std::vector<std::array<double, 3>>& colors, const RenderConfig& cfg,
                  int ball_index) {
  Grid g;
  g.h = cfg.raster_h;
  g.w = cfg.raster_w;
  g.px.assign(size_t(g.h * g.w * 3), 0.0);
  const int k = static_cast<int>(positions.size());
  auto draw = [&](int i) {
    if (!mask[size_t(i)]) return;
    double cx = positions[size_t(i)].x * cfg.raster_w;
    double cy = positions[size_t(i)].y * cfg.raster_h;
    double r = cfg.radius_px;
    int x0 = std::max(0, int(std::floor(cx - r)));
    int x1 = std::min(g.w - 1, int(std::ceil(cx + r)));
    int y0 = std::max(0, int(std::floor(cy - r)));
    int y1 = std::min(g.h - 1, int(std::ceil(cy + r)));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        double dx = (x + 0.5) - cx;
        double dy = (y + 0.5) - cy;
        if (dx * dx + dy * dy <= r * r) {
          for (int c = 0; c < 3; ++c) g.at(y, x, c) = colors[size_t(i)][size_t(c)];
        }
      }
    }
  };
  for (int i = 0; i < k; ++i) {
    if (i != ball_index) draw(i);
  }
  if (ball_index >= 0 && ball_index < k) draw(ball_index);
  return g;
}

VisibilityMask apply_occlusion_schedule(int num_frames, int k, int period, uint64_t seed) {
  if (period <= 0 || num_frames % period != 0)
    throw std::runtime_error("occlusion schedule: period must divide frame count");
  VisibilityMask m;
  m.rows.assign(size_t(num_frames), MaskRow(size_t(k), 1));
  Rng rng(seed);
  for (int w = 0; w < num_frames / period; ++w) {
    int hidden = static_cast<int>(rng.below(uint64_t(k)));
    for (int t = w * period; t < (w + 1) * period; ++t) m.rows[size_t(t)][size_t(hidden)] = 0;
  }
  return m;
}

std::pair<std::vector<sim::Vec2>, MaskRow> crop_camera(std::span<const sim::Vec2> positions,
                                                       const std::array<double, 4>& rect) {
  const double x0 = rect[0], y0 = rect[1], x1 = rect[2], y1 = rect[3];
  const double w = x1 - x0, h = y1 - y0;
  std::vector<sim::Vec2> local(positions.size());
  MaskRow mask(positions.size(), 0);
  for (size_t i = 0; i < positions.size(); ++i) {
    const sim::Vec2& p = positions[i];
    if (p.x >= x0 && p.x <= x1 && p.y >= y0 && p.y <= y1) {
      mask[i] = 1;
      local[i] = {(p.x - x0) / w, (p.y - y0) / h};
    }
  }
  return {std::move(local), std::move(mask)};
}

int discretize(sim::Vec2 p, const RenderConfig& cfg) {
  if (!(p.x >= 0.0 && p.x <= 1.0 && p.y >= 0.0 && p.y <= 1.0))
    throw std::runtime_error("discretize: position out of range (" + std::to_string(p.x) + "," +
                             std::to_string(p.y) + ")");
  int col = std::min(cfg.grid_cols - 1, int(p.x * cfg.grid_cols));
  int row = std::min(cfg.grid_rows - 1, int(p.y * cfg.grid_rows));
  return row * cfg.grid_cols + col;
}

sim::Vec2 cell_center(int cell, const RenderConfig& cfg) {
  int row = cell / cfg.grid_cols;
  int col = cell % cfg.grid_cols;
  return {(col + 0.5) / cfg.grid_cols, (row + 0.5) / cfg.grid_rows};
}

sim::Vec2 heatmap_to_coords(std::span<const double> heat, const RenderConfig& cfg) {
  if (static_cast<int>(heat.size()) != cfg.cells())
    throw std::runtime_error("heatmap size does not match grid");
  double x = 0, y = 0;
  for (int c = 0; c < cfg.cells(); ++c) {
    sim::Vec2 ctr = cell_center(c, cfg);
    x += heat[size_t(c)] * ctr.x;
    y += heat[size_t(c)] * ctr.y;
  }
  return {x, y};
}

void write_pgm(const std::filesystem::path& path, std::span<const double> heat,
               const RenderConfig& cfg) {
  if (static_cast<int>(heat.size()) != cfg.cells())
    throw std::runtime_error("heatmap size does not match grid");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  double peak = 0;
  for (double v : heat) peak = std::max(peak, v);
  if (peak <= 0) peak = 1.0;
  out << "P2\n" << cfg.grid_cols << " " << cfg.grid_rows << "\n255\n";
  for (int r = 0; r < cfg.grid_rows; ++r) {
    for (int c = 0; c < cfg.grid_cols; ++c) {
      int v = int(std::lround(255.0 * heat[size_t(r * cfg.grid_cols + c)] / peak));
      out << v << (c + 1 == cfg.grid_cols ? "" : " ");
    }
    out << "\n";
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

void write_ppm(const std::filesystem::path& path, const Grid& grid) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P3\n" << grid.w << " " << grid.h << "\n255\n";
  for (int y = 0; y < grid.h; ++y) {
    for (int x = 0; x < grid.w; ++x) {
      for (int c = 0; c < 3; ++c) {
        out << int(std::lround(255.0 * grid.at(y, x, c)));
        out << (x + 1 == grid.w && c == 2 ? "" : " ");
      }
    }
    out << "\n";
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace beliefnet::render
