#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "beliefnet/sim.hpp"

namespace beliefnet::render {

struct RenderConfig {
  int raster_w{48};
  int raster_h{32};
  int grid_cols{24};
  int grid_rows{16};
  double radius_px{2.0};
  int cells() const { return grid_cols * grid_rows; }
};

// Bird's-eye RGB raster, row-major {h, w, 3}, values in [0, 1].
struct Grid {
  int h{0}, w{0};
  std::vector<double> px;
  int step{0};
  double& at(int y, int x, int c) { return px[size_t((y * w + x) * 3 + c)]; }
  double at(int y, int x, int c) const { return px[size_t((y * w + x) * 3 + c)]; }
};

using MaskRow = std::vector<uint8_t>;  // 1 = visible

struct VisibilityMask {
  std::vector<MaskRow> rows;  // per frame
};

// Evenly spaced hues at full saturation/value; the ball is always yellow.
std::vector<std::array<double, 3>> palette(const std::vector<sim::Role>& roles);

// Each visible agent becomes a filled disc; later agents over-paint earlier
// ones, and the agent at `ball_index` (if any) is drawn on top.
Grid render_frame(std::span<const sim::Vec2> positions, const MaskRow& mask,
                  const std::vector<std::array<double, 3>>& colors, const RenderConfig& cfg,
                  int ball_index = -1);

// Hides one uniformly chosen agent per `period`-frame window.
VisibilityMask apply_occlusion_schedule(int num_frames, int k, int period, uint64_t seed);
inline VisibilityMask apply_occlusion_schedule(int num_frames, int k, uint64_t seed) {
  return apply_occlusion_schedule(num_frames, k, 10, seed);
}

// Maps field positions into camera-local coordinates; agents outside the
// (closed) rectangle are marked hidden.
std::pair<std::vector<sim::Vec2>, MaskRow> crop_camera(std::span<const sim::Vec2> positions,
                                                       const std::array<double, 4>& rect);

// Row-major cell of the grid_cols x grid_rows lattice; 1.0 maps into the
// last row/column.
int discretize(sim::Vec2 p, const RenderConfig& cfg);
sim::Vec2 cell_center(int cell, const RenderConfig& cfg);

// Probability-weighted mean of cell centers (soft-argmax).
sim::Vec2 heatmap_to_coords(std::span<const double> heat, const RenderConfig& cfg);

// Plain PGM (P2), maxval 255, peak cell scaled to 255.
void write_pgm(const std::filesystem::path& path, std::span<const double> heat,
               const RenderConfig& cfg);
// Plain PPM (P3).
void write_ppm(const std::filesystem::path& path, const Grid& grid);

}  // namespace beliefnet::render
