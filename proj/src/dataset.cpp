#include "beliefnet/dataset.hpp"

#include <stdexcept>

namespace beliefnet::data {

int frames_needed(const PipelineConfig& cfg) {
  return (cfg.t_obs + cfg.t_fore) * cfg.frames_per_step;
}

ModelExample build_example(const sim::Episode& ep, int frame_offset, const PipelineConfig& cfg) {
  const int fps = cfg.frames_per_step;
  const int total_steps = cfg.t_obs + cfg.t_fore;
  const int need = frames_needed(cfg);
  if (frame_offset < 0 || frame_offset + need > ep.num_frames())
    throw std::runtime_error("build_example: episode has " + std::to_string(ep.num_frames()) +
                             " frames, need " + std::to_string(need) + " at offset " +
                             std::to_string(frame_offset));
  const int k = ep.num_agents();
  int ball = -1;
  for (int i = 0; i < k; ++i)
    if (ep.roles[size_t(i)].is_ball()) ball = i;

  ModelExample ex;
  ex.t_obs = cfg.t_obs;
  ex.t_fore = cfg.t_fore;
  ex.roles = ep.roles;
  ex.key = Rng::mix(ep.seed ^ (uint64_t(frame_offset) << 32));

  render::VisibilityMask occlusion;
  const bool camera_mode = ep.has_camera();
  if (!camera_mode) {
    int obs_frames = cfg.t_obs * fps;
    if (cfg.occlusion_period <= 0 || obs_frames % cfg.occlusion_period != 0)
      throw std::runtime_error("build_example: occlusion period must divide observed frames");
    occlusion = render::apply_occlusion_schedule(obs_frames, k, cfg.occlusion_period,
                                                 Rng::mix(ep.seed ^ 0x0cc1u) ^ uint64_t(frame_offset));
  }
  auto colors = render::palette(ep.roles);

  for (int t = 0; t < total_steps; ++t) {
    StepSample step;
    const int last_frame = frame_offset + t * fps + fps - 1;
    step.target_cell.resize(size_t(k));
    step.target_pos.resize(size_t(k));
    step.visible.assign(size_t(k), 0);
    for (int i = 0; i < k; ++i) {
      step.target_pos[size_t(i)] = ep.frames[size_t(last_frame)][size_t(i)];
      step.target_cell[size_t(i)] = render::discretize(step.target_pos[size_t(i)], cfg.render);
    }
    if (t < cfg.t_obs) {
      render::Grid acc;
      acc.h = cfg.render.raster_h;
      acc.w = cfg.render.raster_w;
      acc.px.assign(size_t(acc.h * acc.w * 3), 0.0);
      acc.step = t;
      for (int f = 0; f < fps; ++f) {
        const int frame = frame_offset + t * fps + f;
        render::Grid g;
        render::MaskRow mask;
        if (camera_mode) {
          auto [local, vis] = render::crop_camera(ep.frames[size_t(frame)], ep.camera[size_t(frame)]);
          mask = vis;
          g = render::render_frame(local, mask, colors, cfg.render, ball);
        } else {
          mask = occlusion.rows[size_t(frame - frame_offset)];
          g = render::render_frame(ep.frames[size_t(frame)], mask, colors, cfg.render, ball);
        }
        for (size_t i = 0; i < acc.px.size(); ++i) acc.px[i] += g.px[i] / double(fps);
        if (frame == last_frame) {
          for (int i = 0; i < k; ++i) step.visible[size_t(i)] = mask[size_t(i)];
        }
      }
      step.grid = std::move(acc);
    }
    ex.steps.push_back(std::move(step));
  }
  return ex;
}

std::vector<ModelExample> build_examples(const sim::TrajectorySet& set,
                                         const PipelineConfig& cfg) {
  std::vector<ModelExample> out;
  out.reserve(set.episodes.size());
  for (const sim::Episode& ep : set.episodes) out.push_back(build_example(ep, 0, cfg));
  return out;
}

}  // namespace beliefnet::data
