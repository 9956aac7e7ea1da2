#pragma once

#include <vector>

#include "beliefnet/render.hpp"
#include "beliefnet/sim.hpp"

namespace beliefnet::data {

// One model step: the pixel-averaged observation over the step's frames plus
// per-agent supervision. Forecast steps carry targets but no observation.
struct StepSample {
  render::Grid grid;               // empty for forecast steps
  std::vector<int> target_cell;    // per agent
  std::vector<sim::Vec2> target_pos;
  std::vector<uint8_t> visible;    // per agent; 0 on forecast steps
};

struct ModelExample {
  std::vector<StepSample> steps;  // t_obs observed then t_fore forecast
  int t_obs{0}, t_fore{0};
  std::vector<sim::Role> roles;
  uint64_t key{0};
};

struct PipelineConfig {
  render::RenderConfig render;
  int frames_per_step{1};
  int t_obs{6};
  int t_fore{4};
  int occlusion_period{2};  // frames; used when the episode has no camera
};

// Frames needed from an episode to build one example.
int frames_needed(const PipelineConfig& cfg);

// Renders observed steps (occlusion schedule for full-field episodes, camera
// crop otherwise) and extracts per-step targets from each step's last frame.
ModelExample build_example(const sim::Episode& ep, int frame_offset, const PipelineConfig& cfg);

// Every example of a set at offset 0 (episodes must be long enough).
std::vector<ModelExample> build_examples(const sim::TrajectorySet& set,
                                         const PipelineConfig& cfg);

}  // namespace beliefnet::data
