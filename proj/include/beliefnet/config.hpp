#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace beliefnet::cli {

// Raised for bad command lines; the driver maps it to exit code 1.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Flat merged view of config file plus flag overrides. Unknown keys are
// rejected; later file keys override earlier; flags override the file.
struct RunConfig {
  // shared
  uint64_t seed{1};
  std::string variant{"graph-vrnn"};
  // model dims
  int agents{3};
  int hidden{64};
  int latent{16};
  int vfeat{32};
  int state_embed{32};
  // render
  int raster_w{48};
  int raster_h{32};
  int grid_cols{24};
  int grid_rows{16};
  // data pipeline
  int frames_per_step{1};
  int t_obs{6};
  int t_fore{4};
  int occlusion_period{2};
  // synthetic generator
  std::string kind{"synthetic"};
  int episodes{100};
  int frames{10};
  double interaction{1.0};
  double repulsion{1.0};
  double damping{0.05};
  double init_speed{0.01};
  double carrier_switch_prob{0.02};
  // soccer world
  int team_size{5};
  double duration_s{30.0};
  int tick_rate{4};
  double camera_w{0.4};
  double camera_h{0.4};
  // training
  double beta_max{1.0};
  double beta_anneal_frac{0.2};
  double gamma{0.8};
  double tf_decay_frac{0.5};
  double lr{0.05};
  double momentum{0.9};
  int warmup_steps{100};
  int total_steps{2000};
  int batch{8};
  bool kl_on_forecast{false};
  bool lambda_literal_max{false};
  double clip_norm{5.0};
  int pretrain_steps{0};
  // evaluation
  int eval_samples{1};
  uint64_t eval_seed{7};
  // paths / selection
  std::string data;
  std::string train_data;
  std::string out;
  std::string checkpoint;
  std::string checkpoints;  // comma list for eval
  std::string variants;     // comma list for eval
  int episode{0};
  std::string render_dir;

  void set(const std::string& key, const std::string& value, int lineno = -1);
  std::string to_text() const;  // resolved key=value echo
};

// Parses `key = value` lines with '#' comments. Errors carry line numbers.
RunConfig parse_config(const std::filesystem::path& path);
void apply_file(RunConfig& cfg, const std::filesystem::path& path);

std::vector<std::string> split_commas(const std::string& s);

}  // namespace beliefnet::cli
