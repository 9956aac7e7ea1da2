#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "beliefnet/config.hpp"
#include "beliefnet/dataset.hpp"
#include "beliefnet/eval.hpp"
#include "beliefnet/model.hpp"
#include "beliefnet/render.hpp"
#include "beliefnet/sim.hpp"
#include "beliefnet/train.hpp"

namespace {

using namespace beliefnet;

const char* kUsage = R"(usage: beliefnet <command> [--config FILE] [--key value ...]

commands:
  gen-data   generate a trajectory dataset (--kind synthetic|soccer) to --out
  simulate   run one soccer-world game to --out (optional --render_dir for PPM frames)
  train      train a variant: --data D.jsonl --variant V --out RUNDIR
  eval       evaluate checkpoints: --data D.jsonl --variants a,b --checkpoints x,y --out DIR
  forecast   sample one episode: --data D.jsonl --episode N --checkpoint C --out DIR
  export     render an episode's observation frames: --data D.jsonl --episode N --out DIR

config file lines are 'key = value' ('#' comments); flags override the file.
)";

cli::RunConfig parse_args(int argc, char** argv) {
  cli::RunConfig cfg;
  // first pass: locate --config, apply the file, then apply flags in order
  std::vector<std::pair<std::string, std::string>> flags;
  for (int i = 2; i < argc; ++i) {
    std::string arg = argv[i];
    if (arg.rfind("--", 0) != 0) throw cli::UsageError("expected a --flag, got '" + arg + "'");
    std::string key = arg.substr(2);
    for (char& c : key)
      if (c == '-') c = '_';
    if (i + 1 >= argc) throw cli::UsageError("flag --" + key + " needs a value");
    flags.emplace_back(key, argv[++i]);
  }
  for (const auto& [k, v] : flags)
    if (k == "config") cli::apply_file(cfg, v);
  for (const auto& [k, v] : flags)
    if (k != "config") cfg.set(k, v);
  return cfg;
}

data::PipelineConfig pipeline_from(const cli::RunConfig& cfg) {
  data::PipelineConfig p;
  p.render.raster_w = cfg.raster_w;
  p.render.raster_h = cfg.raster_h;
  p.render.grid_cols = cfg.grid_cols;
  p.render.grid_rows = cfg.grid_rows;
  p.frames_per_step = cfg.frames_per_step;
  p.t_obs = cfg.t_obs;
  p.t_fore = cfg.t_fore;
  p.occlusion_period = cfg.occlusion_period;
  return p;
}

model::ModelConfig model_from(const cli::RunConfig& cfg) {
  model::ModelConfig m;
  m.variant = model::variant_from_string(cfg.variant);
  m.agents = cfg.agents;
  m.hidden = cfg.hidden;
  m.latent = cfg.latent;
  m.vfeat = cfg.vfeat;
  m.state_embed = cfg.state_embed;
  m.render = pipeline_from(cfg).render;
  return m;
}

train::TrainConfig train_from(const cli::RunConfig& cfg) {
  train::TrainConfig t;
  t.t_obs = cfg.t_obs;
  t.t_fore = cfg.t_fore;
  t.beta_max = cfg.beta_max;
  t.beta_anneal_frac = cfg.beta_anneal_frac;
  t.gamma = cfg.gamma;
  t.tf_decay_frac = cfg.tf_decay_frac;
  t.lr = cfg.lr;
  t.momentum = cfg.momentum;
  t.warmup_steps = cfg.warmup_steps;
  t.total_steps = cfg.total_steps;
  t.batch = cfg.batch;
  t.seed = cfg.seed;
  t.kl_on_forecast = cfg.kl_on_forecast;
  t.lambda_literal_max = cfg.lambda_literal_max;
  t.clip_norm = cfg.clip_norm;
  t.pretrain_steps = cfg.pretrain_steps;
  return t;
}

void require(const cli::RunConfig& cfg, const std::string& key) {
  bool ok = true;
  if (key == "data") ok = !cfg.data.empty();
  else if (key == "out") ok = !cfg.out.empty();
  else if (key == "checkpoint") ok = !cfg.checkpoint.empty();
  else if (key == "checkpoints") ok = !cfg.checkpoints.empty();
  else if (key == "variants") ok = !cfg.variants.empty();
  if (!ok) throw cli::UsageError("missing required key '" + key + "'");
}

void write_resolved(const cli::RunConfig& cfg, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "resolved.cfg", std::ios::binary);
  out << cfg.to_text();
}

int cmd_gen_data(const cli::RunConfig& cfg) {
  require(cfg, "out");
  sim::TrajectorySet set;
  if (cfg.kind == "synthetic") {
    sim::SynthConfig sc;
    sc.agents = cfg.agents;
    sc.episodes = cfg.episodes;
    sc.frames = cfg.frames;
    sc.interaction = cfg.interaction;
    sc.repulsion = cfg.repulsion;
    sc.damping = cfg.damping;
    sc.init_speed = cfg.init_speed;
    sc.carrier_switch_prob = cfg.carrier_switch_prob;
    set = sim::gen_synthetic(sc, cfg.seed);
  } else if (cfg.kind == "soccer") {
    sim::SoccerConfig sc;
    sc.team_size = cfg.team_size;
    sc.duration_s = cfg.duration_s;
    sc.ticks_per_s = cfg.tick_rate;
    sc.camera_w = cfg.camera_w;
    sc.camera_h = cfg.camera_h;
    set.provenance = sim::TrajectorySet::Provenance::kSimulated;
    for (int e = 0; e < cfg.episodes; ++e)
      set.episodes.push_back(sim::simulate_soccer(sc, Rng::mix(cfg.seed ^ uint64_t(e))));
  } else {
    throw cli::UsageError("unknown kind '" + cfg.kind + "' (want synthetic or soccer)");
  }
  sim::save_jsonl(set, cfg.out);
  std::cout << "wrote " << set.episodes.size() << " episodes to " << cfg.out << "\n";
  return 0;
}

int cmd_simulate(const cli::RunConfig& cfg) {
  require(cfg, "out");
  sim::SoccerConfig sc;
  sc.team_size = cfg.team_size;
  sc.duration_s = cfg.duration_s;
  sc.ticks_per_s = cfg.tick_rate;
  sc.camera_w = cfg.camera_w;
  sc.camera_h = cfg.camera_h;
  sim::Episode ep = sim::simulate_soccer(sc, cfg.seed);
  sim::TrajectorySet set;
  set.provenance = sim::TrajectorySet::Provenance::kSimulated;
  set.episodes.push_back(ep);
  sim::save_jsonl(set, cfg.out);
  if (!cfg.render_dir.empty()) {
    std::filesystem::create_directories(cfg.render_dir);
    auto pipeline = pipeline_from(cfg);
    auto colors = render::palette(ep.roles);
    int ball = ep.num_agents() - 1;
    for (int t = 0; t < ep.num_frames(); ++t) {
      auto [local, mask] = render::crop_camera(ep.frames[size_t(t)], ep.camera[size_t(t)]);
      render::Grid g = render::render_frame(local, mask, colors, pipeline.render, ball);
      char name[32];
      std::snprintf(name, sizeof name, "frame%05d.ppm", t);
      render::write_ppm(std::filesystem::path(cfg.render_dir) / name, g);
    }
  }
  std::cout << "wrote " << ep.num_frames() << " frames to " << cfg.out << "\n";
  return 0;
}

std::vector<data::ModelExample> load_examples(const std::string& path,
                                              const data::PipelineConfig& pipeline) {
  sim::TrajectorySet set = sim::load_jsonl(path);
  if (set.episodes.empty()) throw std::runtime_error("no episodes in " + path);
  std::vector<data::ModelExample> out;
  const int need = data::frames_needed(pipeline);
  for (const auto& ep : set.episodes) {
    // long episodes (soccer games) yield consecutive non-overlapping windows
    for (int off = 0; off + need <= ep.num_frames(); off += need)
      out.push_back(data::build_example(ep, off, pipeline));
  }
  return out;
}

int cmd_train(const cli::RunConfig& cfg) {
  require(cfg, "data");
  require(cfg, "out");
  auto pipeline = pipeline_from(cfg);
  auto examples = load_examples(cfg.data, pipeline);
  cli::RunConfig resolved = cfg;
  resolved.agents = static_cast<int>(examples.front().roles.size());
  model::ModelConfig mc = model_from(resolved);
  model::ModelParams params = model::ModelParams::create(mc, cfg.seed);
  train::Trainer trainer(params, std::move(examples), train_from(resolved));
  write_resolved(resolved, cfg.out);
  trainer.run(cfg.out);
  std::cout << "trained " << resolved.variant << " for " << resolved.total_steps << " steps -> "
            << cfg.out << "\n";
  return 0;
}

int cmd_eval(const cli::RunConfig& cfg) {
  require(cfg, "data");
  require(cfg, "variants");
  require(cfg, "checkpoints");
  require(cfg, "out");
  auto pipeline = pipeline_from(cfg);
  auto test = load_examples(cfg.data, pipeline);
  std::vector<data::ModelExample> train_examples;
  if (!cfg.train_data.empty()) train_examples = load_examples(cfg.train_data, pipeline);
  auto variants = cli::split_commas(cfg.variants);
  std::vector<std::filesystem::path> cks;
  for (const auto& c : cli::split_commas(cfg.checkpoints)) cks.emplace_back(c);
  eval::BenchmarkConfig bc;
  bc.pipeline = pipeline;
  bc.eval_seed = cfg.eval_seed;
  bc.ll_samples = cfg.eval_samples;
  eval::EvalReport report = eval::run_benchmark(variants, cks, test, train_examples, bc);
  write_resolved(cfg, cfg.out);
  std::ofstream csv(std::filesystem::path(cfg.out) / "report.csv", std::ios::binary);
  csv << eval::report_to_csv(report);
  std::ofstream txt(std::filesystem::path(cfg.out) / "report.txt", std::ios::binary);
  txt << eval::report_to_text(report);
  std::cout << eval::report_to_text(report);
  return 0;
}

int cmd_forecast(const cli::RunConfig& cfg) {
  require(cfg, "data");
  require(cfg, "checkpoint");
  require(cfg, "out");
  auto pipeline = pipeline_from(cfg);
  auto examples = load_examples(cfg.data, pipeline);
  if (cfg.episode < 0 || cfg.episode >= static_cast<int>(examples.size()))
    throw std::runtime_error("episode index out of range (have " +
                             std::to_string(examples.size()) + ")");
  train::Checkpoint ck = train::load_checkpoint(cfg.checkpoint);
  const data::ModelExample& ex = examples[size_t(cfg.episode)];
  ad::Tape tape;
  model::RolloutOptions opts;
  opts.mode = model::Mode::kSample;
  opts.rng_key = Rng(cfg.eval_seed).child(uint64_t(cfg.episode), 0xf0).key();
  model::RolloutResult r = model::rollout(tape, ck.params, ex, opts);
  model::BeliefSequence beliefs = model::extract_beliefs(tape, r);
  eval::export_samples(beliefs, ex, pipeline.render, cfg.out);
  write_resolved(cfg, cfg.out);
  std::cout << "exported " << (beliefs.t_obs + beliefs.t_fore) * beliefs.agents
            << " heatmaps to " << cfg.out << "\n";
  return 0;
}

int cmd_export(const cli::RunConfig& cfg) {
  require(cfg, "data");
  require(cfg, "out");
  auto pipeline = pipeline_from(cfg);
  sim::TrajectorySet set = sim::load_jsonl(cfg.data);
  if (cfg.episode < 0 || cfg.episode >= static_cast<int>(set.episodes.size()))
    throw std::runtime_error("episode index out of range (have " +
                             std::to_string(set.episodes.size()) + ")");
  const sim::Episode& ep = set.episodes[size_t(cfg.episode)];
  std::filesystem::create_directories(cfg.out);
  auto colors = render::palette(ep.roles);
  int ball = -1;
  for (int i = 0; i < ep.num_agents(); ++i)
    if (ep.roles[size_t(i)].is_ball()) ball = i;
  render::VisibilityMask occ;
  if (!ep.has_camera()) {
    int period = cfg.occlusion_period;
    if (period <= 0 || ep.num_frames() % period != 0) period = ep.num_frames();
    occ = render::apply_occlusion_schedule(ep.num_frames(), ep.num_agents(), period,
                                           Rng::mix(ep.seed ^ 0x0cc1u));
  }
  for (int t = 0; t < ep.num_frames(); ++t) {
    render::Grid g;
    if (ep.has_camera()) {
      auto [local, mask] = render::crop_camera(ep.frames[size_t(t)], ep.camera[size_t(t)]);
      g = render::render_frame(local, mask, colors, pipeline.render, ball);
    } else {
      g = render::render_frame(ep.frames[size_t(t)], occ.rows[size_t(t)], colors, pipeline.render,
                               ball);
    }
    char name[32];
    std::snprintf(name, sizeof name, "frame%05d.ppm", t);
    render::write_ppm(std::filesystem::path(cfg.out) / name, g);
  }
  std::cout << "exported " << ep.num_frames() << " frames to " << cfg.out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    if (argc < 2) throw cli::UsageError("no command given");
    std::string cmd = argv[1];
    cli::RunConfig cfg = parse_args(argc, argv);
    if (cmd == "gen-data") return cmd_gen_data(cfg);
    if (cmd == "simulate") return cmd_simulate(cfg);
    if (cmd == "train") return cmd_train(cfg);
    if (cmd == "eval") return cmd_eval(cfg);
    if (cmd == "forecast") return cmd_forecast(cfg);
    if (cmd == "export") return cmd_export(cfg);
    throw cli::UsageError("unknown command '" + cmd + "'");
  } catch (const cli::UsageError& e) {
    std::cerr << "error: " << e.what() << "\n" << kUsage;
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
