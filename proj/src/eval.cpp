#include "beliefnet/eval.hpp"

#include "beliefnet/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace beliefnet::eval {

double normalized_l2(sim::Vec2 pred, sim::Vec2 gt) {
  auto check = [](sim::Vec2 p, const char* who) {
    if (!(p.x >= 0.0 && p.x <= 1.0 && p.y >= 0.0 && p.y <= 1.0))
      throw std::runtime_error(std::string("normalized_l2: ") + who + " out of unit square");
  };
  check(pred, "prediction");
  check(gt, "ground truth");
  return std::hypot(pred.x - gt.x, pred.y - gt.y);
}

SplitTable visible_hidden_split(const std::vector<std::vector<double>>& errors,
                                const std::vector<std::vector<uint8_t>>& visible,
                                const std::vector<sim::Role>& roles) {
  if (errors.size() != visible.size())
    throw std::runtime_error("visible_hidden_split: step count mismatch");
  SplitTable tab;
  for (size_t t = 0; t < errors.size(); ++t) {
    if (errors[t].size() != roles.size() || visible[t].size() != roles.size())
      throw std::runtime_error("visible_hidden_split: agent count mismatch");
    for (size_t k = 0; k < roles.size(); ++k) {
      double e = errors[t][k];
      bool vis = visible[t][k] != 0;
      bool ball = roles[k].is_ball();
      Stratum& s = ball ? (vis ? tab.ball_visible : tab.ball_hidden)
                        : (vis ? tab.player_visible : tab.player_hidden);
      s.sum += e;
      s.count += 1;
      Stratum& all = vis ? tab.visible_all : tab.hidden_all;
      all.sum += e;
      all.count += 1;
    }
  }
  return tab;
}

LlRatio ll_ratio(std::span<const model::BeliefSequence> beliefs,
                 std::span<const data::ModelExample> examples, int cells) {
  if (beliefs.size() != examples.size())
    throw std::runtime_error("ll_ratio: belief/example count mismatch");
  LlRatio out;
  const double log_uniform = -std::log(double(cells));
  double acc = 0.0;
  for (size_t e = 0; e < beliefs.size(); ++e) {
    const model::BeliefSequence& b = beliefs[e];
    for (int t = b.t_obs; t < b.t_obs + b.t_fore; ++t) {
      for (int k = 0; k < b.agents; ++k) {
        int cell = examples[e].steps[size_t(t)].target_cell[size_t(k)];
        double p = b.steps[size_t(t)][size_t(k)].heat[size_t(cell)];
        if (p < 1e-12) {
          p = 1e-12;
          ++out.clamped;
        }
        acc += std::log(p) - log_uniform;
        ++out.samples;
      }
    }
  }
  out.ratio = out.samples > 0 ? std::exp(acc / double(out.samples)) : 1.0;
  return out;
}

std::vector<std::vector<double>> prior_baseline(std::span<const data::ModelExample> train,
                                                int cells) {
  if (train.empty()) throw std::runtime_error("prior_baseline: empty training set");
  const int k = static_cast<int>(train.front().roles.size());
  std::vector<std::vector<double>> counts(size_t(k), std::vector<double>(size_t(cells), 1.0));
  for (const auto& ex : train) {
    for (const auto& step : ex.steps) {
      for (int i = 0; i < k; ++i) counts[size_t(i)][size_t(step.target_cell[size_t(i)])] += 1.0;
    }
  }
  for (auto& row : counts) {
    double total = 0.0;
    for (double c : row) total += c;
    for (double& c : row) c /= total;
  }
  return counts;
}

namespace {

LlRatio prior_baseline_ll(const std::vector<std::vector<double>>& prior,
                          std::span<const data::ModelExample> test, int cells) {
  LlRatio out;
  const double log_uniform = -std::log(double(cells));
  double acc = 0.0;
  for (const auto& ex : test) {
    for (int t = ex.t_obs; t < ex.t_obs + ex.t_fore; ++t) {
      for (size_t k = 0; k < ex.roles.size(); ++k) {
        double p = prior[k][size_t(ex.steps[size_t(t)].target_cell[k])];
        acc += std::log(p) - log_uniform;
        ++out.samples;
      }
    }
  }
  out.ratio = out.samples > 0 ? std::exp(acc / double(out.samples)) : 1.0;
  return out;
}

}  // namespace

EvalReport run_benchmark(const std::vector<std::string>& variant_names,
                         const std::vector<std::filesystem::path>& checkpoints,
                         std::span<const data::ModelExample> test,
                         std::span<const data::ModelExample> train_for_prior,
                         const BenchmarkConfig& cfg) {
  if (variant_names.size() != checkpoints.size())
    throw std::runtime_error("run_benchmark: one checkpoint per variant required");
  if (test.empty()) throw std::runtime_error("run_benchmark: empty test set");
  EvalReport report;
  report.t_obs = cfg.pipeline.t_obs;
  report.t_fore = cfg.pipeline.t_fore;
  const int cells = cfg.pipeline.render.cells();
  const int steps = cfg.pipeline.t_obs + cfg.pipeline.t_fore;

  for (size_t vi = 0; vi < variant_names.size(); ++vi) {
    if (!std::filesystem::exists(checkpoints[vi]))
      throw std::runtime_error("run_benchmark: missing checkpoint " + checkpoints[vi].string());
    train::Checkpoint ck = train::load_checkpoint(checkpoints[vi]);
    if (model::variant_to_string(ck.config.variant) != variant_names[vi])
      throw std::runtime_error("run_benchmark: checkpoint " + checkpoints[vi].string() +
                               " holds variant " + model::variant_to_string(ck.config.variant) +
                               ", expected " + variant_names[vi]);
    if (ck.config.agents != static_cast<int>(test.front().roles.size()))
      throw std::runtime_error("run_benchmark: agent count mismatch between checkpoint and data");

    VariantReport vr;
    vr.variant = variant_names[vi];
    vr.per_step_l2.assign(size_t(steps), 0.0);
    vr.episodes = static_cast<int64_t>(test.size());

    // episodes run on worker threads over the shared read-only params; the
    // reduction walks episodes in order so the report is deterministic
    struct Slot {
      std::vector<std::vector<double>> errors;    // [t][k]
      std::vector<std::vector<uint8_t>> visible;  // observed steps only
      model::BeliefSequence sampled;
    };
    std::vector<Slot> slots(test.size());
    model::ModelParams& params = ck.params;
    parallel_for(static_cast<int>(test.size()), [&](int ei) {
      const data::ModelExample& ex = test[size_t(ei)];
      Slot& slot = slots[size_t(ei)];
      ad::Tape tape;
      // filter pass: state estimates
      model::RolloutOptions fopts;
      fopts.mode = model::Mode::kFilter;
      model::RolloutResult fr = model::rollout(tape, params, ex, fopts);
      model::BeliefSequence fb = model::extract_beliefs(tape, fr);
      for (int t = 0; t < steps; ++t) {
        std::vector<double> row_err;
        for (int k = 0; k < fb.agents; ++k) {
          sim::Vec2 pred = render::heatmap_to_coords(fb.steps[size_t(t)][size_t(k)].heat,
                                                     cfg.pipeline.render);
          row_err.push_back(normalized_l2(pred, ex.steps[size_t(t)].target_pos[size_t(k)]));
        }
        slot.errors.push_back(std::move(row_err));
        if (t < ex.t_obs) slot.visible.push_back(ex.steps[size_t(t)].visible);
      }
      // sample pass: forecasting likelihoods, averaged over prior draws
      const int draws = std::max(1, cfg.ll_samples);
      for (int s = 0; s < draws; ++s) {
        tape.clear();
        model::RolloutOptions sopts;
        sopts.mode = model::Mode::kSample;
        sopts.rng_key = Rng(cfg.eval_seed).child(uint64_t(ei), 0x5a, uint64_t(s)).key();
        model::RolloutResult sr = model::rollout(tape, params, ex, sopts);
        model::BeliefSequence d = model::extract_beliefs(tape, sr);
        if (s == 0) {
          slot.sampled = std::move(d);
          if (draws > 1)
            for (auto& trow : slot.sampled.steps)
              for (auto& bs : trow)
                for (double& p : bs.heat) p /= double(draws);
        } else {
          for (size_t t = 0; t < slot.sampled.steps.size(); ++t)
            for (size_t k = 0; k < slot.sampled.steps[t].size(); ++k)
              for (size_t c = 0; c < slot.sampled.steps[t][k].heat.size(); ++c)
                slot.sampled.steps[t][k].heat[c] += d.steps[t][k].heat[c] / double(draws);
        }
      }
    });

    std::vector<double> step_counts(size_t(steps), 0.0);
    std::vector<std::vector<double>> split_errors;
    std::vector<std::vector<uint8_t>> split_visible;
    std::vector<model::BeliefSequence> sampled;
    sampled.reserve(test.size());
    for (Slot& slot : slots) {
      for (int t = 0; t < steps; ++t) {
        for (double err : slot.errors[size_t(t)]) {
          vr.per_step_l2[size_t(t)] += err;
          step_counts[size_t(t)] += 1.0;
        }
        if (t < static_cast<int>(slot.visible.size()))
          split_errors.push_back(slot.errors[size_t(t)]);
      }
      for (auto& v : slot.visible) split_visible.push_back(std::move(v));
      sampled.push_back(std::move(slot.sampled));
    }
    for (int t = 0; t < steps; ++t) vr.per_step_l2[size_t(t)] /= step_counts[size_t(t)];
    vr.split = visible_hidden_split(split_errors, split_visible, test.front().roles);
    vr.ll = ll_ratio(sampled, test, cells);
    report.variants.push_back(std::move(vr));
  }

  if (!train_for_prior.empty()) {
    auto prior = prior_baseline(train_for_prior, cells);
    report.prior_ll = prior_baseline_ll(prior, test, cells);
  }
  return report;
}

std::string report_to_csv(const EvalReport& r) {
  std::ostringstream os;
  os.precision(12);
  os << "variant,metric,value\n";
  for (const auto& v : r.variants) {
    for (size_t t = 0; t < v.per_step_l2.size(); ++t) {
      std::string tag = int(t) < r.t_obs ? "observed" : "forecast";
      os << v.variant << ",l2_step" << (t + 1) << "_" << tag << "," << v.per_step_l2[t] << "\n";
    }
    auto put = [&](const char* name, const Stratum& s) {
      if (s.present()) os << v.variant << "," << name << "," << s.mean() << "\n";
    };
    put("l2_ball_visible", v.split.ball_visible);
    put("l2_ball_hidden", v.split.ball_hidden);
    put("l2_player_visible", v.split.player_visible);
    put("l2_player_hidden", v.split.player_hidden);
    put("l2_hidden_all", v.split.hidden_all);
    put("l2_visible_all", v.split.visible_all);
    os << v.variant << ",ll_ratio," << v.ll.ratio << "\n";
    os << v.variant << ",ll_samples," << v.ll.samples << "\n";
    os << v.variant << ",ll_clamped," << v.ll.clamped << "\n";
    os << v.variant << ",episodes," << v.episodes << "\n";
  }
  if (r.prior_ll) os << "prior,ll_ratio," << r.prior_ll->ratio << "\n";
  return os.str();
}

std::string report_to_text(const EvalReport& r) {
  std::ostringstream os;
  os.precision(4);
  os << "per-step normalized l2 (steps 1.." << (r.t_obs + r.t_fore) << ", '|' marks forecast)\n";
  for (const auto& v : r.variants) {
    os << "  " << v.variant << ":";
    for (size_t t = 0; t < v.per_step_l2.size(); ++t) {
      os << (int(t) == r.t_obs ? " |" : "") << " " << v.per_step_l2[t];
    }
    os << "\n";
  }
  os << "observed-step l2 by stratum (ball/player x visible/hidden)\n";
  for (const auto& v : r.variants) {
    auto cell = [&](const Stratum& s) {
      return s.present() ? std::to_string(s.mean()) : std::string("-");
    };
    os << "  " << v.variant << ": ball " << cell(v.split.ball_visible) << "/"
       << cell(v.split.ball_hidden) << "  player " << cell(v.split.player_visible) << "/"
       << cell(v.split.player_hidden) << "\n";
  }
  os << "forecast log-likelihood ratio over uniform\n";
  if (r.prior_ll) os << "  prior-baseline: " << r.prior_ll->ratio << "\n";
  for (const auto& v : r.variants) os << "  " << v.variant << ": " << v.ll.ratio << "\n";
  return os.str();
}

void export_samples(const model::BeliefSequence& beliefs, const data::ModelExample& ex,
                    const render::RenderConfig& rc, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const int steps = beliefs.t_obs + beliefs.t_fore;
  for (int t = 0; t < steps; ++t) {
    for (int k = 0; k < beliefs.agents; ++k) {
      std::ostringstream name;
      name << "heat_agent" << k << "_step" << (t + 1) << ".pgm";
      render::write_pgm(dir / name.str(), beliefs.steps[size_t(t)][size_t(k)].heat, rc);
    }
  }
  sim::TrajectorySet set;
  sim::Episode ep;
  ep.roles = ex.roles;
  ep.seed = ex.key;
  for (int t = 0; t < steps; ++t) {
    std::vector<sim::Vec2> frame;
    for (int k = 0; k < beliefs.agents; ++k) {
      int cell = beliefs.steps[size_t(t)][size_t(k)].fed_cell;
      if (cell < 0) cell = model::argmax_cell(beliefs.steps[size_t(t)][size_t(k)].heat);
      frame.push_back(render::cell_center(cell, rc));
    }
    ep.frames.push_back(std::move(frame));
  }
  set.episodes.push_back(std::move(ep));
  sim::save_jsonl(set, dir / "sampled_trajectory.jsonl");
}

}  // namespace beliefnet::eval
