#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "beliefnet/model.hpp"
#include "beliefnet/train.hpp"

namespace beliefnet::eval {

// Euclidean distance between two points of the unit square.
double normalized_l2(sim::Vec2 pred, sim::Vec2 gt);

struct Stratum {
  double sum{0};
  int64_t count{0};
  bool present() const { return count > 0; }
  double mean() const { return sum / double(count); }
};

// Ball/player x visible/hidden means; empty strata stay absent.
struct SplitTable {
  Stratum ball_visible, ball_hidden, player_visible, player_hidden;
  Stratum hidden_all, visible_all;
};

SplitTable visible_hidden_split(const std::vector<std::vector<double>>& errors,
                                const std::vector<std::vector<uint8_t>>& visible,
                                const std::vector<sim::Role>& roles);

// Geometric-mean likelihood ratio over the uniform guess 1/G on forecast
// steps. Zero-probability cells clamp at 1e-12 and are counted.
struct LlRatio {
  double ratio{1.0};
  int64_t samples{0};
  int64_t clamped{0};
};

LlRatio ll_ratio(std::span<const model::BeliefSequence> beliefs,
                 std::span<const data::ModelExample> examples, int cells);

// Per-agent empirical cell frequencies over all training steps, +1 smoothed.
std::vector<std::vector<double>> prior_baseline(std::span<const data::ModelExample> train,
                                                int cells);

struct VariantReport {
  std::string variant;
  std::vector<double> per_step_l2;  // 1..T+dT
  SplitTable split;                 // observed steps only
  LlRatio ll;
  int64_t episodes{0};
};

struct EvalReport {
  std::vector<VariantReport> variants;
  std::optional<LlRatio> prior_ll;
  int t_obs{0}, t_fore{0};
};

struct BenchmarkConfig {
  data::PipelineConfig pipeline;
  uint64_t eval_seed{7};
  int ll_samples{1};  // prior samples per example; >1 uses log-mean-exp
};

// Filter-mode rollouts give the l2 tables; sample-mode rollouts give the
// log-likelihood ratios. Deterministic given eval_seed.
EvalReport run_benchmark(const std::vector<std::string>& variant_names,
                         const std::vector<std::filesystem::path>& checkpoints,
                         std::span<const data::ModelExample> test,
                         std::span<const data::ModelExample> train_for_prior,
                         const BenchmarkConfig& cfg);

std::string report_to_csv(const EvalReport& r);
std::string report_to_text(const EvalReport& r);

// Per-agent per-step heatmap PGMs plus the sampled trajectory as JSONL.
void export_samples(const model::BeliefSequence& beliefs, const data::ModelExample& ex,
                    const render::RenderConfig& rc, const std::filesystem::path& dir);

}  // namespace beliefnet::eval
