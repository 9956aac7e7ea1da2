#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "beliefnet/dataset.hpp"
#include "beliefnet/model.hpp"

namespace beliefnet::train {

struct TrainConfig {
  int t_obs{6};
  int t_fore{4};
  double beta_max{1.0};
  double beta_anneal_frac{0.2};
  double gamma{0.8};        // forecast discount
  double tf_decay_frac{0.5};
  double lr{0.05};
  double momentum{0.9};
  int warmup_steps{100};
  int total_steps{2000};
  int batch{8};
  uint64_t seed{1};
  bool kl_on_forecast{false};
  bool lambda_literal_max{false};  // use max(t/T, 1) instead of the discount
  double clip_norm{5.0};
  int pretrain_steps{0};
};

// Per-step loss weights for t = 1..T+dT. Observed steps weigh 1; future
// steps decay by gamma^(t-T) and are rescaled so both halves sum to T.
std::vector<double> lambda_schedule(int t_obs, int t_fore, double gamma, bool literal_max = false);

// Linear 0 -> beta_max over the anneal window, constant after.
double beta_schedule(int64_t step, const TrainConfig& cfg);

// Linear 1 -> 0 over the decay window, 0 after.
double teacher_forcing_prob(int64_t step, const TrainConfig& cfg);

// Linear warmup to base, then cosine to 0 at total_steps.
double lr_schedule(int64_t step, const TrainConfig& cfg);

struct LossParts {
  double total{0}, recon{0}, kl{0};
};

// total = sum_t lambda_t * sum_k CE(heat, target) + beta * sum KL(post||prior),
// with KL taken only where a posterior exists.
std::pair<ad::Tensor, LossParts> elbo_loss(ad::Tape& t, const model::RolloutResult& r,
                                           const data::ModelExample& ex,
                                           std::span<const double> lambdas, double beta);

struct StepMetrics {
  int64_t step{0};
  double loss{0}, recon{0}, kl{0}, beta{0}, lr{0}, grad_norm{0};
};

// Momentum SGD over a fixed dataset of examples.
class Trainer {
 public:
  Trainer(model::ModelParams& params, std::vector<data::ModelExample> examples, TrainConfig cfg);

  StepMetrics step();                         // one optimizer step
  void run(const std::filesystem::path& dir); // full schedule + metrics.csv + checkpoint
  int64_t current_step() const { return step_; }
  void set_step(int64_t s) { step_ = s; }

  // Cross-entropy on visible agents only, through the visual decoder.
  StepMetrics pretrain_step();

 private:
  model::ModelParams& params_;
  std::vector<data::ModelExample> examples_;
  TrainConfig cfg_;
  std::vector<double> lambdas_;
  ad::Tape tape_;
  std::vector<ad::Tape> tapes_;
  int64_t step_{0};
  void apply_update(double lr);
  double clip_gradients();
};

// Binary checkpoint: magic "GVRN", version, step, rng seed, config echo,
// named parameter index, flat value buffer, momentum buffer.
void save_checkpoint(const model::ModelParams& params, int64_t step, uint64_t rng_seed,
                     const std::filesystem::path& path);

struct Checkpoint {
  uint32_t version{0};
  int64_t step{0};
  uint64_t rng_seed{0};
  model::ModelConfig config;
  model::ModelParams params;  // reconstructed, momentum restored
};

Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace beliefnet::train
