#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "beliefnet/dataset.hpp"
#include "beliefnet/nn.hpp"
#include "beliefnet/render.hpp"

namespace beliefnet::model {

enum class Variant {
  kVisualOnly,
  kRnnShared,
  kVrnnShared,
  kIndepRnn,
  kSocialRnn,
  kGraphRnn,
  kGraphVrnn,
};

Variant variant_from_string(const std::string& s);
std::string variant_to_string(Variant v);

inline bool has_recurrence(Variant v) { return v != Variant::kVisualOnly; }
inline bool has_latent(Variant v) { return v == Variant::kVrnnShared || v == Variant::kGraphVrnn; }
inline bool has_graph(Variant v) { return v == Variant::kGraphRnn || v == Variant::kGraphVrnn; }
inline bool has_social_pool(Variant v) { return v == Variant::kSocialRnn; }
inline bool shared_hidden(Variant v) { return v == Variant::kRnnShared || v == Variant::kVrnnShared; }

struct ModelConfig {
  Variant variant{Variant::kGraphVrnn};
  int agents{3};
  int hidden{64};
  int latent{16};
  int vfeat{32};
  int state_embed{32};
  render::RenderConfig render;
};

std::string model_config_to_text(const ModelConfig& cfg);
ModelConfig model_config_from_text(const std::string& text);

// All learned weights of one variant. The conv backbone is shared across
// agents; each agent has its own feature head as identifier; everything else
// is shared.
struct ModelParams {
  ModelConfig cfg;
  ad::ParamStore store;

  ad::ConvEncoder backbone;
  std::vector<ad::Linear> heads;  // per agent, feature -> vfeat
  ad::Mlp dv;                     // visual decoder, vfeat -> G logits
  ad::Mlp df;                     // visual-only future decoder
  ad::Mlp dh;                     // hidden decoder -> G logits
  ad::Mlp sv, sh;                 // attention logits
  ad::Mlp prior_net, enc_net;     // -> {2Z}
  ad::Linear sembed;              // one-hot state -> embedding
  ad::Mlp edge, node;             // interaction nets
  ad::GruCell gru;

  static ModelParams create(const ModelConfig& cfg, uint64_t seed);
};

// --- single-step pieces -----------------------------------------------------

ad::GaussianStats prior_step(ad::Tape& t, ModelParams& m, ad::Tensor h);
ad::GaussianStats encode_posterior(ad::Tape& t, ModelParams& m, ad::Tensor h, int target_cell);

struct FuseOut {
  ad::Tensor logits, heat, alpha_v, alpha_h;
};
// logits = alpha_v * dv(vfeat) + alpha_h * dh(h [, mu, sigma] [, agent one-hot]);
// the gates see (vfeat, h, stats, previous heatmap). `agent` >= 0 appends a
// one-hot agent id for the shared-hidden variants.
FuseOut fuse_decode(ad::Tape& t, ModelParams& m, ad::Tensor vfeat, ad::Tensor h,
                    const std::optional<ad::GaussianStats>& stats, ad::Tensor prev_heat,
                    int agent = -1);

// Relation network (or social max-pool for that variant): every pair feeds a
// shared edge net, messages aggregate symmetrically, and a node net updates
// each hidden state. K = 1 gets a zero message.
std::vector<ad::Tensor> graph_message_pass(ad::Tape& t, ModelParams& m,
                                           std::span<const ad::Tensor> h);

// GRU update from the fed state sample and (optional) latent draw.
ad::Tensor recurrence(ad::Tape& t, ModelParams& m, int fed_cell, std::optional<ad::Tensor> z,
                      ad::Tensor h);

// --- rollout -----------------------------------------------------------------

enum class Mode { kTrain, kFilter, kSample };

struct RolloutOptions {
  Mode mode{Mode::kFilter};
  double teacher_prob{1.0};
  bool kl_on_forecast{false};
  uint64_t rng_key{0};
};

struct StepOut {
  ad::Tensor logits, heat;
  ad::Tensor alpha_v, alpha_h;  // invalid for visual-only
  bool has_stats{false};
  ad::GaussianStats prior, post;
  bool has_post{false};
  ad::Tensor z;      // invalid when variant has no latent
  int fed_cell{-1};  // state used for feedback/export
};

struct RolloutResult {
  std::vector<std::vector<StepOut>> steps;  // [t][k]
  int t_obs{0}, t_fore{0}, agents{0};
};

// Runs the variant over one example. Train mode teacher-forces with
// probability `teacher_prob` and samples the posterior; filter mode is fully
// deterministic (latent at its prior mean, argmax feedback); sample mode
// draws the latent from the prior and feeds sampled states.
RolloutResult rollout(ad::Tape& t, ModelParams& m, const data::ModelExample& ex,
                      const RolloutOptions& opts);

// --- value-level beliefs ------------------------------------------------------

struct GaussianData {
  std::vector<double> mu, sigma;
};

struct BeliefStep {
  std::vector<double> heat;
  double alpha_v{1.0}, alpha_h{0.0};
  std::optional<GaussianData> prior, post;
  std::vector<double> z;
  int fed_cell{-1};
};

struct BeliefSequence {
  int t_obs{0}, t_fore{0}, agents{0};
  std::vector<std::vector<BeliefStep>> steps;  // [t][k]
};

BeliefSequence extract_beliefs(const ad::Tape& t, const RolloutResult& r);

// Categorical draw by inverse CDF; `u` in [0,1).
int sample_cell(std::span<const double> heat, double u);
// Lowest index wins ties.
int argmax_cell(std::span<const double> heat);

}  // namespace beliefnet::model
