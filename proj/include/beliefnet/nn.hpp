#pragma once

#include <memory>
#include <string>
#include <vector>

#include "beliefnet/rng.hpp"
#include "beliefnet/tape.hpp"

namespace beliefnet::ad {

// Owns all Params of a model; iteration order is registration order and is
// the canonical order for checkpoints and optimizer state.
class ParamStore {
 public:
  Param& add(const std::string& name, const Shape& shape);
  Param& find(const std::string& name);
  const std::vector<std::unique_ptr<Param>>& all() const { return params_; }
  int64_t total_size() const;

 private:
  std::vector<std::unique_ptr<Param>> params_;
};

// Uniform(-s, s) with s = sqrt(6 / (fan_in + fan_out)); biases stay zero.
void glorot_init(Param& p, Rng& rng);

struct Linear {
  Param* w{nullptr};  // {out, in}
  Param* b{nullptr};  // {out}
  static Linear create(ParamStore& store, const std::string& name, int in, int out, Rng& rng);
  Tensor operator()(Tape& t, Tensor x) const;
  int in() const { return w->shape.d[1]; }
  int out() const { return w->shape.d[0]; }
};

enum class Act { kNone, kRelu, kTanh, kSigmoid };

// Fully connected stack; `hidden_act` between layers, `out_act` after the last.
struct Mlp {
  std::vector<Linear> layers;
  Act hidden_act{Act::kRelu};
  Act out_act{Act::kNone};
  static Mlp create(ParamStore& store, const std::string& name, std::vector<int> dims, Rng& rng,
                    Act hidden = Act::kRelu, Act out = Act::kNone);
  Tensor operator()(Tape& t, Tensor x) const;
};

// Gated recurrent unit cell.
//   r = sigmoid(Lr [x;h]), u = sigmoid(Lu [x;h]),
//   c = tanh(Lc [x; r*h]), h' = u*h + (1-u)*c
struct GruCell {
  Linear reset, update, cand;
  int input{0}, hidden{0};
  static GruCell create(ParamStore& store, const std::string& name, int input, int hidden,
                        Rng& rng);
  Tensor operator()(Tape& t, Tensor x, Tensor h) const;
};

// Two 3x3 conv layers (8 then 16 channels) with a 1x1 projection shortcut on
// the second, followed by two 2x2 max pools; the pooled map is flattened into
// the feature vector so coarse spatial layout survives aggregation.
struct ConvEncoder {
  Param *w1{nullptr}, *b1{nullptr};
  Param *w2{nullptr}, *b2{nullptr};
  Param *wproj{nullptr};
  int in_h{0}, in_w{0}, in_c{3};
  static ConvEncoder create(ParamStore& store, const std::string& name, int h, int w, Rng& rng);
  Tensor operator()(Tape& t, Tensor img) const;
  int feature_size() const { return (in_h / 4) * (in_w / 4) * 16; }
};

// Diagonal Gaussian on the tape; sigma is strictly positive by construction.
struct GaussianStats {
  Tensor mu;
  Tensor sigma;
};

inline constexpr double kSigmaFloor = 1e-4;

// Splits a {2z} head output into mu and sigma = softplus(raw) + floor.
GaussianStats gaussian_from_head(Tape& t, Tensor head_out, int z);

// z = mu + sigma * eps with eps ~ N(0, I); gradients reach mu and sigma only.
Tensor reparameterize(Tape& t, const GaussianStats& stats, Rng& rng);

// KL(q || p) for diagonal Gaussians, summed over dimensions. Exactly zero
// when q and p carry bitwise-equal statistics.
Tensor gaussian_kl(Tape& t, const GaussianStats& q, const GaussianStats& p);

}  // namespace beliefnet::ad
