#include "beliefnet/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace beliefnet::model {

using ad::Tape;
using ad::Tensor;

Variant variant_from_string(const std::string& s) {
  if (s == "visual-only") return Variant::kVisualOnly;
  if (s == "rnn-shared") return Variant::kRnnShared;
  if (s == "vrnn-shared") return Variant::kVrnnShared;
  if (s == "indep-rnn") return Variant::kIndepRnn;
  if (s == "social-rnn") return Variant::kSocialRnn;
  if (s == "graph-rnn") return Variant::kGraphRnn;
  if (s == "graph-vrnn") return Variant::kGraphVrnn;
  throw std::runtime_error("unknown variant: " + s);
}

std::string variant_to_string(Variant v) {
  switch (v) {
    case Variant::kVisualOnly: return "visual-only";
    case Variant::kRnnShared: return "rnn-shared";
    case Variant::kVrnnShared: return "vrnn-shared";
    case Variant::kIndepRnn: return "indep-rnn";
    case Variant::kSocialRnn: return "social-rnn";
    case Variant::kGraphRnn: return "graph-rnn";
    case Variant::kGraphVrnn: return "graph-vrnn";
  }
  return "?";
}

std::string model_config_to_text(const ModelConfig& cfg) {
  std::ostringstream os;
  os << "variant = " << variant_to_string(cfg.variant) << "\n";
  os << "agents = " << cfg.agents << "\n";
  os << "hidden = " << cfg.hidden << "\n";
  os << "latent = " << cfg.latent << "\n";
  os << "vfeat = " << cfg.vfeat << "\n";
  os << "state_embed = " << cfg.state_embed << "\n";
  os << "raster_w = " << cfg.render.raster_w << "\n";
  os << "raster_h = " << cfg.render.raster_h << "\n";
  os << "grid_cols = " << cfg.render.grid_cols << "\n";
  os << "grid_rows = " << cfg.render.grid_rows << "\n";
  return os.str();
}

ModelConfig model_config_from_text(const std::string& text) {
  ModelConfig cfg;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      size_t a = s.find_first_not_of(" \t");
      size_t b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    if (key == "variant") cfg.variant = variant_from_string(val);
    else if (key == "agents") cfg.agents = std::stoi(val);
    else if (key == "hidden") cfg.hidden = std::stoi(val);
    else if (key == "latent") cfg.latent = std::stoi(val);
    else if (key == "vfeat") cfg.vfeat = std::stoi(val);
    else if (key == "state_embed") cfg.state_embed = std::stoi(val);
    else if (key == "raster_w") cfg.render.raster_w = std::stoi(val);
    else if (key == "raster_h") cfg.render.raster_h = std::stoi(val);
    else if (key == "grid_cols") cfg.render.grid_cols = std::stoi(val);
    else if (key == "grid_rows") cfg.render.grid_rows = std::stoi(val);
    else throw std::runtime_error("unknown model config key: " + key);
  }
  return cfg;
}

namespace {
constexpr int kDecoderHidden = 64;
constexpr int kAttentionHidden = 32;
constexpr int kGaussHidden = 32;
}  // namespace

ModelParams ModelParams::create(const ModelConfig& cfg, uint64_t seed) {
  ModelParams m;
  m.cfg = cfg;
  Rng rng(seed);
  const Variant v = cfg.variant;
  const int g = cfg.render.cells();
  const int h = cfg.hidden;
  const int z = cfg.latent;
  const int k = cfg.agents;

  m.backbone = ad::ConvEncoder::create(m.store, "backbone", cfg.render.raster_h,
                                       cfg.render.raster_w, rng);
  const int f = m.backbone.feature_size();
  for (int i = 0; i < k; ++i)
    m.heads.push_back(ad::Linear::create(m.store, "head" + std::to_string(i), f, cfg.vfeat, rng));
  m.dv = ad::Mlp::create(m.store, "dv", {cfg.vfeat, kDecoderHidden, g}, rng);
  if (v == Variant::kVisualOnly)
    m.df = ad::Mlp::create(m.store, "df", {cfg.vfeat, kDecoderHidden, g}, rng);

  if (has_recurrence(v)) {
    const int idbits = shared_hidden(v) ? k : 0;
    const int zs = has_latent(v) ? 2 * z : 0;
    // dh input columns are laid out h, then mu, then sigma, then agent id
    m.dh = ad::Mlp::create(m.store, "dh", {h + zs + idbits, kDecoderHidden, g}, rng);
    const int si_in = cfg.vfeat + h + zs + g + idbits;
    m.sv = ad::Mlp::create(m.store, "sv", {si_in, kAttentionHidden, 1}, rng);
    m.sh = ad::Mlp::create(m.store, "sh", {si_in, kAttentionHidden, 1}, rng);
    m.sembed = ad::Linear::create(m.store, "sembed", g, cfg.state_embed, rng);
    if (has_latent(v)) {
      m.prior_net = ad::Mlp::create(m.store, "prior", {h, kGaussHidden, 2 * z}, rng);
      m.enc_net = ad::Mlp::create(m.store, "enc", {h + cfg.state_embed, kGaussHidden, 2 * z}, rng);
      // start the latent noise scale small: the raw-sigma half of the head
      // bias sits at softplus(-2) ~ 0.13 so early recurrence inputs are not
      // swamped by 16 dims of unit-scale noise
      for (ad::Param* b : {m.prior_net.layers[1].b, m.enc_net.layers[1].b}) {
        for (int i = z; i < 2 * z; ++i) b->value[size_t(i)] = -2.0;
      }
    }
    if (has_graph(v)) {
      m.edge = ad::Mlp::create(m.store, "edge", {2 * h, h, h}, rng);
      m.node = ad::Mlp::create(m.store, "node", {2 * h, h, h}, rng);
    } else if (has_social_pool(v)) {
      m.edge = ad::Mlp::create(m.store, "edge", {h, h, h}, rng);
      m.node = ad::Mlp::create(m.store, "node", {2 * h, h, h}, rng);
    }
    // gru input columns per agent: state embedding first, then z
    const int per_agent_in = cfg.state_embed + (has_latent(v) ? z : 0);
    const int gru_in = shared_hidden(v) ? k * per_agent_in : per_agent_in;
    m.gru = ad::GruCell::create(m.store, "gru", gru_in, h, rng);
  }
  return m;
}

namespace {

Tensor one_hot(Tape& t, int idx, int n) {
  std::vector<double> v(size_t(n), 0.0);
  v[size_t(idx)] = 1.0;
  return t.constant(ad::Shape{n}, v);
}

}  // namespace

ad::GaussianStats prior_step(Tape& t, ModelParams& m, Tensor h) {
  if (t.shape(h).d[0] != m.cfg.hidden)
    throw std::runtime_error("prior_step: hidden size mismatch");
  return ad::gaussian_from_head(t, m.prior_net(t, h), m.cfg.latent);
}

ad::GaussianStats encode_posterior(Tape& t, ModelParams& m, Tensor h, int target_cell) {
  if (t.shape(h).d[0] != m.cfg.hidden)
    throw std::runtime_error("encode_posterior: hidden size mismatch");
  Tensor target = one_hot(t, target_cell, m.cfg.render.cells());
  Tensor emb = m.sembed(t, target);
  return ad::gaussian_from_head(t, m.enc_net(t, t.concat({{h, emb}})), m.cfg.latent);
}

FuseOut fuse_decode(Tape& t, ModelParams& m, Tensor vfeat, Tensor h,
                    const std::optional<ad::GaussianStats>& stats, Tensor prev_heat, int agent) {
  std::vector<Tensor> dh_parts{h};
  std::vector<Tensor> si_parts{vfeat, h};
  if (stats) {
    dh_parts.push_back(stats->mu);
    dh_parts.push_back(stats->sigma);
    si_parts.push_back(stats->mu);
    si_parts.push_back(stats->sigma);
  }
  si_parts.push_back(prev_heat);
  if (agent >= 0) {
    Tensor id = one_hot(t, agent, m.cfg.agents);
    dh_parts.push_back(id);
    si_parts.push_back(id);
  }
  Tensor dh_in = t.concat(dh_parts);
  Tensor si_in = t.concat(si_parts);
  FuseOut out;
  out.alpha_v = t.sigmoid(m.sv(t, si_in));
  out.alpha_h = t.sigmoid(m.sh(t, si_in));
  Tensor dv_logits = m.dv(t, vfeat);
  Tensor dh_logits = m.dh(t, dh_in);
  out.logits = t.add(t.scale_by(dv_logits, out.alpha_v), t.scale_by(dh_logits, out.alpha_h));
  out.heat = t.softmax(out.logits);
  return out;
}

std::vector<Tensor> graph_message_pass(Tape& t, ModelParams& m, std::span<const Tensor> h) {
  const int k = static_cast<int>(h.size());
  const bool social = has_social_pool(m.cfg.variant);
  std::vector<Tensor> msgs(static_cast<size_t>(k));
  if (k == 1) {
    msgs[0] = t.zeros(ad::Shape{m.cfg.hidden});
  } else if (social) {
    // neighbor embeddings are agent-local, compute once
    std::vector<Tensor> emb(static_cast<size_t>(k));
    for (int j = 0; j < k; ++j) emb[size_t(j)] = m.edge(t, h[size_t(j)]);
    for (int i = 0; i < k; ++i) {
      Tensor acc;
      bool first = true;
      for (int j = 0; j < k; ++j) {
        if (j == i) continue;
        acc = first ? emb[size_t(j)] : t.maximum(acc, emb[size_t(j)]);
        first = false;
      }
      msgs[size_t(i)] = acc;
    }
  } else {
    for (int i = 0; i < k; ++i) {
      Tensor acc;
      bool first = true;
      for (int j = 0; j < k; ++j) {
        if (j == i) continue;
        Tensor e = m.edge(t, t.concat({{h[size_t(i)], h[size_t(j)]}}));
        acc = first ? e : t.add(acc, e);
        first = false;
      }
      msgs[size_t(i)] = t.affine(acc, 1.0 / double(k - 1), 0.0);
    }
  }
  std::vector<Tensor> out(static_cast<size_t>(k));
  for (int i = 0; i < k; ++i)
    out[size_t(i)] = m.node(t, t.concat({{h[size_t(i)], msgs[size_t(i)]}}));
  return out;
}

Tensor recurrence(Tape& t, ModelParams& m, int fed_cell, std::optional<Tensor> z, Tensor h) {
  Tensor emb = m.sembed(t, one_hot(t, fed_cell, m.cfg.render.cells()));
  Tensor x = z ? t.concat({{emb, *z}}) : emb;
  return m.gru(t, x, h);
}

int sample_cell(std::span<const double> heat, double u) {
  double cum = 0.0;
  int last_positive = 0;
  for (size_t c = 0; c < heat.size(); ++c) {
    if (heat[c] > 0.0) last_positive = static_cast<int>(c);
    cum += heat[c];
    if (u < cum) return static_cast<int>(c);
  }
  return last_positive;
}

int argmax_cell(std::span<const double> heat) {
  int best = 0;
  for (size_t c = 1; c < heat.size(); ++c)
    if (heat[c] > heat[size_t(best)]) best = static_cast<int>(c);
  return best;
}

namespace {

// rng purpose tags so per-(t, k) draws never shift each other
constexpr uint64_t kTagTeacher = 1;
constexpr uint64_t kTagFeed = 2;
constexpr uint64_t kTagLatent = 3;
constexpr uint64_t kTagSharedEps = 4;
constexpr uint64_t kTagSharedFeed = 5;

}  // namespace

RolloutResult rollout(Tape& t, ModelParams& m, const data::ModelExample& ex,
                      const RolloutOptions& opts) {
  const ModelConfig& cfg = m.cfg;
  const Variant v = cfg.variant;
  const int k = cfg.agents;
  const int g = cfg.render.cells();
  const int steps = ex.t_obs + ex.t_fore;
  if (static_cast<int>(ex.roles.size()) != k)
    throw std::runtime_error("rollout: example has " + std::to_string(ex.roles.size()) +
                             " agents, model wants " + std::to_string(k));
  if (static_cast<int>(ex.steps.size()) != steps)
    throw std::runtime_error("rollout: step count mismatch");
  const bool train = opts.mode == Mode::kTrain;
  for (int s = 0; s < steps && train; ++s) {
    if (static_cast<int>(ex.steps[size_t(s)].target_cell.size()) != k)
      throw std::runtime_error("rollout: train mode needs targets for every step and agent");
  }

  Rng base(opts.rng_key);
  RolloutResult out;
  out.t_obs = ex.t_obs;
  out.t_fore = ex.t_fore;
  out.agents = k;

  Tensor uniform_heat = t.full(ad::Shape{g}, 1.0 / double(g));
  std::vector<Tensor> prev_heat(size_t(k), uniform_heat);

  const int nh = shared_hidden(v) ? 1 : k;
  std::vector<Tensor> h(size_t(nh), t.zeros(ad::Shape{cfg.hidden}));

  // encode the all-zero frame once; forecasting reuses it
  std::vector<Tensor> zero_vfeat;
  auto ensure_zero_vfeat = [&]() {
    if (!zero_vfeat.empty()) return;
    Tensor zgrid = t.zeros(ad::Shape{cfg.render.raster_h, cfg.render.raster_w, 3});
    Tensor feat = m.backbone(t, zgrid);
    for (int i = 0; i < k; ++i) zero_vfeat.push_back(t.relu(m.heads[size_t(i)](t, feat)));
  };

  std::vector<Tensor> last_obs_vfeat;

  for (int step = 0; step < steps; ++step) {
    const bool observed = step < ex.t_obs;
    std::vector<Tensor> vfeat(static_cast<size_t>(k));
    if (observed) {
      const render::Grid& grid = ex.steps[size_t(step)].grid;
      Tensor img = t.constant(ad::Shape{grid.h, grid.w, 3}, grid.px);
      Tensor feat = m.backbone(t, img);
      for (int i = 0; i < k; ++i) vfeat[size_t(i)] = t.relu(m.heads[size_t(i)](t, feat));
      if (step == ex.t_obs - 1) last_obs_vfeat = vfeat;
    } else if (v == Variant::kVisualOnly) {
      vfeat = last_obs_vfeat;
    } else {
      ensure_zero_vfeat();
      vfeat = zero_vfeat;
    }

    // interaction on the carried hidden states
    std::vector<Tensor> hdec = h;
    if ((has_graph(v) || has_social_pool(v)) && nh == k) hdec = graph_message_pass(t, m, h);

    // shared latent noise for sample mode keeps the rollout index-free
    std::vector<double> shared_eps;
    double shared_u = 0.0;
    if (opts.mode == Mode::kSample) {
      Rng r = base.child(uint64_t(step), 0, kTagSharedEps);
      shared_eps.resize(size_t(cfg.latent));
      for (double& e : shared_eps) e = r.normal();
      shared_u = base.child(uint64_t(step), 0, kTagSharedFeed).uniform();
    }

    std::vector<StepOut> row(static_cast<size_t>(k));
    std::vector<Tensor> gru_inputs;
    for (int i = 0; i < k; ++i) {
      StepOut& so = row[size_t(i)];
      Tensor hq = hdec[size_t(nh == 1 ? 0 : i)];
      std::optional<ad::GaussianStats> stats;
      std::optional<Tensor> zdraw;
      if (has_latent(v)) {
        so.prior = prior_step(t, m, hq);
        so.has_stats = true;
        stats = so.prior;
        const bool want_post = train && (observed || opts.kl_on_forecast);
        if (want_post) {
          so.post = encode_posterior(t, m, hq, ex.steps[size_t(step)].target_cell[size_t(i)]);
          so.has_post = true;
        }
        switch (opts.mode) {
          case Mode::kTrain: {
            Rng zr = base.child(uint64_t(step), uint64_t(i), kTagLatent);
            zdraw = ad::reparameterize(t, so.has_post ? so.post : so.prior, zr);
            break;
          }
          case Mode::kFilter:
            zdraw = so.prior.mu;
            break;
          case Mode::kSample: {
            Tensor eps = t.constant(ad::Shape{cfg.latent}, shared_eps);
            zdraw = t.add(so.prior.mu, t.mul(so.prior.sigma, eps));
            break;
          }
        }
        so.z = *zdraw;
      }

      if (v == Variant::kVisualOnly) {
        so.logits = observed ? m.dv(t, vfeat[size_t(i)]) : m.df(t, vfeat[size_t(i)]);
        so.heat = t.softmax(so.logits);
      } else {
        FuseOut fo = fuse_decode(t, m, vfeat[size_t(i)], hq, stats, prev_heat[size_t(i)],
                                 shared_hidden(v) ? i : -1);
        so.logits = fo.logits;
        so.heat = fo.heat;
        so.alpha_v = fo.alpha_v;
        so.alpha_h = fo.alpha_h;
      }

      // state feedback
      std::span<const double> heat_vals = t.val(so.heat);
      switch (opts.mode) {
        case Mode::kTrain: {
          double coin = base.child(uint64_t(step), uint64_t(i), kTagTeacher).uniform();
          if (coin < opts.teacher_prob) {
            so.fed_cell = ex.steps[size_t(step)].target_cell[size_t(i)];
          } else {
            double u = base.child(uint64_t(step), uint64_t(i), kTagFeed).uniform();
            so.fed_cell = sample_cell(heat_vals, u);
          }
          break;
        }
        case Mode::kFilter:
          so.fed_cell = argmax_cell(heat_vals);
          break;
        case Mode::kSample:
          so.fed_cell = has_latent(v) ? sample_cell(heat_vals, shared_u)
                                      : argmax_cell(heat_vals);
          break;
      }

      if (has_recurrence(v)) {
        Tensor emb = m.sembed(t, one_hot(t, so.fed_cell, g));
        gru_inputs.push_back(zdraw ? t.concat({{emb, *zdraw}}) : emb);
      }
    }

    if (has_recurrence(v)) {
      // the gru carries the raw state; the interaction net only shapes what
      // the prior, decoder, and gates see
      if (nh == 1) {
        h[0] = m.gru(t, t.concat(gru_inputs), h[0]);
      } else {
        for (int i = 0; i < k; ++i) h[size_t(i)] = m.gru(t, gru_inputs[size_t(i)], h[size_t(i)]);
      }
    }
    for (int i = 0; i < k; ++i) prev_heat[size_t(i)] = row[size_t(i)].heat;
    out.steps.push_back(std::move(row));
  }
  return out;
}

BeliefSequence extract_beliefs(const Tape& t, const RolloutResult& r) {
  BeliefSequence b;
  b.t_obs = r.t_obs;
  b.t_fore = r.t_fore;
  b.agents = r.agents;
  for (const auto& row : r.steps) {
    std::vector<BeliefStep> brow;
    for (const StepOut& so : row) {
      BeliefStep bs;
      auto heat = t.val(so.heat);
      bs.heat.assign(heat.begin(), heat.end());
      if (so.alpha_v.valid()) {
        bs.alpha_v = t.scalar(so.alpha_v);
        bs.alpha_h = t.scalar(so.alpha_h);
      }
      if (so.has_stats) {
        GaussianData gd;
        auto mu = t.val(so.prior.mu);
        auto sig = t.val(so.prior.sigma);
        gd.mu.assign(mu.begin(), mu.end());
        gd.sigma.assign(sig.begin(), sig.end());
        bs.prior = std::move(gd);
        auto zv = t.val(so.z);
        bs.z.assign(zv.begin(), zv.end());
      }
      if (so.has_post) {
        GaussianData gd;
        auto mu = t.val(so.post.mu);
        auto sig = t.val(so.post.sigma);
        gd.mu.assign(mu.begin(), mu.end());
        gd.sigma.assign(sig.begin(), sig.end());
        bs.post = std::move(gd);
      }
      bs.fed_cell = so.fed_cell;
      brow.push_back(std::move(bs));
    }
    b.steps.push_back(std::move(brow));
  }
  return b;
}

}  // namespace beliefnet::model
