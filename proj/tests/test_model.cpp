#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "beliefnet/model.hpp"
#include "beliefnet/sim.hpp"
#include "testutil.hpp"

using namespace beliefnet;
using namespace beliefnet::model;
using ad::Shape;
using ad::Tape;
using ad::Tensor;

namespace {

ModelConfig micro_config(Variant v, int agents = 3) {
  ModelConfig cfg;
  cfg.variant = v;
  cfg.agents = agents;
  cfg.hidden = 8;
  cfg.latent = 4;
  cfg.vfeat = 8;
  cfg.state_embed = 8;
  cfg.render.raster_w = 12;
  cfg.render.raster_h = 8;
  cfg.render.grid_cols = 6;
  cfg.render.grid_rows = 4;
  return cfg;
}

data::ModelExample micro_example(uint64_t seed, int agents = 3) {
  sim::SynthConfig sc;
  sc.agents = agents;
  sc.frames = 10;
  sim::TrajectorySet set = sim::gen_synthetic(sc, seed);
  data::PipelineConfig pc;
  pc.render.raster_w = 12;
  pc.render.raster_h = 8;
  pc.render.grid_cols = 6;
  pc.render.grid_rows = 4;
  pc.frames_per_step = 1;
  pc.t_obs = 6;
  pc.t_fore = 4;
  pc.occlusion_period = 2;
  return data::build_example(set.episodes.front(), 0, pc);
}

void zero_params(ModelParams& m) {
  for (const auto& p : m.store.all()) std::fill(p->value.begin(), p->value.end(), 0.0);
}

bool heats_equal(const BeliefSequence& a, const BeliefSequence& b) {
  for (size_t t = 0; t < a.steps.size(); ++t)
    for (size_t k = 0; k < a.steps[t].size(); ++k)
      if (a.steps[t][k].heat != b.steps[t][k].heat) return false;
  return true;
}

}  // namespace

TEST_CASE("model config text round trips") {
  ModelConfig cfg = micro_config(Variant::kSocialRnn, 4);
  ModelConfig back = model_config_from_text(model_config_to_text(cfg));
  CHECK(back.variant == cfg.variant);
  CHECK(back.agents == cfg.agents);
  CHECK(back.hidden == cfg.hidden);
  CHECK(back.render.grid_cols == cfg.render.grid_cols);
  CHECK_THROWS((void)variant_from_string("super-rnn"));
}

TEST_CASE("prior head with zero parameters gives softplus-floored stats") {
  ModelParams m = ModelParams::create(micro_config(Variant::kGraphVrnn), 1);
  zero_params(m);
  Tape t;
  Tensor h = t.zeros(Shape{8});
  ad::GaussianStats g = prior_step(t, m, h);
  const double want_sigma = std::log(2.0) + 1e-4;
  for (double mu : t.val(g.mu)) CHECK(mu == 0.0);
  for (double s : t.val(g.sigma)) CHECK(s == doctest::Approx(want_sigma).epsilon(1e-12));
}

TEST_CASE("prior head is deterministic") {
  ModelParams m = ModelParams::create(micro_config(Variant::kGraphVrnn), 2);
  Tape t;
  Rng rng(3);
  std::vector<double> hv(8);
  for (double& v : hv) v = rng.uniform(-1, 1);
  ad::GaussianStats a = prior_step(t, m, t.constant(Shape{8}, hv));
  ad::GaussianStats b = prior_step(t, m, t.constant(Shape{8}, hv));
  std::vector<double> am(t.val(a.mu).begin(), t.val(a.mu).end());
  CHECK(std::equal(am.begin(), am.end(), t.val(b.mu).begin()));
}

TEST_CASE("posterior with zero parameters collapses onto the prior") {
  ModelParams m = ModelParams::create(micro_config(Variant::kGraphVrnn), 4);
  zero_params(m);
  Tape t;
  Tensor h = t.zeros(Shape{8});
  ad::GaussianStats prior = prior_step(t, m, h);
  ad::GaussianStats post = encode_posterior(t, m, h, 5);
  CHECK(t.val(prior.mu)[0] == t.val(post.mu)[0]);
  CHECK(t.val(prior.sigma)[2] == t.val(post.sigma)[2]);
  CHECK(t.scalar(ad::gaussian_kl(t, post, prior)) == 0.0);
}

TEST_CASE("prior and posterior heads pass a finite-difference check") {
  ModelParams m = ModelParams::create(micro_config(Variant::kGraphVrnn), 5);
  ad::Param& h = m.store.add("test.h", Shape{8});
  Rng rng(6);
  testutil::fill_random(h, rng);
  auto value = [&]() {
    Tape t;
    ad::GaussianStats prior = prior_step(t, m, t.param(h));
    ad::GaussianStats post = encode_posterior(t, m, t.param(h), 3);
    Tensor loss = t.add(ad::gaussian_kl(t, post, prior),
                        t.add(t.sum(t.mul(prior.mu, prior.mu)), t.sum(post.sigma)));
    return t.scalar(loss);
  };
  Tape t;
  ad::GaussianStats prior = prior_step(t, m, t.param(h));
  ad::GaussianStats post = encode_posterior(t, m, t.param(h), 3);
  Tensor loss = t.add(ad::gaussian_kl(t, post, prior),
                      t.add(t.sum(t.mul(prior.mu, prior.mu)), t.sum(post.sigma)));
  t.backward(loss);
  t.accumulate_param_grads();
  CHECK(testutil::fd_check_store(m.store, value) < 1e-4);
}

TEST_CASE("attention gate closes the hidden path") {
  ModelParams m = ModelParams::create(micro_config(Variant::kGraphVrnn), 7);
  for (double& b : m.store.find("sh.l1.b").value) b = -30.0;
  Tape t;
  Rng rng(8);
  std::vector<double> hv(8), vv(8);
  for (double& v : hv) v = rng.uniform(-1, 1);
  for (double& v : vv) v = rng.uniform(-1, 1);
  Tensor h = t.constant(Shape{8}, hv);
  Tensor vfeat = t.constant(Shape{8}, vv);
  ad::GaussianStats prior = prior_step(t, m, h);
  Tensor prev = t.full(Shape{24}, 1.0 / 24.0);
  FuseOut out = fuse_decode(t, m, vfeat, h, prior, prev);
  Tensor dv_only = t.scale_by(m.dv(t, vfeat), out.alpha_v);
  auto a = t.val(out.logits);
  std::vector<double> got(a.begin(), a.end());
  auto b = t.val(dv_only);
  for (size_t i = 0; i < got.size(); ++i) CHECK(std::abs(got[i] - b[i]) < 1e-9);
}

TEST_CASE("attention gate closes the visual path") {
  ModelParams m = ModelParams::create(micro_config(Variant::kGraphVrnn), 9);
  for (double& b : m.store.find("sv.l1.b").value) b = -30.0;
  // the hidden gate also reads vfeat (first 8 columns); silence it too
  {
    ad::Param& w = m.store.find("sh.l0.w");
    int cols = w.shape.d[1];
    for (int r = 0; r < w.shape.d[0]; ++r)
      for (int c = 0; c < 8; ++c) w.value[size_t(r * cols + c)] = 0.0;
  }
  Tape t;
  Rng rng(10);
  std::vector<double> hv(8), v1(8), v2(8);
  for (double& v : hv) v = rng.uniform(-1, 1);
  for (double& v : v1) v = rng.uniform(-1, 1);
  for (double& v : v2) v = rng.uniform(-1, 1);
  Tensor h = t.constant(Shape{8}, hv);
  ad::GaussianStats prior = prior_step(t, m, h);
  Tensor prev = t.full(Shape{24}, 1.0 / 24.0);
  FuseOut o1 = fuse_decode(t, m, t.constant(Shape{8}, v1), h, prior, prev);
  std::vector<double> l1(t.val(o1.logits).begin(), t.val(o1.logits).end());
  ad::GaussianStats prior2 = prior_step(t, m, h);
  FuseOut o2 = fuse_decode(t, m, t.constant(Shape{8}, v2), h, prior2, prev);
  auto l2 = t.val(o2.logits);
  for (size_t i = 0; i < l1.size(); ++i) CHECK(std::abs(l1[i] - l2[i]) < 1e-9);
}

TEST_CASE("fused heatmap is normalized") {
  ModelParams m = ModelParams::create(micro_config(Variant::kGraphVrnn), 11);
  Tape t;
  Rng rng(12);
  std::vector<double> hv(8), vv(8);
  for (double& v : hv) v = rng.uniform(-1, 1);
  for (double& v : vv) v = rng.uniform(-1, 1);
  Tensor h = t.constant(Shape{8}, hv);
  ad::GaussianStats prior = prior_step(t, m, h);
  FuseOut out = fuse_decode(t, m, t.constant(Shape{8}, vv), h, prior,
                            t.full(Shape{24}, 1.0 / 24.0));
  double total = 0;
  for (double p : t.val(out.heat)) total += p;
  CHECK(std::abs(total - 1.0) < 1e-9);
}

TEST_CASE("message passing with one agent uses a zero message") {
  ModelParams m = ModelParams::create(micro_config(Variant::kGraphVrnn, 1), 13);
  Tape t;
  Rng rng(14);
  std::vector<double> hv(8);
  for (double& v : hv) v = rng.uniform(-1, 1);
  Tensor h = t.constant(Shape{8}, hv);
  std::vector<Tensor> hs{h};
  auto out = graph_message_pass(t, m, hs);
  Tensor expect = m.node(t, t.concat({{h, t.zeros(Shape{8})}}));
  auto a = t.val(out[0]);
  std::vector<double> got(a.begin(), a.end());
  auto b = t.val(expect);
  CHECK(std::equal(got.begin(), got.end(), b.begin()));
}

TEST_CASE("message passing commutes with permutation at three agents") {
  ModelParams m = ModelParams::create(micro_config(Variant::kGraphVrnn), 15);
  Rng rng(16);
  std::vector<std::vector<double>> hv(3, std::vector<double>(8));
  for (auto& h : hv)
    for (double& v : h) v = rng.uniform(-1, 1);
  const int perm[3] = {2, 0, 1};
  Tape t;
  std::vector<Tensor> hs, hp;
  for (int i = 0; i < 3; ++i) hs.push_back(t.constant(Shape{8}, hv[size_t(i)]));
  for (int i = 0; i < 3; ++i) hp.push_back(t.constant(Shape{8}, hv[size_t(perm[i])]));
  auto out = graph_message_pass(t, m, hs);
  std::vector<std::vector<double>> base;
  for (auto& o : out) base.emplace_back(t.val(o).begin(), t.val(o).end());
  auto outp = graph_message_pass(t, m, hp);
  for (int i = 0; i < 3; ++i) {
    auto v = t.val(outp[size_t(i)]);
    CHECK(std::equal(v.begin(), v.end(), base[size_t(perm[i])].begin()));
  }
}

TEST_CASE("message passing matches a brute-force relation network") {
  ModelParams m = ModelParams::create(micro_config(Variant::kGraphVrnn), 17);
  Rng rng(18);
  std::vector<std::vector<double>> hv(3, std::vector<double>(8));
  for (auto& h : hv)
    for (double& v : h) v = rng.uniform(-1, 1);
  Tape t;
  std::vector<Tensor> hs;
  for (int i = 0; i < 3; ++i) hs.push_back(t.constant(Shape{8}, hv[size_t(i)]));
  auto out = graph_message_pass(t, m, hs);
  std::vector<std::vector<double>> got;
  for (auto& o : out) got.emplace_back(t.val(o).begin(), t.val(o).end());

  // brute force with plain double loops over the same weights
  auto apply_linear = [&](const std::string& name, const std::vector<double>& x) {
    const ad::Param& w = m.store.find(name + ".w");
    const ad::Param& b = m.store.find(name + ".b");
    int rows = w.shape.d[0], cols = w.shape.d[1];
    std::vector<double> y(static_cast<size_t>(rows));
    for (int r = 0; r < rows; ++r) {
      double acc = b.value[size_t(r)];
      for (int c = 0; c < cols; ++c) acc += w.value[size_t(r * cols + c)] * x[size_t(c)];
      y[size_t(r)] = acc;
    }
    return y;
  };
  auto edge_mlp = [&](const std::vector<double>& a, const std::vector<double>& b) {
    std::vector<double> in = a;
    in.insert(in.end(), b.begin(), b.end());
    std::vector<double> h1 = apply_linear("edge.l0", in);
    for (double& v : h1) v = std::max(v, 0.0);
    return apply_linear("edge.l1", h1);
  };
  auto node_mlp = [&](const std::vector<double>& a, const std::vector<double>& msg) {
    std::vector<double> in = a;
    in.insert(in.end(), msg.begin(), msg.end());
    std::vector<double> h1 = apply_linear("node.l0", in);
    for (double& v : h1) v = std::max(v, 0.0);
    return apply_linear("node.l1", h1);
  };
  for (int i = 0; i < 3; ++i) {
    std::vector<double> msg(size_t{8}, 0.0);
    for (int j = 0; j < 3; ++j) {
      if (j == i) continue;
      auto e = edge_mlp(hv[size_t(i)], hv[size_t(j)]);
      for (int d = 0; d < 8; ++d) msg[size_t(d)] += e[size_t(d)];
    }
    for (double& v : msg) v /= 2.0;
    auto want = node_mlp(hv[size_t(i)], msg);
    for (int d = 0; d < 8; ++d) CHECK(std::abs(got[size_t(i)][size_t(d)] - want[size_t(d)]) < 1e-12);
  }
}

TEST_CASE("recurrence equals the gru on the concatenated input") {
  ModelParams m = ModelParams::create(micro_config(Variant::kGraphVrnn), 19);
  Tape t;
  Rng rng(20);
  std::vector<double> hv(8), zv(4);
  for (double& v : hv) v = rng.uniform(-1, 1);
  for (double& v : zv) v = rng.uniform(-1, 1);
  Tensor h = t.constant(Shape{8}, hv);
  Tensor z = t.constant(Shape{4}, zv);
  Tensor got = recurrence(t, m, 7, z, h);
  std::vector<double> a(t.val(got).begin(), t.val(got).end());

  std::vector<double> onehot(24, 0.0);
  onehot[7] = 1.0;
  Tensor emb = m.sembed(t, t.constant(Shape{24}, onehot));
  Tensor want = m.gru(t, t.concat({{emb, z}}), h);
  auto b = t.val(want);
  CHECK(std::equal(a.begin(), a.end(), b.begin()));
}

TEST_CASE("visual-only beliefs depend only on the current frame") {
  ModelParams m = ModelParams::create(micro_config(Variant::kVisualOnly), 21);
  data::ModelExample ex = micro_example(100);
  Tape t1;
  RolloutOptions opts;
  opts.mode = Mode::kFilter;
  BeliefSequence a = extract_beliefs(t1, rollout(t1, m, ex, opts));

  data::ModelExample mutated = ex;
  for (double& v : mutated.steps[0].grid.px) v = std::min(1.0, v + 0.25);
  Tape t2;
  BeliefSequence b = extract_beliefs(t2, rollout(t2, m, mutated, opts));

  CHECK(a.steps[2][0].heat == b.steps[2][0].heat);  // step 3 untouched
  CHECK(a.steps[0][0].heat != b.steps[0][0].heat);  // step 1 reacts
}

TEST_CASE("deterministic variants ignore the rng in filter and sample modes") {
  for (Variant v : {Variant::kGraphRnn, Variant::kIndepRnn, Variant::kSocialRnn,
                    Variant::kRnnShared}) {
    ModelParams m = ModelParams::create(micro_config(v), 22);
    data::ModelExample ex = micro_example(101);
    for (Mode mode : {Mode::kFilter, Mode::kSample}) {
      Tape t1, t2;
      RolloutOptions o1;
      o1.mode = mode;
      o1.rng_key = 111;
      RolloutOptions o2 = o1;
      o2.rng_key = 999;
      BeliefSequence a = extract_beliefs(t1, rollout(t1, m, ex, o1));
      BeliefSequence b = extract_beliefs(t2, rollout(t2, m, ex, o2));
      CHECK(heats_equal(a, b));
    }
  }
}

TEST_CASE("stochastic forecasts differ across seeds but match per seed") {
  ModelParams m = ModelParams::create(micro_config(Variant::kGraphVrnn), 23);
  data::ModelExample ex = micro_example(102);
  RolloutOptions o1;
  o1.mode = Mode::kSample;
  o1.rng_key = 1;
  RolloutOptions o2 = o1;
  o2.rng_key = 2;
  Tape t1, t2, t3;
  BeliefSequence a = extract_beliefs(t1, rollout(t1, m, ex, o1));
  BeliefSequence b = extract_beliefs(t2, rollout(t2, m, ex, o2));
  BeliefSequence c = extract_beliefs(t3, rollout(t3, m, ex, o1));
  double tv = 0;
  for (int t = a.t_obs; t < a.t_obs + a.t_fore; ++t)
    for (int k = 0; k < a.agents; ++k)
      for (int cell = 0; cell < 24; ++cell)
        tv += std::abs(a.steps[size_t(t)][size_t(k)].heat[size_t(cell)] -
                       b.steps[size_t(t)][size_t(k)].heat[size_t(cell)]);
  CHECK(tv > 0.0);
  CHECK(heats_equal(a, c));
}

TEST_CASE("filter mode is deterministic for the variational model") {
  ModelParams m = ModelParams::create(micro_config(Variant::kGraphVrnn), 24);
  data::ModelExample ex = micro_example(103);
  RolloutOptions o1;
  o1.mode = Mode::kFilter;
  o1.rng_key = 5;
  RolloutOptions o2 = o1;
  o2.rng_key = 77;
  Tape t1, t2;
  BeliefSequence a = extract_beliefs(t1, rollout(t1, m, ex, o1));
  BeliefSequence b = extract_beliefs(t2, rollout(t2, m, ex, o2));
  CHECK(heats_equal(a, b));
  // latent sits at its prior mean
  for (int t = 0; t < a.t_obs; ++t)
    for (int k = 0; k < a.agents; ++k) CHECK(a.steps[size_t(t)][size_t(k)].z ==
                                             a.steps[size_t(t)][size_t(k)].prior->mu);
}

TEST_CASE("every heatmap stays normalized through a rollout") {
  for (Variant v : {Variant::kVisualOnly, Variant::kRnnShared, Variant::kVrnnShared,
                    Variant::kIndepRnn, Variant::kSocialRnn, Variant::kGraphRnn,
                    Variant::kGraphVrnn}) {
    ModelParams m = ModelParams::create(micro_config(v), 25);
    data::ModelExample ex = micro_example(104);
    Tape t;
    RolloutOptions opts;
    opts.mode = Mode::kTrain;
    opts.teacher_prob = 0.5;
    opts.rng_key = 3;
    BeliefSequence b = extract_beliefs(t, rollout(t, m, ex, opts));
    for (const auto& row : b.steps) {
      for (const auto& bs : row) {
        double total = 0;
        for (double p : bs.heat) total += p;
        CHECK(std::abs(total - 1.0) < 1e-9);
      }
    }
  }
}

TEST_CASE("posterior exists exactly on observed training steps") {
  ModelParams m = ModelParams::create(micro_config(Variant::kGraphVrnn), 26);
  data::ModelExample ex = micro_example(105);
  Tape t;
  RolloutOptions opts;
  opts.mode = Mode::kTrain;
  opts.rng_key = 4;
  BeliefSequence b = extract_beliefs(t, rollout(t, m, ex, opts));
  for (int s = 0; s < b.t_obs + b.t_fore; ++s)
    for (int k = 0; k < b.agents; ++k)
      CHECK(b.steps[size_t(s)][size_t(k)].post.has_value() == (s < b.t_obs));

  Tape t2;
  opts.kl_on_forecast = true;
  BeliefSequence c = extract_beliefs(t2, rollout(t2, m, ex, opts));
  for (int s = 0; s < c.t_obs + c.t_fore; ++s)
    for (int k = 0; k < c.agents; ++k) CHECK(c.steps[size_t(s)][size_t(k)].post.has_value());
}

TEST_CASE("permutation of agents permutes the beliefs exactly") {
  const int perm[3] = {2, 0, 1};
  for (Variant v : {Variant::kIndepRnn, Variant::kSocialRnn, Variant::kGraphRnn,
                    Variant::kGraphVrnn}) {
    ModelParams m = ModelParams::create(micro_config(v), 27);
    ModelParams mp = ModelParams::create(micro_config(v), 27);
    // heads follow the agents: head i of the permuted model identifies the
    // agent that moved to slot i
    for (int i = 0; i < 3; ++i) {
      std::string src = "head" + std::to_string(perm[i]);
      std::string dst = "head" + std::to_string(i);
      mp.store.find(dst + ".w").value = m.store.find(src + ".w").value;
      mp.store.find(dst + ".b").value = m.store.find(src + ".b").value;
    }
    data::ModelExample ex = micro_example(106);
    data::ModelExample exp = ex;  // same world, same pixels; labels permute
    for (auto& step : exp.steps) {
      auto tc = step.target_cell;
      auto tp = step.target_pos;
      auto vis = step.visible;
      for (int i = 0; i < 3; ++i) {
        step.target_cell[size_t(i)] = tc[size_t(perm[i])];
        step.target_pos[size_t(i)] = tp[size_t(perm[i])];
        step.visible[size_t(i)] = vis[size_t(perm[i])];
      }
    }
    for (int i = 0; i < 3; ++i) exp.roles[size_t(i)] = ex.roles[size_t(perm[i])];

    Tape t1, t2;
    RolloutOptions opts;
    opts.mode = Mode::kFilter;
    BeliefSequence a = extract_beliefs(t1, rollout(t1, m, ex, opts));
    BeliefSequence b = extract_beliefs(t2, rollout(t2, mp, exp, opts));
    for (size_t t = 0; t < a.steps.size(); ++t)
      for (int i = 0; i < 3; ++i)
        CHECK(b.steps[t][size_t(i)].heat == a.steps[t][size_t(perm[i])].heat);
  }
}

TEST_CASE("independent recurrence shields an agent from foreign targets") {
  ModelParams m = ModelParams::create(micro_config(Variant::kIndepRnn), 28);
  data::ModelExample ex = micro_example(107);
  data::ModelExample mutated = ex;
  for (auto& step : mutated.steps) step.target_cell[1] = (step.target_cell[1] + 7) % 24;
  RolloutOptions opts;
  opts.mode = Mode::kTrain;
  opts.teacher_prob = 1.0;
  opts.rng_key = 9;
  Tape t1, t2;
  BeliefSequence a = extract_beliefs(t1, rollout(t1, m, ex, opts));
  BeliefSequence b = extract_beliefs(t2, rollout(t2, m, mutated, opts));
  for (size_t t = 0; t < a.steps.size(); ++t) {
    CHECK(a.steps[t][0].heat == b.steps[t][0].heat);
    CHECK(a.steps[t][2].heat == b.steps[t][2].heat);
  }
  CHECK(!heats_equal(a, b));  // agent 1 itself must react
}

TEST_CASE("rollout validates the example") {
  ModelParams m = ModelParams::create(micro_config(Variant::kGraphVrnn), 29);
  data::ModelExample ex = micro_example(108);
  data::ModelExample short_ex = ex;
  short_ex.steps.pop_back();
  Tape t;
  RolloutOptions opts;
  opts.mode = Mode::kFilter;
  CHECK_THROWS_WITH_AS((void)rollout(t, m, short_ex, opts), doctest::Contains("step count"),
                       std::runtime_error);
  data::ModelExample no_targets = ex;
  no_targets.steps[3].target_cell.clear();
  opts.mode = Mode::kTrain;
  Tape t2;
  CHECK_THROWS_WITH_AS((void)rollout(t2, m, no_targets, opts), doctest::Contains("targets"),
                       std::runtime_error);
}

TEST_CASE("sampling helpers pick by mass and break ties low") {
  std::vector<double> heat{0.1, 0.2, 0.3, 0.4};
  CHECK(sample_cell(heat, 0.05) == 0);
  CHECK(sample_cell(heat, 0.15) == 1);
  CHECK(sample_cell(heat, 0.95) == 3);
  std::vector<double> tie{0.25, 0.25, 0.25, 0.25};
  CHECK(argmax_cell(tie) == 0);
  std::vector<double> peak{0.1, 0.6, 0.3};
  CHECK(argmax_cell(peak) == 1);
}
