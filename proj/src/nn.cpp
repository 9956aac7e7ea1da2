#include "beliefnet/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace beliefnet::ad {

Param& ParamStore::add(const std::string& name, const Shape& shape) {
  for (const auto& p : params_) {
    if (p->name == name) throw std::runtime_error("duplicate param name: " + name);
  }
  auto p = std::make_unique<Param>();
  p->name = name;
  p->shape = shape;
  p->value.assign(static_cast<size_t>(shape.numel()), 0.0);
  params_.push_back(std::move(p));
  return *params_.back();
}

Param& ParamStore::find(const std::string& name) {
  for (const auto& p : params_) {
    if (p->name == name) return *p;
  }
  throw std::runtime_error("no such param: " + name);
}

int64_t ParamStore::total_size() const {
  int64_t n = 0;
  for (const auto& p : params_) n += p->shape.numel();
  return n;
}

void glorot_init(Param& p, Rng& rng) {
  int fan_in, fan_out;
  const Shape& s = p.shape;
  if (s.rank == 2) {
    fan_out = s.d[0];
    fan_in = s.d[1];
  } else if (s.rank == 4) {
    fan_in = s.d[0] * s.d[1] * s.d[2];
    fan_out = s.d[0] * s.d[1] * s.d[3];
  } else {
    return;  // biases and vectors stay zero
  }
  double bound = std::sqrt(6.0 / double(fan_in + fan_out));
  for (double& v : p.value) v = rng.uniform(-bound, bound);
}

Linear Linear::create(ParamStore& store, const std::string& name, int in, int out, Rng& rng) {
  Linear l;
  l.w = &store.add(name + ".w", Shape{out, in});
  l.b = &store.add(name + ".b", Shape{out});
  glorot_init(*l.w, rng);
  return l;
}

Tensor Linear::operator()(Tape& t, Tensor x) const {
  return t.add(t.matmul(t.param(*w), x), t.param(*b));
}

Mlp Mlp::create(ParamStore& store, const std::string& name, std::vector<int> dims, Rng& rng,
                Act hidden, Act out) {
  if (dims.size() < 2) throw std::runtime_error("mlp needs at least two dims");
  Mlp m;
  m.hidden_act = hidden;
  m.out_act = out;
  for (size_t i = 0; i + 1 < dims.size(); ++i) {
    m.layers.push_back(
        Linear::create(store, name + ".l" + std::to_string(i), dims[i], dims[i + 1], rng));
  }
  return m;
}

namespace {
Tensor activate(Tape& t, Tensor x, Act a) {
  switch (a) {
    case Act::kNone: return x;
    case Act::kRelu: return t.relu(x);
    case Act::kTanh: return t.tanh(x);
    case Act::kSigmoid: return t.sigmoid(x);
  }
  return x;
}
}  // namespace

Tensor Mlp::operator()(Tape& t, Tensor x) const {
  for (size_t i = 0; i < layers.size(); ++i) {
    x = layers[i](t, x);
    x = activate(t, x, i + 1 < layers.size() ? hidden_act : out_act);
  }
  return x;
}

GruCell GruCell::create(ParamStore& store, const std::string& name, int input, int hidden,
                        Rng& rng) {
  GruCell g;
  g.input = input;
  g.hidden = hidden;
  g.reset = Linear::create(store, name + ".r", input + hidden, hidden, rng);
  g.update = Linear::create(store, name + ".u", input + hidden, hidden, rng);
  g.cand = Linear::create(store, name + ".c", input + hidden, hidden, rng);
  return g;
}

Tensor GruCell::operator()(Tape& t, Tensor x, Tensor h) const {
  if (t.shape(x).d[0] != input || t.shape(h).d[0] != hidden)
    throw std::runtime_error("gru: input dims " + t.shape(x).str() + "/" + t.shape(h).str() +
                             " do not match cell (" + std::to_string(input) + "," +
                             std::to_string(hidden) + ")");
  Tensor xh = t.concat({{x, h}});
  Tensor r = t.sigmoid(reset(t, xh));
  Tensor u = t.sigmoid(update(t, xh));
  Tensor xrh = t.concat({{x, t.mul(r, h)}});
  Tensor c = t.tanh(cand(t, xrh));
  Tensor one_minus_u = t.affine(u, -1.0, 1.0);
  return t.add(t.mul(u, h), t.mul(one_minus_u, c));
}

ConvEncoder ConvEncoder::create(ParamStore& store, const std::string& name, int h, int w,
                                Rng& rng) {
  if (h % 4 != 0 || w % 4 != 0)
    throw std::runtime_error("conv encoder: resolution must be divisible by 4");
  ConvEncoder e;
  e.in_h = h;
  e.in_w = w;
  e.w1 = &store.add(name + ".w1", Shape{3, 3, 3, 8});
  e.b1 = &store.add(name + ".b1", Shape{8});
  e.w2 = &store.add(name + ".w2", Shape{3, 3, 8, 16});
  e.b2 = &store.add(name + ".b2", Shape{16});
  e.wproj = &store.add(name + ".wproj", Shape{1, 1, 8, 16});
  glorot_init(*e.w1, rng);
  glorot_init(*e.w2, rng);
  glorot_init(*e.wproj, rng);
  return e;
}

Tensor ConvEncoder::operator()(Tape& t, Tensor img) const {
  const Shape& s = t.shape(img);
  if (s.rank != 3 || s.d[0] != in_h || s.d[1] != in_w || s.d[2] != in_c)
    throw std::runtime_error("conv encoder: resolution mismatch, got " + s.str() + " want {" +
                             std::to_string(in_h) + "," + std::to_string(in_w) + ",3}");
  Tensor y1 = t.relu(t.bias_add(t.conv2d(img, t.param(*w1)), t.param(*b1)));
  Tensor main = t.bias_add(t.conv2d(y1, t.param(*w2)), t.param(*b2));
  Tensor shortcut = t.conv2d(y1, t.param(*wproj));
  Tensor y2 = t.relu(t.add(main, shortcut));
  Tensor p1 = t.max_pool2d(y2);
  Tensor p2 = t.max_pool2d(p1);
  return t.reshape(p2, Shape{feature_size()});
}

GaussianStats gaussian_from_head(Tape& t, Tensor head_out, int z) {
  const Shape& s = t.shape(head_out);
  if (s.rank != 1 || s.d[0] != 2 * z)
    throw std::runtime_error("gaussian head: want {2z}, got " + s.str());
  GaussianStats g;
  g.mu = t.slice(head_out, 0, z);
  g.sigma = t.affine(t.softplus(t.slice(head_out, z, 2 * z)), 1.0, kSigmaFloor);
  return g;
}

Tensor reparameterize(Tape& t, const GaussianStats& stats, Rng& rng) {
  const Shape& s = t.shape(stats.mu);
  std::vector<double> eps(static_cast<size_t>(s.numel()));
  for (double& e : eps) e = rng.normal();
  Tensor eps_t = t.constant(s, eps);
  return t.add(stats.mu, t.mul(stats.sigma, eps_t));
}

Tensor gaussian_kl(Tape& t, const GaussianStats& q, const GaussianStats& p) {
  const Shape& sq = t.shape(q.mu);
  if (!(sq == t.shape(p.mu)))
    throw std::runtime_error("gaussian_kl: length mismatch " + sq.str() + " vs " +
                             t.shape(p.mu).str());
  int z = sq.d[0];
  Tensor log_ratio = t.sub(t.log(p.sigma), t.log(q.sigma));
  Tensor sr = t.div(q.sigma, p.sigma);
  Tensor dmu = t.div(t.sub(q.mu, p.mu), p.sigma);
  Tensor quad = t.affine(t.add(t.mul(sr, sr), t.mul(dmu, dmu)), 0.5, 0.0);
  Tensor per_dim = t.add(log_ratio, quad);
  return t.affine(t.sum(per_dim), 1.0, -0.5 * double(z));
}

}  // namespace beliefnet::ad
