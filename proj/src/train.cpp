#include "beliefnet/train.hpp"

#include "beliefnet/parallel.hpp"
#include <algorithm>
#include <cmath>
#include <unordered_map>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace beliefnet::train {

using ad::Tape;
using ad::Tensor;

std::vector<double> lambda_schedule(int t_obs, int t_fore, double gamma, bool literal_max) {
  std::vector<double> w(size_t(t_obs + t_fore), 1.0);
  if (literal_max) {
    for (int t = 1; t <= t_obs + t_fore; ++t)
      w[size_t(t - 1)] = std::max(double(t) / double(t_obs), 1.0);
    return w;
  }
  double raw_sum = 0.0;
  for (int t = t_obs + 1; t <= t_obs + t_fore; ++t) {
    double raw = std::pow(gamma, double(t - t_obs));
    w[size_t(t - 1)] = raw;
    raw_sum += raw;
  }
  if (t_fore > 0 && raw_sum > 0.0) {
    double scale = double(t_obs) / raw_sum;
    for (int t = t_obs + 1; t <= t_obs + t_fore; ++t) w[size_t(t - 1)] *= scale;
  }
  return w;
}

double beta_schedule(int64_t step, const TrainConfig& cfg) {
  double window = cfg.beta_anneal_frac * double(cfg.total_steps);
  if (window <= 0.0) return cfg.beta_max;
  double frac = std::min(1.0, double(step) / window);
  return cfg.beta_max * frac;
}

double teacher_forcing_prob(int64_t step, const TrainConfig& cfg) {
  double window = cfg.tf_decay_frac * double(cfg.total_steps);
  if (window <= 0.0) return 0.0;
  return std::max(0.0, 1.0 - double(step) / window);
}

double lr_schedule(int64_t step, const TrainConfig& cfg) {
  if (step < cfg.warmup_steps)
    return cfg.lr * double(step) / double(cfg.warmup_steps);
  double progress = double(step - cfg.warmup_steps) /
                    std::max(1.0, double(cfg.total_steps - cfg.warmup_steps));
  progress = std::min(1.0, progress);
  return cfg.lr * 0.5 * (1.0 + std::cos(3.141592653589793 * progress));
}

std::pair<Tensor, LossParts> elbo_loss(Tape& t, const model::RolloutResult& r,
                                       const data::ModelExample& ex,
                                       std::span<const double> lambdas, double beta) {
  const int steps = r.t_obs + r.t_fore;
  const int k = r.agents;
  if (static_cast<int>(lambdas.size()) != steps)
    throw std::runtime_error("elbo_loss: lambda count " + std::to_string(lambdas.size()) +
                             " does not match steps " + std::to_string(steps));
  if (static_cast<int>(ex.steps.size()) != steps)
    throw std::runtime_error("elbo_loss: example step count mismatch");

  Tensor recon;
  Tensor kl;
  bool have_recon = false, have_kl = false;
  for (int s = 0; s < steps; ++s) {
    if (static_cast<int>(ex.steps[size_t(s)].target_cell.size()) != k)
      throw std::runtime_error("elbo_loss: target agent count mismatch at step " +
                               std::to_string(s));
    Tensor step_ce;
    bool have_step = false;
    for (int i = 0; i < k; ++i) {
      const model::StepOut& so = r.steps[size_t(s)][size_t(i)];
      int cell = ex.steps[size_t(s)].target_cell[size_t(i)];
      Tensor p = t.slice(so.heat, cell, cell + 1);
      Tensor ce = t.affine(t.log(p), -1.0, 0.0);
      step_ce = have_step ? t.add(step_ce, ce) : ce;
      have_step = true;
      if (so.has_post) {
        Tensor d = ad::gaussian_kl(t, so.post, so.prior);
        kl = have_kl ? t.add(kl, d) : d;
        have_kl = true;
      }
    }
    Tensor weighted = t.affine(step_ce, lambdas[size_t(s)], 0.0);
    recon = have_recon ? t.add(recon, weighted) : weighted;
    have_recon = true;
  }

  LossParts parts;
  Tensor total = recon;
  parts.recon = t.scalar(recon);
  if (have_kl) {
    parts.kl = t.scalar(kl);
    total = t.add(recon, t.affine(kl, beta, 0.0));
  }
  parts.total = t.scalar(total);
  return {total, parts};
}

Trainer::Trainer(model::ModelParams& params, std::vector<data::ModelExample> examples,
                 TrainConfig cfg)
    : params_(params), examples_(std::move(examples)), cfg_(cfg) {
  if (examples_.empty()) throw std::runtime_error("trainer: no examples");
  lambdas_ = lambda_schedule(cfg_.t_obs, cfg_.t_fore, cfg_.gamma, cfg_.lambda_literal_max);
  for (const auto& p : params_.store.all()) {
    p->grad.assign(p->value.size(), 0.0);
    if (p->momentum.size() != p->value.size()) p->momentum.assign(p->value.size(), 0.0);
  }
}

double Trainer::clip_gradients() {
  double sq = 0.0;
  for (const auto& p : params_.store.all())
    for (double g : p->grad) sq += g * g;
  double norm = std::sqrt(sq);
  if (cfg_.clip_norm > 0.0 && norm > cfg_.clip_norm) {
    double scale = cfg_.clip_norm / norm;
    for (const auto& p : params_.store.all())
      for (double& g : p->grad) g *= scale;
  }
  return norm;
}

void Trainer::apply_update(double lr) {
  for (const auto& p : params_.store.all()) {
    for (size_t i = 0; i < p->value.size(); ++i) {
      p->momentum[i] = cfg_.momentum * p->momentum[i] + p->grad[i];
      p->value[i] -= lr * p->momentum[i];
    }
  }
}

StepMetrics Trainer::step() {
  Rng master(cfg_.seed);
  StepMetrics m;
  m.step = step_;
  m.beta = beta_schedule(step_, cfg_);
  m.lr = lr_schedule(step_, cfg_);
  const double teacher = teacher_forcing_prob(step_, cfg_);

  for (const auto& p : params_.store.all()) std::fill(p->grad.begin(), p->grad.end(), 0.0);

  // batch members run on worker threads with private tapes and gradient
  // buffers; the reduction below walks slots in index order, so the result
  // is bit-identical for any thread count
  const int batch = cfg_.batch;
  struct Slot {
    LossParts parts;
    std::vector<std::vector<double>> grads;
    std::string error;
  };
  std::vector<Slot> slots(static_cast<size_t>(batch));
  std::unordered_map<const ad::Param*, size_t> index;
  {
    size_t i = 0;
    for (const auto& p : params_.store.all()) index[p.get()] = i++;
  }
  if (tapes_.size() < static_cast<size_t>(batch)) tapes_.resize(static_cast<size_t>(batch));

  parallel_for(batch, [&](int b) {
    Slot& slot = slots[size_t(b)];
    try {
      Rng slot_rng = master.child(uint64_t(step_), uint64_t(b), 0xba7c);
      size_t idx = size_t(slot_rng.next_u64() % examples_.size());
      const data::ModelExample& ex = examples_[idx];
      ad::Tape& tape = tapes_[size_t(b)];
      tape.clear();
      model::RolloutOptions opts;
      opts.mode = model::Mode::kTrain;
      opts.teacher_prob = teacher;
      opts.kl_on_forecast = cfg_.kl_on_forecast;
      opts.rng_key = slot_rng.child(ex.key, 0x011).key();
      model::RolloutResult r = model::rollout(tape, params_, ex, opts);
      auto [total, parts] = elbo_loss(tape, r, ex, lambdas_, m.beta);
      slot.parts = parts;
      if (!std::isfinite(parts.total)) return;
      tape.backward(total);
      slot.grads.assign(index.size(), {});
      tape.export_param_grads([&](ad::Param* p, std::span<const double> g) {
        slot.grads[index.at(p)].assign(g.begin(), g.end());
      });
    } catch (const std::exception& e) {
      slot.error = e.what();
    }
  });

  double loss = 0, recon = 0, kl = 0;
  for (int b = 0; b < batch; ++b) {
    const Slot& slot = slots[size_t(b)];
    if (!slot.error.empty())
      throw std::runtime_error("train step " + std::to_string(step_) + ": " + slot.error);
    if (!std::isfinite(slot.parts.total))
      throw std::runtime_error("train step " + std::to_string(step_) +
                               ": non-finite loss (recon=" + std::to_string(slot.parts.recon) +
                               ", kl=" + std::to_string(slot.parts.kl) + ")");
    loss += slot.parts.total / double(batch);
    recon += slot.parts.recon / double(batch);
    kl += slot.parts.kl / double(batch);
    size_t i = 0;
    for (const auto& p : params_.store.all()) {
      const auto& g = slot.grads[i++];
      if (g.empty()) continue;
      for (size_t j = 0; j < g.size(); ++j) p->grad[j] += g[j] / double(batch);
    }
  }

  m.grad_norm = clip_gradients();
  if (!std::isfinite(m.grad_norm))
    throw std::runtime_error("train step " + std::to_string(step_) + ": non-finite gradient norm");
  apply_update(m.lr);
  m.loss = loss;
  m.recon = recon;
  m.kl = kl;
  ++step_;
  return m;
}

StepMetrics Trainer::pretrain_step() {
  Rng master(cfg_.seed);
  StepMetrics m;
  m.step = step_;
  m.lr = cfg_.lr * 0.5;

  for (const auto& p : params_.store.all()) std::fill(p->grad.begin(), p->grad.end(), 0.0);

  double loss = 0;
  const int batch = cfg_.batch;
  for (int b = 0; b < batch; ++b) {
    Rng slot = master.child(uint64_t(step_), uint64_t(b), 0x9ce);
    size_t idx = size_t(slot.next_u64() % examples_.size());
    const data::ModelExample& ex = examples_[idx];
    tape_.clear();
    Tensor total;
    bool have = false;
    for (int s = 0; s < ex.t_obs; ++s) {
      const data::StepSample& st = ex.steps[size_t(s)];
      Tensor img = tape_.constant(ad::Shape{st.grid.h, st.grid.w, 3}, st.grid.px);
      Tensor feat = params_.backbone(tape_, img);
      for (int i = 0; i < params_.cfg.agents; ++i) {
        if (!st.visible[size_t(i)]) continue;
        Tensor vf = tape_.relu(params_.heads[size_t(i)](tape_, feat));
        Tensor heat = tape_.softmax(params_.dv(tape_, vf));
        int cell = st.target_cell[size_t(i)];
        Tensor ce = tape_.affine(tape_.log(tape_.slice(heat, cell, cell + 1)), -1.0, 0.0);
        total = have ? tape_.add(total, ce) : ce;
        have = true;
      }
    }
    if (!have) continue;
    tape_.backward(total);
    tape_.accumulate_param_grads(1.0 / double(batch));
    loss += tape_.scalar(total) / double(batch);
  }
  m.grad_norm = clip_gradients();
  apply_update(m.lr);
  m.loss = loss;
  ++step_;
  return m;
}

void Trainer::run(const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream csv(dir / "metrics.csv", std::ios::binary);
  if (!csv) throw std::runtime_error("cannot write metrics.csv in " + dir.string());
  csv << "step,loss,recon,kl,beta,lr,grad_norm\n";
  csv.precision(17);

  if (cfg_.pretrain_steps > 0) {
    int64_t save_step = step_;
    step_ = 0;
    for (int s = 0; s < cfg_.pretrain_steps; ++s) pretrain_step();
    step_ = save_step;
  }
  while (step_ < cfg_.total_steps) {
    StepMetrics m = step();
    csv << m.step << "," << m.loss << "," << m.recon << "," << m.kl << "," << m.beta << ","
        << m.lr << "," << m.grad_norm << "\n";
  }
  csv.flush();
  save_checkpoint(params_, step_, cfg_.seed, dir / "checkpoint.gvrn");
}

// ---------------------------------------------------------------------------
// checkpoint io

namespace {

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= uint32_t(b[i]) << (8 * i);
  return v;
}

uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= uint64_t(b[i]) << (8 * i);
  return v;
}

void put_doubles(std::ostream& os, std::span<const double> v) {
  for (double d : v) {
    uint64_t bits;
    std::memcpy(&bits, &d, 8);
    put_u64(os, bits);
  }
}

void get_doubles(std::istream& is, std::span<double> v) {
  for (double& d : v) {
    uint64_t bits = get_u64(is);
    std::memcpy(&d, &bits, 8);
  }
}

constexpr uint32_t kVersion = 1;

}  // namespace

void save_checkpoint(const model::ModelParams& params, int64_t step, uint64_t rng_seed,
                     const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write checkpoint: " + path.string());
  os.write("GVRN", 4);
  put_u32(os, kVersion);
  put_u64(os, uint64_t(step));
  put_u64(os, rng_seed);
  std::string cfg = model::model_config_to_text(params.cfg);
  put_u32(os, uint32_t(cfg.size()));
  os.write(cfg.data(), std::streamsize(cfg.size()));

  const auto& all = params.store.all();
  put_u32(os, uint32_t(all.size()));
  uint64_t offset = 0;
  for (const auto& p : all) {
    put_u32(os, uint32_t(p->name.size()));
    os.write(p->name.data(), std::streamsize(p->name.size()));
    put_u32(os, uint32_t(p->shape.rank));
    for (int i = 0; i < p->shape.rank; ++i) put_u32(os, uint32_t(p->shape.d[i]));
    put_u64(os, offset);
    offset += uint64_t(p->shape.numel());
  }
  put_u64(os, offset);
  for (const auto& p : all) put_doubles(os, p->value);
  put_u64(os, offset);
  for (const auto& p : all) {
    if (p->momentum.size() != p->value.size()) {
      std::vector<double> zero(p->value.size(), 0.0);
      put_doubles(os, zero);
    } else {
      put_doubles(os, p->momentum);
    }
  }
  if (!os) throw std::runtime_error("checkpoint write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "GVRN", 4) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path.string());
  Checkpoint ck;
  ck.version = get_u32(is);
  if (ck.version != kVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(ck.version));
  ck.step = int64_t(get_u64(is));
  ck.rng_seed = get_u64(is);
  uint32_t cfg_len = get_u32(is);
  std::string cfg_text(cfg_len, '\0');
  is.read(cfg_text.data(), std::streamsize(cfg_len));
  if (!is) throw std::runtime_error("checkpoint: truncated config");
  ck.config = model::model_config_from_text(cfg_text);
  ck.params = model::ModelParams::create(ck.config, 0);

  uint32_t count = get_u32(is);
  const auto& all = ck.params.store.all();
  if (count != all.size())
    throw std::runtime_error("checkpoint: param count " + std::to_string(count) +
                             " does not match model (" + std::to_string(all.size()) + ")");
  uint64_t expected_offset = 0;
  for (const auto& p : all) {
    uint32_t name_len = get_u32(is);
    std::string name(name_len, '\0');
    is.read(name.data(), std::streamsize(name_len));
    if (!is || name != p->name)
      throw std::runtime_error("checkpoint: param name mismatch, got '" + name + "' want '" +
                               p->name + "'");
    uint32_t rank = get_u32(is);
    ad::Shape shape;
    shape.rank = int(rank);
    for (uint32_t i = 0; i < rank; ++i) shape.d[i] = int(get_u32(is));
    if (!(shape == p->shape))
      throw std::runtime_error("checkpoint: shape mismatch for " + name);
    uint64_t off = get_u64(is);
    if (off != expected_offset)
      throw std::runtime_error("checkpoint: index extent mismatch for " + name);
    expected_offset += uint64_t(shape.numel());
  }
  uint64_t buffer_len = get_u64(is);
  if (buffer_len != expected_offset)
    throw std::runtime_error("checkpoint: buffer length " + std::to_string(buffer_len) +
                             " does not match index extents " + std::to_string(expected_offset));
  for (const auto& p : all) get_doubles(is, p->value);
  uint64_t mom_len = get_u64(is);
  if (mom_len != buffer_len)
    throw std::runtime_error("checkpoint: momentum length mismatch");
  for (const auto& p : all) {
    p->momentum.assign(p->value.size(), 0.0);
    get_doubles(is, p->momentum);
  }
  return ck;
}

}  // namespace beliefnet::train
