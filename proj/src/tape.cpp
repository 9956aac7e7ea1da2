#include "beliefnet/tape.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace beliefnet::ad {

std::string Shape::str() const {
  std::string s = "{";
  for (int i = 0; i < rank; ++i) {
    if (i) s += ",";
    s += std::to_string(d[i]);
  }
  return s + "}";
}

namespace {

struct OpName {
  std::string_view name;
  Op op;
};

constexpr OpName kOpNames[] = {
    {"leaf", Op::kLeaf},         {"matmul", Op::kMatmul},
    {"conv2d", Op::kConv2d},     {"bias-add", Op::kBiasAdd},
    {"add", Op::kAdd},           {"sub", Op::kSub},
    {"mul", Op::kMul},           {"div", Op::kDiv},
    {"maximum", Op::kMaximum},   {"concat", Op::kConcat},
    {"slice", Op::kSlice},       {"relu", Op::kRelu},
    {"tanh", Op::kTanh},         {"sigmoid", Op::kSigmoid},
    {"softplus", Op::kSoftplus}, {"log", Op::kLog},
    {"softmax", Op::kSoftmax},   {"log-softmax", Op::kLogSoftmax},
    {"sum", Op::kSum},           {"mean", Op::kMean},
    {"max-pool-2d", Op::kMaxPool2d}, {"affine", Op::kAffine},
    {"scale-by", Op::kScaleBy},  {"reshape", Op::kReshape},
};

double sigmoid_scalar(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus_scalar(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

}  // namespace

Op op_from_name(std::string_view name) {
  for (const auto& e : kOpNames) {
    if (e.name == name) return e.op;
  }
  throw std::runtime_error("unknown op kind: " + std::string(name));
}

std::string_view op_name(Op op) {
  for (const auto& e : kOpNames) {
    if (e.op == op) return e.name;
  }
  return "?";
}

int64_t Tape::alloc_doubles(int64_t n) {
  int64_t off = static_cast<int64_t>(dused_);
  dused_ += static_cast<size_t>(n);
  if (dused_ > dbuf_.size()) dbuf_.resize(std::max(dused_, dbuf_.size() * 2));
  return off;
}

int32_t Tape::alloc_ints(int32_t n) {
  int32_t off = static_cast<int32_t>(iused_);
  iused_ += static_cast<size_t>(n);
  if (iused_ > ibuf_.size()) ibuf_.resize(std::max(iused_, ibuf_.size() * 2));
  return off;
}

const Tape::Node& Tape::node(Tensor t) const {
  if (!t.valid() || static_cast<size_t>(t.id) >= nodes_.size())
    throw std::runtime_error("invalid tensor handle");
  return nodes_[static_cast<size_t>(t.id)];
}

void Tape::check_rank1(const char* opname, Tensor t) const {
  if (node(t).shape.rank != 1)
    throw std::runtime_error(std::string(opname) + ": expected rank-1 input, got " +
                             node(t).shape.str());
}

void Tape::check_same_shape(const char* opname, Tensor a, Tensor b) const {
  if (!(node(a).shape == node(b).shape))
    throw std::runtime_error(std::string(opname) + ": shape mismatch " + node(a).shape.str() +
                             " vs " + node(b).shape.str());
}

Tensor Tape::push(Op op, const Shape& shape, std::span<const Tensor> inputs,
                  std::span<const int> iaux) {
  Node n;
  n.op = op;
  n.shape = shape;
  n.nin = static_cast<int32_t>(inputs.size());
  n.in_off = alloc_ints(n.nin);
  for (int i = 0; i < n.nin; ++i) {
    ibuf_[size_t(n.in_off + i)] = inputs[size_t(i)].id;
    n.needs_grad = n.needs_grad || nodes_[size_t(inputs[size_t(i)].id)].needs_grad;
  }
  n.iaux_len = static_cast<int32_t>(iaux.size());
  n.iaux_off = alloc_ints(n.iaux_len);
  std::copy(iaux.begin(), iaux.end(), ibuf_.begin() + n.iaux_off);
  n.val_off = alloc_doubles(shape.numel());
  nodes_.push_back(n);
  int id = static_cast<int>(nodes_.size()) - 1;
  if (op != Op::kLeaf) forward_node(id);
  return Tensor{id};
}

Tensor Tape::constant(const Shape& shape, std::span<const double> values) {
  if (static_cast<int64_t>(values.size()) != shape.numel())
    throw std::runtime_error("constant: value count " + std::to_string(values.size()) +
                             " does not match shape " + shape.str());
  Tensor t = push(Op::kLeaf, shape, {});
  std::copy(values.begin(), values.end(), val_ptr(t.id));
  return t;
}

Tensor Tape::zeros(const Shape& shape) { return full(shape, 0.0); }

Tensor Tape::full(const Shape& shape, double v) {
  Tensor t = push(Op::kLeaf, shape, {});
  std::fill_n(val_ptr(t.id), shape.numel(), v);
  return t;
}

Tensor Tape::param(Param& p) {
  for (const auto& [bp, id] : bound_) {
    if (bp == &p) return Tensor{id};
  }
  if (static_cast<int64_t>(p.value.size()) != p.shape.numel())
    throw std::runtime_error("param " + p.name + ": buffer size does not match shape");
  Tensor t = push(Op::kLeaf, p.shape, {});
  std::copy(p.value.begin(), p.value.end(), val_ptr(t.id));
  nodes_[size_t(t.id)].needs_grad = true;
  nodes_[size_t(t.id)].bound = &p;
  bound_.emplace_back(&p, t.id);
  return t;
}

Tensor Tape::matmul(Tensor a, Tensor b) { return apply(Op::kMatmul, {{a, b}}); }
Tensor Tape::conv2d(Tensor img, Tensor kernel) { return apply(Op::kConv2d, {{img, kernel}}); }
Tensor Tape::bias_add(Tensor img, Tensor bias) { return apply(Op::kBiasAdd, {{img, bias}}); }
Tensor Tape::add(Tensor a, Tensor b) { return apply(Op::kAdd, {{a, b}}); }
Tensor Tape::sub(Tensor a, Tensor b) { return apply(Op::kSub, {{a, b}}); }
Tensor Tape::mul(Tensor a, Tensor b) { return apply(Op::kMul, {{a, b}}); }
Tensor Tape::div(Tensor a, Tensor b) { return apply(Op::kDiv, {{a, b}}); }
Tensor Tape::maximum(Tensor a, Tensor b) { return apply(Op::kMaximum, {{a, b}}); }
Tensor Tape::concat(std::span<const Tensor> parts) { return apply(Op::kConcat, parts); }
Tensor Tape::slice(Tensor v, int begin, int end) {
  int aux[2] = {begin, end};
  return apply(Op::kSlice, {{v}}, aux);
}
Tensor Tape::relu(Tensor x) { return apply(Op::kRelu, {{x}}); }
Tensor Tape::tanh(Tensor x) { return apply(Op::kTanh, {{x}}); }
Tensor Tape::sigmoid(Tensor x) { return apply(Op::kSigmoid, {{x}}); }
Tensor Tape::softplus(Tensor x) { return apply(Op::kSoftplus, {{x}}); }
Tensor Tape::log(Tensor x) { return apply(Op::kLog, {{x}}); }
Tensor Tape::softmax(Tensor x) { return apply(Op::kSoftmax, {{x}}); }
Tensor Tape::log_softmax(Tensor x) { return apply(Op::kLogSoftmax, {{x}}); }
Tensor Tape::sum(Tensor x) { return apply(Op::kSum, {{x}}); }
Tensor Tape::mean(Tensor x) { return apply(Op::kMean, {{x}}); }
Tensor Tape::max_pool2d(Tensor img) { return apply(Op::kMaxPool2d, {{img}}); }
Tensor Tape::scale_by(Tensor x, Tensor s) { return apply(Op::kScaleBy, {{x, s}}); }

Tensor Tape::affine(Tensor x, double scale, double shift) {
  Tensor t = apply(Op::kAffine, {{x}});
  // daux set after push; recompute values with the real coefficients.
  Node& n = nodes_[size_t(t.id)];
  n.daux0 = scale;
  n.daux1 = shift;
  forward_node(t.id);
  return t;
}

Tensor Tape::reshape(Tensor x, const Shape& shape) {
  if (shape.numel() != node(x).shape.numel())
    throw std::runtime_error("reshape: element count mismatch " + node(x).shape.str() + " -> " +
                             shape.str());
  Tensor t = push(Op::kReshape, shape, {{x}});
  return t;
}

Tensor Tape::apply(Op op, std::span<const Tensor> inputs, std::span<const int> iaux) {
  auto in_shape = [&](size_t i) -> const Shape& { return node(inputs[i]).shape; };
  switch (op) {
    case Op::kLeaf:
      throw std::runtime_error("apply: leaf is not an op");
    case Op::kMatmul: {
      const Shape& a = in_shape(0);
      const Shape& b = in_shape(1);
      if (a.rank == 2 && b.rank == 2) {
        if (a.d[1] != b.d[0])
          throw std::runtime_error("matmul: inner dims mismatch " + a.str() + " x " + b.str());
        return push(op, Shape{a.d[0], b.d[1]}, inputs);
      }
      if (a.rank == 2 && b.rank == 1) {
        if (a.d[1] != b.d[0])
          throw std::runtime_error("matmul: inner dims mismatch " + a.str() + " x " + b.str());
        return push(op, Shape{a.d[0]}, inputs);
      }
      throw std::runtime_error("matmul: unsupported ranks " + a.str() + " x " + b.str());
    }
    case Op::kConv2d: {
      const Shape& img = in_shape(0);
      const Shape& k = in_shape(1);
      if (img.rank != 3 || k.rank != 4)
        throw std::runtime_error("conv2d: want image {h,w,c} and kernel {kh,kw,cin,cout}, got " +
                                 img.str() + " and " + k.str());
      if (img.d[2] != k.d[2])
        throw std::runtime_error("conv2d: channel mismatch " + img.str() + " vs " + k.str());
      if (k.d[0] % 2 == 0 || k.d[1] % 2 == 0)
        throw std::runtime_error("conv2d: kernel dims must be odd, got " + k.str());
      if (k.d[3] > 64)
        throw std::runtime_error("conv2d: at most 64 output channels, got " + k.str());
      return push(op, Shape{img.d[0], img.d[1], k.d[3]}, inputs);
    }
    case Op::kBiasAdd: {
      const Shape& img = in_shape(0);
      const Shape& b = in_shape(1);
      if (img.rank != 3 || b.rank != 1 || img.d[2] != b.d[0])
        throw std::runtime_error("bias-add: shape mismatch " + img.str() + " + " + b.str());
      return push(op, img, inputs);
    }
    case Op::kAdd:
    case Op::kSub:
    case Op::kMul:
    case Op::kDiv:
    case Op::kMaximum:
      check_same_shape(std::string(op_name(op)).c_str(), inputs[0], inputs[1]);
      return push(op, in_shape(0), inputs);
    case Op::kConcat: {
      if (inputs.empty()) throw std::runtime_error("concat: no inputs");
      int total = 0;
      for (size_t i = 0; i < inputs.size(); ++i) {
        check_rank1("concat", inputs[i]);
        total += in_shape(i).d[0];
      }
      return push(op, Shape{total}, inputs);
    }
    case Op::kSlice: {
      check_rank1("slice", inputs[0]);
      if (iaux.size() != 2) throw std::runtime_error("slice: needs {begin,end}");
      int begin = iaux[0], end = iaux[1];
      int n = in_shape(0).d[0];
      if (begin < 0 || end > n || begin >= end)
        throw std::runtime_error("slice: bad range [" + std::to_string(begin) + "," +
                                 std::to_string(end) + ") for " + in_shape(0).str());
      return push(op, Shape{end - begin}, inputs, iaux);
    }
    case Op::kRelu:
    case Op::kTanh:
    case Op::kSigmoid:
    case Op::kSoftplus:
    case Op::kLog:
    case Op::kSoftmax:
    case Op::kLogSoftmax:
    case Op::kAffine:
      return push(op, in_shape(0), inputs, iaux);
    case Op::kScaleBy: {
      if (in_shape(1).numel() != 1)
        throw std::runtime_error("scale-by: scale must be scalar, got " + in_shape(1).str());
      return push(op, in_shape(0), inputs);
    }
    case Op::kSum:
    case Op::kMean:
      return push(op, Shape{1}, inputs);
    case Op::kMaxPool2d: {
      const Shape& img = in_shape(0);
      if (img.rank != 3 || img.d[0] % 2 != 0 || img.d[1] % 2 != 0)
        throw std::runtime_error("max-pool-2d: want image with even {h,w}, got " + img.str());
      Shape out{img.d[0] / 2, img.d[1] / 2, img.d[2]};
      // argmax per output element lives in the int arena
      std::vector<int> aux(static_cast<size_t>(out.numel()), 0);
      return push(op, out, inputs, aux);
    }
    case Op::kReshape:
      throw std::runtime_error("apply: use reshape() directly");
  }
  throw std::runtime_error("unknown op kind: " + std::to_string(int(op)));
}

void Tape::forward_node(int id) {
  Node& n = nodes_[size_t(id)];
  const int* in = inputs_of(n);
  double* out = val_ptr(id);
  const int64_t numel = n.shape.numel();
  switch (n.op) {
    case Op::kLeaf:
      break;
    case Op::kMatmul: {
      const Node& na = nodes_[size_t(in[0])];
      const Node& nb = nodes_[size_t(in[1])];
      const double* __restrict a = val_ptr(in[0]);
      const double* __restrict b = val_ptr(in[1]);
      int m = na.shape.d[0], k = na.shape.d[1];
      int ncol = nb.shape.rank == 2 ? nb.shape.d[1] : 1;
      if (ncol == 1) {
        for (int i = 0; i < m; ++i) {
          const double* __restrict arow = a + int64_t(i) * k;
          double acc = 0.0;
          for (int kk = 0; kk < k; ++kk) acc += arow[kk] * b[kk];
          out[i] = acc;
        }
        break;
      }
      for (int i = 0; i < m; ++i) {
        double* __restrict orow = out + int64_t(i) * ncol;
        std::fill_n(orow, ncol, 0.0);
        const double* arow = a + int64_t(i) * k;
        for (int kk = 0; kk < k; ++kk) {
          double av = arow[kk];
          const double* __restrict brow = b + int64_t(kk) * ncol;
          for (int j = 0; j < ncol; ++j) orow[j] += av * brow[j];
        }
      }
      break;
    }
    case Op::kConv2d: {
      const Shape& is = nodes_[size_t(in[0])].shape;
      const Shape& ks = nodes_[size_t(in[1])].shape;
      const double* __restrict img = val_ptr(in[0]);
      const double* __restrict ker = val_ptr(in[1]);
      const int h = is.d[0], w = is.d[1], cin = is.d[2];
      const int kh = ks.d[0], kw = ks.d[1], cout = ks.d[3];
      const int ph = kh / 2, pw = kw / 2;
      constexpr int kMaxCout = 64;
      double acc[kMaxCout];
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          for (int oc = 0; oc < cout; ++oc) acc[oc] = 0.0;
          for (int dy = 0; dy < kh; ++dy) {
            const int sy = y + dy - ph;
            if (sy < 0 || sy >= h) continue;
            for (int dx = 0; dx < kw; ++dx) {
              const int sx = x + dx - pw;
              if (sx < 0 || sx >= w) continue;
              const double* __restrict ipix = img + (int64_t(sy) * w + sx) * cin;
              const double* __restrict kslab = ker + (int64_t(dy) * kw + dx) * cin * cout;
              for (int ic = 0; ic < cin; ++ic) {
                const double iv = ipix[ic];
                const double* __restrict krow = kslab + int64_t(ic) * cout;
                for (int oc = 0; oc < cout; ++oc) acc[oc] += iv * krow[oc];
              }
            }
          }
          double* __restrict opix = out + (int64_t(y) * w + x) * cout;
          for (int oc = 0; oc < cout; ++oc) opix[oc] = acc[oc];
        }
      }
      break;
    }
    case Op::kBiasAdd: {
      const Shape& is = nodes_[size_t(in[0])].shape;
      const double* img = val_ptr(in[0]);
      const double* b = val_ptr(in[1]);
      int c = is.d[2];
      int64_t pixels = int64_t(is.d[0]) * is.d[1];
      for (int64_t p = 0; p < pixels; ++p)
        for (int ch = 0; ch < c; ++ch) out[p * c + ch] = img[p * c + ch] + b[ch];
      break;
    }
    case Op::kAdd: {
      const double* a = val_ptr(in[0]);
      const double* b = val_ptr(in[1]);
      for (int64_t i = 0; i < numel; ++i) out[i] = a[i] + b[i];
      break;
    }
    case Op::kSub: {
      const double* a = val_ptr(in[0]);
      const double* b = val_ptr(in[1]);
      for (int64_t i = 0; i < numel; ++i) out[i] = a[i] - b[i];
      break;
    }
    case Op::kMul: {
      const double* a = val_ptr(in[0]);
      const double* b = val_ptr(in[1]);
      for (int64_t i = 0; i < numel; ++i) out[i] = a[i] * b[i];
      break;
    }
    case Op::kDiv: {
      const double* a = val_ptr(in[0]);
      const double* b = val_ptr(in[1]);
      for (int64_t i = 0; i < numel; ++i) out[i] = a[i] / b[i];
      break;
    }
    case Op::kMaximum: {
      const double* a = val_ptr(in[0]);
      const double* b = val_ptr(in[1]);
      for (int64_t i = 0; i < numel; ++i) out[i] = a[i] >= b[i] ? a[i] : b[i];
      break;
    }
    case Op::kConcat: {
      int64_t off = 0;
      for (int i = 0; i < n.nin; ++i) {
        const int64_t len = nodes_[size_t(in[i])].shape.numel();
        std::copy_n(val_ptr(in[i]), len, out + off);
        off += len;
      }
      break;
    }
    case Op::kSlice: {
      const int begin = ibuf_[size_t(n.iaux_off)];
      std::copy_n(val_ptr(in[0]) + begin, numel, out);
      break;
    }
    case Op::kRelu: {
      const double* x = val_ptr(in[0]);
      for (int64_t i = 0; i < numel; ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
      break;
    }
    case Op::kTanh: {
      const double* x = val_ptr(in[0]);
      for (int64_t i = 0; i < numel; ++i) out[i] = std::tanh(x[i]);
      break;
    }
    case Op::kSigmoid: {
      const double* x = val_ptr(in[0]);
      for (int64_t i = 0; i < numel; ++i) out[i] = sigmoid_scalar(x[i]);
      break;
    }
    case Op::kSoftplus: {
      const double* x = val_ptr(in[0]);
      for (int64_t i = 0; i < numel; ++i) out[i] = softplus_scalar(x[i]);
      break;
    }
    case Op::kLog: {
      const double* x = val_ptr(in[0]);
      for (int64_t i = 0; i < numel; ++i) out[i] = std::log(x[i]);
      break;
    }
    case Op::kSoftmax:
    case Op::kLogSoftmax: {
      const Shape& is = n.shape;
      const double* x = val_ptr(in[0]);
      int cols = is.d[is.rank - 1];
      int64_t rows = numel / cols;
      for (int64_t r = 0; r < rows; ++r) {
        const double* xr = x + r * cols;
        double* orow = out + r * cols;
        double mx = xr[0];
        for (int j = 1; j < cols; ++j) mx = std::max(mx, xr[j]);
        double denom = 0.0;
        for (int j = 0; j < cols; ++j) denom += std::exp(xr[j] - mx);
        if (n.op == Op::kSoftmax) {
          for (int j = 0; j < cols; ++j) orow[j] = std::exp(xr[j] - mx) / denom;
        } else {
          double lse = mx + std::log(denom);
          for (int j = 0; j < cols; ++j) orow[j] = xr[j] - lse;
        }
      }
      break;
    }
    case Op::kSum:
    case Op::kMean: {
      const double* x = val_ptr(in[0]);
      const int64_t len = nodes_[size_t(in[0])].shape.numel();
      double acc = 0.0;
      for (int64_t i = 0; i < len; ++i) acc += x[i];
      out[0] = n.op == Op::kSum ? acc : acc / double(len);
      break;
    }
    case Op::kMaxPool2d: {
      const Shape& is = nodes_[size_t(in[0])].shape;
      const double* img = val_ptr(in[0]);
      int* amax = ibuf_.data() + n.iaux_off;
      const int h = is.d[0], w = is.d[1], c = is.d[2];
      const int oh = h / 2, ow = w / 2;
      for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x) {
          for (int ch = 0; ch < c; ++ch) {
            double best = -1e300;
            int besti = 0;
            for (int dy = 0; dy < 2; ++dy) {
              for (int dx = 0; dx < 2; ++dx) {
                int idx = ((2 * y + dy) * w + (2 * x + dx)) * c + ch;
                if (img[idx] > best) {
                  best = img[idx];
                  besti = idx;
                }
              }
            }
            int oidx = (y * ow + x) * c + ch;
            out[oidx] = best;
            amax[oidx] = besti;
          }
        }
      }
      break;
    }
    case Op::kAffine: {
      const double* x = val_ptr(in[0]);
      for (int64_t i = 0; i < numel; ++i) out[i] = n.daux0 * x[i] + n.daux1;
      break;
    }
    case Op::kScaleBy: {
      const double* x = val_ptr(in[0]);
      const double s = val_ptr(in[1])[0];
      for (int64_t i = 0; i < numel; ++i) out[i] = s * x[i];
      break;
    }
    case Op::kReshape:
      std::copy_n(val_ptr(in[0]), numel, out);
      break;
  }
}

void Tape::ensure_grad(int id) {
  Node& n = nodes_[size_t(id)];
  if (n.grad_off >= 0) return;
  n.grad_off = alloc_doubles(n.shape.numel());
  std::fill_n(dbuf_.begin() + n.grad_off, n.shape.numel(), 0.0);
}

void Tape::backward(Tensor loss) {
  const Node& ln = node(loss);
  if (ln.shape.numel() != 1)
    throw std::runtime_error("backward: loss must be scalar, got " + ln.shape.str());
  if (nodes_.size() == nodes_at_last_backward_)
    throw std::runtime_error("backward: called twice without a new forward");
  nodes_at_last_backward_ = nodes_.size();
  ensure_grad(loss.id);
  dbuf_[size_t(nodes_[size_t(loss.id)].grad_off)] = 1.0;
  for (int id = loss.id; id >= 0; --id) {
    const Node& n = nodes_[size_t(id)];
    if (n.grad_off < 0 || !n.needs_grad || n.op == Op::kLeaf) continue;
    backward_node(id);
  }
}

void Tape::backward_node(int id) {
  // Allocate all input grad buffers before taking raw pointers: the arena
  // may move on allocation.
  {
    const Node& n = nodes_[size_t(id)];
    const int nin = n.nin;
    for (int i = 0; i < nin; ++i) {
      int iid = ibuf_[size_t(n.in_off + i)];
      if (nodes_[size_t(iid)].needs_grad) ensure_grad(iid);
    }
  }
  const Node& n = nodes_[size_t(id)];
  const int* in = inputs_of(n);
  const double* g = grad_ptr(id);
  const double* out = val_ptr(id);
  const int64_t numel = n.shape.numel();
  auto igrad = [&](int i) -> double* {
    const Node& m = nodes_[size_t(in[i])];
    return m.needs_grad ? dbuf_.data() + m.grad_off : nullptr;
  };
  switch (n.op) {
    case Op::kLeaf:
      break;
    case Op::kMatmul: {
      const Node& na = nodes_[size_t(in[0])];
      const Node& nb = nodes_[size_t(in[1])];
      const double* __restrict a = val_ptr(in[0]);
      const double* __restrict b = val_ptr(in[1]);
      double* ga = igrad(0);
      double* gb = igrad(1);
      int m = na.shape.d[0], k = na.shape.d[1];
      int ncol = nb.shape.rank == 2 ? nb.shape.d[1] : 1;
      if (ncol == 1) {
        for (int i = 0; i < m; ++i) {
          const double gi = g[i];
          if (ga) {
            double* __restrict garow = ga + int64_t(i) * k;
            for (int kk = 0; kk < k; ++kk) garow[kk] += gi * b[kk];
          }
          if (gb) {
            const double* __restrict arow = a + int64_t(i) * k;
            for (int kk = 0; kk < k; ++kk) gb[kk] += gi * arow[kk];
          }
        }
        break;
      }
      for (int i = 0; i < m; ++i) {
        const double* grow = g + int64_t(i) * ncol;
        for (int kk = 0; kk < k; ++kk) {
          const double* brow = b + int64_t(kk) * ncol;
          if (ga) {
            double acc = 0.0;
            for (int j = 0; j < ncol; ++j) acc += grow[j] * brow[j];
            ga[int64_t(i) * k + kk] += acc;
          }
          if (gb) {
            double av = a[int64_t(i) * k + kk];
            double* gbrow = gb + int64_t(kk) * ncol;
            for (int j = 0; j < ncol; ++j) gbrow[j] += av * grow[j];
          }
        }
      }
      break;
    }
    case Op::kConv2d: {
      const Shape& is = nodes_[size_t(in[0])].shape;
      const Shape& ks = nodes_[size_t(in[1])].shape;
      const double* __restrict img = val_ptr(in[0]);
      const double* __restrict ker = val_ptr(in[1]);
      double* gimg = igrad(0);
      double* gker = igrad(1);
      const int h = is.d[0], w = is.d[1], cin = is.d[2];
      const int kh = ks.d[0], kw = ks.d[1], cout = ks.d[3];
      const int ph = kh / 2, pw = kw / 2;
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          const double* __restrict gpix = g + (int64_t(y) * w + x) * cout;
          for (int dy = 0; dy < kh; ++dy) {
            const int sy = y + dy - ph;
            if (sy < 0 || sy >= h) continue;
            for (int dx = 0; dx < kw; ++dx) {
              const int sx = x + dx - pw;
              if (sx < 0 || sx >= w) continue;
              const int64_t ipix = (int64_t(sy) * w + sx) * cin;
              const int64_t kslab = (int64_t(dy) * kw + dx) * cin * cout;
              if (gimg) {
                for (int ic = 0; ic < cin; ++ic) {
                  const double* __restrict krow = ker + kslab + int64_t(ic) * cout;
                  double acc = 0.0;
                  for (int oc = 0; oc < cout; ++oc) acc += gpix[oc] * krow[oc];
                  gimg[ipix + ic] += acc;
                }
              }
              if (gker) {
                for (int ic = 0; ic < cin; ++ic) {
                  const double iv = img[ipix + ic];
                  double* __restrict gkrow = gker + kslab + int64_t(ic) * cout;
                  for (int oc = 0; oc < cout; ++oc) gkrow[oc] += iv * gpix[oc];
                }
              }
            }
          }
        }
      }
      break;
    }
    case Op::kBiasAdd: {
      double* gimg = igrad(0);
      double* gb = igrad(1);
      const Shape& is = nodes_[size_t(in[0])].shape;
      int c = is.d[2];
      int64_t pixels = int64_t(is.d[0]) * is.d[1];
      if (gimg)
        for (int64_t i = 0; i < numel; ++i) gimg[i] += g[i];
      if (gb)
        for (int64_t p = 0; p < pixels; ++p)
          for (int ch = 0; ch < c; ++ch) gb[ch] += g[p * c + ch];
      break;
    }
    case Op::kAdd: {
      double* ga = igrad(0);
      double* gb = igrad(1);
      for (int64_t i = 0; i < numel; ++i) {
        if (ga) ga[i] += g[i];
        if (gb) gb[i] += g[i];
      }
      break;
    }
    case Op::kSub: {
      double* ga = igrad(0);
      double* gb = igrad(1);
      for (int64_t i = 0; i < numel; ++i) {
        if (ga) ga[i] += g[i];
        if (gb) gb[i] -= g[i];
      }
      break;
    }
    case Op::kMul: {
      const double* a = val_ptr(in[0]);
      const double* b = val_ptr(in[1]);
      double* ga = igrad(0);
      double* gb = igrad(1);
      for (int64_t i = 0; i < numel; ++i) {
        if (ga) ga[i] += g[i] * b[i];
        if (gb) gb[i] += g[i] * a[i];
      }
      break;
    }
    case Op::kDiv: {
      const double* b = val_ptr(in[1]);
      double* ga = igrad(0);
      double* gb = igrad(1);
      for (int64_t i = 0; i < numel; ++i) {
        if (ga) ga[i] += g[i] / b[i];
        if (gb) gb[i] -= g[i] * out[i] / b[i];
      }
      break;
    }
    case Op::kMaximum: {
      const double* a = val_ptr(in[0]);
      const double* b = val_ptr(in[1]);
      double* ga = igrad(0);
      double* gb = igrad(1);
      for (int64_t i = 0; i < numel; ++i) {
        if (a[i] >= b[i]) {
          if (ga) ga[i] += g[i];
        } else if (gb) {
          gb[i] += g[i];
        }
      }
      break;
    }
    case Op::kConcat: {
      int64_t off = 0;
      for (int i = 0; i < n.nin; ++i) {
        const int64_t len = nodes_[size_t(in[i])].shape.numel();
        double* gi = igrad(i);
        if (gi)
          for (int64_t j = 0; j < len; ++j) gi[j] += g[off + j];
        off += len;
      }
      break;
    }
    case Op::kSlice: {
      double* gi = igrad(0);
      const int begin = ibuf_[size_t(n.iaux_off)];
      if (gi)
        for (int64_t j = 0; j < numel; ++j) gi[begin + j] += g[j];
      break;
    }
    case Op::kRelu: {
      double* gi = igrad(0);
      const double* x = val_ptr(in[0]);
      if (gi)
        for (int64_t i = 0; i < numel; ++i)
          if (x[i] > 0.0) gi[i] += g[i];
      break;
    }
    case Op::kTanh: {
      double* gi = igrad(0);
      if (gi)
        for (int64_t i = 0; i < numel; ++i) gi[i] += g[i] * (1.0 - out[i] * out[i]);
      break;
    }
    case Op::kSigmoid: {
      double* gi = igrad(0);
      if (gi)
        for (int64_t i = 0; i < numel; ++i) gi[i] += g[i] * out[i] * (1.0 - out[i]);
      break;
    }
    case Op::kSoftplus: {
      double* gi = igrad(0);
      const double* x = val_ptr(in[0]);
      if (gi)
        for (int64_t i = 0; i < numel; ++i) gi[i] += g[i] * sigmoid_scalar(x[i]);
      break;
    }
    case Op::kLog: {
      double* gi = igrad(0);
      const double* x = val_ptr(in[0]);
      if (gi)
        for (int64_t i = 0; i < numel; ++i) gi[i] += g[i] / x[i];
      break;
    }
    case Op::kSoftmax: {
      double* gi = igrad(0);
      if (!gi) break;
      int cols = n.shape.d[n.shape.rank - 1];
      int64_t rows = numel / cols;
      for (int64_t r = 0; r < rows; ++r) {
        const double* yr = out + r * cols;
        const double* gr = g + r * cols;
        double dot = 0.0;
        for (int j = 0; j < cols; ++j) dot += gr[j] * yr[j];
        double* gir = gi + r * cols;
        for (int j = 0; j < cols; ++j) gir[j] += yr[j] * (gr[j] - dot);
      }
      break;
    }
    case Op::kLogSoftmax: {
      double* gi = igrad(0);
      if (!gi) break;
      int cols = n.shape.d[n.shape.rank - 1];
      int64_t rows = numel / cols;
      for (int64_t r = 0; r < rows; ++r) {
        const double* yr = out + r * cols;
        const double* gr = g + r * cols;
        double gsum = 0.0;
        for (int j = 0; j < cols; ++j) gsum += gr[j];
        double* gir = gi + r * cols;
        for (int j = 0; j < cols; ++j) gir[j] += gr[j] - std::exp(yr[j]) * gsum;
      }
      break;
    }
    case Op::kSum: {
      double* gi = igrad(0);
      const int64_t len = nodes_[size_t(in[0])].shape.numel();
      if (gi)
        for (int64_t i = 0; i < len; ++i) gi[i] += g[0];
      break;
    }
    case Op::kMean: {
      double* gi = igrad(0);
      const int64_t len = nodes_[size_t(in[0])].shape.numel();
      if (gi) {
        double s = g[0] / double(len);
        for (int64_t i = 0; i < len; ++i) gi[i] += s;
      }
      break;
    }
    case Op::kMaxPool2d: {
      double* gi = igrad(0);
      const int* amax = ibuf_.data() + n.iaux_off;
      if (gi)
        for (int64_t i = 0; i < numel; ++i) gi[amax[i]] += g[i];
      break;
    }
    case Op::kAffine: {
      double* gi = igrad(0);
      if (gi)
        for (int64_t i = 0; i < numel; ++i) gi[i] += n.daux0 * g[i];
      break;
    }
    case Op::kScaleBy: {
      const double* x = val_ptr(in[0]);
      const double s = val_ptr(in[1])[0];
      double* gx = igrad(0);
      double* gs = igrad(1);
      if (gx)
        for (int64_t i = 0; i < numel; ++i) gx[i] += s * g[i];
      if (gs) {
        double acc = 0.0;
        for (int64_t i = 0; i < numel; ++i) acc += g[i] * x[i];
        gs[0] += acc;
      }
      break;
    }
    case Op::kReshape: {
      double* gi = igrad(0);
      if (gi)
        for (int64_t i = 0; i < numel; ++i) gi[i] += g[i];
      break;
    }
  }
}

std::span<const double> Tape::val(Tensor t) const {
  const Node& n = node(t);
  return {dbuf_.data() + n.val_off, static_cast<size_t>(n.shape.numel())};
}

std::span<const double> Tape::grad(Tensor t) const {
  const Node& n = node(t);
  if (n.grad_off < 0) return {};
  return {dbuf_.data() + n.grad_off, static_cast<size_t>(n.shape.numel())};
}

const Shape& Tape::shape(Tensor t) const { return node(t).shape; }

void Tape::accumulate_param_grads(double scale) {
  for (const auto& [p, id] : bound_) {
    const Node& n = nodes_[size_t(id)];
    if (n.grad_off < 0) continue;
    if (p->grad.size() != p->value.size()) p->grad.assign(p->value.size(), 0.0);
    const double* g = dbuf_.data() + n.grad_off;
    for (size_t i = 0; i < p->grad.size(); ++i) p->grad[i] += scale * g[i];
  }
}

void Tape::export_param_grads(
    const std::function<void(Param*, std::span<const double>)>& sink) const {
  for (const auto& [p, id] : bound_) {
    const Node& n = nodes_[size_t(id)];
    if (n.grad_off < 0) continue;
    sink(p, {dbuf_.data() + n.grad_off, static_cast<size_t>(n.shape.numel())});
  }
}

void Tape::clear() {
  nodes_.clear();
  bound_.clear();
  dused_ = 0;
  iused_ = 0;
  nodes_at_last_backward_ = SIZE_MAX;
}

}  // namespace beliefnet::ad
