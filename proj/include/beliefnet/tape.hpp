#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace beliefnet::ad {

// Dense shapes up to rank 4. Vectors are {n}, matrices {rows, cols}, images
// {h, w, channels}, conv kernels {kh, kw, cin, cout}; row-major throughout.
struct Shape {
  int d[4]{1, 1, 1, 1};
  int rank{0};

  Shape() = default;
  Shape(std::initializer_list<int> dims) {
    rank = static_cast<int>(dims.size());
    int i = 0;
    for (int v : dims) d[i++] = v;
  }
  static Shape vec(int n) { return Shape{n}; }

  int64_t numel() const {
    int64_t n = 1;
    for (int i = 0; i < rank; ++i) n *= d[i];
    return n;
  }
  bool operator==(const Shape& o) const {
    if (rank != o.rank) return false;
    for (int i = 0; i < rank; ++i)
      if (d[i] != o.d[i]) return false;
    return true;
  }
  std::string str() const;
};

enum class Op : uint8_t {
  kLeaf,
  kMatmul,
  kConv2d,
  kBiasAdd,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kMaximum,
  kConcat,
  kSlice,
  kRelu,
  kTanh,
  kSigmoid,
  kSoftplus,
  kLog,
  kSoftmax,
  kLogSoftmax,
  kSum,
  kMean,
  kMaxPool2d,
  kAffine,
  kScaleBy,
  kReshape,
};

// Parses the public op names ("matmul", "conv2d", "max-pool-2d", ...).
// Throws on an unknown name.
Op op_from_name(std::string_view name);
std::string_view op_name(Op op);

// A learnable buffer living outside any tape. Tapes bind it as a leaf and
// accumulate into `grad`; the optimizer owns `momentum`.
struct Param {
  std::string name;
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  std::vector<double> momentum;
};

// Handle into a Tape.
struct Tensor {
  int32_t id{-1};
  bool valid() const { return id >= 0; }
};

// Reverse-mode tape. Values and gradients live in one reusable arena, so a
// tape can be cleared and refilled every step without reallocating. A tape
// is single-threaded; concurrent rollouts each own a tape and may share
// Params read-only during forward/backward.
class Tape {
 public:
  Tensor constant(const Shape& shape, std::span<const double> values);
  Tensor constant_scalar(double v) { return constant(Shape{1}, std::span<const double>(&v, 1)); }
  Tensor zeros(const Shape& shape);
  Tensor full(const Shape& shape, double v);
  // Leaf bound to a Param (values copied in, gradient tracked). Binding the
  // same Param twice on one tape returns the same node.
  Tensor param(Param& p);

  Tensor matmul(Tensor a, Tensor b);
  Tensor conv2d(Tensor img, Tensor kernel);  // stride 1, zero "same" padding
  Tensor bias_add(Tensor img, Tensor bias);  // {h,w,c} + {c}
  Tensor add(Tensor a, Tensor b);
  Tensor sub(Tensor a, Tensor b);
  Tensor mul(Tensor a, Tensor b);
  Tensor div(Tensor a, Tensor b);
  Tensor maximum(Tensor a, Tensor b);
  Tensor concat(std::span<const Tensor> parts);  // rank-1 inputs
  Tensor slice(Tensor v, int begin, int end);    // rank-1 input
  Tensor relu(Tensor x);
  Tensor tanh(Tensor x);
  Tensor sigmoid(Tensor x);
  Tensor softplus(Tensor x);
  Tensor log(Tensor x);
  Tensor softmax(Tensor x);      // along last axis
  Tensor log_softmax(Tensor x);  // along last axis
  Tensor sum(Tensor x);          // -> {1}
  Tensor mean(Tensor x);         // -> {1}
  Tensor max_pool2d(Tensor img);  // 2x2 window, stride 2
  Tensor affine(Tensor x, double scale, double shift);
  Tensor scale_by(Tensor x, Tensor s);  // x * s[0], s is {1}
  Tensor reshape(Tensor x, const Shape& shape);

  // Generic dispatch by kind; `iaux` carries the begin/end of a slice.
  Tensor apply(Op op, std::span<const Tensor> inputs, std::span<const int> iaux = {});

  // Populates gradients of every Param-bound and intermediate ancestor of
  // `loss`. Throws if loss is not scalar or if called twice with no new
  // nodes recorded since.
  void backward(Tensor loss);

  // Views into the arena; recording any further op may invalidate them, so
  // copy out anything needed across pushes.
  std::span<const double> val(Tensor t) const;
  std::span<const double> grad(Tensor t) const;  // empty if none
  const Shape& shape(Tensor t) const;
  double scalar(Tensor t) const { return val(t)[0]; }

  // Adds scale * d(loss)/d(param) into Param::grad for every bound Param.
  void accumulate_param_grads(double scale = 1.0);

  // Hands each bound Param's gradient to `sink` without touching Param::grad;
  // lets concurrent tapes keep private accumulators.
  void export_param_grads(
      const std::function<void(Param*, std::span<const double>)>& sink) const;

  // Forget all nodes but keep arena capacity.
  void clear();

  size_t num_nodes() const { return nodes_.size(); }

 private:
  struct Node {
    Op op;
    Shape shape;
    int32_t in_off{0};
    int32_t nin{0};
    int64_t val_off{0};
    int64_t grad_off{-1};
    int32_t iaux_off{0};
    int32_t iaux_len{0};
    double daux0{0}, daux1{0};
    Param* bound{nullptr};
    bool needs_grad{false};
  };

  Tensor push(Op op, const Shape& shape, std::span<const Tensor> inputs,
              std::span<const int> iaux = {});
  double* val_ptr(int id) { return dbuf_.data() + nodes_[size_t(id)].val_off; }
  const double* val_ptr(int id) const { return dbuf_.data() + nodes_[size_t(id)].val_off; }
  double* grad_ptr(int id) { return dbuf_.data() + nodes_[size_t(id)].grad_off; }
  void ensure_grad(int id);
  const int* inputs_of(const Node& n) const { return ibuf_.data() + n.in_off; }
  const Node& node(Tensor t) const;
  void check_rank1(const char* opname, Tensor t) const;
  void check_same_shape(const char* opname, Tensor a, Tensor b) const;

  void forward_node(int id);
  void backward_node(int id);

  std::vector<Node> nodes_;
  std::vector<double> dbuf_;
  std::vector<int> ibuf_;
  size_t dused_{0};
  size_t iused_{0};
  std::vector<std::pair<Param*, int32_t>> bound_;
  size_t nodes_at_last_backward_{SIZE_MAX};
  int64_t alloc_doubles(int64_t n);
  int32_t alloc_ints(int32_t n);
};

}  // namespace beliefnet::ad
