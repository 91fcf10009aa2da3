#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "gfn/rng.hpp"

namespace gfn::nn {

// Learning-rate group a parameter belongs to. The log-partition estimates
// train at their own rate.
enum class LrGroup : uint8_t { kModel = 0, kLogZ = 1 };

enum class Activation : uint8_t { kLeakyRelu = 0, kIdentity = 1 };

struct MLPShape {
  size_t input_dim = 0;
  std::vector<size_t> hidden;
  size_t output_dim = 0;
  Activation activation = Activation::kLeakyRelu;
  double leaky_slope = 0.01;
};

struct Tensor {
  std::string name;
  std::vector<size_t> shape;
  LrGroup group = LrGroup::kModel;
  std::vector<double> data;
  size_t size() const { return data.size(); }
};

// Ordered, name-addressed parameter tensors. Names are unique and shapes are
// fixed after add(). Single writer; rollouts read a store that nobody is
// mutating.
class ParamStore {
 public:
  int add(std::string name, std::vector<size_t> shape, LrGroup group = LrGroup::kModel);
  int find(const std::string& name) const;  // -1 when absent
  Tensor& at(int id) { return tensors_.at(static_cast<size_t>(id)); }
  const Tensor& at(int id) const { return tensors_.at(static_cast<size_t>(id)); }
  size_t count() const { return tensors_.size(); }
  size_t total_size() const;
  uint64_t checksum() const;  // FNV-1a over names, shapes and raw payload

 private:
  std::vector<Tensor> tensors_;
  std::map<std::string, int> index_;
};

// Gradient tensors aligned index-for-index with a ParamStore.
class GradBuffer {
 public:
  GradBuffer() = default;
  explicit GradBuffer(const ParamStore& store);
  std::vector<double>& operator[](int id) { return g_.at(static_cast<size_t>(id)); }
  const std::vector<double>& operator[](int id) const { return g_.at(static_cast<size_t>(id)); }
  size_t count() const { return g_.size(); }
  void zero();
  // dst += this, this = 0. Deterministic reduction primitive.
  void drain_into(GradBuffer& dst);
  bool all_finite() const;
  double squared_norm() const;
  void scale(double a);

 private:
  std::vector<std::vector<double>> g_;
};

// Probabilities over logits restricted to mask; masked-out entries are
// exactly zero. Throws std::invalid_argument when no entry is valid.
void masked_softmax(std::span<const double> logits, std::span<const uint8_t> mask,
                    std::span<double> out);

// Affine stack. Hidden layers use the shape activation; the final layer is
// affine only. Parameters live in a ParamStore as "<prefix>.w<i>"/"<prefix>.b<i>",
// weights row-major (out x in).
class Mlp {
 public:
  static Mlp build(ParamStore& store, const std::string& prefix, const MLPShape& shape,
                   LrGroup group = LrGroup::kModel);

  // Fan-in-scaled uniform weights in (-sqrt(1/fan_in), sqrt(1/fan_in)), zero
  // biases. Deterministic per stream.
  void init_params(ParamStore& store, RngStream& rng) const;

  struct Scratch {
    std::vector<double> a, b, features;
  };

  void forward(const ParamStore& store, std::span<const double> input, std::span<double> out,
               Scratch& ws) const;
  // Same pass but only rows [row0, row0+nrows) of the final layer.
  void forward_rows(const ParamStore& store, std::span<const double> input, size_t row0,
                    size_t nrows, std::span<double> out, Scratch& ws) const;
  // Split pass: the activated hidden stack, then head rows on cached
  // features. Lets callers reuse one feature vector across many row slices.
  void forward_features(const ParamStore& store, std::span<const double> input,
                        std::vector<double>& features, Scratch& ws) const;
  void head_rows(const ParamStore& store, std::span<const double> features, size_t row0,
                 size_t nrows, std::span<double> out) const;

  const MLPShape& shape() const { return shape_; }
  size_t input_dim() const { return shape_.input_dim; }
  size_t output_dim() const { return shape_.output_dim; }
  size_t feature_dim() const;  // width feeding the final layer
  int weight_id(size_t layer) const { return w_ids_.at(layer); }
  int bias_id(size_t layer) const { return b_ids_.at(layer); }
  size_t layer_count() const { return w_ids_.size(); }
  int final_weight_id() const { return w_ids_.back(); }
  int final_bias_id() const { return b_ids_.back(); }

 private:
  MLPShape shape_;
  std::vector<int> w_ids_, b_ids_;
  std::vector<size_t> dims_;  // input, hidden..., output
};

struct NonFiniteLossError : std::runtime_error {
  explicit NonFiniteLossError(double v);
  double value;
};

// Reverse-mode tape over vector-valued nodes. Build a computation, read
// values, then backward() accumulates exact gradients for every ParamStore
// tensor that participated; everything else is untouched (zero contribution).
// reset() rewinds the arenas so a tape can be reused without reallocation.
class Tape {
 public:
  explicit Tape(const ParamStore* params) : params_(params) {}

  void reset();

  int input(std::span<const double> v);  // constant, no gradient
  int affine(int w_tensor, int b_tensor, int x);
  int affine_rows(int w_tensor, int b_tensor, size_t row0, size_t nrows, int x);
  int leaky_relu(int x, double slope);
  // x + alpha * c with c constant
  int add_scaled_const(int x, std::span<const double> c, double alpha);
  // log of the masked-softmax probability of `action`
  int log_prob_pick(int logits, std::span<const uint8_t> mask, int action);
  // Fused head-slice pick: log masked-softmax probability of `action` under
  // logits = W[row0:row0+nrows] x + b[row0:] + alpha * prior. One node per
  // (state, member) keeps ensemble training cheap.
  int member_log_prob(int w_tensor, int b_tensor, size_t row0, size_t nrows, int x,
                      std::span<const double> prior, double alpha,
                      std::span<const uint8_t> mask, int action);
  int param_scalar(int tensor, size_t index);
  // c0 + sum_i coeffs[i] * scalar(nodes[i])
  int scalar_combine(std::span<const int> nodes, std::span<const double> coeffs, double c0);
  int square(int x);  // scalar

  std::span<const double> value(int node) const;
  double scalar_value(int node) const;

  // Seeds d(loss)/d(loss) = seed and accumulates into `grads`. Throws
  // NonFiniteLossError when the loss value is not finite.
  void backward(int loss, GradBuffer& grads, double seed = 1.0);

 private:
  enum class Op : uint8_t {
    kInput,
    kAffine,
    kAffineRows,
    kLeakyRelu,
    kAddScaledConst,
    kLogProbPick,
    kMemberLogProb,
    kParamScalar,
    kScalarCombine,
    kSquare,
  };
  struct Node {
    Op op;
    int x = -1;
    int tensor = -1, tensor_b = -1;
    int arg = 0;                 // picked action index
    size_t row0 = 0, nrows = 0;  // affine_rows / head slice
    size_t voff = 0, n = 0;      // value/grad arena slice
    size_t aux = 0, aux_n = 0;   // doubles: saved probs / coeffs / scratch
    size_t iaux = 0, iaux_n = 0; // ints: combine operand node ids
    size_t baux = 0;             // bytes: mask
    double c0 = 0.0;
  };

  size_t alloc_values(size_t n);
  int push(Node n);
  const Node& node(int id) const { return nodes_.at(static_cast<size_t>(id)); }

  const ParamStore* params_;
  std::vector<Node> nodes_;
  std::vector<double> varena_, garena_, aux_;
  std::vector<int> iaux_;
  std::vector<uint8_t> baux_;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction and one learning rate per LrGroup. The step
// counter advances once per step() call.
class Adam {
 public:
  Adam(const ParamStore& store, AdamConfig cfg);
  // Throws on non-finite gradients.
  void step(ParamStore& store, const GradBuffer& grads, double model_lr, double logz_lr);
  uint64_t steps() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

  std::vector<uint8_t> serialize() const;
  void restore(std::span<const uint8_t> bytes);

 private:
  AdamConfig cfg_;
  uint64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// ---- checkpoint container ------------------------------------------------
// Versioned header followed by named binary sections; all integers and f64
// payloads little-endian. Parameter tensors serialize as
// name / shape / raw f64 data and restore by name into an existing store
// with matching shapes.

using Section = std::pair<std::string, std::vector<uint8_t>>;

void write_checkpoint(const std::string& path, const std::vector<Section>& sections);
std::vector<Section> read_checkpoint(const std::string& path);

std::vector<uint8_t> serialize_store(const ParamStore& store);
// Validates names and shapes against `store` and copies payloads in.
void restore_store(ParamStore& store, std::span<const uint8_t> bytes);

// Byte-stream helpers shared by the serializers.
void put_u32(std::vector<uint8_t>& out, uint32_t v);
void put_u64(std::vector<uint8_t>& out, uint64_t v);
void put_f64(std::vector<uint8_t>& out, double v);
void put_bytes(std::vector<uint8_t>& out, std::span<const uint8_t> v);
void put_string(std::vector<uint8_t>& out, const std::string& s);

class ByteReader {
 public:
  explicit ByteReader(std::span<const uint8_t> data) : data_(data) {}
  uint32_t u32();
  uint64_t u64();
  double f64();
  std::string str();
  void raw(std::span<uint8_t> out);
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(size_t n) const;
  std::span<const uint8_t> data_;
  size_t pos_ = 0;
};

}  // namespace gfn::nn
