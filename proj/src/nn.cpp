#include "gfn/nn.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "gfn/kernels.hpp"

namespace gfn::nn {

namespace {
const kernels::Ops& K() { return kernels::active_ops(); }

size_t shape_size(const std::vector<size_t>& shape) {
  size_t n = 1;
  for (size_t d : shape) n *= d;
  return n;
}
}  // namespace

// ---- ParamStore ------------------------------------------------------------

int ParamStore::add(std::string name, std::vector<size_t> shape, LrGroup group) {
  if (index_.count(name)) throw std::invalid_argument("ParamStore: duplicate name " + name);
  for (size_t d : shape)
    if (d == 0) throw std::invalid_argument("ParamStore: zero dimension in " + name);
  Tensor t;
  t.name = std::move(name);
  t.shape = std::move(shape);
  t.group = group;
  t.data.assign(shape_size(t.shape), 0.0);
  const int id = static_cast<int>(tensors_.size());
  index_.emplace(t.name, id);
  tensors_.push_back(std::move(t));
  return id;
}

int ParamStore::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? -1 : it->second;
}

size_t ParamStore::total_size() const {
  size_t n = 0;
  for (const auto& t : tensors_) n += t.size();
  return n;
}

uint64_t ParamStore::checksum() const {
  uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&h](const void* p, size_t n) {
    const auto* b = static_cast<const uint8_t*>(p);
    for (size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ull;
    }
  };
  for (const auto& t : tensors_) {
    mix(t.name.data(), t.name.size());
    for (size_t d : t.shape) mix(&d, sizeof(d));
    mix(t.data.data(), t.data.size() * sizeof(double));
  }
  return h;
}

// ---- GradBuffer ------------------------------------------------------------

GradBuffer::GradBuffer(const ParamStore& store) {
  g_.resize(store.count());
  for (size_t i = 0; i < store.count(); ++i)
    g_[i].assign(store.at(static_cast<int>(i)).size(), 0.0);
}

void GradBuffer::zero() {
  for (auto& t : g_) std::fill(t.begin(), t.end(), 0.0);
}

void GradBuffer::drain_into(GradBuffer& dst) {
  if (dst.g_.size() != g_.size()) throw std::invalid_argument("drain_into: layout mismatch");
  for (size_t i = 0; i < g_.size(); ++i)
    K().drain_acc(g_[i].size(), g_[i].data(), dst.g_[i].data());
}

bool GradBuffer::all_finite() const {
  for (const auto& t : g_)
    for (double x : t)
      if (!std::isfinite(x)) return false;
  return true;
}

double GradBuffer::squared_norm() const {
  double s = 0.0;
  for (const auto& t : g_) s += K().dot(t.data(), t.data(), t.size());
  return s;
}

void GradBuffer::scale(double a) {
  for (auto& t : g_)
    for (double& x : t) x *= a;
}

// ---- masked softmax ----------------------------------------------------------

void masked_softmax(std::span<const double> logits, std::span<const uint8_t> mask,
                    std::span<double> out) {
  if (logits.size() != mask.size() || logits.size() != out.size())
    throw std::invalid_argument("masked_softmax: length mismatch");
  double mx = -std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < logits.size(); ++i)
    if (mask[i] && logits[i] > mx) mx = logits[i];
  if (mx == -std::numeric_limits<double>::infinity())
    throw std::invalid_argument("masked_softmax: no valid entry");
  double denom = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) {
    out[i] = mask[i] ? std::exp(logits[i] - mx) : 0.0;
    denom += out[i];
  }
  for (size_t i = 0; i < out.size(); ++i) out[i] /= denom;
}

// ---- Mlp ---------------------------------------------------------------------

Mlp Mlp::build(ParamStore& store, const std::string& prefix, const MLPShape& shape,
               LrGroup group) {
  if (shape.input_dim == 0 || shape.output_dim == 0)
    throw std::invalid_argument("Mlp: dims must be >= 1");
  for (size_t h : shape.hidden)
    if (h == 0) throw std::invalid_argument("Mlp: dims must be >= 1");
  Mlp m;
  m.shape_ = shape;
  m.dims_.push_back(shape.input_dim);
  for (size_t h : shape.hidden) m.dims_.push_back(h);
  m.dims_.push_back(shape.output_dim);
  for (size_t l = 0; l + 1 < m.dims_.size(); ++l) {
    const std::string idx = std::to_string(l);
    m.w_ids_.push_back(store.add(prefix + ".w" + idx, {m.dims_[l + 1], m.dims_[l]}, group));
    m.b_ids_.push_back(store.add(prefix + ".b" + idx, {m.dims_[l + 1]}, group));
  }
  return m;
}

void Mlp::init_params(ParamStore& store, RngStream& rng) const {
  for (size_t l = 0; l < w_ids_.size(); ++l) {
    Tensor& w = store.at(w_ids_[l]);
    const double bound = std::sqrt(1.0 / static_cast<double>(w.shape[1]));
    for (double& x : w.data) x = (2.0 * rng.uniform01() - 1.0) * bound;
    Tensor& b = store.at(b_ids_[l]);
    std::fill(b.data.begin(), b.data.end(), 0.0);
  }
}

size_t Mlp::feature_dim() const { return dims_[dims_.size() - 2]; }

void Mlp::forward(const ParamStore& store, std::span<const double> input, std::span<double> out,
                  Scratch& ws) const {
  forward_rows(store, input, 0, shape_.output_dim, out, ws);
}

void Mlp::forward_features(const ParamStore& store, std::span<const double> input,
                           std::vector<double>& features, Scratch& ws) const {
  if (input.size() != shape_.input_dim) throw std::invalid_argument("Mlp: input size mismatch");
  size_t widest = 0;
  for (size_t d : dims_) widest = std::max(widest, d);
  ws.a.resize(widest);
  ws.b.resize(widest);
  const double* x = input.data();
  double* cur = ws.a.data();
  double* nxt = ws.b.data();
  size_t width = shape_.input_dim;
  for (size_t l = 0; l + 1 < w_ids_.size(); ++l) {
    const Tensor& w = store.at(w_ids_[l]);
    const Tensor& b = store.at(b_ids_[l]);
    K().gemv(w.data.data(), w.shape[0], w.shape[1], x, b.data.data(), cur);
    if (shape_.activation == Activation::kLeakyRelu)
      K().leaky_relu(w.shape[0], shape_.leaky_slope, cur, cur);
    x = cur;
    width = w.shape[0];
    std::swap(cur, nxt);
  }
  features.assign(x, x + width);
}

void Mlp::head_rows(const ParamStore& store, std::span<const double> features, size_t row0,
                    size_t nrows, std::span<double> out) const {
  const Tensor& w = store.at(w_ids_.back());
  const Tensor& b = store.at(b_ids_.back());
  if (features.size() != w.shape[1]) throw std::invalid_argument("Mlp: feature size mismatch");
  if (row0 + nrows > w.shape[0] || out.size() != nrows)
    throw std::invalid_argument("Mlp: bad output slice");
  K().gemv(w.data.data() + row0 * w.shape[1], nrows, w.shape[1], features.data(),
           b.data.data() + row0, out.data());
}

void Mlp::forward_rows(const ParamStore& store, std::span<const double> input, size_t row0,
                       size_t nrows, std::span<double> out, Scratch& ws) const {
  forward_features(store, input, ws.features, ws);
  head_rows(store, ws.features, row0, nrows, out);
}

// ---- Tape --------------------------------------------------------------------

NonFiniteLossError::NonFiniteLossError(double v)
    : std::runtime_error("non-finite loss value " + std::to_string(v)), value(v) {}

void Tape::reset() {
  nodes_.clear();
  varena_.clear();
  aux_.clear();
  iaux_.clear();
  baux_.clear();
}

size_t Tape::alloc_values(size_t n) {
  const size_t off = varena_.size();
  varena_.resize(off + n, 0.0);
  return off;
}

int Tape::push(Node n) {
  nodes_.push_back(n);
  return static_cast<int>(nodes_.size()) - 1;
}

int Tape::input(std::span<const double> v) {
  Node n;
  n.op = Op::kInput;
  n.n = v.size();
  n.voff = alloc_values(v.size());
  std::copy(v.begin(), v.end(), varena_.begin() + n.voff);
  return push(n);
}

int Tape::affine(int w_tensor, int b_tensor, int x) {
  const Tensor& w = params_->at(w_tensor);
  return affine_rows(w_tensor, b_tensor, 0, w.shape[0], x);
}

int Tape::affine_rows(int w_tensor, int b_tensor, size_t row0, size_t nrows, int x) {
  const Tensor& w = params_->at(w_tensor);
  const Node& xn = node(x);
  if (w.shape.size() != 2 || w.shape[1] != xn.n)
    throw std::invalid_argument("Tape::affine: shape mismatch");
  if (row0 + nrows > w.shape[0]) throw std::invalid_argument("Tape::affine: bad row slice");
  Node n;
  n.op = Op::kAffineRows;
  n.x = x;
  n.tensor = w_tensor;
  n.tensor_b = b_tensor;
  n.row0 = row0;
  n.nrows = nrows;
  n.n = nrows;
  n.voff = alloc_values(nrows);
  const Tensor& b = params_->at(b_tensor);
  K().gemv(w.data.data() + row0 * w.shape[1], nrows, w.shape[1],
           varena_.data() + node(x).voff, b.data.data() + row0, varena_.data() + n.voff);
  return push(n);
}

int Tape::leaky_relu(int x, double slope) {
  const Node& xn = node(x);
  Node n;
  n.op = Op::kLeakyRelu;
  n.x = x;
  n.c0 = slope;
  n.n = xn.n;
  n.voff = alloc_values(xn.n);
  K().leaky_relu(xn.n, slope, varena_.data() + xn.voff, varena_.data() + n.voff);
  return push(n);
}

int Tape::add_scaled_const(int x, std::span<const double> c, double alpha) {
  const Node& xn = node(x);
  if (c.size() != xn.n) throw std::invalid_argument("Tape::add_scaled_const: size mismatch");
  Node n;
  n.op = Op::kAddScaledConst;
  n.x = x;
  n.c0 = alpha;
  n.n = xn.n;
  n.voff = alloc_values(xn.n);
  for (size_t i = 0; i < xn.n; ++i) varena_[n.voff + i] = varena_[xn.voff + i] + alpha * c[i];
  return push(n);
}

int Tape::log_prob_pick(int logits, std::span<const uint8_t> mask, int action) {
  const Node& xn = node(logits);
  if (mask.size() != xn.n) throw std::invalid_argument("log_prob_pick: mask size mismatch");
  if (action < 0 || static_cast<size_t>(action) >= xn.n || !mask[action])
    throw std::invalid_argument("log_prob_pick: action not in masked support");
  Node n;
  n.op = Op::kLogProbPick;
  n.x = logits;
  n.row0 = static_cast<size_t>(action);
  n.n = 1;
  n.voff = alloc_values(1);
  n.aux_n = xn.n;
  n.aux = aux_.size();
  aux_.resize(n.aux + xn.n);
  n.baux = baux_.size();
  baux_.insert(baux_.end(), mask.begin(), mask.end());
  masked_softmax(std::span<const double>(varena_.data() + xn.voff, xn.n),
                 std::span<const uint8_t>(baux_.data() + n.baux, xn.n),
                 std::span<double>(aux_.data() + n.aux, xn.n));
  const double p = aux_[n.aux + n.row0];
  if (p <= 0.0) throw std::invalid_argument("log_prob_pick: taken action has zero probability");
  varena_[n.voff] = std::log(p);
  return push(n);
}

int Tape::member_log_prob(int w_tensor, int b_tensor, size_t row0, size_t nrows, int x,
                          std::span<const double> prior, double alpha,
                          std::span<const uint8_t> mask, int action) {
  const Tensor& w = params_->at(w_tensor);
  const Node& xn = node(x);
  if (w.shape.size() != 2 || w.shape[1] != xn.n)
    throw std::invalid_argument("member_log_prob: shape mismatch");
  if (row0 + nrows > w.shape[0]) throw std::invalid_argument("member_log_prob: bad row slice");
  if (mask.size() != nrows || (!prior.empty() && prior.size() != nrows))
    throw std::invalid_argument("member_log_prob: mask/prior size mismatch");
  if (action < 0 || static_cast<size_t>(action) >= nrows || !mask[static_cast<size_t>(action)])
    throw std::invalid_argument("member_log_prob: action not in masked support");
  Node n;
  n.op = Op::kMemberLogProb;
  n.x = x;
  n.tensor = w_tensor;
  n.tensor_b = b_tensor;
  n.arg = action;
  n.row0 = row0;
  n.nrows = nrows;
  n.n = 1;
  // aux holds [probs | scratch]; scratch carries logits forward and the
  // logit gradient during backward.
  n.aux_n = 2 * nrows;
  n.aux = aux_.size();
  aux_.resize(n.aux + 2 * nrows);
  n.baux = baux_.size();
  baux_.insert(baux_.end(), mask.begin(), mask.end());
  double* scratch = aux_.data() + n.aux + nrows;
  K().gemv(w.data.data() + row0 * w.shape[1], nrows, w.shape[1], varena_.data() + xn.voff,
           params_->at(b_tensor).data.data() + row0, scratch);
  if (!prior.empty())
    for (size_t i = 0; i < nrows; ++i) scratch[i] += alpha * prior[i];
  masked_softmax(std::span<const double>(scratch, nrows),
                 std::span<const uint8_t>(baux_.data() + n.baux, nrows),
                 std::span<double>(aux_.data() + n.aux, nrows));
  const double p = aux_[n.aux + static_cast<size_t>(action)];
  if (p <= 0.0) throw std::invalid_argument("member_log_prob: taken action has zero probability");
  n.voff = alloc_values(1);
  varena_[n.voff] = std::log(p);
  return push(n);
}

int Tape::param_scalar(int tensor, size_t index) {
  const Tensor& t = params_->at(tensor);
  if (index >= t.size()) throw std::invalid_argument("param_scalar: index out of range");
  Node n;
  n.op = Op::kParamScalar;
  n.tensor = tensor;
  n.row0 = index;
  n.n = 1;
  n.voff = alloc_values(1);
  varena_[n.voff] = t.data[index];
  return push(n);
}

int Tape::scalar_combine(std::span<const int> ids, std::span<const double> coeffs, double c0) {
  if (ids.size() != coeffs.size()) throw std::invalid_argument("scalar_combine: size mismatch");
  Node n;
  n.op = Op::kScalarCombine;
  n.c0 = c0;
  n.n = 1;
  n.iaux = iaux_.size();
  n.iaux_n = ids.size();
  iaux_.insert(iaux_.end(), ids.begin(), ids.end());
  n.aux = aux_.size();
  n.aux_n = coeffs.size();
  aux_.insert(aux_.end(), coeffs.begin(), coeffs.end());
  double s = c0;
  for (size_t i = 0; i < ids.size(); ++i) {
    const Node& o = node(ids[i]);
    if (o.n != 1) throw std::invalid_argument("scalar_combine: operand not scalar");
    s += coeffs[i] * varena_[o.voff];
  }
  n.voff = alloc_values(1);
  varena_[n.voff] = s;
  return push(n);
}

int Tape::square(int x) {
  const Node& xn = node(x);
  if (xn.n != 1) throw std::invalid_argument("square: operand not scalar");
  Node n;
  n.op = Op::kSquare;
  n.x = x;
  n.n = 1;
  n.voff = alloc_values(1);
  const double v = varena_[xn.voff];
  varena_[n.voff] = v * v;
  return push(n);
}

std::span<const double> Tape::value(int id) const {
  const Node& n = node(id);
  return {varena_.data() + n.voff, n.n};
}

double Tape::scalar_value(int id) const {
  const Node& n = node(id);
  if (n.n != 1) throw std::invalid_argument("scalar_value: node not scalar");
  return varena_[n.voff];
}

void Tape::backward(int loss, GradBuffer& grads, double seed) {
  const Node& ln = node(loss);
  if (ln.n != 1) throw std::invalid_argument("backward: loss not scalar");
  const double lv = varena_[ln.voff];
  if (!std::isfinite(lv)) throw NonFiniteLossError(lv);
  garena_.assign(varena_.size(), 0.0);
  garena_[ln.voff] = seed;
  for (int id = loss; id >= 0; --id) {
    const Node& n = nodes_[static_cast<size_t>(id)];
    switch (n.op) {
      case Op::kInput:
        break;
      case Op::kAffineRows: {
        const Tensor& w = params_->at(n.tensor);
        const Node& xn = node(n.x);
        const double* gy = garena_.data() + n.voff;
        const double* xv = varena_.data() + xn.voff;
        K().ger_acc(grads[n.tensor].data() + n.row0 * w.shape[1], n.nrows, w.shape[1], gy, xv);
        K().axpy(n.nrows, 1.0, gy, grads[n.tensor_b].data() + n.row0);
        K().gemv_t_acc(w.data.data() + n.row0 * w.shape[1], n.nrows, w.shape[1], gy,
                       garena_.data() + xn.voff);
        break;
      }
      case Op::kLeakyRelu: {
        const Node& xn = node(n.x);
        K().leaky_relu_grad_acc(n.n, n.c0, varena_.data() + xn.voff, garena_.data() + n.voff,
                                garena_.data() + xn.voff);
        break;
      }
      case Op::kAddScaledConst: {
        const Node& xn = node(n.x);
        K().axpy(n.n, 1.0, garena_.data() + n.voff, garena_.data() + xn.voff);
        break;
      }
      case Op::kLogProbPick: {
        const Node& xn = node(n.x);
        const double g = garena_[n.voff];
        if (g != 0.0) {
          const double* p = aux_.data() + n.aux;
          const uint8_t* mask = baux_.data() + n.baux;
          double* gx = garena_.data() + xn.voff;
          for (size_t i = 0; i < xn.n; ++i) {
            if (!mask[i]) continue;
            const double ind = (i == n.row0) ? 1.0 : 0.0;
            gx[i] += g * (ind - p[i]);
          }
        }
        break;
      }
      case Op::kMemberLogProb: {
        const double g = garena_[n.voff];
        if (g != 0.0) {
          const Tensor& w = params_->at(n.tensor);
          const Node& xn = node(n.x);
          const double* p = aux_.data() + n.aux;
          double* gl = aux_.data() + n.aux + n.nrows;  // scratch: logit gradient
          const uint8_t* mask = baux_.data() + n.baux;
          for (size_t i = 0; i < n.nrows; ++i) {
            const double ind = static_cast<int>(i) == n.arg ? 1.0 : 0.0;
            gl[i] = mask[i] ? g * (ind - p[i]) : 0.0;
          }
          K().ger_acc(grads[n.tensor].data() + n.row0 * w.shape[1], n.nrows, w.shape[1], gl,
                      varena_.data() + xn.voff);
          double* gb = grads[n.tensor_b].data() + n.row0;
          for (size_t i = 0; i < n.nrows; ++i) gb[i] += gl[i];
          K().gemv_t_acc(w.data.data() + n.row0 * w.shape[1], n.nrows, w.shape[1], gl,
                         garena_.data() + xn.voff);
        }
        break;
      }
      case Op::kParamScalar:
        grads[n.tensor][n.row0] += garena_[n.voff];
        break;
      case Op::kScalarCombine: {
        const double g = garena_[n.voff];
        if (g != 0.0) {
          for (size_t i = 0; i < n.iaux_n; ++i) {
            const Node& o = node(iaux_[n.iaux + i]);
            garena_[o.voff] += g * aux_[n.aux + i];
          }
        }
        break;
      }
      case Op::kSquare: {
        const Node& xn = node(n.x);
        garena_[xn.voff] += garena_[n.voff] * 2.0 * varena_[xn.voff];
        break;
      }
      case Op::kAffine:
        break;  // never constructed; affine() lowers to kAffineRows
    }
  }
}

// ---- Adam --------------------------------------------------------------------

Adam::Adam(const ParamStore& store, AdamConfig cfg) : cfg_(cfg) {
  m_.resize(store.count());
  v_.resize(store.count());
  for (size_t i = 0; i < store.count(); ++i) {
    m_[i].assign(store.at(static_cast<int>(i)).size(), 0.0);
    v_[i].assign(store.at(static_cast<int>(i)).size(), 0.0);
  }
}

void Adam::step(ParamStore& store, const GradBuffer& grads, double model_lr, double logz_lr) {
  if (grads.count() != store.count()) throw std::invalid_argument("Adam: layout mismatch");
  for (size_t i = 0; i < store.count(); ++i)
    for (double g : grads[static_cast<int>(i)])
      if (!std::isfinite(g))
        throw std::runtime_error("Adam: non-finite gradient in " +
                                 store.at(static_cast<int>(i)).name);
  ++t_;
  const double inv_bc1 = 1.0 / (1.0 - std::pow(cfg_.beta1, static_cast<double>(t_)));
  const double inv_bc2 = 1.0 / (1.0 - std::pow(cfg_.beta2, static_cast<double>(t_)));
  for (size_t i = 0; i < store.count(); ++i) {
    Tensor& t = store.at(static_cast<int>(i));
    const double lr = t.group == LrGroup::kLogZ ? logz_lr : model_lr;
    K().adam_update(t.size(), lr, cfg_.beta1, cfg_.beta2, cfg_.eps, inv_bc1, inv_bc2,
                    grads[static_cast<int>(i)].data(), m_[i].data(), v_[i].data(),
                    t.data.data());
  }
}

std::vector<uint8_t> Adam::serialize() const {
  std::vector<uint8_t> out;
  put_u64(out, t_);
  put_u32(out, static_cast<uint32_t>(m_.size()));
  for (size_t i = 0; i < m_.size(); ++i) {
    put_u64(out, m_[i].size());
    for (double x : m_[i]) put_f64(out, x);
    for (double x : v_[i]) put_f64(out, x);
  }
  return out;
}

void Adam::restore(std::span<const uint8_t> bytes) {
  ByteReader r(bytes);
  t_ = r.u64();
  const uint32_t n = r.u32();
  if (n != m_.size()) throw std::runtime_error("Adam::restore: tensor count mismatch");
  for (size_t i = 0; i < m_.size(); ++i) {
    const uint64_t sz = r.u64();
    if (sz != m_[i].size()) throw std::runtime_error("Adam::restore: tensor size mismatch");
    for (double& x : m_[i]) x = r.f64();
    for (double& x : v_[i]) x = r.f64();
  }
}

// ---- byte helpers --------------------------------------------------------------

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<uint8_t>& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<uint8_t>& out, double v) { put_u64(out, std::bit_cast<uint64_t>(v)); }

void put_bytes(std::vector<uint8_t>& out, std::span<const uint8_t> v) {
  out.insert(out.end(), v.begin(), v.end());
}

void put_string(std::vector<uint8_t>& out, const std::string& s) {
  put_u32(out, static_cast<uint32_t>(s.size()));
  out.insert(out.end(), s.begin(), s.end());
}

void ByteReader::need(size_t n) const {
  if (pos_ + n > data_.size()) throw std::runtime_error("checkpoint: truncated data");
}

uint32_t ByteReader::u32() {
  need(4);
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(data_[pos_ + i]) << (8 * i);
  pos_ += 4;
  return v;
}

uint64_t ByteReader::u64() {
  need(8);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(data_[pos_ + i]) << (8 * i);
  pos_ += 8;
  return v;
}

double ByteReader::f64() { return std::bit_cast<double>(u64()); }

std::string ByteReader::str() {
  const uint32_t n = u32();
  need(n);
  std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
  pos_ += n;
  return s;
}

void ByteReader::raw(std::span<uint8_t> out) {
  need(out.size());
  std::copy(data_.begin() + pos_, data_.begin() + pos_ + out.size(), out.begin());
  pos_ += out.size();
}

// ---- checkpoint container -------------------------------------------------------

namespace {
constexpr char kMagic[8] = {'G', 'F', 'N', 'C', 'K', 'P', 'T', '1'};
constexpr uint32_t kVersion = 1;
}  // namespace

void write_checkpoint(const std::string& path, const std::vector<Section>& sections) {
  std::vector<uint8_t> out;
  out.insert(out.end(), kMagic, kMagic + 8);
  put_u32(out, kVersion);
  put_u32(out, static_cast<uint32_t>(sections.size()));
  for (const auto& [key, payload] : sections) {
    put_string(out, key);
    put_u64(out, payload.size());
    put_bytes(out, payload);
  }
  // Write to a temp file then rename so a crash never leaves a torn checkpoint.
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + tmp);
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!f) throw std::runtime_error("write failed: " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw std::runtime_error("cannot rename checkpoint into place: " + path);
}

std::vector<Section> read_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                             std::istreambuf_iterator<char>());
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0)
    throw std::runtime_error("not a checkpoint file: " + path);
  ByteReader r(std::span<const uint8_t>(bytes.data() + 8, bytes.size() - 8));
  if (r.u32() != kVersion) throw std::runtime_error("unsupported checkpoint version");
  const uint32_t n = r.u32();
  std::vector<Section> sections;
  sections.reserve(n);
  for (uint32_t i = 0; i < n; ++i) {
    std::string key = r.str();
    const uint64_t len = r.u64();
    std::vector<uint8_t> payload(len);
    r.raw(payload);
    sections.emplace_back(std::move(key), std::move(payload));
  }
  return sections;
}

std::vector<uint8_t> serialize_store(const ParamStore& store) {
  std::vector<uint8_t> out;
  put_u32(out, static_cast<uint32_t>(store.count()));
  for (size_t i = 0; i < store.count(); ++i) {
    const Tensor& t = store.at(static_cast<int>(i));
    put_string(out, t.name);
    out.push_back(static_cast<uint8_t>(t.group));
    put_u32(out, static_cast<uint32_t>(t.shape.size()));
    for (size_t d : t.shape) put_u64(out, d);
    put_u64(out, t.size());
    for (double x : t.data) put_f64(out, x);
  }
  return out;
}

void restore_store(ParamStore& store, std::span<const uint8_t> bytes) {
  ByteReader r(bytes);
  const uint32_t n = r.u32();
  if (n != store.count()) throw std::runtime_error("checkpoint: tensor count mismatch");
  for (uint32_t i = 0; i < n; ++i) {
    const std::string name = r.str();
    const uint8_t group = [&] {
      uint8_t b[1];
      r.raw(b);
      return b[0];
    }();
    (void)group;
    const int id = store.find(name);
    if (id < 0) throw std::runtime_error("checkpoint: unknown tensor " + name);
    Tensor& t = store.at(id);
    const uint32_t ndim = r.u32();
    std::vector<size_t> shape(ndim);
    for (auto& d : shape) d = r.u64();
    if (shape != t.shape) throw std::runtime_error("checkpoint: shape mismatch for " + name);
    const uint64_t count = r.u64();
    if (count != t.size()) throw std::runtime_error("checkpoint: size mismatch for " + name);
    for (double& x : t.data) x = r.f64();
  }
}

}  // namespace gfn::nn
