#include "ladeep/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "ladeep/rng.hpp"

namespace ladeep::ad {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

template <typename T>
Tensor<T>::Tensor(Shape s, std::vector<T> values) : shape(std::move(s)), data(std::move(values)) {
  if (data.size() != shape_size(shape))
    throw NumericError("tensor of shape " + shape_str(shape) + " given " + std::to_string(data.size()) + " values");
}

template <typename T>
Parameter<T>& ParamSet<T>::add(std::string name, Tensor<T> value) {
  if (contains(name)) throw NumericError("duplicate parameter " + name);
  auto pos = std::lower_bound(params_.begin(), params_.end(), name,
                              [](const Parameter<T>& p, const std::string& n) { return p.name < n; });
  pos = params_.insert(pos, Parameter<T>{std::move(name), std::move(value)});
  const std::size_t at = static_cast<std::size_t>(pos - params_.begin());
  index_.clear();
  for (std::size_t i = 0; i < params_.size(); ++i) index_.emplace(params_[i].name, i);
  return params_[at];
}

template <typename T>
std::size_t ParamSet<T>::index(std::string_view name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw NumericError("unknown parameter " + std::string(name));
  return it->second;
}

template <typename T>
std::size_t ParamSet<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

template <typename T>
std::vector<std::string> ParamSet<T>::names() const {
  std::vector<std::string> out;
  for (const auto& p : params_) out.push_back(p.name);
  return out;
}

template <typename T>
Grads<T> zero_grads(const ParamSet<T>& params) {
  Grads<T> g;
  g.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) g.emplace_back(params[i].value.shape);
  return g;
}

namespace {

template <typename T>
bool all_finite(const Tensor<T>& t) {
  return std::all_of(t.data.begin(), t.data.end(), [](T v) { return std::isfinite(v); });
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw NumericError(msg);
}

template <typename T>
void require_same(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  require(a.shape == b.shape,
          std::string(op) + ": shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
}

template <typename T>
void require_rank(const Tensor<T>& a, std::size_t rank, const char* op) {
  require(a.rank() == rank, std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(a.shape));
}

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using MutMap = Eigen::Map<RowMat<T>>;

template <typename T>
ConstMap<T> cmap(const T* p, std::size_t r, std::size_t c) {
  return ConstMap<T>(p, static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}
template <typename T>
MutMap<T> mmap(T* p, std::size_t r, std::size_t c) {
  return MutMap<T>(p, static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

template <typename T>
void add_into(Tensor<T>& dst, const Tensor<T>& src) {
  for (std::size_t i = 0; i < src.size(); ++i) dst.data[i] += src.data[i];
}

}  // namespace

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  if (check_finite_ && !all_finite(value)) throw NumericError("non-finite constant recorded");
  Node& n = nodes_.emplace_back();
  n.own = std::move(value);
  n.ref = &n.own;
  n.op = "constant";
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Tape<T>::param(const ParamSet<T>& set, std::size_t index) {
  const Parameter<T>& p = set[index];
  if (check_finite_ && !all_finite(p.value)) throw NumericError("non-finite parameter " + p.name);
  Node& n = nodes_.emplace_back();
  n.ref = &p.value;
  n.param = static_cast<long>(index);
  n.needs_grad = true;
  n.op = "param";
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Tape<T>::record(Tensor<T> value, const std::vector<std::size_t>& inputs, Backward backward, const char* op) {
  if (check_finite_ && !all_finite(value)) throw NumericError(std::string("non-finite output from ") + op);
  Node& n = nodes_.emplace_back();
  n.own = std::move(value);
  n.ref = &n.own;
  n.op = op;
  n.needs_grad = std::any_of(inputs.begin(), inputs.end(), [&](std::size_t i) { return nodes_[i].needs_grad; });
  if (n.needs_grad) {
    n.back = std::move(backward);
    n.inputs = inputs;
  }
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Tensor<T>& Tape<T>::grad_ref(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.data.empty()) n.grad = Tensor<T>(n.ref->shape);
  return n.grad;
}

template <typename T>
void Tape<T>::backward(Var<T> loss) {
  if (loss.tape() != this) throw NumericError("backward: loss belongs to another tape");
  if (consumed_) throw NumericError("backward: tape already consumed");
  if (value(loss.id()).size() != 1)
    throw NumericError("backward: loss must be scalar, got " + shape_str(value(loss.id()).shape));
  consumed_ = true;
  grad_ref(loss.id()).data[0] = T(1);
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.back || n.grad.data.empty()) continue;
    n.back(*this, id);
    if (check_finite_)
      for (std::size_t in : n.inputs)
        if (!nodes_[in].grad.data.empty() && !all_finite(nodes_[in].grad))
          throw NumericError(std::string("non-finite gradient from ") + n.op);
  }
}

template <typename T>
Tensor<T> Tape<T>::grad(Var<T> v) const {
  const Node& n = nodes_[v.id()];
  return n.grad.data.empty() ? Tensor<T>(n.ref->shape) : n.grad;
}

template <typename T>
void Tape<T>::accumulate_param_grads(Grads<T>& into) const {
  for (const Node& n : nodes_) {
    if (n.param < 0 || n.grad.data.empty()) continue;
    Tensor<T>& dst = into.at(static_cast<std::size_t>(n.param));
    if (dst.data.empty()) dst = Tensor<T>(n.grad.shape);
    require_same(dst, n.grad, "accumulate_param_grads");
    add_into(dst, n.grad);
  }
}

// ---- ops ----

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  const Tensor<T>& A = a.value();
  const Tensor<T>& B = b.value();
  require_rank(A, 2, "matmul");
  require_rank(B, 2, "matmul");
  const std::size_t m = A.dim(0), k = A.dim(1), n = B.dim(1);
  require(B.dim(0) == k, "matmul: inner dimensions differ " + shape_str(A.shape) + " * " + shape_str(B.shape));
  Tensor<T> C({m, n});
  mmap(C.data.data(), m, n).noalias() = cmap(A.data.data(), m, k) * cmap(B.data.data(), k, n);
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(C), {ia, ib}, [ia, ib, m, k, n](Tape<T>& t, std::size_t self) {
    const auto G = cmap(t.grad_ref(self).data.data(), m, n);
    if (t.needs_grad(ia))
      mmap(t.grad_ref(ia).data.data(), m, k).noalias() += G * cmap(t.value(ib).data.data(), k, n).transpose();
    if (t.needs_grad(ib))
      mmap(t.grad_ref(ib).data.data(), k, n).noalias() += cmap(t.value(ia).data.data(), m, k).transpose() * G;
  }, "matmul");
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  require_same(a.value(), b.value(), "add");
  Tensor<T> out = a.value();
  add_into(out, b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(out), {ia, ib}, [ia, ib](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad_ref(self);
    if (t.needs_grad(ia)) add_into(t.grad_ref(ia), g);
    if (t.needs_grad(ib)) add_into(t.grad_ref(ib), g);
  }, "add");
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  require_same(a.value(), b.value(), "sub");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= b.value().data[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(out), {ia, ib}, [ia, ib](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad_ref(self);
    if (t.needs_grad(ia)) add_into(t.grad_ref(ia), g);
    if (t.needs_grad(ib)) {
      Tensor<T>& gb = t.grad_ref(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb.data[i] -= g.data[i];
    }
  }, "sub");
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  require_same(a.value(), b.value(), "mul");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= b.value().data[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(out), {ia, ib}, [ia, ib](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad_ref(self);
    const Tensor<T>& av = t.value(ia);
    const Tensor<T>& bv = t.value(ib);
    if (t.needs_grad(ia)) {
      Tensor<T>& ga = t.grad_ref(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i] * bv.data[i];
    }
    if (t.needs_grad(ib)) {
      Tensor<T>& gb = t.grad_ref(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb.data[i] += g.data[i] * av.data[i];
    }
  }, "mul");
}

template <typename T>
Var<T> scale(Var<T> a, T s) {
  Tensor<T> out = a.value();
  for (T& v : out.data) v *= s;
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(out), {ia}, [ia, s](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad_ref(self);
    Tensor<T>& ga = t.grad_ref(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += s * g.data[i];
  }, "scale");
}

template <typename T>
Var<T> add_bias(Var<T> x, Var<T> bias) {
  const Tensor<T>& X = x.value();
  const Tensor<T>& B = bias.value();
  require_rank(X, 2, "add_bias");
  require_rank(B, 1, "add_bias");
  const std::size_t r = X.dim(0), c = X.dim(1);
  require(B.dim(0) == c, "add_bias: bias " + shape_str(B.shape) + " for input " + shape_str(X.shape));
  Tensor<T> out = X;
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.data[i * c + j] += B.data[j];
  const std::size_t ix = x.id(), ib = bias.id();
  return x.tape()->record(std::move(out), {ix, ib}, [ix, ib, r, c](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad_ref(self);
    if (t.needs_grad(ix)) add_into(t.grad_ref(ix), g);
    if (t.needs_grad(ib)) {
      Tensor<T>& gb = t.grad_ref(ib);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) gb.data[j] += g.data[i * c + j];
    }
  }, "add_bias");
}

template <typename T>
Var<T> repeat_rows(Var<T> x, std::size_t n) {
  const Tensor<T>& X = x.value();
  require_rank(X, 2, "repeat_rows");
  require(X.dim(0) == 1, "repeat_rows: expected a single row, got " + shape_str(X.shape));
  const std::size_t c = X.dim(1);
  Tensor<T> out({n, c});
  for (std::size_t i = 0; i < n; ++i) std::copy(X.data.begin(), X.data.end(), out.data.begin() + static_cast<long>(i * c));
  const std::size_t ix = x.id();
  return x.tape()->record(std::move(out), {ix}, [ix, n, c](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad_ref(self);
    Tensor<T>& gx = t.grad_ref(ix);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < c; ++j) gx.data[j] += g.data[i * c + j];
  }, "repeat_rows");
}

template <typename T>
Var<T> gelu(Var<T> x) {
  const Tensor<T>& X = x.value();
  Tensor<T> out(X.shape);
  const T inv_sqrt2 = T(1) / std::sqrt(T(2));
  for (std::size_t i = 0; i < X.size(); ++i)
    out.data[i] = T(0.5) * X.data[i] * (T(1) + std::erf(X.data[i] * inv_sqrt2));
  const std::size_t ix = x.id();
  return x.tape()->record(std::move(out), {ix}, [ix, inv_sqrt2](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad_ref(self);
    const Tensor<T>& xv = t.value(ix);
    Tensor<T>& gx = t.grad_ref(ix);
    const T inv_sqrt_2pi = T(1) / std::sqrt(T(2) * std::numbers::pi_v<T>);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T v = xv.data[i];
      const T d = T(0.5) * (T(1) + std::erf(v * inv_sqrt2)) + v * inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
      gx.data[i] += g.data[i] * d;
    }
  }, "gelu");
}

template <typename T>
Var<T> softmax_rows(Var<T> x) {
  const Tensor<T>& X = x.value();
  require_rank(X, 2, "softmax_rows");
  const std::size_t r = X.dim(0), c = X.dim(1);
  Tensor<T> out(X.shape);
  for (std::size_t i = 0; i < r; ++i) {
    const T* row = &X.data[i * c];
    T* o = &out.data[i * c];
    const T mx = *std::max_element(row, row + c);
    T total = 0;
    for (std::size_t j = 0; j < c; ++j) total += (o[j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < c; ++j) o[j] /= total;
  }
  const std::size_t ix = x.id();
  return x.tape()->record(std::move(out), {ix}, [ix, r, c](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad_ref(self);
    const Tensor<T>& y = t.value(self);
    Tensor<T>& gx = t.grad_ref(ix);
    for (std::size_t i = 0; i < r; ++i) {
      T dot = 0;
      for (std::size_t j = 0; j < c; ++j) dot += g.data[i * c + j] * y.data[i * c + j];
      for (std::size_t j = 0; j < c; ++j) gx.data[i * c + j] += y.data[i * c + j] * (g.data[i * c + j] - dot);
    }
  }, "softmax_rows");
}

template <typename T>
Var<T> layernorm(Var<T> x, Var<T> gain, Var<T> bias, T eps) {
  const Tensor<T>& X = x.value();
  require_rank(X, 2, "layernorm");
  const std::size_t n = X.dim(0), c = X.dim(1);
  require(c >= 2, "layernorm: needs at least 2 features");
  require(eps > T(0), "layernorm: eps must be positive");
  require(gain.value().shape == Shape{c} && bias.value().shape == Shape{c},
          "layernorm: gain/bias must be [" + std::to_string(c) + "]");
  const Tensor<T>& G = gain.value();
  const Tensor<T>& B = bias.value();
  Tensor<T> out(X.shape), xhat(X.shape);
  std::vector<T> rstd(n);
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = &X.data[i * c];
    T mu = 0;
    for (std::size_t j = 0; j < c; ++j) mu += row[j];
    mu /= static_cast<T>(c);
    T var = 0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<T>(c);
    rstd[i] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      xhat.data[i * c + j] = (row[j] - mu) * rstd[i];
      out.data[i * c + j] = xhat.data[i * c + j] * G.data[j] + B.data[j];
    }
  }
  const std::size_t ix = x.id(), ig = gain.id(), ib = bias.id();
  return x.tape()->record(
      std::move(out), {ix, ig, ib},
      [ix, ig, ib, n, c, xhat = std::move(xhat), rstd = std::move(rstd)](Tape<T>& t, std::size_t self) {
        const Tensor<T>& g = t.grad_ref(self);
        const Tensor<T>& gv = t.value(ig);
        if (t.needs_grad(ig)) {
          Tensor<T>& gg = t.grad_ref(ig);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < c; ++j) gg.data[j] += g.data[i * c + j] * xhat.data[i * c + j];
        }
        if (t.needs_grad(ib)) {
          Tensor<T>& gb = t.grad_ref(ib);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < c; ++j) gb.data[j] += g.data[i * c + j];
        }
        if (t.needs_grad(ix)) {
          Tensor<T>& gx = t.grad_ref(ix);
          std::vector<T> dxhat(c);
          for (std::size_t i = 0; i < n; ++i) {
            T m1 = 0, m2 = 0;
            for (std::size_t j = 0; j < c; ++j) {
              dxhat[j] = g.data[i * c + j] * gv.data[j];
              m1 += dxhat[j];
              m2 += dxhat[j] * xhat.data[i * c + j];
            }
            m1 /= static_cast<T>(c);
            m2 /= static_cast<T>(c);
            for (std::size_t j = 0; j < c; ++j)
              gx.data[i * c + j] += rstd[i] * (dxhat[j] - m1 - xhat.data[i * c + j] * m2);
          }
        }
      },
      "layernorm");
}

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> bias, std::size_t stride, std::size_t pad) {
  const Tensor<T>& X = x.value();
  const Tensor<T>& W = w.value();
  require_rank(X, 3, "conv2d");
  require_rank(W, 4, "conv2d");
  const std::size_t ci = X.dim(0), h = X.dim(1), wd = X.dim(2);
  const std::size_t co = W.dim(0), k = W.dim(2);
  require(W.dim(1) == ci && W.dim(3) == k,
          "conv2d: kernel " + shape_str(W.shape) + " for input " + shape_str(X.shape));
  require(bias.value().shape == Shape{co}, "conv2d: bias must be [" + std::to_string(co) + "]");
  require(stride >= 1, "conv2d: stride must be >= 1");
  require(h + 2 * pad >= k && wd + 2 * pad >= k, "conv2d: kernel larger than padded input");
  require((h + 2 * pad - k) % stride == 0 && (wd + 2 * pad - k) % stride == 0,
          "conv2d: non-integral output size for input " + shape_str(X.shape));
  const std::size_t ho = (h + 2 * pad - k) / stride + 1, wo = (wd + 2 * pad - k) / stride + 1;
  const std::size_t kk = ci * k * k, npos = ho * wo;

  // im2col: rows are (channel, ky, kx), columns are output positions.
  std::vector<T> cols(kk * npos, T(0));
  for (std::size_t c = 0; c < ci; ++c)
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        T* dst = &cols[((c * k + ky) * k + kx) * npos];
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
          if (iy < 0 || iy >= static_cast<long>(h)) continue;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
            if (ix < 0 || ix >= static_cast<long>(wd)) continue;
            dst[oy * wo + ox] = X.data[(c * h + static_cast<std::size_t>(iy)) * wd + static_cast<std::size_t>(ix)];
          }
        }
      }
  Tensor<T> out({co, ho, wo});
  auto O = mmap(out.data.data(), co, npos);
  O.noalias() = cmap(W.data.data(), co, kk) * cmap(cols.data(), kk, npos);
  for (std::size_t o = 0; o < co; ++o) O.row(static_cast<Eigen::Index>(o)).array() += bias.value().data[o];

  const std::size_t ixd = x.id(), iw = w.id(), ib = bias.id();
  return x.tape()->record(
      std::move(out), {ixd, iw, ib},
      [=, cols = std::move(cols)](Tape<T>& t, std::size_t self) {
        const auto G = cmap(t.grad_ref(self).data.data(), co, npos);
        if (t.needs_grad(ib)) {
          Tensor<T>& gb = t.grad_ref(ib);
          for (std::size_t o = 0; o < co; ++o) gb.data[o] += G.row(static_cast<Eigen::Index>(o)).sum();
        }
        if (t.needs_grad(iw))
          mmap(t.grad_ref(iw).data.data(), co, kk).noalias() += G * cmap(cols.data(), kk, npos).transpose();
        if (t.needs_grad(ixd)) {
          RowMat<T> dcols = cmap(t.value(iw).data.data(), co, kk).transpose() * G;
          Tensor<T>& gx = t.grad_ref(ixd);
          for (std::size_t c = 0; c < ci; ++c)
            for (std::size_t ky = 0; ky < k; ++ky)
              for (std::size_t kx = 0; kx < k; ++kx) {
                const T* src = dcols.data() + ((c * k + ky) * k + kx) * npos;
                for (std::size_t oy = 0; oy < ho; ++oy) {
                  const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
                  if (iy < 0 || iy >= static_cast<long>(h)) continue;
                  for (std::size_t ox = 0; ox < wo; ++ox) {
                    const long ixx = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                    if (ixx < 0 || ixx >= static_cast<long>(wd)) continue;
                    gx.data[(c * h + static_cast<std::size_t>(iy)) * wd + static_cast<std::size_t>(ixx)] +=
                        src[oy * wo + ox];
                  }
                }
              }
        }
      },
      "conv2d");
}

template <typename T>
Var<T> upsample_nearest(Var<T> x, std::size_t factor) {
  const Tensor<T>& X = x.value();
  require_rank(X, 3, "upsample_nearest");
  require(factor >= 1, "upsample_nearest: factor must be >= 1");
  const std::size_t c = X.dim(0), h = X.dim(1), w = X.dim(2);
  const std::size_t fh = h * factor, fw = w * factor;
  Tensor<T> out({c, fh, fw});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < fh; ++y)
      for (std::size_t xx = 0; xx < fw; ++xx)
        out.data[(ch * fh + y) * fw + xx] = X.data[(ch * h + y / factor) * w + xx / factor];
  const std::size_t ix = x.id();
  return x.tape()->record(std::move(out), {ix}, [=](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad_ref(self);
    Tensor<T>& gx = t.grad_ref(ix);
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < fh; ++y)
        for (std::size_t xx = 0; xx < fw; ++xx)
          gx.data[(ch * h + y / factor) * w + xx / factor] += g.data[(ch * fh + y) * fw + xx];
  }, "upsample_nearest");
}

template <typename T>
Var<T> sum(Var<T> x) {
  T total = 0;
  for (T v : x.value().data) total += v;
  const std::size_t ix = x.id();
  return x.tape()->record(Tensor<T>({1}, total), {ix}, [ix](Tape<T>& t, std::size_t self) {
    const T g = t.grad_ref(self).data[0];
    for (T& v : t.grad_ref(ix).data) v += g;
  }, "sum");
}

template <typename T>
Var<T> mean(Var<T> x) {
  const std::size_t n = x.value().size();
  require(n > 0, "mean of an empty tensor");
  T total = 0;
  for (T v : x.value().data) total += v;
  const std::size_t ix = x.id();
  return x.tape()->record(Tensor<T>({1}, total / static_cast<T>(n)), {ix}, [ix, n](Tape<T>& t, std::size_t self) {
    const T g = t.grad_ref(self).data[0] / static_cast<T>(n);
    for (T& v : t.grad_ref(ix).data) v += g;
  }, "mean");
}

template <typename T>
Var<T> row_means(Var<T> x) {
  const Tensor<T>& X = x.value();
  require_rank(X, 2, "row_means");
  const std::size_t r = X.dim(0), c = X.dim(1);
  require(c > 0, "row_means: empty rows");
  Tensor<T> out({r, 1});
  for (std::size_t i = 0; i < r; ++i) {
    T total = 0;
    for (std::size_t j = 0; j < c; ++j) total += X.data[i * c + j];
    out.data[i] = total / static_cast<T>(c);
  }
  const std::size_t ix = x.id();
  return x.tape()->record(std::move(out), {ix}, [ix, r, c](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad_ref(self);
    Tensor<T>& gx = t.grad_ref(ix);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) gx.data[i * c + j] += g.data[i] / static_cast<T>(c);
  }, "row_means");
}

template <typename T>
Var<T> reshape(Var<T> x, Shape shape) {
  require(shape_size(shape) == x.value().size(),
          "reshape: " + shape_str(x.value().shape) + " to " + shape_str(shape));
  Tensor<T> out(std::move(shape), x.value().data);
  const std::size_t ix = x.id();
  return x.tape()->record(std::move(out), {ix}, [ix](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad_ref(self);
    Tensor<T>& gx = t.grad_ref(ix);
    for (std::size_t i = 0; i < g.size(); ++i) gx.data[i] += g.data[i];
  }, "reshape");
}

template <typename T>
Var<T> transpose(Var<T> x) {
  const Tensor<T>& X = x.value();
  require_rank(X, 2, "transpose");
  const std::size_t r = X.dim(0), c = X.dim(1);
  Tensor<T> out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.data[j * r + i] = X.data[i * c + j];
  const std::size_t ix = x.id();
  return x.tape()->record(std::move(out), {ix}, [ix, r, c](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad_ref(self);
    Tensor<T>& gx = t.grad_ref(ix);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) gx.data[i * c + j] += g.data[j * r + i];
  }, "transpose");
}

template <typename T>
Var<T> concat_cols(Var<T> a, Var<T> b) {
  const Tensor<T>& A = a.value();
  const Tensor<T>& B = b.value();
  require_rank(A, 2, "concat_cols");
  require_rank(B, 2, "concat_cols");
  require(A.dim(0) == B.dim(0), "concat_cols: row counts differ " + shape_str(A.shape) + " vs " + shape_str(B.shape));
  const std::size_t r = A.dim(0), ca = A.dim(1), cb = B.dim(1), c = ca + cb;
  Tensor<T> out({r, c});
  for (std::size_t i = 0; i < r; ++i) {
    std::copy_n(&A.data[i * ca], ca, &out.data[i * c]);
    std::copy_n(&B.data[i * cb], cb, &out.data[i * c + ca]);
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(out), {ia, ib}, [=](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad_ref(self);
    if (t.needs_grad(ia)) {
      Tensor<T>& ga = t.grad_ref(ia);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < ca; ++j) ga.data[i * ca + j] += g.data[i * c + j];
    }
    if (t.needs_grad(ib)) {
      Tensor<T>& gb = t.grad_ref(ib);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < cb; ++j) gb.data[i * cb + j] += g.data[i * c + ca + j];
    }
  }, "concat_cols");
}

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  const std::size_t c = parts.front().value().rank() == 2 ? parts.front().value().dim(1) : 0;
  std::vector<std::size_t> ids, rows;
  Tensor<T> out;
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_rank(p.value(), 2, "concat_rows");
    require(p.value().dim(1) == c, "concat_rows: column counts differ");
    ids.push_back(p.id());
    rows.push_back(p.value().dim(0));
    total += p.value().dim(0);
    out.data.insert(out.data.end(), p.value().data.begin(), p.value().data.end());
  }
  out.shape = {total, c};
  return parts.front().tape()->record(std::move(out), ids, [ids, rows, c](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad_ref(self);
    std::size_t offset = 0;
    for (std::size_t p = 0; p < ids.size(); ++p) {
      const std::size_t n = rows[p] * c;
      if (t.needs_grad(ids[p])) {
        Tensor<T>& gp = t.grad_ref(ids[p]);
        for (std::size_t i = 0; i < n; ++i) gp.data[i] += g.data[offset + i];
      }
      offset += n;
    }
  }, "concat_rows");
}

template <typename T>
Var<T> slice_rows(Var<T> x, std::size_t begin, std::size_t count) {
  const Tensor<T>& X = x.value();
  require_rank(X, 2, "slice_rows");
  require(begin + count <= X.dim(0), "slice_rows: range exceeds " + shape_str(X.shape));
  const std::size_t c = X.dim(1);
  Tensor<T> out({count, c});
  std::copy_n(X.data.begin() + static_cast<long>(begin * c), count * c, out.data.begin());
  const std::size_t ix = x.id();
  return x.tape()->record(std::move(out), {ix}, [ix, begin, c](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad_ref(self);
    Tensor<T>& gx = t.grad_ref(ix);
    for (std::size_t i = 0; i < g.size(); ++i) gx.data[begin * c + i] += g.data[i];
  }, "slice_rows");
}

template <typename T>
Var<T> column(Var<T> x, std::size_t j) {
  const Tensor<T>& X = x.value();
  require_rank(X, 2, "column");
  require(j < X.dim(1), "column: index out of range for " + shape_str(X.shape));
  const std::size_t r = X.dim(0), c = X.dim(1);
  Tensor<T> out({r, 1});
  for (std::size_t i = 0; i < r; ++i) out.data[i] = X.data[i * c + j];
  const std::size_t ix = x.id();
  return x.tape()->record(std::move(out), {ix}, [ix, r, c, j](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad_ref(self);
    Tensor<T>& gx = t.grad_ref(ix);
    for (std::size_t i = 0; i < r; ++i) gx.data[i * c + j] += g.data[i];
  }, "column");
}

template <typename T>
Var<T> l2norm(Var<T> x) {
  T sq = 0;
  for (T v : x.value().data) sq += v * v;
  const T n = std::sqrt(sq);
  const std::size_t ix = x.id();
  return x.tape()->record(Tensor<T>({1}, n), {ix}, [ix, n](Tape<T>& t, std::size_t self) {
    if (n == T(0)) return;
    const T g = t.grad_ref(self).data[0] / n;
    const Tensor<T>& xv = t.value(ix);
    Tensor<T>& gx = t.grad_ref(ix);
    for (std::size_t i = 0; i < xv.size(); ++i) gx.data[i] += g * xv.data[i];
  }, "l2norm");
}

template <typename T>
Var<T> detach(Var<T> x) {
  return x.tape()->constant(x.value());
}

// ---- gradient checks ----

double grad_check(const ScalarFn& f, const std::vector<Tensor<double>>& inputs, double h) {
  ParamSet<double> set;
  for (std::size_t i = 0; i < inputs.size(); ++i) set.add("in." + std::to_string(i), inputs[i]);
  auto bind = [&](Tape<double>& tape) {
    std::vector<Var<double>> vars;
    for (std::size_t i = 0; i < inputs.size(); ++i) vars.push_back(tape.param(set, "in." + std::to_string(i)));
    return vars;
  };
  auto evaluate = [&]() {
    Tape<double> tape;
    const Var<double> out = f(tape, bind(tape));
    if (out.value().size() != 1) throw NumericError("grad_check: function must be scalar");
    return out.value().data[0];
  };

  Grads<double> analytic = zero_grads(set);
  {
    Tape<double> tape;
    tape.backward(f(tape, bind(tape)));
    tape.accumulate_param_grads(analytic);
  }
  double worst = 0.0;
  for (std::size_t p = 0; p < set.size(); ++p) {
    auto& values = set[p].value.data;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + h;
      const double up = evaluate();
      values[i] = saved - h;
      const double down = evaluate();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      worst = std::max(worst, std::abs(analytic[p].data[i] - numeric) / std::max(1.0, std::abs(numeric)));
    }
  }
  return worst;
}

double grad_check_params(ParamSet<double>& params, const std::function<Var<double>(Tape<double>&)>& f,
                         std::size_t coords, std::uint64_t seed, double h,
                         const std::function<bool(std::string_view)>& include) {
  Grads<double> analytic = zero_grads(params);
  {
    Tape<double> tape;
    tape.backward(f(tape));
    tape.accumulate_param_grads(analytic);
  }
  auto evaluate = [&]() {
    Tape<double> tape;
    return f(tape).value().data[0];
  };

  std::vector<std::size_t> eligible;
  std::size_t total = 0;
  for (std::size_t p = 0; p < params.size(); ++p)
    if (!include || include(params[p].name)) {
      eligible.push_back(p);
      total += params[p].value.size();
    }
  std::vector<std::pair<std::size_t, std::size_t>> picks;
  if (coords == 0 || coords >= total) {
    for (std::size_t p : eligible)
      for (std::size_t i = 0; i < params[p].value.size(); ++i) picks.emplace_back(p, i);
  } else {
    Rng rng(seed);
    for (std::size_t k = 0; k < coords; ++k) {
      std::size_t flat = static_cast<std::size_t>(rng.below(total));
      std::size_t e = 0;
      while (flat >= params[eligible[e]].value.size()) flat -= params[eligible[e++]].value.size();
      picks.emplace_back(eligible[e], flat);
    }
  }

  double worst = 0.0;
  for (const auto& [p, i] : picks) {
    double& v = params[p].value.data[i];
    const double saved = v;
    v = saved + h;
    const double up = evaluate();
    v = saved - h;
    const double down = evaluate();
    v = saved;
    const double numeric = (up - down) / (2.0 * h);
    worst = std::max(worst, std::abs(analytic[p].data[i] - numeric) / std::max(1.0, std::abs(numeric)));
  }
  return worst;
}

#define LADEEP_AD_INSTANTIATE(T)                                                         \
  template struct Tensor<T>;                                                            \
  template class ParamSet<T>;                                                           \
  template class Tape<T>;                                                               \
  template Grads<T> zero_grads(const ParamSet<T>&);                                     \
  template Var<T> matmul(Var<T>, Var<T>);                                               \
  template Var<T> add(Var<T>, Var<T>);                                                  \
  template Var<T> sub(Var<T>, Var<T>);                                                  \
  template Var<T> mul(Var<T>, Var<T>);                                                  \
  template Var<T> scale(Var<T>, T);                                                     \
  template Var<T> add_bias(Var<T>, Var<T>);                                             \
  template Var<T> repeat_rows(Var<T>, std::size_t);                                     \
  template Var<T> gelu(Var<T>);                                                         \
  template Var<T> softmax_rows(Var<T>);                                                 \
  template Var<T> layernorm(Var<T>, Var<T>, Var<T>, T);                                 \
  template Var<T> conv2d(Var<T>, Var<T>, Var<T>, std::size_t, std::size_t);             \
  template Var<T> upsample_nearest(Var<T>, std::size_t);                                \
  template Var<T> sum(Var<T>);                                                          \
  template Var<T> mean(Var<T>);                                                         \
  template Var<T> row_means(Var<T>);                                                    \
  template Var<T> reshape(Var<T>, Shape);                                               \
  template Var<T> transpose(Var<T>);                                                    \
  template Var<T> concat_cols(Var<T>, Var<T>);                                          \
  template Var<T> concat_rows(const std::vector<Var<T>>&);                              \
  template Var<T> slice_rows(Var<T>, std::size_t, std::size_t);                         \
  template Var<T> column(Var<T>, std::size_t);                                          \
  template Var<T> l2norm(Var<T>);                                                       \
  template Var<T> detach(Var<T>);

LADEEP_AD_INSTANTIATE(float)
LADEEP_AD_INSTANTIATE(double)

}  // namespace ladeep::ad
