#pragma once

// Dense tensors and a tape-based reverse-mode differentiator. Everything is
// templated on the scalar type and instantiated for float (training) and
// double (gradient checks).

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "ladeep/errors.hpp"

namespace ladeep::ad {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T>
struct Tensor {
  Shape shape;
  std::vector<T> data;  // row-major

  Tensor() = default;
  explicit Tensor(Shape s, T fill = T(0)) : shape(std::move(s)), data(shape_size(shape), fill) {}
  Tensor(Shape s, std::vector<T> values);

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }
  T& operator[](std::size_t i) { return data[i]; }
  const T& operator[](std::size_t i) const { return data[i]; }
  T& at(std::size_t r, std::size_t c) { return data[r * shape[1] + c]; }
  const T& at(std::size_t r, std::size_t c) const { return data[r * shape[1] + c]; }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& t) {
  Tensor<To> out(t.shape);
  for (std::size_t i = 0; i < t.size(); ++i) out.data[i] = static_cast<To>(t.data[i]);
  return out;
}

template <typename T>
struct Parameter {
  std::string name;  // e.g. "cle_w.region_proj.3.weight"
  Tensor<T> value;
};

/// Named parameters kept in name order, so iteration order is stable.
template <typename T>
class ParamSet {
 public:
  Parameter<T>& add(std::string name, Tensor<T> value);
  bool contains(std::string_view name) const { return index_.find(name) != index_.end(); }
  std::size_t index(std::string_view name) const;
  Parameter<T>& get(std::string_view name) { return params_[index(name)]; }
  const Parameter<T>& get(std::string_view name) const { return params_[index(name)]; }
  Parameter<T>& operator[](std::size_t i) { return params_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return params_[i]; }
  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;
  std::vector<std::string> names() const;

 private:
  std::vector<Parameter<T>> params_;  // sorted by name
  std::map<std::string, std::size_t, std::less<>> index_;
};

/// Gradients aligned with ParamSet indices.
template <typename T>
using Grads = std::vector<Tensor<T>>;

template <typename T>
Grads<T> zero_grads(const ParamSet<T>& params);

template <typename T>
class Tape;

template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}
  const Tensor<T>& value() const { return tape_->value(id_); }
  const Shape& shape() const { return value().shape; }
  Tape<T>* tape() const { return tape_; }
  std::size_t id() const { return id_; }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <typename T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t self)>;

  explicit Tape(bool check_finite = false) : check_finite_(check_finite) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> value);
  /// Leaf bound to a parameter. The parameter must outlive the tape and
  /// stay unchanged while the tape is in use.
  Var<T> param(const ParamSet<T>& set, std::size_t index);
  Var<T> param(const ParamSet<T>& set, std::string_view name) { return param(set, set.index(name)); }

  /// Reverse pass from a single-element node; allowed once per tape.
  void backward(Var<T> loss);

  const Tensor<T>& value(std::size_t id) const { return *nodes_[id].ref; }
  /// Gradient of a node after backward (zeros when the node was not reached).
  Tensor<T> grad(Var<T> v) const;
  /// Adds parameter-leaf gradients into `into` (sized like the ParamSet).
  void accumulate_param_grads(Grads<T>& into) const;

  // Interface for op implementations.
  Var<T> record(Tensor<T> value, const std::vector<std::size_t>& inputs, Backward backward, const char* op);
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  Tensor<T>& grad_ref(std::size_t id);
  bool check_finite() const { return check_finite_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> own;
    const Tensor<T>* ref = nullptr;
    Tensor<T> grad;
    Backward back;
    std::vector<std::size_t> inputs;
    const char* op = "";
    long param = -1;
    bool needs_grad = false;
  };
  std::deque<Node> nodes_;  // stable addresses; creation order is topological
  bool check_finite_ = false;
  bool consumed_ = false;
};

// Shapes: matrices are rank 2 (rows x cols); feature maps are rank 3
// (channels x height x width); vectors are rank 1.

template <typename T> Var<T> matmul(Var<T> a, Var<T> b);
template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> sub(Var<T> a, Var<T> b);
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
template <typename T> Var<T> scale(Var<T> a, T s);
/// x [r x c] plus bias [c] on every row.
template <typename T> Var<T> add_bias(Var<T> x, Var<T> bias);
/// x [1 x c] stacked n times.
template <typename T> Var<T> repeat_rows(Var<T> x, std::size_t n);
template <typename T> Var<T> gelu(Var<T> x);
template <typename T> Var<T> softmax_rows(Var<T> x);
template <typename T> Var<T> layernorm(Var<T> x, Var<T> gain, Var<T> bias, T eps = T(1e-5));
/// Cross-correlation of x [ci x h x w] with w [co x ci x k x k] plus bias [co].
template <typename T> Var<T> conv2d(Var<T> x, Var<T> w, Var<T> bias, std::size_t stride, std::size_t pad);
template <typename T> Var<T> upsample_nearest(Var<T> x, std::size_t factor);
template <typename T> Var<T> sum(Var<T> x);
template <typename T> Var<T> mean(Var<T> x);
/// Mean of each row: [r x c] -> [r x 1].
template <typename T> Var<T> row_means(Var<T> x);
template <typename T> Var<T> reshape(Var<T> x, Shape shape);
template <typename T> Var<T> transpose(Var<T> x);
template <typename T> Var<T> concat_cols(Var<T> a, Var<T> b);
template <typename T> Var<T> concat_rows(const std::vector<Var<T>>& parts);
template <typename T> Var<T> slice_rows(Var<T> x, std::size_t begin, std::size_t count);
/// Column j of x [r x c] as [r x 1].
template <typename T> Var<T> column(Var<T> x, std::size_t j);
/// Euclidean norm of all entries; the gradient at zero is taken as zero.
template <typename T> Var<T> l2norm(Var<T> x);
/// Same value, cut from the graph.
template <typename T> Var<T> detach(Var<T> x);

/// x [r x in] * w [in x out] + b [out].
template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b) {
  return add_bias(matmul(x, w), b);
}

using ScalarFn = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

/// Compares backward() with central differences over every input
/// coordinate. Returns max |analytic - numeric| / max(1, |numeric|).
double grad_check(const ScalarFn& f, const std::vector<Tensor<double>>& inputs, double h = 1e-5);

/// Same over `coords` randomly chosen parameter coordinates (all when 0),
/// restricted to parameters accepted by `include` when it is set.
double grad_check_params(ParamSet<double>& params, const std::function<Var<double>(Tape<double>&)>& f,
                         std::size_t coords, std::uint64_t seed, double h = 1e-5,
                         const std::function<bool(std::string_view)>& include = {});

}  // namespace ladeep::ad
