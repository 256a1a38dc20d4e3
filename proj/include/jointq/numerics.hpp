// Dense differentiable building blocks: affine/sigmoid/relu layers with exact
// backward passes, named parameter sets, plain SGD and a central-difference
// gradient oracle. Everything is templated on the scalar type; the rest of
// the library instantiates it with double.
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace jointq {

template <typename Scalar>
using Tensor = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using MatrixXd = Tensor<double>;
using VectorXd = Vector<double>;

// Rejected input: a dimension or contract mismatch on the caller's side.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A NaN/Inf appeared where finite values are required.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kSigmoidClamp = 40.0;

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& x) {
  return x.allFinite();
}

// Owning affine layer. Bias is stored as an (out_dim x 1) tensor so it can be
// kept in a ParameterSet next to the weight.
template <typename Scalar = double>
struct AffineLayer {
  Tensor<Scalar> weight;
  Tensor<Scalar> bias;

  static AffineLayer zeros(Eigen::Index in_dim, Eigen::Index out_dim) {
    return {Tensor<Scalar>::Zero(out_dim, in_dim), Tensor<Scalar>::Zero(out_dim, 1)};
  }

  // Uniform in +-sqrt(6 / (fan_in + fan_out)), zero bias.
  template <typename Rng>
  static AffineLayer glorot(Eigen::Index in_dim, Eigen::Index out_dim, Rng& rng) {
    AffineLayer layer = zeros(in_dim, out_dim);
    const Scalar limit = std::sqrt(Scalar(6) / Scalar(in_dim + out_dim));
    std::uniform_real_distribution<Scalar> dist(-limit, limit);
    for (Eigen::Index c = 0; c < layer.weight.cols(); ++c)
      for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) layer.weight(r, c) = dist(rng);
    return layer;
  }

  Eigen::Index in_dim() const { return weight.cols(); }
  Eigen::Index out_dim() const { return weight.rows(); }
};

// Non-owning view over a weight/bias pair living elsewhere (e.g. a ParameterSet).
template <typename Scalar = double>
struct AffineView {
  const Tensor<Scalar>& weight;
  const Tensor<Scalar>& bias;

  Eigen::Index in_dim() const { return weight.cols(); }
  Eigen::Index out_dim() const { return weight.rows(); }
};

template <typename Scalar>
struct AffineGrad {
  Tensor<Scalar> grad_weight;
  Tensor<Scalar> grad_bias;
  Tensor<Scalar> grad_x;
};

template <typename Layer>
void check_layer(const Layer& layer) {
  if (layer.bias.rows() != layer.weight.rows() || layer.bias.cols() != 1)
    throw ShapeError("affine layer: bias shape does not match weight rows");
}

// Columns of x are independent samples; a single column is the 1-D case.
template <typename Layer, typename Derived>
auto affine_forward(const Layer& layer, const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  check_layer(layer);
  if (x.rows() != layer.in_dim())
    throw ShapeError("affine_forward: input length " + std::to_string(x.rows()) +
                     " != in_dim " + std::to_string(layer.in_dim()));
  Tensor<Scalar> out = layer.weight * x;
  out.colwise() += layer.bias.col(0);
  return out;
}

// Gradients are summed over the batch columns.
template <typename Layer, typename DerivedX, typename DerivedU>
auto affine_backward(const Layer& layer, const Eigen::MatrixBase<DerivedX>& x,
                     const Eigen::MatrixBase<DerivedU>& upstream) {
  using Scalar = typename DerivedX::Scalar;
  check_layer(layer);
  if (x.rows() != layer.in_dim() || upstream.rows() != layer.out_dim() ||
      x.cols() != upstream.cols())
    throw ShapeError("affine_backward: inconsistent shapes");
  AffineGrad<Scalar> g;
  g.grad_weight.noalias() = upstream * x.transpose();
  g.grad_bias = upstream.rowwise().sum();
  g.grad_x.noalias() = layer.weight.transpose() * upstream;
  return g;
}

template <typename Scalar>
Scalar sigmoid(Scalar z) {
  z = std::clamp(z, Scalar(-kSigmoidClamp), Scalar(kSigmoidClamp));
  return Scalar(1) / (Scalar(1) + std::exp(-z));
}

template <typename Derived>
auto sigmoid_forward(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  return Tensor<Scalar>(x.unaryExpr([](Scalar v) { return sigmoid(v); }));
}

// y is the forward output.
template <typename DerivedY, typename DerivedU>
auto sigmoid_backward(const Eigen::MatrixBase<DerivedY>& y, const Eigen::MatrixBase<DerivedU>& upstream) {
  using Scalar = typename DerivedY::Scalar;
  if (y.rows() != upstream.rows() || y.cols() != upstream.cols())
    throw ShapeError("sigmoid_backward: shape mismatch");
  return Tensor<Scalar>(upstream.array() * y.array() * (Scalar(1) - y.array()));
}

template <typename Derived>
auto relu_forward(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  return Tensor<Scalar>(x.cwiseMax(Scalar(0)));
}

// x is the forward input; upstream is masked where x <= 0.
template <typename DerivedX, typename DerivedU>
auto relu_backward(const Eigen::MatrixBase<DerivedX>& x, const Eigen::MatrixBase<DerivedU>& upstream) {
  using Scalar = typename DerivedX::Scalar;
  if (x.rows() != upstream.rows() || x.cols() != upstream.cols())
    throw ShapeError("relu_backward: shape mismatch");
  return Tensor<Scalar>((x.array() > Scalar(0)).select(upstream, Scalar(0)));
}

// Named tensors with gradient accumulators of identical shape. Iteration
// order is lexicographic by name (std::map), which checkpoints rely on.
template <typename Scalar = double>
class ParameterSet {
 public:
  void add(const std::string& name, Tensor<Scalar> value) {
    if (values_.count(name)) throw ShapeError("duplicate parameter name: " + name);
    grads_.emplace(name, Tensor<Scalar>::Zero(value.rows(), value.cols()));
    values_.emplace(name, std::move(value));
  }
  void add(const std::string& name, AffineLayer<Scalar> layer) {
    add(name + ".weight", std::move(layer.weight));
    add(name + ".bias", std::move(layer.bias));
  }

  bool contains(const std::string& name) const { return values_.count(name) > 0; }
  Tensor<Scalar>& value(const std::string& name) { return lookup(values_, name); }
  const Tensor<Scalar>& value(const std::string& name) const { return lookup(values_, name); }
  Tensor<Scalar>& grad(const std::string& name) { return lookup(grads_, name); }
  const Tensor<Scalar>& grad(const std::string& name) const { return lookup(grads_, name); }

  AffineView<Scalar> layer(const std::string& prefix) const {
    return {value(prefix + ".weight"), value(prefix + ".bias")};
  }
  void accumulate(const std::string& prefix, const AffineGrad<Scalar>& g) {
    grad(prefix + ".weight") += g.grad_weight;
    grad(prefix + ".bias") += g.grad_bias;
  }

  void zero_grad() {
    for (auto& [name, g] : grads_) g.setZero();
  }

  const std::map<std::string, Tensor<Scalar>>& values() const { return values_; }
  std::map<std::string, Tensor<Scalar>>& values() { return values_; }
  const std::map<std::string, Tensor<Scalar>>& grads() const { return grads_; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [name, v] : values_) n += static_cast<std::size_t>(v.size());
    return n;
  }

  bool operator==(const ParameterSet& other) const {
    if (values_.size() != other.values_.size()) return false;
    for (const auto& [name, v] : values_) {
      auto it = other.values_.find(name);
      if (it == other.values_.end() || it->second.rows() != v.rows() || it->second.cols() != v.cols() ||
          it->second != v)
        return false;
    }
    return true;
  }

 private:
  template <typename Map>
  static auto& lookup(Map& map, const std::string& name) {
    auto it = map.find(name);
    if (it == map.end()) throw ShapeError("unknown parameter: " + name);
    return it->second;
  }

  std::map<std::string, Tensor<Scalar>> values_;
  std::map<std::string, Tensor<Scalar>> grads_;
};

// value -= lr * grad for every tensor, then clears gradients. Any non-finite
// gradient aborts before anything is modified.
template <typename Scalar>
void sgd_step(ParameterSet<Scalar>& params, Scalar learning_rate) {
  if (!(learning_rate >= Scalar(0)) || !std::isfinite(learning_rate))
    throw ShapeError("sgd_step: learning_rate must be finite and non-negative");
  for (const auto& [name, g] : params.grads())
    if (!g.allFinite()) throw NumericError("sgd_step: non-finite gradient in parameter '" + name + "'");
  for (auto& [name, v] : params.values()) v -= learning_rate * params.grad(name);
  params.zero_grad();
}

// Central differences (L(theta + eps) - L(theta - eps)) / 2 eps for every
// scalar in params. params is perturbed in place and restored.
template <typename Scalar>
std::map<std::string, Tensor<Scalar>> finite_difference_gradient(
    const std::function<Scalar(const ParameterSet<Scalar>&)>& loss_fn, ParameterSet<Scalar>& params,
    Scalar epsilon) {
  if (!(epsilon >= Scalar(1e-7) && epsilon <= Scalar(1e-3)))
    throw ShapeError("finite_difference_gradient: epsilon must lie in [1e-7, 1e-3]");
  const Scalar base_a = loss_fn(params);
  const Scalar base_b = loss_fn(params);
  if (!(base_a == base_b))
    throw NumericError("finite_difference_gradient: loss function is not deterministic");

  std::map<std::string, Tensor<Scalar>> estimate;
  for (auto& [name, v] : params.values()) {
    Tensor<Scalar> g(v.rows(), v.cols());
    for (Eigen::Index k = 0; k < v.size(); ++k) {
      const Scalar saved = v.data()[k];
      v.data()[k] = saved + epsilon;
      const Scalar plus = loss_fn(params);
      v.data()[k] = saved - epsilon;
      const Scalar minus = loss_fn(params);
      v.data()[k] = saved;
      g.data()[k] = (plus - minus) / (Scalar(2) * epsilon);
    }
    estimate.emplace(name, std::move(g));
  }
  return estimate;
}

// |a - b| / max(|a|, |b|); 0 when both vanish.
template <typename Scalar>
Scalar relative_error(Scalar a, Scalar b) {
  const Scalar scale = std::max(std::abs(a), std::abs(b));
  return scale == Scalar(0) ? Scalar(0) : std::abs(a - b) / scale;
}

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t checked = 0;   // entries with |grad| above the floor
  std::string worst_parameter;
};

// Element-wise comparison of analytic vs estimated gradients over entries
// whose analytic magnitude exceeds grad_floor.
template <typename Scalar>
GradCheckResult compare_gradients(const std::map<std::string, Tensor<Scalar>>& analytic,
                                  const std::map<std::string, Tensor<Scalar>>& estimate,
                                  Scalar grad_floor = Scalar(1e-8)) {
  GradCheckResult result;
  for (const auto& [name, a] : analytic) {
    auto it = estimate.find(name);
    if (it == estimate.end() || it->second.size() != a.size())
      throw ShapeError("compare_gradients: missing or misshapen estimate for " + name);
    for (Eigen::Index k = 0; k < a.size(); ++k) {
      if (std::abs(a.data()[k]) <= grad_floor) continue;
      ++result.checked;
      const double err = static_cast<double>(relative_error(a.data()[k], it->second.data()[k]));
      if (err > result.max_relative_error) {
        result.max_relative_error = err;
        result.worst_parameter = name;
      }
    }
  }
  return result;
}

}  // namespace jointq
