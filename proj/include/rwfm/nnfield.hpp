#pragma once

// Time-conditioned MLP velocity field v(t, x) with hand-written reverse-mode
// gradients for weighted squared-residual losses, exact input Jacobians (for
// divergence), and SGD / Adam updates.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <numbers>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "rwfm/core.hpp"

namespace rwfm {

// Anything that maps (t, x) to a velocity of the same dimension.
template <class F>
concept VelocityField = requires(const F& f, double t, std::span<const double> x, std::span<double> out) {
  { f.dim() } -> std::convertible_to<std::size_t>;
  f.eval(t, x, out);
};

// A velocity field that also reports its exact divergence in x.
template <class F>
concept DivergenceField = VelocityField<F> && requires(const F& f, double t, std::span<const double> x) {
  { f.divergence(t, x) } -> std::convertible_to<double>;
};

// Batched evaluation for any field.
template <VelocityField F>
PointBatch eval_field(const F& field, double t, const PointBatch& x) {
  if (x.dim() != field.dim()) throw std::invalid_argument("eval_field: dimension mismatch");
  PointBatch out(x.dim(), x.size());
  for (std::size_t i = 0; i < x.size(); ++i) field.eval(t, x[i], out[i]);
  return out;
}

enum class Activation { tanh, gelu };

inline std::string to_string(Activation a) { return a == Activation::tanh ? "tanh" : "gelu"; }

inline Activation parse_activation(const std::string& s) {
  if (s == "tanh") return Activation::tanh;
  if (s == "gelu") return Activation::gelu;
  throw std::invalid_argument("unknown activation '" + s + "'");
}

struct LayerShape {
  std::size_t in = 0;
  std::size_t out = 0;
  friend bool operator==(const LayerShape&, const LayerShape&) = default;
};

namespace detail {

inline constexpr double kInvSqrt2 = 0.70710678118654752440;

inline double activate(Activation a, double z) {
  if (a == Activation::tanh) return std::tanh(z);
  return 0.5 * z * (1.0 + std::erf(z * kInvSqrt2));
}

inline double activate_grad(Activation a, double z) {
  if (a == Activation::tanh) {
    const double th = std::tanh(z);
    return 1.0 - th * th;
  }
  const double cdf = 0.5 * (1.0 + std::erf(z * kInvSqrt2));
  const double pdf = std::exp(-0.5 * z * z) * (std::numbers::inv_sqrtpi * kInvSqrt2);
  return cdf + z * pdf;
}

}  // namespace detail

// MLP on the concatenation (t, x). Hidden layers use `activation`, the output
// layer is linear. Parameters are stored layer by layer as the row-major
// weight matrix (out x in) followed by the bias vector.
class VectorField {
 public:
  VectorField() = default;

  VectorField(std::size_t input_dim, std::vector<std::size_t> hidden_widths, Activation activation,
              std::uint64_t seed)
      : input_dim_(input_dim), hidden_(std::move(hidden_widths)), activation_(activation), seed_(seed) {
    if (input_dim_ == 0) throw std::invalid_argument("init_field: input_dim must be >= 1");
    if (hidden_.empty()) throw std::invalid_argument("init_field: hidden_widths must be non-empty");
    for (std::size_t w : hidden_)
      if (w == 0) throw std::invalid_argument("init_field: hidden widths must be positive");

    std::size_t in = input_dim_ + 1;
    for (std::size_t w : hidden_) {
      shapes_.push_back({in, w});
      in = w;
    }
    shapes_.push_back({in, input_dim_});

    std::size_t count = 0;
    for (const auto& s : shapes_) {
      offsets_.push_back(count);
      count += s.in * s.out + s.out;
    }
    params_.assign(count, 0.0);

    // U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases alike.
    Rng rng(seed);
    for (std::size_t l = 0; l < shapes_.size(); ++l) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(shapes_[l].in));
      const std::size_t n = shapes_[l].in * shapes_[l].out + shapes_[l].out;
      for (std::size_t k = 0; k < n; ++k) params_[offsets_[l] + k] = rng.uniform(-bound, bound);
    }
  }

  std::size_t dim() const { return input_dim_; }
  const std::vector<std::size_t>& hidden_widths() const { return hidden_; }
  Activation activation() const { return activation_; }
  std::uint64_t seed() const { return seed_; }
  const std::vector<LayerShape>& layer_shapes() const { return shapes_; }
  std::size_t parameter_count() const { return params_.size(); }
  std::span<const double> parameters() const { return params_; }

  void set_parameters(std::span<const double> values) {
    if (values.size() != params_.size()) throw std::invalid_argument("set_parameters: size mismatch");
    std::copy(values.begin(), values.end(), params_.begin());
  }

  std::size_t max_width() const {
    std::size_t w = input_dim_ + 1;
    for (const auto& s : shapes_) w = std::max(w, s.out);
    return w;
  }

  void eval(double t, std::span<const double> x, std::span<double> out) const {
    check_point(x);
    if (out.size() != input_dim_) throw std::invalid_argument("eval_field: output dimension mismatch");
    std::vector<double> cur(input_dim_ + 1), next;
    cur[0] = t;
    std::copy(x.begin(), x.end(), cur.begin() + 1);
    for (std::size_t l = 0; l < shapes_.size(); ++l) {
      const auto [in, outn] = shapes_[l];
      const double* W = params_.data() + offsets_[l];
      const double* b = W + in * outn;
      next.assign(outn, 0.0);
      const bool hidden = l + 1 < shapes_.size();
      for (std::size_t i = 0; i < outn; ++i) {
        double z = b[i];
        for (std::size_t j = 0; j < in; ++j) z += W[i * in + j] * cur[j];
        next[i] = hidden ? detail::activate(activation_, z) : z;
      }
      cur.swap(next);
    }
    std::copy(cur.begin(), cur.end(), out.begin());
  }

  std::vector<double> operator()(double t, std::span<const double> x) const {
    std::vector<double> out(input_dim_);
    eval(t, x, out);
    return out;
  }

  // Jacobian dv/dx (dim x dim, row-major) by forward-mode propagation of each
  // input direction.
  std::vector<double> jacobian(double t, std::span<const double> x) const {
    check_point(x);
    const std::size_t d = input_dim_;
    std::vector<double> value(d + 1), next;
    // tangents[k * width + i]: derivative of unit i w.r.t. x_k
    std::vector<double> tangent(d * (d + 1), 0.0), next_tangent;
    value[0] = t;
    for (std::size_t k = 0; k < d; ++k) {
      value[k + 1] = x[k];
      tangent[k * (d + 1) + k + 1] = 1.0;
    }
    for (std::size_t l = 0; l < shapes_.size(); ++l) {
      const auto [in, outn] = shapes_[l];
      const double* W = params_.data() + offsets_[l];
      const double* b = W + in * outn;
      const bool hidden = l + 1 < shapes_.size();
      next.assign(outn, 0.0);
      next_tangent.assign(d * outn, 0.0);
      for (std::size_t i = 0; i < outn; ++i) {
        double z = b[i];
        for (std::size_t j = 0; j < in; ++j) z += W[i * in + j] * value[j];
        const double slope = hidden ? detail::activate_grad(activation_, z) : 1.0;
        next[i] = hidden ? detail::activate(activation_, z) : z;
        for (std::size_t k = 0; k < d; ++k) {
          double dz = 0.0;
          for (std::size_t j = 0; j < in; ++j) dz += W[i * in + j] * tangent[k * in + j];
          next_tangent[k * outn + i] = slope * dz;
        }
      }
      value.swap(next);
      tangent.swap(next_tangent);
    }
    std::vector<double> jac(d * d);
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t k = 0; k < d; ++k) jac[i * d + k] = tangent[k * d + i];
    return jac;
  }

  double divergence(double t, std::span<const double> x) const {
    const auto jac = jacobian(t, x);
    double tr = 0.0;
    for (std::size_t i = 0; i < input_dim_; ++i) tr += jac[i * input_dim_ + i];
    return tr;
  }

  friend bool operator==(const VectorField&, const VectorField&) = default;

 private:
  friend struct FieldAccess;

  void check_point(std::span<const double> x) const {
    if (x.size() != input_dim_)
      throw std::invalid_argument("eval_field: point has dimension " + std::to_string(x.size()) +
                                  ", field expects " + std::to_string(input_dim_));
  }

  std::size_t input_dim_ = 0;
  std::vector<std::size_t> hidden_;
  Activation activation_ = Activation::tanh;
  std::uint64_t seed_ = 0;
  std::vector<LayerShape> shapes_;
  std::vector<std::size_t> offsets_;
  std::vector<double> params_;
};

inline VectorField init_field(std::size_t input_dim, std::vector<std::size_t> hidden_widths, Activation activation,
                              std::uint64_t seed) {
  return VectorField(input_dim, std::move(hidden_widths), activation, seed);
}

// Internal mutable access for the optimizer and the gradient pass.
struct FieldAccess {
  static std::vector<double>& params(VectorField& f) { return f.params_; }
  static const std::vector<std::size_t>& offsets(const VectorField& f) { return f.offsets_; }
};

// A read-only deep copy used as the reference model. No operation in the
// library accepts it for mutation.
class FrozenField {
 public:
  explicit FrozenField(VectorField field) : field_(std::move(field)) {}
  std::size_t dim() const { return field_.dim(); }
  void eval(double t, std::span<const double> x, std::span<double> out) const { field_.eval(t, x, out); }
  double divergence(double t, std::span<const double> x) const { return field_.divergence(t, x); }
  const VectorField& field() const { return field_; }

 private:
  VectorField field_;
};

inline FrozenField clone_frozen(const VectorField& field) { return FrozenField(field); }

// One term of a weighted squared-residual loss: weight * |v(t, x) - target|^2.
struct ResidualTerm {
  double t = 0.0;
  std::vector<double> x;
  std::vector<double> target;
  double weight = 1.0;
};

// loss = (1 / normalizer) * sum_i weight_i * |v(t_i, x_i) - target_i|^2
struct ResidualBatch {
  std::vector<ResidualTerm> terms;
  double normalizer = 1.0;

  // Appends `other` with every weight multiplied by `scale`. Both batches
  // must share the normalizer.
  void append(const ResidualBatch& other, double scale = 1.0) {
    for (auto term : other.terms) {
      term.weight *= scale;
      terms.push_back(std::move(term));
    }
  }

  // Per-term |v - target|^2 (unweighted).
  template <VelocityField F>
  std::vector<double> squared_residuals(const F& field) const {
    std::vector<double> out;
    out.reserve(terms.size());
    std::vector<double> v(field.dim());
    for (const auto& term : terms) {
      field.eval(term.t, term.x, v);
      out.push_back(squared_distance(v, term.target));
    }
    return out;
  }

  template <VelocityField F>
  double value(const F& field) const {
    const auto sq = squared_residuals(field);
    double s = 0.0;
    for (std::size_t i = 0; i < sq.size(); ++i) s += terms[i].weight * sq[i];
    return s / normalizer;
  }
};

struct LossGradient {
  double loss = 0.0;
  std::vector<double> gradient;
  std::vector<double> squared_residuals;  // per term, unweighted
};

// Reverse-mode gradient of the batch loss with respect to the field parameters.
inline LossGradient loss_gradient(const VectorField& field, const ResidualBatch& batch) {
  const auto& shapes = field.layer_shapes();
  const auto& offsets = FieldAccess::offsets(field);
  const auto params = field.parameters();
  const std::size_t L = shapes.size();
  const Activation act = field.activation();

  LossGradient result;
  result.gradient.assign(field.parameter_count(), 0.0);
  result.squared_residuals.reserve(batch.terms.size());

  // inputs[l] holds the input to layer l; pre[l] the pre-activation.
  std::vector<std::vector<double>> inputs(L), pre(L);
  std::vector<double> delta, prev_delta;

  for (std::size_t n = 0; n < batch.terms.size(); ++n) {
    const auto& term = batch.terms[n];
    if (term.x.size() != field.dim() || term.target.size() != field.dim())
      throw std::invalid_argument("loss_gradient: term dimension mismatch");

    inputs[0].assign(field.dim() + 1, term.t);
    std::copy(term.x.begin(), term.x.end(), inputs[0].begin() + 1);
    std::vector<double> out;
    for (std::size_t l = 0; l < L; ++l) {
      const auto [in, outn] = shapes[l];
      const double* W = params.data() + offsets[l];
      const double* b = W + in * outn;
      pre[l].assign(outn, 0.0);
      for (std::size_t i = 0; i < outn; ++i) {
        double z = b[i];
        for (std::size_t j = 0; j < in; ++j) z += W[i * in + j] * inputs[l][j];
        pre[l][i] = z;
      }
      if (l + 1 < L) {
        inputs[l + 1].resize(outn);
        for (std::size_t i = 0; i < outn; ++i) inputs[l + 1][i] = detail::activate(act, pre[l][i]);
      } else {
        out = pre[l];
      }
    }

    double sq = 0.0;
    delta.assign(field.dim(), 0.0);
    const double scale = 2.0 * term.weight / batch.normalizer;
    for (std::size_t i = 0; i < field.dim(); ++i) {
      const double r = out[i] - term.target[i];
      sq += r * r;
      delta[i] = scale * r;
    }
    if (!std::isfinite(sq))
      throw NonFiniteError("loss_gradient: non-finite residual at term " + std::to_string(n) +
                           " (t=" + std::to_string(term.t) + ")");
    result.squared_residuals.push_back(sq);
    result.loss += term.weight * sq;

    for (std::size_t l = L; l-- > 0;) {
      const auto [in, outn] = shapes[l];
      const double* W = params.data() + offsets[l];
      double* gW = result.gradient.data() + offsets[l];
      double* gb = gW + in * outn;
      for (std::size_t i = 0; i < outn; ++i) {
        gb[i] += delta[i];
        for (std::size_t j = 0; j < in; ++j) gW[i * in + j] += delta[i] * inputs[l][j];
      }
      if (l == 0) break;
      prev_delta.assign(in, 0.0);
      for (std::size_t i = 0; i < outn; ++i)
        for (std::size_t j = 0; j < in; ++j) prev_delta[j] += W[i * in + j] * delta[i];
      for (std::size_t j = 0; j < in; ++j) prev_delta[j] *= detail::activate_grad(act, pre[l - 1][j]);
      delta.swap(prev_delta);
    }
  }
  result.loss /= batch.normalizer;

  if (!std::isfinite(result.loss)) throw NonFiniteError("loss_gradient: non-finite loss");
  for (std::size_t k = 0; k < result.gradient.size(); ++k)
    if (!std::isfinite(result.gradient[k]))
      throw NonFiniteError("loss_gradient: non-finite gradient entry " + std::to_string(k));
  return result;
}

enum class OptimizerKind { sgd, adam };

inline std::string to_string(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam"; }

inline OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  throw std::invalid_argument("unknown optimizer '" + s + "'");
}

struct OptimizerState {
  static constexpr double beta1 = 0.9;
  static constexpr double beta2 = 0.999;
  static constexpr double epsilon = 1e-8;

  OptimizerKind kind = OptimizerKind::adam;
  double step_size = 1e-3;
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  std::uint64_t step_count = 0;

  OptimizerState() = default;
  OptimizerState(OptimizerKind k, double eta, std::size_t parameter_count)
      : kind(k), step_size(eta), first_moment(parameter_count, 0.0), second_moment(parameter_count, 0.0) {
    if (!(eta > 0.0)) throw std::invalid_argument("OptimizerState: step size must be positive");
  }
};

inline void apply_update(VectorField& field, std::span<const double> gradient, OptimizerState& opt) {
  auto& theta = FieldAccess::params(field);
  if (gradient.size() != theta.size()) throw std::invalid_argument("apply_update: gradient layout mismatch");
  if (!all_finite(gradient)) throw NonFiniteError("apply_update: non-finite gradient");
  if (opt.first_moment.size() != theta.size()) {
    opt.first_moment.assign(theta.size(), 0.0);
    opt.second_moment.assign(theta.size(), 0.0);
  }
  ++opt.step_count;
  if (opt.kind == OptimizerKind::sgd) {
    for (std::size_t k = 0; k < theta.size(); ++k) theta[k] -= opt.step_size * gradient[k];
    return;
  }
  const double t = static_cast<double>(opt.step_count);
  const double c1 = 1.0 - std::pow(OptimizerState::beta1, t);
  const double c2 = 1.0 - std::pow(OptimizerState::beta2, t);
  for (std::size_t k = 0; k < theta.size(); ++k) {
    const double g = gradient[k];
    opt.first_moment[k] = OptimizerState::beta1 * opt.first_moment[k] + (1.0 - OptimizerState::beta1) * g;
    opt.second_moment[k] = OptimizerState::beta2 * opt.second_moment[k] + (1.0 - OptimizerState::beta2) * g * g;
    const double m_hat = opt.first_moment[k] / c1;
    const double v_hat = opt.second_moment[k] / c2;
    theta[k] -= opt.step_size * m_hat / (std::sqrt(v_hat) + OptimizerState::epsilon);
  }
}

}  // namespace rwfm
