#pragma once

// Gradient flow Ż = −∂_Z ℓ(Z, θ) of the point-wise cross-entropy, explicit
// integrators for it, and the split block steppers that turn one step of the
// flow into an attention sub-step followed by a label sub-step.

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "attnflow/errors.hpp"
#include "attnflow/matrix.hpp"
#include "attnflow/models.hpp"

namespace attnflow {

using Params = std::variant<LinearParams, QuadParams>;

inline ModelKind model_kind(const Params& p) {
  return std::holds_alternative<LinearParams>(p) ? ModelKind::linear : ModelKind::quadratic;
}

/// ℓ(Z, θ) for either model.
inline double model_ce(const FeatureMatrix& z, const Params& p, const LabelMatrix& c) {
  if (const auto* lin = std::get_if<LinearParams>(&p)) return linear_ce(z, *lin, c);
  return quad_ce(z, std::get<QuadParams>(p), c);
}

/// ∂_Z ℓ(Z, θ); the quadratic model uses the exact form.
inline Matrix model_grad_z(const FeatureMatrix& z, const Params& p, const LabelMatrix& c) {
  if (const auto* lin = std::get_if<LinearParams>(&p)) return grad_z_linear(z, *lin, c);
  return grad_z_quad(z, std::get<QuadParams>(p), c, GradForm::exact);
}

/// Ż = −∂_Z ℓ(Z, θ).
inline Matrix flow_rhs(const FeatureMatrix& z, const Params& p, const LabelMatrix& c) {
  return -model_grad_z(z, p, c);
}

enum class Integrator { euler, rk4 };
enum class TrajectoryMethod { euler, rk4, split_linear, split_quad };

inline const char* to_string(TrajectoryMethod m) {
  switch (m) {
    case TrajectoryMethod::euler: return "euler";
    case TrajectoryMethod::rk4: return "rk4";
    case TrajectoryMethod::split_linear: return "split_linear";
    case TrajectoryMethod::split_quad: return "split_quad";
  }
  return "unknown";
}

struct TrajectoryRecord {
  std::size_t step = 0;
  double time = 0.0;
  FeatureMatrix z;
  double ce = 0.0;
  double grad_norm = 0.0;
  /// ‖∂_Z ℓ‖_F; for the linear model this is fixed_point_residual.
  double residual = 0.0;
};

class Trajectory {
 public:
  explicit Trajectory(TrajectoryMethod method) : method_(method) {}

  void append(TrajectoryRecord r) {
    if (!records_.empty() && r.step <= records_.back().step) {
      throw ValidationError("trajectory step index must increase strictly");
    }
    if (!std::isfinite(r.ce)) throw NumericalError("trajectory: non-finite cross-entropy");
    records_.push_back(std::move(r));
  }

  TrajectoryMethod method() const noexcept { return method_; }
  const std::vector<TrajectoryRecord>& records() const noexcept { return records_; }
  std::size_t size() const noexcept { return records_.size(); }
  bool empty() const noexcept { return records_.empty(); }
  const TrajectoryRecord& front() const { return records_.front(); }
  const TrajectoryRecord& back() const { return records_.back(); }
  const TrajectoryRecord& operator[](std::size_t i) const { return records_[i]; }

 private:
  TrajectoryMethod method_;
  std::vector<TrajectoryRecord> records_;
};

/// A trajectory left a finite state. `partial()` holds every valid record.
class IntegrationError : public NumericalError {
 public:
  IntegrationError(const std::string& what, Trajectory partial)
      : NumericalError(what), partial_(std::move(partial)) {}

  const Trajectory& partial() const noexcept { return partial_; }
  std::size_t last_valid_step() const { return partial_.empty() ? 0 : partial_.back().step; }

 private:
  Trajectory partial_;
};

namespace detail {

inline TrajectoryRecord make_record(std::size_t step, double time, FeatureMatrix z, double ce,
                                    const Matrix& grad) {
  const double g = frobenius_norm(grad);
  return TrajectoryRecord{step, time, std::move(z), ce, g, g};
}

}  // namespace detail

/// Integrates Ż = −∂_Z ℓ for `steps` fixed steps of size h. The result holds
/// steps + 1 records. A non-finite state raises IntegrationError.
inline Trajectory integrate_flow(const FeatureMatrix& z0, const Params& p, const LabelMatrix& c, double h,
                                 std::size_t steps, Integrator method) {
  if (!(h > 0.0)) throw ValidationError("integrate_flow: h must be positive");
  if (steps < 1) throw ValidationError("integrate_flow: steps must be >= 1");
  Trajectory traj(method == Integrator::rk4 ? TrajectoryMethod::rk4 : TrajectoryMethod::euler);

  FeatureMatrix z = z0;
  Matrix grad = model_grad_z(z, p, c);
  traj.append(detail::make_record(0, 0.0, z, model_ce(z, p, c), grad));

  for (std::size_t n = 1; n <= steps; ++n) {
    try {
      if (method == Integrator::euler) {
        z = z - h * grad;
      } else {
        const Matrix k1 = -grad;
        const Matrix k2 = flow_rhs(z + (0.5 * h) * k1, p, c);
        const Matrix k3 = flow_rhs(z + (0.5 * h) * k2, p, c);
        const Matrix k4 = flow_rhs(z + h * k3, p, c);
        z = z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      }
      grad = model_grad_z(z, p, c);
      const double ce = model_ce(z, p, c);
      if (!std::isfinite(ce)) throw NumericalError("non-finite cross-entropy");
      traj.append(detail::make_record(n, static_cast<double>(n) * h, z, ce, grad));
    } catch (const NumericalError& e) {
      throw IntegrationError("integrate_flow: diverged at step " + std::to_string(n) + ": " + e.what(),
                             std::move(traj));
    }
  }
  return traj;
}

/// Z ← Z − h·CA(Z, θ_a), then Z ← Z + h·Cθ_b.
inline FeatureMatrix block_step_linear(const FeatureMatrix& z, const LinearParams& theta_a,
                                       const LinearParams& theta_b, const LabelMatrix& c, double h) {
  if (!(h > 0.0)) throw ValidationError("block_step_linear: h must be positive");
  detail::check_linear(z, theta_a, c);
  detail::check_linear(z, theta_b, c);
  // Fused form of the two sub-steps; per entry it evaluates
  // (z − h·(σθ_a)) + h·(Cθ_b) with the same summation order as the products.
  const Matrix sigma = softmax_seq(linear_forward(z, theta_a));
  const Matrix& ta = theta_a.theta;
  const Matrix& tb = theta_b.theta;
  const Matrix& lab = c.values();
  return Matrix::generate(z.rows(), z.cols(), [&](std::size_t i, std::size_t k) {
    double attn = 0.0, label = 0.0;
    for (std::size_t f = 0; f < ta.rows(); ++f) {
      attn += sigma(i, f) * ta(f, k);
      label += lab(i, f) * tb(f, k);
    }
    return (z(i, k) - h * attn) + h * label;
  });
}

/// Z ← Z − h·A(Z), then Z ← Z + h·(C + Cᵀ)Zθ_b, where A(Z) is 2·SA(Zφ)φᵀ
/// (paper_literal) or (σ + σᵀ)Zθ with σ = σ(ZθZᵀ) (exact).
inline FeatureMatrix block_step_quad(const FeatureMatrix& z, const QuadParams& p_a, const Matrix& theta_b,
                                     const LabelMatrix& c, double h, GradForm form) {
  if (!(h > 0.0)) throw ValidationError("block_step_quad: h must be positive");
  detail::check_quad(z, p_a, c);
  detail::require(theta_b.rows() == p_a.features() && theta_b.cols() == p_a.features(),
                  [&] { return "block_step_quad: theta_b is " + theta_b.shape() + ", expected " + p_a.theta().shape(); });
  Matrix attraction = form == GradForm::paper_literal
                          ? 2.0 * (self_attention(z * p_a.phi()) * p_a.phi().transpose())
                          : [&] {
                              const Matrix sigma = softmax_seq(quad_forward(z, p_a));
                              return (sigma + sigma.transpose()) * (z * p_a.theta());
                            }();
  const FeatureMatrix half = z - h * attraction;
  return half + h * ((c.values() + c.values().transpose()) * half * theta_b);
}

struct LinearLayer {
  LinearParams attention;  ///< θ^(ℓ)
  LinearParams label;      ///< θ^(ℓ+½)
};

struct QuadLayer {
  QuadParams attention;  ///< φ^(ℓ), θ^(ℓ) = φφᵀ
  Matrix label;          ///< θ^(ℓ+½)
};

/// Whether the label sub-step consumes C (training) or is skipped (label-free
/// evaluation of pure attention propagation).
enum class LabelMode { with_labels, label_free };

/// Ordered block parameters plus the split step size h.
class LayerStack {
 public:
  LayerStack(std::vector<LinearLayer> layers, double h) : layers_(std::move(layers)), h_(h) { validate(); }

  LayerStack(std::vector<QuadLayer> layers, double h, GradForm form = GradForm::exact)
      : layers_(std::move(layers)), h_(h), form_(form) {
    validate();
  }

  /// `depth` layers all tied to θ (attention and label sub-steps alike).
  static LayerStack shared_linear(const LinearParams& theta, std::size_t depth, double h) {
    return LayerStack(std::vector<LinearLayer>(depth, LinearLayer{theta, theta}), h);
  }

  static LayerStack shared_quad(const QuadParams& p, std::size_t depth, double h, GradForm form) {
    return LayerStack(std::vector<QuadLayer>(depth, QuadLayer{p, p.theta()}), h, form);
  }

  ModelKind kind() const noexcept {
    return std::holds_alternative<std::vector<LinearLayer>>(layers_) ? ModelKind::linear : ModelKind::quadratic;
  }
  std::size_t depth() const noexcept {
    return std::visit([](const auto& v) { return v.size(); }, layers_);
  }
  bool empty() const noexcept { return depth() == 0; }
  double h() const noexcept { return h_; }
  GradForm form() const noexcept { return form_; }

  const std::vector<LinearLayer>& linear_layers() const { return std::get<std::vector<LinearLayer>>(layers_); }
  const std::vector<QuadLayer>& quad_layers() const { return std::get<std::vector<QuadLayer>>(layers_); }

 private:
  void validate() const {
    if (!(h_ > 0.0)) throw ValidationError("layer stack: h must be positive");
    if (kind() == ModelKind::linear) {
      const auto& ls = linear_layers();
      for (const auto& l : ls) {
        const Matrix& ref = ls.front().attention.theta;
        if (l.attention.theta.rows() != ref.rows() || l.attention.theta.cols() != ref.cols() ||
            l.label.theta.rows() != ref.rows() || l.label.theta.cols() != ref.cols()) {
          throw DimensionError("layer stack: inconsistent linear layer shapes");
        }
      }
    } else {
      const auto& ls = quad_layers();
      for (const auto& l : ls) {
        const std::size_t f = ls.front().attention.features();
        if (l.attention.features() != f || l.label.rows() != f || l.label.cols() != f) {
          throw DimensionError("layer stack: inconsistent quadratic layer shapes");
        }
      }
    }
  }

  std::variant<std::vector<LinearLayer>, std::vector<QuadLayer>> layers_;
  double h_;
  GradForm form_ = GradForm::exact;
};

/// Applies layer `index` of the stack to Z.
inline FeatureMatrix apply_layer(const FeatureMatrix& z, const LayerStack& stack, std::size_t index,
                                 const LabelMatrix& c, LabelMode mode = LabelMode::with_labels) {
  const double h = stack.h();
  if (stack.kind() == ModelKind::linear) {
    const LinearLayer& l = stack.linear_layers().at(index);
    if (mode == LabelMode::label_free) {
      detail::check_linear(z, l.attention, c);
      return z - h * cross_attention(z, l.attention);
    }
    return block_step_linear(z, l.attention, l.label, c, h);
  }
  const QuadLayer& l = stack.quad_layers().at(index);
  if (mode == LabelMode::label_free) {
    // The label sub-step is the identity; a zero θ_b realises exactly that.
    return block_step_quad(z, l.attention, Matrix::zeros(l.label.rows(), l.label.cols()), c, h, stack.form());
  }
  return block_step_quad(z, l.attention, l.label, c, h, stack.form());
}

/// Final features after every layer; an empty stack returns Z0.
inline FeatureMatrix propagate(const FeatureMatrix& z0, const LayerStack& stack, const LabelMatrix& c,
                               LabelMode mode = LabelMode::with_labels) {
  FeatureMatrix z = z0;
  for (std::size_t l = 0; l < stack.depth(); ++l) z = apply_layer(z, stack, l, c, mode);
  return z;
}

namespace detail {

inline Params layer_attention_params(const LayerStack& stack, std::size_t index) {
  if (stack.kind() == ModelKind::linear) return stack.linear_layers().at(index).attention;
  return stack.quad_layers().at(index).attention;
}

}  // namespace detail

/// Layer-wise propagation with one record per layer plus the initial state.
/// Record k is scored with the attention parameters of the layer that
/// produced it (record 0 with layer 0's).
inline Trajectory run_blocks(const FeatureMatrix& z0, const LayerStack& stack, const LabelMatrix& c,
                             LabelMode mode = LabelMode::with_labels) {
  if (stack.empty()) throw ValidationError("run_blocks: layer stack is empty");
  Trajectory traj(stack.kind() == ModelKind::linear ? TrajectoryMethod::split_linear
                                                    : TrajectoryMethod::split_quad);
  const auto record = [&](std::size_t step, const FeatureMatrix& z, std::size_t layer) {
    const Params p = detail::layer_attention_params(stack, layer);
    const double ce = model_ce(z, p, c);
    if (!std::isfinite(ce)) throw NumericalError("non-finite cross-entropy");
    return detail::make_record(step, static_cast<double>(step) * stack.h(), z, ce, model_grad_z(z, p, c));
  };

  traj.append(record(0, z0, 0));
  FeatureMatrix z = z0;
  for (std::size_t l = 0; l < stack.depth(); ++l) {
    try {
      z = apply_layer(z, stack, l, c, mode);
      traj.append(record(l + 1, z, l));
    } catch (const NumericalError& e) {
      throw IntegrationError("run_blocks: diverged at layer " + std::to_string(l) + ": " + e.what(),
                             std::move(traj));
    }
  }
  return traj;
}

struct OrderPoint {
  double h = 0.0;
  std::size_t steps = 0;
  double error = 0.0;
};

struct OrderStudy {
  std::vector<OrderPoint> points;
  /// Least-squares slope of log(error) against log(h); empty when any error
  /// is zero.
  std::optional<double> slope;
  double reference_h = 0.0;
};

namespace detail {

inline std::size_t steps_for(double t, double h, const char* what) {
  const double n = t / h;
  const double rounded = std::round(n);
  if (rounded < 1.0 || std::abs(n - rounded) > 1e-9 * std::max(1.0, n)) {
    throw ValidationError(std::string(what) + ": T is not an integer multiple of h");
  }
  return static_cast<std::size_t>(rounded);
}

inline FeatureMatrix split_step(const FeatureMatrix& z, const Params& p, const LabelMatrix& c, double h) {
  if (const auto* lin = std::get_if<LinearParams>(&p)) return block_step_linear(z, *lin, *lin, c, h);
  const auto& q = std::get<QuadParams>(p);
  return block_step_quad(z, q, q.theta(), c, h, GradForm::exact);
}

}  // namespace detail

/// Global error at time T of the shared-θ split scheme against an RK4
/// reference run with step min(h_values) / 20.
inline OrderStudy convergence_order_study(const FeatureMatrix& z0, const Params& p, const LabelMatrix& c,
                                          const std::vector<double>& h_values, double t_end) {
  if (h_values.empty()) throw ValidationError("order study: h_values is empty");
  if (!(t_end > 0.0)) throw ValidationError("order study: T must be positive");
  for (std::size_t i = 0; i < h_values.size(); ++i) {
    if (!(h_values[i] > 0.0)) throw ValidationError("order study: h values must be positive");
    if (i > 0 && !(h_values[i] < h_values[i - 1])) {
      throw ValidationError("order study: h values must be strictly descending");
    }
  }

  OrderStudy study;
  study.reference_h = h_values.back() / 20.0;
  const std::size_t ref_steps = detail::steps_for(t_end, study.reference_h, "order study");
  const FeatureMatrix z_ref = integrate_flow(z0, p, c, study.reference_h, ref_steps, Integrator::rk4).back().z;

  for (double h : h_values) {
    const std::size_t n = detail::steps_for(t_end, h, "order study");
    FeatureMatrix z = z0;
    for (std::size_t k = 0; k < n; ++k) z = detail::split_step(z, p, c, h);
    study.points.push_back({h, n, frobenius_norm(z - z_ref)});
  }

  bool any_zero = false;
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  for (const auto& pt : study.points) {
    if (!(pt.error > 0.0)) any_zero = true;
    if (any_zero) break;
    const double x = std::log(pt.h), y = std::log(pt.error);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double m = static_cast<double>(study.points.size());
  if (!any_zero && study.points.size() >= 2) {
    study.slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
  }
  return study;
}

}  // namespace attnflow
