#pragma once

// Two-stage optimisation: features are propagated through a fixed-depth block
// stack (the inner, per-sample minimisation of ℓ), then one full-batch
// gradient-descent step is taken on the stack and readout parameters against
// the empirical global cross-entropy.

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "attnflow/dynamics.hpp"
#include "attnflow/errors.hpp"
#include "attnflow/matrix.hpp"
#include "attnflow/models.hpp"
#include "attnflow/oracle.hpp"
#include "attnflow/random.hpp"

namespace attnflow {

struct Dims {
  std::size_t seq = 0;  ///< S
  std::size_t in = 0;   ///< Fi
  std::size_t out = 0;  ///< Fo

  friend bool operator==(const Dims&, const Dims&) = default;
};

struct Sample {
  FeatureMatrix z0;  ///< initial embedding Z₀(X)
  LabelMatrix c;
};

class Dataset {
 public:
  Dataset(std::vector<Sample> samples, Dims dims, std::uint64_t seed)
      : samples_(std::move(samples)), dims_(dims), seed_(seed) {
    if (samples_.empty()) throw ValidationError("dataset is empty");
    for (std::size_t i = 0; i < samples_.size(); ++i) {
      const Sample& s = samples_[i];
      if (s.z0.rows() != dims_.seq || s.z0.cols() != dims_.in || s.c.rows() != dims_.seq ||
          s.c.cols() != dims_.out) {
        throw DimensionError("dataset sample " + std::to_string(i) + " has inconsistent shape");
      }
    }
  }

  const std::vector<Sample>& samples() const noexcept { return samples_; }
  std::size_t size() const noexcept { return samples_.size(); }
  const Sample& operator[](std::size_t i) const { return samples_[i]; }
  const Dims& dims() const noexcept { return dims_; }
  std::uint64_t seed() const noexcept { return seed_; }

 private:
  std::vector<Sample> samples_;
  Dims dims_;
  std::uint64_t seed_;
};

struct PlantedTask {
  Dataset data;
  Matrix hidden;  ///< W, Fo x Fi; classifies `data` perfectly
};

/// Planted classification task. W is drawn first, then each sample's Z₀
/// (standard normal entries); column f of C is one-hot at the argmax over
/// positions of column f of Z₀Wᵀ. Everything comes from the "data" sub-stream.
inline PlantedTask planted_task(Dims dims, std::size_t n, std::uint64_t seed) {
  if (dims.seq < 1 || dims.in < 1 || dims.out < 1) throw ValidationError("planted task: dims must be >= 1");
  if (n < 1) throw ValidationError("planted task: n must be >= 1");
  Rng rng = Rng::substream(seed, "data");
  Matrix w = rng.normal_matrix(dims.out, dims.in);
  std::vector<Sample> samples;
  samples.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    Matrix z0 = rng.normal_matrix(dims.seq, dims.in);
    const Matrix logits = z0 * w.transpose();
    std::vector<std::size_t> hot(dims.out, 0);
    for (std::size_t f = 0; f < dims.out; ++f) {
      for (std::size_t s = 1; s < dims.seq; ++s) {
        if (logits(s, f) > logits(hot[f], f)) hot[f] = s;
      }
    }
    samples.push_back({std::move(z0), LabelMatrix::one_hot(dims.seq, hot)});
  }
  return {Dataset(std::move(samples), dims, seed), std::move(w)};
}

/// Per output column, the sequence position with the largest logit in
/// Z·readoutᵀ. Ties go to the lowest index.
inline std::vector<std::size_t> classify(const FeatureMatrix& z_final, const LinearParams& readout) {
  const Matrix logits = linear_forward(z_final, readout);
  std::vector<std::size_t> out(logits.cols(), 0);
  for (std::size_t f = 0; f < logits.cols(); ++f) {
    for (std::size_t s = 1; s < logits.rows(); ++s) {
      if (logits(s, f) > logits(out[f], f)) out[f] = s;
    }
  }
  return out;
}

/// Trainable parameters of a linear block stack plus its readout.
///
/// Shared mode holds one Fo x Fi matrix used for θ^(ℓ) and θ^(ℓ+½) of every
/// layer. Free mode holds 2·depth matrices ordered θ^(0), θ^(½), θ^(1), ...
struct StackParams {
  bool shared = true;
  std::size_t depth = 0;
  double h = 0.1;
  std::vector<Matrix> layers;
  Matrix readout = Matrix::zeros(1, 1);

  LayerStack stack() const {
    std::vector<LinearLayer> ls;
    ls.reserve(depth);
    for (std::size_t l = 0; l < depth; ++l) {
      if (shared) {
        ls.push_back({LinearParams{layers.at(0)}, LinearParams{layers.at(0)}});
      } else {
        ls.push_back({LinearParams{layers.at(2 * l)}, LinearParams{layers.at(2 * l + 1)}});
      }
    }
    return LayerStack(std::move(ls), h);
  }

  LinearParams readout_params() const { return LinearParams{readout}; }

  /// Matrices in canonical order: layer matrices, then the readout.
  std::vector<Matrix> matrices() const {
    std::vector<Matrix> m = layers;
    m.push_back(readout);
    return m;
  }

  /// Human-readable name of matrix index k in matrices() order.
  std::string matrix_name(std::size_t k) const {
    if (k == layers.size()) return "readout";
    if (shared) return "shared_theta";
    return "layer " + std::to_string(k / 2) + (k % 2 == 0 ? " theta_attention" : " theta_label");
  }

  StackParams with_matrices(std::vector<Matrix> m) const {
    StackParams p = *this;
    p.readout = std::move(m.back());
    m.pop_back();
    p.layers = std::move(m);
    return p;
  }

  std::size_t parameter_count() const {
    std::size_t n = readout.size();
    for (const auto& l : layers) n += l.size();
    return n;
  }

  /// Layer matrices N(0, init_scale²) from the "init" sub-stream; zero readout.
  static StackParams initial(Dims dims, std::size_t depth, bool shared, double h, double init_scale,
                             std::uint64_t seed) {
    Rng rng = Rng::substream(seed, "init");
    StackParams p;
    p.shared = shared;
    p.depth = depth;
    p.h = h;
    const std::size_t count = depth == 0 ? 0 : (shared ? 1 : 2 * depth);
    for (std::size_t k = 0; k < count; ++k) p.layers.push_back(rng.normal_matrix(dims.out, dims.in, init_scale));
    p.readout = Matrix::zeros(dims.out, dims.in);
    p.stack();  // validates shapes and h
    return p;
  }
};

/// Mean point-wise cross-entropy of the readout over propagated features.
inline double global_ce(const Dataset& data, const LayerStack& stack, const LinearParams& readout,
                        LabelMode mode = LabelMode::with_labels) {
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    try {
      const Sample& s = data[i];
      total += linear_ce(propagate(s.z0, stack, s.c, mode), readout, s.c);
    } catch (const NumericalError& e) {
      throw NumericalError("global_ce: propagation failed on sample " + std::to_string(i) + ": " + e.what());
    }
  }
  return total / static_cast<double>(data.size());
}

inline double global_ce(const Dataset& data, const StackParams& p, LabelMode mode = LabelMode::with_labels) {
  return global_ce(data, p.stack(), p.readout_params(), mode);
}

/// Fraction of (sample, output column) pairs whose classified position is the
/// hot label position.
inline double accuracy(const Dataset& data, const LayerStack& stack, const LinearParams& readout,
                       LabelMode mode = LabelMode::with_labels) {
  std::size_t hits = 0, total = 0;
  for (const Sample& s : data.samples()) {
    const auto pred = classify(propagate(s.z0, stack, s.c, mode), readout);
    for (std::size_t f = 0; f < pred.size(); ++f) {
      hits += pred[f] == s.c.hot_position(f) ? 1 : 0;
      ++total;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(total);
}

/// Mean over samples of ∂_θ ℓ for the readout, features held fixed.
inline Matrix readout_gradient(const Dataset& data, const LayerStack& stack, const LinearParams& readout) {
  Matrix g = Matrix::zeros(readout.theta.rows(), readout.theta.cols());
  for (const Sample& s : data.samples()) g = g + grad_theta_linear(propagate(s.z0, stack, s.c), readout, s.c);
  return (1.0 / static_cast<double>(data.size())) * g;
}

/// Central differences of global_ce over every parameter entry, in
/// matrices() order. Readout probes reuse the propagated features since the
/// stack is unchanged by them. When `include_readout` is false the readout
/// block of the result is zero.
inline std::vector<Matrix> fd_param_gradient(const Dataset& data, const StackParams& p,
                                             double step = kDefaultFdStep, bool include_readout = true) {
  if (!(step > 0.0)) throw ValidationError("fd_param_gradient: step must be positive");
  const std::vector<Matrix> mats = p.matrices();
  std::vector<Matrix> grads;
  grads.reserve(mats.size());

  const auto probe_failed = [&](std::size_t k, std::size_t i, std::size_t j, const std::string& why) {
    return OracleError(i, j, "fd_param_gradient: " + why + " probing " + p.matrix_name(k) + " (" +
                                 std::to_string(i) + "," + std::to_string(j) + ")");
  };

  for (std::size_t k = 0; k + 1 < mats.size(); ++k) {
    grads.push_back(Matrix::generate(mats[k].rows(), mats[k].cols(), [&](std::size_t i, std::size_t j) {
      const auto eval = [&](double delta) {
        std::vector<Matrix> m = mats;
        m[k] = m[k].with_entry(i, j, mats[k](i, j) + delta);
        double v = 0.0;
        try {
          v = global_ce(data, p.with_matrices(std::move(m)));
        } catch (const NumericalError& e) {
          throw probe_failed(k, i, j, e.what());
        }
        if (!std::isfinite(v)) throw probe_failed(k, i, j, "non-finite loss");
        return v;
      };
      return (eval(step) - eval(-step)) / (2.0 * step);
    }));
  }

  const std::size_t r = mats.size() - 1;
  if (!include_readout) {
    grads.push_back(Matrix::zeros(p.readout.rows(), p.readout.cols()));
    return grads;
  }
  const LayerStack stack = p.stack();
  std::vector<FeatureMatrix> finals;
  finals.reserve(data.size());
  for (const Sample& s : data.samples()) finals.push_back(propagate(s.z0, stack, s.c));
  const auto readout_ce = [&](const Matrix& theta) {
    double total = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) total += linear_ce(finals[i], LinearParams{theta}, data[i].c);
    return total / static_cast<double>(data.size());
  };
  try {
    grads.push_back(fd_gradient(readout_ce, p.readout, step));
  } catch (const OracleError& e) {
    throw probe_failed(r, e.row(), e.col(), "non-finite loss");
  }
  return grads;
}

struct TrainConfig {
  std::size_t epochs = 200;
  double learning_rate = 1.0;
  double fd_step = kDefaultFdStep;
  /// Use the closed-form readout gradient instead of finite differences.
  bool analytic_readout = true;
  /// Epoch number of the starting parameters (non-zero when resuming).
  std::size_t start_epoch = 0;
};

struct CurvePoint {
  std::size_t epoch = 0;
  double value = 0.0;
};

struct TrainReport {
  std::vector<CurvePoint> loss_curve;
  std::vector<CurvePoint> accuracy_curve;
  /// Accuracy with the label sub-step skipped during propagation.
  std::vector<CurvePoint> label_free_accuracy_curve;
  StackParams final_params;
  double wall_time = 0.0;
};

/// Training stopped on a non-finite loss; `partial()` holds every finished epoch.
class TrainingError : public NumericalError {
 public:
  TrainingError(const std::string& what, TrainReport partial)
      : NumericalError(what), partial_(std::move(partial)) {}
  const TrainReport& partial() const noexcept { return partial_; }

 private:
  TrainReport partial_;
};

/// Full-batch gradient descent on every stack and readout entry.
inline TrainReport train(const Dataset& data, StackParams params, const TrainConfig& cfg) {
  if (!(cfg.learning_rate >= 0.0) || !std::isfinite(cfg.learning_rate)) {
    throw ValidationError("train: learning rate must be finite and non-negative");
  }
  if (cfg.epochs < 1) throw ValidationError("train: epochs must be >= 1");
  const auto started = std::chrono::steady_clock::now();

  TrainReport report;
  const auto record = [&](std::size_t epoch, const StackParams& p) {
    const LayerStack stack = p.stack();
    const LinearParams readout = p.readout_params();
    const double loss = global_ce(data, stack, readout);
    if (!std::isfinite(loss)) throw NumericalError("non-finite global cross-entropy");
    report.loss_curve.push_back({epoch, loss});
    report.accuracy_curve.push_back({epoch, accuracy(data, stack, readout)});
    report.label_free_accuracy_curve.push_back({epoch, accuracy(data, stack, readout, LabelMode::label_free)});
  };
  const auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  };

  std::size_t epoch = cfg.start_epoch;
  try {
    record(epoch, params);
    for (std::size_t e = 0; e < cfg.epochs; ++e) {
      std::vector<Matrix> grads = fd_param_gradient(data, params, cfg.fd_step, !cfg.analytic_readout);
      if (cfg.analytic_readout) grads.back() = readout_gradient(data, params.stack(), params.readout_params());
      std::vector<Matrix> mats = params.matrices();
      for (std::size_t k = 0; k < mats.size(); ++k) mats[k] = mats[k] - cfg.learning_rate * grads[k];
      params = params.with_matrices(std::move(mats));
      ++epoch;
      record(epoch, params);
    }
  } catch (const NumericalError& e) {
    report.final_params = std::move(params);
    report.wall_time = elapsed();
    throw TrainingError("train: diverged at epoch " + std::to_string(epoch) + ": " + e.what(), std::move(report));
  }
  report.final_params = std::move(params);
  report.wall_time = elapsed();
  return report;
}

}  // namespace attnflow
