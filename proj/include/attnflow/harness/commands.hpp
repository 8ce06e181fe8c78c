#pragma once

// CLI subcommands. Each writes its files into cfg.out, then manifest.json.
//
// Exit codes: 0 success, 1 I/O failure, 2 validation/usage error,
// 3 numerical failure (divergence or non-finite values), 4 a configured
// assertion failed (e.g. the gradient check).

#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "attnflow/dynamics.hpp"
#include "attnflow/errors.hpp"
#include "attnflow/harness/config.hpp"
#include "attnflow/harness/io.hpp"
#include "attnflow/models.hpp"
#include "attnflow/oracle.hpp"
#include "attnflow/random.hpp"
#include "attnflow/training.hpp"

namespace attnflow::harness {

enum ExitCode : int {
  kExitOk = 0,
  kExitIo = 1,
  kExitValidation = 2,
  kExitNumerical = 3,
  kExitAssertion = 4,
};

struct CommandResult {
  int exit_code = kExitOk;
  /// One line, "key=value" pairs; empty on success.
  std::string reason;
  std::vector<std::string> files;
  nlohmann::json report;
};

inline const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names = {"check-grad", "flow", "blocks", "order", "train", "resume"};
  return names;
}

/// Planted-task dataset described by the config (dims, samples, seed).
inline Dataset synth_dataset(const ExperimentConfig& cfg) {
  return planted_task(cfg.dims, cfg.samples, cfg.seed).data;
}

/// Deterministic problem instance for flow / blocks / order, drawn from the
/// "fixture" sub-stream. Parameters are scaled by param_scale (0 gives θ = 0
/// for the linear model).
struct Fixture {
  FeatureMatrix z0;
  Params params;
  LabelMatrix labels;
  Rng rng;  ///< continues the fixture stream (free-mode layer parameters)
};

inline Fixture make_fixture(const ExperimentConfig& cfg) {
  Rng rng = Rng::substream(cfg.seed, "fixture");
  const Dims& d = cfg.dims;
  FeatureMatrix z0 = rng.normal_matrix(d.seq, d.in);
  if (cfg.model == ModelKind::linear) {
    Matrix theta = rng.normal_matrix(d.out, d.in, cfg.param_scale);
    LabelMatrix c = random_labels(rng, d.seq, d.out);
    return {std::move(z0), LinearParams{std::move(theta)}, std::move(c), std::move(rng)};
  }
  QuadParams p(cfg.param_scale * random_phi(rng, d.in));
  LabelMatrix c = random_labels(rng, d.seq, d.seq);
  return {std::move(z0), std::move(p), std::move(c), std::move(rng)};
}

inline LayerStack make_fixture_stack(const ExperimentConfig& cfg, Fixture& fx) {
  if (cfg.layers < 1) throw ValidationError("config key \"layers\" must be >= 1 for blocks");
  if (const auto* lin = std::get_if<LinearParams>(&fx.params)) {
    if (cfg.shared) return LayerStack::shared_linear(*lin, cfg.layers, cfg.h);
    std::vector<LinearLayer> ls;
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      Matrix a = fx.rng.normal_matrix(cfg.dims.out, cfg.dims.in, cfg.param_scale);
      Matrix b = fx.rng.normal_matrix(cfg.dims.out, cfg.dims.in, cfg.param_scale);
      ls.push_back({LinearParams{std::move(a)}, LinearParams{std::move(b)}});
    }
    return LayerStack(std::move(ls), cfg.h);
  }
  const auto& q = std::get<QuadParams>(fx.params);
  if (cfg.shared) return LayerStack::shared_quad(q, cfg.layers, cfg.h, cfg.form);
  std::vector<QuadLayer> ls;
  const double scale = cfg.param_scale / std::sqrt(static_cast<double>(cfg.dims.in));
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    QuadParams a(cfg.param_scale * random_phi(fx.rng, cfg.dims.in));
    Matrix b = fx.rng.normal_matrix(cfg.dims.in, cfg.dims.in, scale);
    ls.push_back({std::move(a), std::move(b)});
  }
  return LayerStack(std::move(ls), cfg.h, cfg.form);
}

namespace detail {

/// Runs fn(i) for i in [0, n) on `jobs` threads. Results must be written by
/// index so the outcome does not depend on scheduling.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn&& fn) {
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(jobs);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < jobs; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += jobs) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

struct GradInstance {
  Dims linear_dims;
  GradReport linear;
  GradReport linear_theta;
  std::size_t quad_seq = 0, quad_in = 0;
  GradReport quadratic;
  double quadratic_gap = 0.0;
};

inline GradInstance check_instance(const ExperimentConfig& cfg, std::size_t index) {
  Rng rng = Rng::substream(cfg.seed, "check-grad/" + std::to_string(index));
  GradInstance out;

  const LinearInstance lin = random_linear_instance(rng);
  out.linear_dims = {lin.z.rows(), lin.z.cols(), lin.params.theta.rows()};
  const Matrix num_z =
      fd_gradient([&](const Matrix& z) { return linear_ce(z, lin.params, lin.labels); }, lin.z, cfg.fd_step);
  out.linear = grad_check(grad_z_linear(lin.z, lin.params, lin.labels), num_z, cfg.rel_tol, cfg.abs_tol);
  const Matrix num_theta = fd_gradient(
      [&](const Matrix& t) { return linear_ce(lin.z, LinearParams{t}, lin.labels); }, lin.params.theta, cfg.fd_step);
  out.linear_theta =
      grad_check(grad_theta_linear(lin.z, lin.params, lin.labels), num_theta, cfg.rel_tol, cfg.abs_tol);

  const QuadInstance quad = random_quad_instance(rng);
  out.quad_seq = quad.z.rows();
  out.quad_in = quad.z.cols();
  const Matrix exact = grad_z_quad(quad.z, quad.params, quad.labels, GradForm::exact);
  const Matrix literal = grad_z_quad(quad.z, quad.params, quad.labels, GradForm::paper_literal);
  const Matrix num_q =
      fd_gradient([&](const Matrix& z) { return quad_ce(z, quad.params, quad.labels); }, quad.z, cfg.fd_step);
  out.quadratic = grad_check(exact, num_q, cfg.rel_tol, cfg.abs_tol);
  const double norm = frobenius_norm(exact);
  out.quadratic_gap = norm > 0.0 ? frobenius_norm(exact - literal) / norm : 0.0;
  return out;
}

inline GradReport worst_of(const std::vector<GradReport>& reports) {
  GradReport worst = reports.front();
  bool all = true;
  for (const auto& r : reports) {
    all = all && r.passed;
    if (r.max_rel_error > worst.max_rel_error) worst = r;
  }
  worst.passed = all;
  return worst;
}

inline CommandResult run_check_grad(const ExperimentConfig& cfg, OutputDir& dir) {
  std::vector<GradInstance> results(cfg.instances);
  parallel_for(cfg.instances, cfg.jobs, [&](std::size_t i) { results[i] = check_instance(cfg, i); });

  std::vector<GradReport> lin, theta, quad;
  nlohmann::json per_instance = nlohmann::json::array();
  double gap_max = 0.0, gap_sum = 0.0;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    lin.push_back(r.linear);
    theta.push_back(r.linear_theta);
    quad.push_back(r.quadratic);
    gap_max = std::max(gap_max, r.quadratic_gap);
    gap_sum += r.quadratic_gap;
    per_instance.push_back({{"index", i},
                            {"linear_dims", {r.linear_dims.seq, r.linear_dims.in, r.linear_dims.out}},
                            {"linear", grad_report_to_json(r.linear)},
                            {"linear_theta", grad_report_to_json(r.linear_theta)},
                            {"quadratic_dims", {r.quad_seq, r.quad_in}},
                            {"quadratic_exact", grad_report_to_json(r.quadratic)},
                            {"quadratic_relative_gap", r.quadratic_gap}});
  }
  const GradReport wl = worst_of(lin), wt = worst_of(theta), wq = worst_of(quad);
  const bool passed = wl.passed && wt.passed && wq.passed;
  nlohmann::json report = {
      {"command", "check-grad"},
      {"seed", cfg.seed},
      {"instances", cfg.instances},
      {"fd_step", cfg.fd_step},
      {"rel_tol", cfg.rel_tol},
      {"abs_tol", cfg.abs_tol},
      {"linear", grad_report_to_json(wl)},
      {"linear_theta", grad_report_to_json(wt)},
      {"quadratic_exact", grad_report_to_json(wq)},
      {"quadratic_gap", {{"definition", "||exact - paper_literal||_F / ||exact||_F"},
                         {"max", gap_max},
                         {"mean", gap_sum / static_cast<double>(results.size())}}},
      {"per_instance", per_instance},
      {"passed", passed},
  };
  dir.write_json("report.json", report);

  CommandResult res;
  res.report = report;
  if (!passed) {
    res.exit_code = kExitAssertion;
    res.reason = "error=assertion check=grad max_rel_error=" +
                 format_real(std::max({wl.max_rel_error, wt.max_rel_error, wq.max_rel_error}));
  }
  return res;
}

inline nlohmann::json trajectory_summary(const Trajectory& traj) {
  double max_increase = 0.0;
  for (std::size_t i = 1; i < traj.size(); ++i) max_increase = std::max(max_increase, traj[i].ce - traj[i - 1].ce);
  return {{"method", to_string(traj.method())},
          {"records", traj.size()},
          {"ce_initial", traj.front().ce},
          {"ce_final", traj.back().ce},
          {"max_ce_increase", max_increase},
          {"grad_norm_initial", traj.front().grad_norm},
          {"grad_norm_final", traj.back().grad_norm}};
}

inline void write_trajectory(const ExperimentConfig& cfg, OutputDir& dir, const Trajectory& traj) {
  dir.write("trajectory.csv", trajectory_csv(traj));
  if (cfg.dump_states) dir.write("states.jsonl", states_jsonl(traj));
}

inline CommandResult numerical_failure(const std::string& what, nlohmann::json report) {
  CommandResult res;
  res.exit_code = kExitNumerical;
  res.reason = "error=numerical message=\"" + what + "\"";
  res.report = std::move(report);
  return res;
}

inline CommandResult run_flow(const ExperimentConfig& cfg, OutputDir& dir) {
  const Fixture fx = make_fixture(cfg);
  nlohmann::json report = {{"command", "flow"}, {"model", to_string(cfg.model)}, {"h", cfg.h}, {"steps", cfg.steps}};
  try {
    const Trajectory traj = integrate_flow(fx.z0, fx.params, fx.labels, cfg.h, cfg.steps, cfg.method);
    write_trajectory(cfg, dir, traj);
    report["summary"] = trajectory_summary(traj);
    dir.write_json("report.json", report);
    return {kExitOk, "", {}, report};
  } catch (const IntegrationError& e) {
    write_trajectory(cfg, dir, e.partial());
    report["diverged"] = true;
    report["last_valid_step"] = e.last_valid_step();
    dir.write_json("report.json", report);
    return numerical_failure(e.what(), report);
  }
}

inline CommandResult run_blocks_command(const ExperimentConfig& cfg, OutputDir& dir) {
  Fixture fx = make_fixture(cfg);
  const LayerStack stack = make_fixture_stack(cfg, fx);
  const LabelMode mode = cfg.label_free ? LabelMode::label_free : LabelMode::with_labels;
  nlohmann::json report = {{"command", "blocks"},
                           {"model", to_string(cfg.model)},
                           {"form", to_string(cfg.form)},
                           {"layers", cfg.layers},
                           {"shared", cfg.shared},
                           {"label_free", cfg.label_free},
                           {"h", cfg.h},
                           {"ce_evaluation", kBlockCeEvaluation}};
  try {
    const Trajectory traj = run_blocks(fx.z0, stack, fx.labels, mode);
    write_trajectory(cfg, dir, traj);
    report["summary"] = trajectory_summary(traj);
    dir.write_json("report.json", report);
    return {kExitOk, "", {}, report};
  } catch (const IntegrationError& e) {
    write_trajectory(cfg, dir, e.partial());
    report["diverged"] = true;
    report["last_valid_step"] = e.last_valid_step();
    dir.write_json("report.json", report);
    return numerical_failure(e.what(), report);
  }
}

inline CommandResult run_order(const ExperimentConfig& cfg, OutputDir& dir) {
  const Fixture fx = make_fixture(cfg);
  const OrderStudy study = convergence_order_study(fx.z0, fx.params, fx.labels, cfg.h_values, cfg.t_end);
  const std::string slope = study.slope ? format_real(*study.slope) : "undefined";
  CsvTable t({"h", "steps", "error", "slope"});
  bool decreasing = true;
  for (std::size_t i = 0; i < study.points.size(); ++i) {
    const auto& p = study.points[i];
    t.add({format_real(p.h), std::to_string(p.steps), format_real(p.error), slope});
    if (i > 0 && !(p.error < study.points[i - 1].error)) decreasing = false;
  }
  dir.write("order.csv", t.str());
  nlohmann::json report = {{"command", "order"},
                           {"model", to_string(cfg.model)},
                           {"T", cfg.t_end},
                           {"reference_h", study.reference_h},
                           {"reference_method", "rk4"},
                           {"strictly_decreasing", decreasing},
                           {"slope", study.slope ? nlohmann::json(*study.slope) : nlohmann::json(nullptr)}};
  dir.write_json("report.json", report);
  return {kExitOk, "", {}, report};
}

inline nlohmann::json curve_json(const std::vector<CurvePoint>& c, const char* value_key) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& p : c) a.push_back({{"epoch", p.epoch}, {value_key, p.value}});
  return a;
}

inline void write_training(const ExperimentConfig& cfg, OutputDir& dir, const TrainReport& r, nlohmann::json& report) {
  CsvTable loss({"epoch", "global_ce"});
  for (const auto& p : r.loss_curve) loss.add({std::to_string(p.epoch), format_real(p.value)});
  dir.write("loss.csv", loss.str());
  CsvTable acc({"epoch", "accuracy", "label_free_accuracy"});
  for (std::size_t i = 0; i < r.accuracy_curve.size(); ++i) {
    acc.add({std::to_string(r.accuracy_curve[i].epoch), format_real(r.accuracy_curve[i].value),
             format_real(r.label_free_accuracy_curve[i].value)});
  }
  dir.write("accuracy.csv", acc.str());

  const nlohmann::json ckpt = checkpoint_to_json(r.final_params, r.loss_curve.back().epoch, cfg);
  report["loss_curve"] = curve_json(r.loss_curve, "global_ce");
  report["accuracy_curve"] = curve_json(r.accuracy_curve, "accuracy");
  report["label_free_accuracy_curve"] = curve_json(r.label_free_accuracy_curve, "accuracy");
  report["initial_global_ce"] = r.loss_curve.front().value;
  report["final_global_ce"] = r.loss_curve.back().value;
  report["final_accuracy"] = r.accuracy_curve.back().value;
  report["final_label_free_accuracy"] = r.label_free_accuracy_curve.back().value;
  report["final_params"] = ckpt.at("params");
  dir.write_json("report.json", report);
  dir.write_json("checkpoint.json", ckpt);
}

inline CommandResult run_training(const ExperimentConfig& cfg, OutputDir& dir, StackParams params,
                                  std::size_t start_epoch) {
  if (cfg.model != ModelKind::linear) {
    throw ValidationError("config key \"model\" must be linear for training");
  }
  const Dataset data = synth_dataset(cfg);
  TrainConfig tc;
  tc.epochs = cfg.epochs;
  tc.learning_rate = cfg.lr;
  tc.fd_step = cfg.fd_step;
  tc.start_epoch = start_epoch;
  nlohmann::json report = {{"command", cfg.command},
                           {"layers", params.depth},
                           {"shared", params.shared},
                           {"h", params.h},
                           {"lr", cfg.lr},
                           {"start_epoch", start_epoch},
                           {"parameter_count", params.parameter_count()},
                           {"optimizer", "full-batch gradient descent"},
                           {"gradient", "central differences for blocks, analytic readout"}};
  try {
    const TrainReport r = train(data, std::move(params), tc);
    write_training(cfg, dir, r, report);
    CommandResult res{kExitOk, "", {}, report};
    res.report["wall_time_seconds"] = r.wall_time;
    return res;
  } catch (const TrainingError& e) {
    report["diverged"] = true;
    write_training(cfg, dir, e.partial(), report);
    return numerical_failure(e.what(), report);
  }
}

inline CommandResult run_train(const ExperimentConfig& cfg, OutputDir& dir) {
  return run_training(cfg, dir,
                      StackParams::initial(cfg.dims, cfg.layers, cfg.shared, cfg.h, cfg.init_scale, cfg.seed), 0);
}

inline CommandResult run_resume(const ExperimentConfig& cfg, OutputDir& dir) {
  if (cfg.checkpoint.empty()) throw ValidationError("config key \"checkpoint\" is required for resume");
  Checkpoint ckpt = checkpoint_from_json(load_json_file(cfg.checkpoint));
  if (ckpt.params.readout.rows() != cfg.dims.out || ckpt.params.readout.cols() != cfg.dims.in) {
    throw ValidationError("checkpoint parameter shapes do not match config dims");
  }
  return run_training(cfg, dir, std::move(ckpt.params), ckpt.epoch);
}

}  // namespace detail

/// Base config document for `resume`: the checkpoint's stored experiment
/// config, overlaid by the file document and then the flags.
inline nlohmann::json resume_base_config(const nlohmann::json& file_doc, const nlohmann::json& flags) {
  nlohmann::json merged = file_doc;
  if (flags.is_object()) merged.update(flags);
  if (!merged.contains("checkpoint")) throw ValidationError("config key \"checkpoint\" is required for resume");
  const Checkpoint ckpt = checkpoint_from_json(load_json_file(merged.at("checkpoint").get<std::string>()));
  nlohmann::json base = ckpt.config;
  base.update(file_doc);
  return base;
}

/// Executes one subcommand and writes its manifest. Library errors are mapped
/// to exit codes with a one-line reason instead of propagating.
inline CommandResult run_command(const ExperimentConfig& cfg) {
  const auto started = std::chrono::system_clock::now();
  const auto t0 = std::chrono::steady_clock::now();
  CommandResult res;
  try {
    OutputDir dir(cfg.out);
    if (cfg.command == "check-grad") {
      res = detail::run_check_grad(cfg, dir);
    } else if (cfg.command == "flow") {
      res = detail::run_flow(cfg, dir);
    } else if (cfg.command == "blocks") {
      res = detail::run_blocks_command(cfg, dir);
    } else if (cfg.command == "order") {
      res = detail::run_order(cfg, dir);
    } else if (cfg.command == "train") {
      res = detail::run_train(cfg, dir);
    } else if (cfg.command == "resume") {
      res = detail::run_resume(cfg, dir);
    } else {
      throw UsageError("unknown command \"" + cfg.command + "\"");
    }
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    nlohmann::json extra = nlohmann::json::object();
    extra["exit_code"] = res.exit_code;
    if (cfg.command == "blocks") extra["ce_evaluation"] = kBlockCeEvaluation;
    write_manifest(dir, cfg, started, wall, extra);
    res.files = dir.files();
    res.files.push_back("manifest.json");
  } catch (const ValidationError& e) {
    res.exit_code = kExitValidation;
    res.reason = "error=validation message=\"" + std::string(e.what()) + "\"";
  } catch (const DimensionError& e) {
    res.exit_code = kExitValidation;
    res.reason = "error=validation message=\"" + std::string(e.what()) + "\"";
  } catch (const ParameterError& e) {
    res.exit_code = kExitValidation;
    res.reason = "error=validation message=\"" + std::string(e.what()) + "\"";
  } catch (const NumericalError& e) {
    res.exit_code = kExitNumerical;
    res.reason = "error=numerical message=\"" + std::string(e.what()) + "\"";
  } catch (const std::exception& e) {
    res.exit_code = kExitIo;
    res.reason = "error=io message=\"" + std::string(e.what()) + "\"";
  }
  return res;
}

}  // namespace attnflow::harness
