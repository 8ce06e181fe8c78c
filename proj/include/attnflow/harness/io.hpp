#pragma once

// File formats: CSV tables, JSON documents, checkpoint and manifest.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "attnflow/dynamics.hpp"
#include "attnflow/harness/config.hpp"
#include "attnflow/matrix.hpp"
#include "attnflow/oracle.hpp"
#include "attnflow/training.hpp"

namespace attnflow::harness {

inline constexpr const char* kArtifactName = "attnflow";
inline constexpr const char* kArtifactVersion = "0.1.0";
inline constexpr int kCheckpointVersion = 1;
/// How block trajectories score their records; echoed into every output that
/// carries block cross-entropies.
inline constexpr const char* kBlockCeEvaluation = "per-layer attention parameters theta^(l)";

/// 17 significant digits: round-trips every float64.
inline std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Tracks every file written by a run so the manifest can list it.
class OutputDir {
 public:
  explicit OutputDir(std::filesystem::path root) : root_(std::move(root)) {
    std::error_code ec;
    std::filesystem::create_directories(root_, ec);
    if (ec) throw UsageError("cannot create output directory \"" + root_.string() + "\": " + ec.message());
  }

  const std::filesystem::path& root() const noexcept { return root_; }
  const std::vector<std::string>& files() const noexcept { return files_; }

  void write(const std::string& name, const std::string& content) {
    std::ofstream out(root_ / name, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write \"" + (root_ / name).string() + "\"");
    out << content;
    out.close();
    if (!out) throw std::runtime_error("failed writing \"" + (root_ / name).string() + "\"");
    if (std::find(files_.begin(), files_.end(), name) == files_.end()) files_.push_back(name);
  }

  void write_json(const std::string& name, const nlohmann::json& doc) { write(name, doc.dump(2) + "\n"); }

 private:
  std::filesystem::path root_;
  std::vector<std::string> files_;
};

/// Minimal CSV builder; the header row is mandatory.
class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header) : width_(header.size()) { append_row(header); }

  void add(std::vector<std::string> cells) {
    if (cells.size() != width_) throw std::logic_error("csv row width mismatch");
    append_row(cells);
  }

  const std::string& str() const noexcept { return text_; }

 private:
  void append_row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) text_ += ',';
      text_ += cells[i];
    }
    text_ += '\n';
  }

  std::size_t width_;
  std::string text_;
};

inline std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256 digest failed");
  }
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return hex.str();
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read \"" + p.string() + "\"");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::string utc_timestamp(std::chrono::system_clock::time_point t) {
  const std::time_t tt = std::chrono::system_clock::to_time_t(t);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// trajectory.csv: step,time,ce,grad_norm,residual
inline std::string trajectory_csv(const Trajectory& traj) {
  CsvTable t({"step", "time", "ce", "grad_norm", "residual"});
  for (const auto& r : traj.records()) {
    t.add({std::to_string(r.step), format_real(r.time), format_real(r.ce), format_real(r.grad_norm),
           format_real(r.residual)});
  }
  return t.str();
}

inline nlohmann::json matrix_to_json(const Matrix& m) {
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::vector<double>(m.data().begin(), m.data().end())}};
}

inline Matrix matrix_from_json(const nlohmann::json& doc) {
  try {
    return Matrix(doc.at("rows").get<std::size_t>(), doc.at("cols").get<std::size_t>(),
                  doc.at("data").get<std::vector<double>>());
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("malformed matrix in JSON: ") + e.what());
  }
}

// states.jsonl: one object per record, {"step","time","rows","cols","z"}.
inline std::string states_jsonl(const Trajectory& traj) {
  std::string out;
  for (const auto& r : traj.records()) {
    nlohmann::json line = {{"step", r.step},
                           {"time", r.time},
                           {"rows", r.z.rows()},
                           {"cols", r.z.cols()},
                           {"z", std::vector<double>(r.z.data().begin(), r.z.data().end())}};
    out += line.dump() + "\n";
  }
  return out;
}

inline nlohmann::json grad_report_to_json(const GradReport& r) {
  return {{"max_abs_error", r.max_abs_error},
          {"max_rel_error", r.max_rel_error},
          {"worst_entry", {r.worst_entry.first, r.worst_entry.second}},
          {"analytic_norm", r.analytic_norm},
          {"numeric_norm", r.numeric_norm},
          {"passed", r.passed}};
}

/// Config keys that describe the experiment itself, as opposed to where its
/// files go or how many threads run it.
inline nlohmann::json experiment_config_json(const ExperimentConfig& cfg) {
  nlohmann::json j = to_json(cfg);
  j.erase("out");
  j.erase("checkpoint");
  j.erase("jobs");
  return j;
}

// checkpoint.json
//   format   "attnflow-checkpoint"
//   version  1
//   epoch    number of completed epochs
//   config   experiment config (dims, seed, samples, ... ) used to rebuild data
//   params   {shared, depth, h, layers: [matrix...], readout: matrix}
//   matrix   {rows, cols, data: row-major numbers}
inline nlohmann::json checkpoint_to_json(const StackParams& p, std::size_t epoch, const ExperimentConfig& cfg) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& m : p.layers) layers.push_back(matrix_to_json(m));
  return {{"format", "attnflow-checkpoint"},
          {"version", kCheckpointVersion},
          {"epoch", epoch},
          {"config", experiment_config_json(cfg)},
          {"params",
           {{"shared", p.shared},
            {"depth", p.depth},
            {"h", p.h},
            {"layers", layers},
            {"readout", matrix_to_json(p.readout)}}}};
}

struct Checkpoint {
  StackParams params;
  std::size_t epoch = 0;
  nlohmann::json config;
};

inline Checkpoint checkpoint_from_json(const nlohmann::json& doc) {
  try {
    if (doc.at("format").get<std::string>() != "attnflow-checkpoint") throw UsageError("not an attnflow checkpoint");
    if (doc.at("version").get<int>() != kCheckpointVersion) throw UsageError("unsupported checkpoint version");
    Checkpoint c;
    c.epoch = doc.at("epoch").get<std::size_t>();
    c.config = doc.at("config");
    const auto& p = doc.at("params");
    c.params.shared = p.at("shared").get<bool>();
    c.params.depth = p.at("depth").get<std::size_t>();
    c.params.h = p.at("h").get<double>();
    for (const auto& m : p.at("layers")) c.params.layers.push_back(matrix_from_json(m));
    c.params.readout = matrix_from_json(p.at("readout"));
    const std::size_t expected = c.params.depth == 0 ? 0 : (c.params.shared ? 1 : 2 * c.params.depth);
    if (c.params.layers.size() != expected) throw UsageError("checkpoint layer count does not match depth");
    c.params.stack();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("malformed checkpoint: ") + e.what());
  }
}

/// manifest.json: config echo, version, timestamps, wall time, and a
/// {name, bytes, sha256} entry for every file the run wrote. Written last.
inline void write_manifest(OutputDir& dir, const ExperimentConfig& cfg,
                           std::chrono::system_clock::time_point started, double wall_time,
                           const nlohmann::json& extra = nlohmann::json::object()) {
  nlohmann::json files = nlohmann::json::array();
  for (const auto& name : dir.files()) {
    const std::string bytes = read_file(dir.root() / name);
    files.push_back({{"name", name}, {"bytes", bytes.size()}, {"sha256", sha256_hex(bytes)}});
  }
  nlohmann::json m = {{"artifact", kArtifactName},
                      {"version", kArtifactVersion},
                      {"command", cfg.command},
                      {"config", to_json(cfg)},
                      {"started_at", utc_timestamp(started)},
                      {"finished_at", utc_timestamp(std::chrono::system_clock::now())},
                      {"wall_time_seconds", wall_time},
                      {"files", files}};
  for (const auto& [k, v] : extra.items()) m[k] = v;
  std::ofstream out(dir.root() / "manifest.json", std::ios::trunc);
  out << m.dump(2) << "\n";
  if (!out) throw std::runtime_error("cannot write manifest.json");
}

}  // namespace attnflow::harness
