#pragma once
#include <charconv>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "projhead/evaluation.hpp"

namespace projhead::io {

using nlohmann::json;

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---- numeric formatting -------------------------------------------------

/// Locale-independent shortest round-trip representation; CSV bodies are
/// bitwise reproducible across runs.
inline std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::string format_csv_field(double v) { return format_double(v); }

// ---- config parsing -------------------------------------------------------

inline Vec parse_vec(const json& a) {
  if (!a.is_array()) throw ConfigError("expected an array of numbers");
  Vec v(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) v(i) = a.at(i).get<double>();
  return v;
}

inline PretrainSpec parse_pretrain(const json& j) {
  PretrainSpec s;
  s.d = j.at("d").get<int>();
  s.p = j.at("p").get<int>();
  s.phi = parse_vec(j.at("phi"));
  s.alpha = parse_vec(j.at("alpha"));
  s.sigma = j.value("sigma", 0.0);
  std::string conv = j.value("augmentation_convention", std::string("randomize"));
  if (conv == "randomize")
    s.convention = AugmentationConvention::randomize;
  else if (conv == "flip")
    s.convention = AugmentationConvention::flip;
  else
    throw ConfigError("augmentation_convention must be 'randomize' or 'flip'");
  s.validate();
  return s;
}

inline DownstreamSpec parse_downstream(const json& j) {
  DownstreamSpec s;
  s.phi_hat = parse_vec(j.at("phi_hat"));
  s.j_star = j.at("j_star").get<int>() - 1;  // config is 1-based
  s.validate();
  return s;
}

inline SubclassSpec parse_subclass(const json& j) {
  SubclassSpec s;
  s.d = j.at("d").get<int>();
  s.residual_magnitudes = parse_vec(j.at("residual_magnitudes"));
  s.validate();
  return s;
}

inline TrainConfig parse_train(const json& j) {
  TrainConfig c;
  c.step_size = j.value("step_size", c.step_size);
  c.max_steps = j.value("max_steps", c.max_steps);
  c.grad_tol = j.value("grad_tol", c.grad_tol);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.decay_biases = j.value("decay_biases", c.decay_biases);
  c.record_every = j.value("record_every", c.record_every);
  return c;
}

struct HeadConfig {
  enum class Kind { none, projection, reweight };
  Kind kind = Kind::none;
  double kappa = 1.05;
};

struct ModelConfig {
  enum class Kind { linear, diagonal };
  Kind kind = Kind::linear;
  std::vector<int> dims;       // linear
  double init_scale = 1e-3;    // linear
  double b0 = 0.25;            // diagonal
  bool require_conditions = false;
  bool same_sign = false;
};

struct DepthConfig {
  int layers = 12;
  Vec c;       // empty: derive from the pretrain spec
  json raw;
};

struct ExperimentConfig {
  std::string id = "experiment";
  std::optional<PretrainSpec> pretrain;
  std::optional<DownstreamSpec> downstream;
  std::optional<SubclassSpec> subclass;
  LossKind loss = LossKind::cl;
  TrainConfig train;
  ModelConfig model;
  HeadConfig head;
  std::vector<std::uint64_t> seeds{1};
  std::string out_dir = "runs";
  std::optional<DepthConfig> depth;
  std::map<std::string, json> grid;
  long max_grid_points = 512;
  json raw;
};

inline ExperimentConfig parse_config(const json& j) {
  try {
    ExperimentConfig c;
    c.raw = j;
    c.id = j.value("experiment", std::string("experiment"));
    if (j.contains("pretrain")) c.pretrain = parse_pretrain(j.at("pretrain"));
    if (j.contains("downstream")) c.downstream = parse_downstream(j.at("downstream"));
    if (j.contains("subclass")) c.subclass = parse_subclass(j.at("subclass"));
    if (j.contains("train")) c.train = parse_train(j.at("train"));
    std::string loss = j.value("loss", std::string("cl"));
    if (loss == "cl") c.loss = LossKind::cl;
    else if (loss == "scl") c.loss = LossKind::scl;
    else if (loss == "mse" || loss == "sl") c.loss = LossKind::mse;
    else throw ConfigError("loss must be one of cl, scl, mse");

    if (j.contains("model")) {
      const json& m = j.at("model");
      std::string kind = m.value("kind", std::string("linear"));
      if (kind == "linear") {
        c.model.kind = ModelConfig::Kind::linear;
        if (m.contains("dims")) c.model.dims = m.at("dims").get<std::vector<int>>();
        c.model.init_scale = m.value("init_scale", c.model.init_scale);
      } else if (kind == "diagonal") {
        c.model.kind = ModelConfig::Kind::diagonal;
        c.model.b0 = m.value("b0", c.model.b0);
        c.model.require_conditions = m.value("require_conditions", false);
        c.model.same_sign = m.value("same_sign", false);
      } else {
        throw ConfigError("model.kind must be 'linear' or 'diagonal'");
      }
    }
    if (j.contains("head")) {
      const json& h = j.at("head");
      std::string kind = h.value("kind", std::string("none"));
      if (kind == "none") c.head.kind = HeadConfig::Kind::none;
      else if (kind == "projection") c.head.kind = HeadConfig::Kind::projection;
      else if (kind == "reweight") c.head.kind = HeadConfig::Kind::reweight;
      else throw ConfigError("head.kind must be none, projection or reweight");
      c.head.kappa = h.value("kappa", c.head.kappa);
    }
    if (j.contains("seeds")) {
      if (j.at("seeds").is_array())
        c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
      else
        throw ConfigError("seeds must be an array");
    } else if (j.contains("num_seeds")) {
      int n = j.at("num_seeds").get<int>();
      c.seeds.clear();
      for (int i = 1; i <= n; ++i) c.seeds.push_back(i);
    }
    if (c.seeds.empty()) throw ConfigError("need at least one seed");
    c.out_dir = j.value("out", std::string("runs"));
    if (j.contains("depth")) {
      DepthConfig dc;
      dc.raw = j.at("depth");
      dc.layers = dc.raw.value("L", 12);
      if (dc.raw.contains("c")) dc.c = parse_vec(dc.raw.at("c"));
      c.depth = dc;
    }
    if (j.contains("grid")) {
      for (auto& [key, val] : j.at("grid").items()) {
        if (!val.is_array()) throw ConfigError("grid values must be arrays");
        c.grid[key] = val;
      }
    }
    c.max_grid_points = j.value("max_grid_points", c.max_grid_points);
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  } catch (const SpecError& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config parse: ") + e.what());
  }
  return parse_config(j);
}

// ---- hashing and manifests ------------------------------------------------

/// FNV-1a over the canonical (sorted-key) JSON dump.
inline std::uint64_t config_hash(const json& j) {
  std::string s = j.dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string iso_timestamp_utc() {
  auto now = std::chrono::system_clock::now();
  std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline void write_text_atomic(const std::filesystem::path& path, const std::string& body) {
  std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << body;
  }
  std::filesystem::rename(tmp, path);
}

inline void write_manifest_atomic(const std::filesystem::path& path, const json& manifest) {
  write_text_atomic(path, manifest.dump(2) + "\n");
}

// ---- CSV exports ----------------------------------------------------------

inline void write_trajectory_csv(const std::filesystem::path& path, const Trajectory& traj) {
  std::ostringstream out;
  int layers = traj.final_model.layer_count();
  int d = traj.final_model.input_dim();
  out << "step,loss,defect";
  for (int l = 1; l <= layers; ++l)
    for (int i = 1; i <= d; ++i) out << ",w_l" << l << "_f" << i;
  out << "\n";
  for (const Snapshot& s : traj.snapshots) {
    out << s.step << "," << format_double(s.loss) << "," << format_double(s.defect);
    FeatureWeightProfile prof = feature_weight_profile(s.model);
    for (int l = 0; l < layers; ++l)
      for (int i = 0; i < d; ++i) out << "," << format_double(prof.weights(l, i));
    out << "\n";
  }
  write_text_atomic(path, out.str());
}

inline void write_profile_csv(const std::filesystem::path& path, const Model& m) {
  FeatureWeightProfile prof = feature_weight_profile(m);
  std::ostringstream out;
  out << "layer,feature,weight\n";
  for (int l = 0; l < prof.weights.rows(); ++l)
    for (int i = 0; i < prof.weights.cols(); ++i)
      out << (l + 1) << "," << (i + 1) << "," << format_double(prof.weights(l, i)) << "\n";
  write_text_atomic(path, out.str());
}

inline void write_prediction_csv(const std::filesystem::path& path, const TheoryPrediction& t) {
  std::ostringstream out;
  out << "feature,beta,gamma,selected";
  for (int l = 1; l <= t.predicted_profile.rows(); ++l) out << ",w_l" << l;
  out << "\n";
  for (int i = 0; i < t.beta.size(); ++i) {
    out << (i + 1) << "," << format_double(t.beta(i)) << "," << format_double(t.gamma(i))
        << "," << (t.is_selected(i) ? 1 : 0);
    for (int l = 0; l < t.predicted_profile.rows(); ++l)
      out << "," << format_double(t.predicted_profile(l, i));
    out << "\n";
  }
  write_text_atomic(path, out.str());
}

inline void write_depth_curve_csv(const std::filesystem::path& path,
                                  const std::vector<std::pair<double, DepthCurve>>& curves) {
  std::ostringstream out;
  out << "c_jstar,layer,r,optimal\n";
  for (const auto& [cj, curve] : curves)
    for (int l = 1; l <= curve.r.size(); ++l)
      out << format_double(cj) << "," << l << "," << format_double(curve.r(l - 1)) << ","
          << (l == curve.optimal_layer ? 1 : 0) << "\n";
  write_text_atomic(path, out.str());
}

/// Datasets export with header x1..xd[,y][,y_sub].
inline void write_dataset_csv(const std::filesystem::path& path, const Mat& x,
                              const Vec* y = nullptr, const Vec* y_sub = nullptr) {
  std::ostringstream out;
  for (int i = 1; i <= x.cols(); ++i) out << (i == 1 ? "" : ",") << "x" << i;
  if (y) out << ",y";
  if (y_sub) out << ",y_sub";
  out << "\n";
  for (int k = 0; k < x.rows(); ++k) {
    for (int i = 0; i < x.cols(); ++i) out << (i == 0 ? "" : ",") << format_double(x(k, i));
    if (y) out << "," << format_double((*y)(k));
    if (y_sub) out << "," << format_double((*y_sub)(k));
    out << "\n";
  }
  write_text_atomic(path, out.str());
}

}  // namespace projhead::io
