// projhead-lab: desk-scale experiments on layer-wise feature weighting,
// projection heads, and downstream sample complexity for synthetic data.
//
// Subcommands: predict | train | verify | sweep. Exit codes: 0 ok,
// 1 assertion failure, 2 config error, 3 runtime error.
#include <CLI11.hpp>
#include <filesystem>
#include <iostream>
#include <map>

#include "projhead/io.hpp"
#include "projhead/verify.hpp"

namespace fs = std::filesystem;
using namespace projhead;
using io::ExperimentConfig;
using io::json;

namespace {

#ifndef PROJHEAD_VERSION
#define PROJHEAD_VERSION "0.0.0"
#endif

Model build_model(const ExperimentConfig& cfg, std::uint64_t seed) {
  Model m;
  if (cfg.model.kind == io::ModelConfig::Kind::linear) {
    std::vector<int> dims = cfg.model.dims;
    if (dims.empty()) {
      if (!cfg.pretrain) throw io::ConfigError("linear model needs dims or a pretrain spec");
      int layers = cfg.head.kind == io::HeadConfig::Kind::projection ? 2 : 1;
      dims.assign(1, cfg.pretrain->d);
      for (int l = 0; l < layers; ++l) dims.push_back(cfg.pretrain->p);
    }
    m = make_linear(balanced_init_linear(dims, cfg.model.init_scale, seed).layers);
  } else {
    int d = cfg.loss == LossKind::cl ? cfg.pretrain->d : cfg.subclass->d;
    DiagonalInit init;
    init.b0 = cfg.model.b0;
    init.require_conditions = cfg.model.require_conditions;
    init.same_sign = cfg.model.same_sign || cfg.loss != LossKind::cl;
    m = make_diagonal(init_diagonal(d, init, seed));
  }
  if (cfg.head.kind == io::HeadConfig::Kind::reweight)
    m = compose_with_head(std::move(m), ReweightHead{cfg.head.kappa, m.output_dim()});
  return m;
}

LossBinding build_binding(const ExperimentConfig& cfg) {
  switch (cfg.loss) {
    case LossKind::cl:
      if (!cfg.pretrain) throw io::ConfigError("cl loss needs a pretrain spec");
      return cl_loss(*cfg.pretrain);
    case LossKind::scl:
      if (!cfg.subclass) throw io::ConfigError("scl loss needs a subclass spec");
      return scl_loss(*cfg.subclass);
    case LossKind::mse:
      if (!cfg.subclass) throw io::ConfigError("mse loss needs a subclass spec");
      return sl_mse_loss(*cfg.subclass);
  }
  throw io::ConfigError("unreachable loss kind");
}

json run_one_training(const ExperimentConfig& cfg, std::uint64_t seed, const fs::path& dir) {
  Model m = build_model(cfg, seed);
  Trajectory traj = train(m, build_binding(cfg), cfg.train);
  fs::create_directories(dir);
  io::write_trajectory_csv(dir / "trajectory.csv", traj);
  io::write_profile_csv(dir / "profile.csv", traj.final_model);
  io::write_text_atomic(dir / "checkpoint.json",
                        model_to_json(traj.final_model).dump(2) + "\n");
  json out;
  out["seed"] = seed;
  out["stop_reason"] = to_string(traj.stop_reason);
  out["steps"] = traj.steps;
  out["final_loss"] = traj.final_loss;
  out["final_grad_norm"] = traj.final_grad_norm;
  out["max_defect"] = traj.max_defect;
  out["halvings"] = traj.halvings;
  out["wall_seconds"] = traj.wall_seconds;
  out["files"] = {"trajectory.csv", "profile.csv", "checkpoint.json"};
  return out;
}

int cmd_predict(const ExperimentConfig& cfg) {
  if (!cfg.pretrain) throw io::ConfigError("predict needs a pretrain spec");
  fs::path dir = fs::path(cfg.out_dir) / cfg.id;
  fs::create_directories(dir);
  json manifest;
  manifest["experiment"] = cfg.id;
  manifest["config_hash"] = io::hex64(io::config_hash(cfg.raw));
  manifest["code_version"] = PROJHEAD_VERSION;
  manifest["started"] = io::iso_timestamp_utc();
  std::vector<std::string> files;

  TheoryPrediction pred = beta_gamma(*cfg.pretrain);
  io::write_prediction_csv(dir / "prediction.csv", pred);
  files.push_back("prediction.csv");

  json pj;
  pj["beta"] = std::vector<double>(pred.beta.data(), pred.beta.data() + pred.beta.size());
  pj["gamma"] = std::vector<double>(pred.gamma.data(), pred.gamma.data() + pred.gamma.size());
  pj["selected_1based"] = [&] {
    std::vector<int> v;
    for (int i : pred.selected) v.push_back(i + 1);
    return v;
  }();
  pj["selection_ambiguous"] = pred.selection_ambiguous;
  if (cfg.downstream) {
    pj["delta"] = delta(*cfg.pretrain, *cfg.downstream);
    pj["r_pre"] = sample_complexity_indicator(pred.predicted_profile.row(0), *cfg.downstream);
    pj["r_post"] = sample_complexity_indicator(pred.predicted_profile.row(1), *cfg.downstream);
  }
  io::write_text_atomic(dir / "prediction.json", pj.dump(2) + "\n");
  files.push_back("prediction.json");

  if (cfg.depth) {
    if (!cfg.downstream) throw io::ConfigError("depth curve needs a downstream spec");
    Vec c = cfg.depth->c.size() ? cfg.depth->c : depth_curve_weights(*cfg.pretrain);
    std::vector<std::pair<double, DepthCurve>> curves;
    curves.emplace_back(c(cfg.downstream->j_star), depth_curve(c, *cfg.downstream, cfg.depth->layers));
    if (cfg.depth->raw.contains("sweep_c_jstar")) {
      curves.clear();
      for (double cj : cfg.depth->raw.at("sweep_c_jstar").get<std::vector<double>>()) {
        Vec cc = c;
        cc(cfg.downstream->j_star) = cj;
        curves.emplace_back(cj, depth_curve(cc, *cfg.downstream, cfg.depth->layers));
      }
    }
    io::write_depth_curve_csv(dir / "depth_curve.csv", curves);
    files.push_back("depth_curve.csv");
  }
  manifest["files"] = files;
  manifest["finished"] = io::iso_timestamp_utc();
  io::write_manifest_atomic(dir / "manifest.json", manifest);
  std::cout << "wrote " << (dir / "manifest.json").string() << "\n";
  return 0;
}

int cmd_train(const ExperimentConfig& cfg, int jobs) {
  fs::path dir = fs::path(cfg.out_dir) / cfg.id;
  json manifest;
  manifest["experiment"] = cfg.id;
  manifest["config_hash"] = io::hex64(io::config_hash(cfg.raw));
  manifest["code_version"] = PROJHEAD_VERSION;
  manifest["started"] = io::iso_timestamp_utc();
  std::vector<json> outcomes(cfg.seeds.size());
  verify::parallel_for(jobs, static_cast<int>(cfg.seeds.size()), [&](int i) {
    std::uint64_t seed = cfg.seeds[i];
    try {
      outcomes[i] = run_one_training(cfg, seed, dir / std::to_string(seed));
    } catch (const std::exception& e) {
      outcomes[i] = {{"seed", seed}, {"error", e.what()}};  // divergence: run continues
    }
  });
  manifest["runs"] = outcomes;
  manifest["finished"] = io::iso_timestamp_utc();
  io::write_manifest_atomic(dir / "manifest.json", manifest);
  std::cout << "wrote " << (dir / "manifest.json").string() << "\n";
  for (const json& o : outcomes)
    if (o.contains("error")) return 3;
  return 0;
}

// grid axes: weight_decay, step_size, kappa, head, alpha_jstar, phi_jstar
struct GridPoint {
  std::map<std::string, json> values;
};

std::vector<GridPoint> expand_grid(const std::map<std::string, json>& grid) {
  std::vector<GridPoint> points{{}};
  for (const auto& [axis, vals] : grid) {
    std::vector<GridPoint> next;
    for (const GridPoint& p : points)
      for (const auto& v : vals) {
        GridPoint q = p;
        q.values[axis] = v;
        next.push_back(std::move(q));
      }
    points = std::move(next);
  }
  return points;
}

ExperimentConfig apply_point(const ExperimentConfig& base, const GridPoint& pt) {
  ExperimentConfig cfg = base;
  for (const auto& [axis, v] : pt.values) {
    if (axis == "weight_decay") {
      cfg.train.weight_decay = v.get<double>();
    } else if (axis == "step_size") {
      cfg.train.step_size = v.get<double>();
    } else if (axis == "kappa") {
      cfg.head.kind = io::HeadConfig::Kind::reweight;
      cfg.head.kappa = v.get<double>();
    } else if (axis == "head") {
      std::string h = v.get<std::string>();
      if (h == "none") cfg.head.kind = io::HeadConfig::Kind::none;
      else if (h == "projection") cfg.head.kind = io::HeadConfig::Kind::projection;
      else if (h == "reweight") cfg.head.kind = io::HeadConfig::Kind::reweight;
      else throw io::ConfigError("unknown head kind in grid: " + h);
    } else if (axis == "alpha_jstar") {
      if (!cfg.pretrain || !cfg.downstream)
        throw io::ConfigError("alpha_jstar sweep needs pretrain and downstream specs");
      cfg.pretrain->alpha(cfg.downstream->j_star) = v.get<double>();
    } else if (axis == "phi_jstar") {
      if (!cfg.pretrain || !cfg.downstream)
        throw io::ConfigError("phi_jstar sweep needs pretrain and downstream specs");
      cfg.pretrain->phi(cfg.downstream->j_star) = v.get<double>();
    } else {
      throw io::ConfigError("unknown grid axis: " + axis);
    }
  }
  return cfg;
}

int cmd_sweep(const ExperimentConfig& cfg, int jobs) {
  std::vector<GridPoint> points = expand_grid(cfg.grid);
  long total = static_cast<long>(points.size()) * static_cast<long>(cfg.seeds.size());
  if (total > cfg.max_grid_points)
    throw io::ConfigError("grid of " + std::to_string(total) +
                          " runs exceeds max_grid_points = " +
                          std::to_string(cfg.max_grid_points));
  fs::path dir = fs::path(cfg.out_dir) / cfg.id;
  fs::create_directories(dir);

  struct Task {
    int point;
    int seed_idx;
  };
  std::vector<Task> tasks;
  for (int p = 0; p < static_cast<int>(points.size()); ++p)
    for (int s = 0; s < static_cast<int>(cfg.seeds.size()); ++s) tasks.push_back({p, s});

  struct RowMetrics {
    bool ok = false;
    std::string error;
    double final_loss = 0, steps = 0;
    Vec weights_l1, weights_l2;
    double r_pre = 0, r_post = 0;
    bool have_r = false;
  };
  std::vector<RowMetrics> results(tasks.size());
  verify::parallel_for(jobs, static_cast<int>(tasks.size()), [&](int ti) {
    const Task& t = tasks[ti];
    RowMetrics out;
    try {
      ExperimentConfig pc = apply_point(cfg, points[t.point]);
      std::uint64_t seed = cfg.seeds[t.seed_idx];
      fs::path rundir = dir / ("point-" + std::to_string(t.point)) / std::to_string(seed);
      json summary = run_one_training(pc, seed, rundir);
      Model final_model = model_from_json(
          json::parse(std::ifstream(rundir / "checkpoint.json")));
      FeatureWeightProfile prof = feature_weight_profile(final_model);
      out.ok = true;
      out.final_loss = summary["final_loss"].get<double>();
      out.steps = summary["steps"].get<double>();
      out.weights_l1 = prof.weights.row(0);
      out.weights_l2 = prof.weights.row(prof.weights.rows() - 1);
      if (pc.downstream) {
        try {
          out.r_pre = sample_complexity_indicator(out.weights_l1, *pc.downstream);
          out.r_post = sample_complexity_indicator(out.weights_l2, *pc.downstream);
          out.have_r = true;
        } catch (const SpecError&) {
        }
      }
    } catch (const std::exception& e) {
      out.error = e.what();
    }
    results[ti] = out;
  });

  // aggregate long-format CSV: one row per (point, metric) with mean/std
  std::ostringstream csv;
  csv << "point";
  for (const auto& [axis, _] : cfg.grid) csv << "," << axis;
  csv << ",metric,mean,std,n\n";
  for (int p = 0; p < static_cast<int>(points.size()); ++p) {
    std::vector<const RowMetrics*> rows;
    for (std::size_t ti = 0; ti < tasks.size(); ++ti)
      if (tasks[ti].point == p && results[ti].ok) rows.push_back(&results[ti]);
    if (rows.empty()) continue;
    auto emit = [&](const std::string& metric, const std::function<double(const RowMetrics&)>& get) {
      double mean = 0;
      for (auto* r : rows) mean += get(*r);
      mean /= rows.size();
      double var = 0;
      for (auto* r : rows) var += (get(*r) - mean) * (get(*r) - mean);
      double sd = rows.size() > 1 ? std::sqrt(var / (rows.size() - 1)) : 0.0;
      csv << p;
      for (const auto& [axis, _] : cfg.grid) csv << "," << points[p].values.at(axis).dump();
      csv << "," << metric << "," << io::format_double(mean) << "," << io::format_double(sd)
          << "," << rows.size() << "\n";
    };
    emit("final_loss", [](const RowMetrics& r) { return r.final_loss; });
    emit("steps", [](const RowMetrics& r) { return r.steps; });
    for (int i = 0; i < rows[0]->weights_l1.size(); ++i)
      emit("w_l1_f" + std::to_string(i + 1),
           [i](const RowMetrics& r) { return r.weights_l1(i); });
    for (int i = 0; i < rows[0]->weights_l2.size(); ++i)
      emit("w_llast_f" + std::to_string(i + 1),
           [i](const RowMetrics& r) { return r.weights_l2(i); });
    if (rows[0]->have_r) {
      emit("r_pre", [](const RowMetrics& r) { return r.r_pre; });
      emit("r_post", [](const RowMetrics& r) { return r.r_post; });
    }
  }
  io::write_text_atomic(dir / "aggregate.csv", csv.str());

  json manifest;
  manifest["experiment"] = cfg.id;
  manifest["config_hash"] = io::hex64(io::config_hash(cfg.raw));
  manifest["code_version"] = PROJHEAD_VERSION;
  manifest["grid_points"] = points.size();
  manifest["seeds"] = cfg.seeds;
  json pts = json::array();
  for (const auto& p : points) {
    json pj;
    for (const auto& [axis, v] : p.values) pj[axis] = v;
    pts.push_back(pj);
  }
  manifest["points"] = pts;
  std::vector<std::string> files{"aggregate.csv"};
  json errors = json::array();
  for (std::size_t ti = 0; ti < tasks.size(); ++ti) {
    if (!results[ti].error.empty())
      errors.push_back({{"point", tasks[ti].point},
                        {"seed", cfg.seeds[tasks[ti].seed_idx]},
                        {"error", results[ti].error}});
    else
      files.push_back("point-" + std::to_string(tasks[ti].point) + "/" +
                      std::to_string(cfg.seeds[tasks[ti].seed_idx]) + "/trajectory.csv");
  }
  manifest["errors"] = errors;
  manifest["files"] = files;
  manifest["finished"] = io::iso_timestamp_utc();
  io::write_manifest_atomic(dir / "manifest.json", manifest);
  std::cout << "wrote " << (dir / "aggregate.csv").string() << "\n";
  return errors.empty() ? 0 : 3;
}

int cmd_verify(const std::string& suite, const std::optional<ExperimentConfig>& cfg, int jobs) {
  using verify::SuiteReport;
  std::vector<SuiteReport> reports;
  auto run_suite = [&](const std::string& name) {
    if (name == "balancedness") reports.push_back(verify::criterion_balancedness(jobs));
    else if (name == "feature_weights") {
      reports.push_back(verify::criterion_feature_weights(jobs));
      reports.push_back(verify::criterion_reweight_head());
    } else if (name == "delta_sign") {
      reports.push_back(verify::criterion_delta_sign(jobs));
      reports.push_back(verify::criterion_corollary_generators());
    } else if (name == "nonlinear_cl") {
      reports.push_back(verify::criterion_nonlinear_cl(jobs));
      reports.push_back(verify::criterion_weight_decay());
    } else if (name == "collapse") reports.push_back(verify::criterion_collapse(jobs));
    else if (name == "decomposition") reports.push_back(verify::criterion_decomposition(jobs));
    else if (name == "min_norm") reports.push_back(verify::criterion_min_norm());
    else if (name == "depth") reports.push_back(verify::criterion_depth_curve());
    else if (name == "gradients") reports.push_back(verify::criterion_gradient_oracle());
    else throw io::ConfigError("unknown verify suite: " + name);
  };
  if (suite == "all") {
    for (const char* s : {"balancedness", "feature_weights", "delta_sign", "nonlinear_cl",
                          "collapse", "decomposition", "min_norm", "depth", "gradients"})
      run_suite(s);
  } else {
    run_suite(suite);
  }

  bool all_pass = true;
  json report_json = json::array();
  for (const SuiteReport& rep : reports) {
    for (const verify::Check& c : rep.checks) {
      std::cout << (c.pass ? "[PASS] " : "[FAIL] ") << rep.suite << ": " << c.name
                << "  (value " << verify::fmt_g(c.value) << ", threshold "
                << verify::fmt_g(c.threshold) << ")"
                << (c.note.empty() ? "" : "  [" + c.note + "]") << "\n";
      all_pass = all_pass && c.pass;
    }
    json rj;
    rj["suite"] = rep.suite;
    rj["pass"] = rep.pass();
    json checks = json::array();
    for (const verify::Check& c : rep.checks)
      checks.push_back({{"name", c.name},
                        {"pass", c.pass},
                        {"value", c.value},
                        {"threshold", c.threshold},
                        {"note", c.note}});
    rj["checks"] = checks;
    report_json.push_back(rj);
  }
  if (cfg) {
    fs::path dir = fs::path(cfg->out_dir) / cfg->id;
    json manifest;
    manifest["experiment"] = cfg->id;
    manifest["config_hash"] = io::hex64(io::config_hash(cfg->raw));
    manifest["code_version"] = PROJHEAD_VERSION;
    manifest["suite"] = suite;
    manifest["reports"] = report_json;
    manifest["pass"] = all_pass;
    manifest["finished"] = io::iso_timestamp_utc();
    io::write_manifest_atomic(dir / "verify_report.json", manifest);
    std::cout << "wrote " << (dir / "verify_report.json").string() << "\n";
  }
  return all_pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"projection-head laboratory"};
  app.set_version_flag("--version", PROJHEAD_VERSION);
  app.require_subcommand(1);

  std::string config_path, out_override, suite = "all";
  int seeds_override = 0;
  int jobs = static_cast<int>(std::thread::hardware_concurrency());
  if (jobs < 1) jobs = 1;

  auto add_common = [&](CLI::App* sub, bool config_required) {
    auto* opt = sub->add_option("--config", config_path, "JSON experiment config");
    if (config_required) opt->required();
    sub->add_option("--out", out_override, "output directory override");
    sub->add_option("--seeds", seeds_override, "use seeds 1..N instead of the config list");
    sub->add_option("--jobs", jobs, "worker threads");
  };

  CLI::App* predict = app.add_subcommand("predict", "closed-form predictions and depth curves");
  add_common(predict, true);
  CLI::App* train_cmd = app.add_subcommand("train", "train per seed and export trajectories");
  add_common(train_cmd, true);
  CLI::App* sweep = app.add_subcommand("sweep", "grid of runs with aggregated CSV");
  add_common(sweep, true);
  CLI::App* verify_cmd = app.add_subcommand("verify", "theorem verification suites");
  verify_cmd->add_option("suite", suite,
                         "balancedness|feature_weights|delta_sign|nonlinear_cl|collapse|"
                         "decomposition|min_norm|depth|gradients|all");
  add_common(verify_cmd, false);

  CLI11_PARSE(app, argc, argv);

  try {
    std::optional<ExperimentConfig> cfg;
    if (!config_path.empty()) {
      cfg = io::load_config(config_path);
      if (!out_override.empty()) cfg->out_dir = out_override;
      if (seeds_override > 0) {
        cfg->seeds.clear();
        for (int i = 1; i <= seeds_override; ++i) cfg->seeds.push_back(i);
      }
    }
    if (predict->parsed()) return cmd_predict(*cfg);
    if (train_cmd->parsed()) return cmd_train(*cfg, jobs);
    if (sweep->parsed()) return cmd_sweep(*cfg, jobs);
    if (verify_cmd->parsed()) return cmd_verify(suite, cfg, jobs);
  } catch (const io::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const SpecError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 2;
}
