#pragma once
#include <atomic>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <thread>
#include <vector>

#include "projhead/evaluation.hpp"
#include "projhead/reference.hpp"

// Theorem-level verification suites. Each criterion pins its own spec,
// seeds, and tolerances so a run is reproducible bit for bit.
namespace projhead::verify {

struct Check {
  std::string name;
  bool pass = false;
  double value = 0.0;      // measured quantity
  double threshold = 0.0;  // the gate it was compared against
  std::string note;
};

inline std::string fmt_g(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

struct SuiteReport {
  std::string suite;
  std::vector<Check> checks;

  bool pass() const {
    for (const Check& c : checks)
      if (!c.pass) return false;
    return true;
  }
  void add(const std::string& name, bool ok, double value, double threshold,
           const std::string& note = "") {
    checks.push_back({name, ok, value, threshold, note});
  }
};

inline void parallel_for(int jobs, int n, const std::function<void(int)>& fn) {
  if (jobs < 1) jobs = 1;
  jobs = std::min<int>(jobs, n);
  if (jobs <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  pool.reserve(jobs);
  for (int t = 0; t < jobs; ++t)
    pool.emplace_back([&]() {
      while (true) {
        int i = next.fetch_add(1);
        if (i >= n) return;
        fn(i);
      }
    });
  for (auto& th : pool) th.join();
}

// ---- finite-difference harness -----------------------------------------

inline Vec flatten_params(const Model& m) {
  std::vector<double> v;
  if (m.is_linear()) {
    for (const Mat& w : m.linear().layers)
      for (int r = 0; r < w.rows(); ++r)
        for (int c = 0; c < w.cols(); ++c) v.push_back(w(r, c));
  } else {
    const DiagonalNet& net = m.diagonal();
    for (const Vec* p : {&net.w1, &net.w2, &net.b1, &net.b2})
      for (int i = 0; i < p->size(); ++i) v.push_back((*p)(i));
  }
  return Eigen::Map<Vec>(v.data(), v.size());
}

inline void unflatten_params(Model& m, const Vec& v) {
  int k = 0;
  if (m.is_linear()) {
    for (Mat& w : m.linear().layers)
      for (int r = 0; r < w.rows(); ++r)
        for (int c = 0; c < w.cols(); ++c) w(r, c) = v(k++);
  } else {
    DiagonalNet& net = m.diagonal();
    for (Vec* p : {&net.w1, &net.w2, &net.b1, &net.b2})
      for (int i = 0; i < p->size(); ++i) (*p)(i) = v(k++);
  }
}

inline Vec flatten_grad(const ModelGrad& g) {
  std::vector<double> v;
  if (g.linear) {
    for (const Mat& w : g.layers)
      for (int r = 0; r < w.rows(); ++r)
        for (int c = 0; c < w.cols(); ++c) v.push_back(w(r, c));
  } else {
    for (const Vec* p : {&g.w1, &g.w2, &g.b1, &g.b2})
      for (int i = 0; i < p->size(); ++i) v.push_back((*p)(i));
  }
  return Eigen::Map<Vec>(v.data(), v.size());
}

/// Central finite differences with per-parameter relative step h.
inline Vec fd_gradient(const Model& model, const std::function<double(const Model&)>& f,
                       double h = 1e-5) {
  Model m = model;
  Vec theta = flatten_params(m);
  Vec g(theta.size());
  for (int i = 0; i < theta.size(); ++i) {
    double step = h * std::max(1.0, std::fabs(theta(i)));
    Vec tp = theta, tm = theta;
    tp(i) += step;
    tm(i) -= step;
    unflatten_params(m, tp);
    double fp = f(m);
    unflatten_params(m, tm);
    double fm = f(m);
    g(i) = (fp - fm) / (2.0 * step);
  }
  return g;
}

/// Worst per-component relative disagreement. Components far below the
/// gradient's own scale are compared at that scale, so finite-difference
/// roundoff on a zero-ish entry cannot masquerade as real disagreement.
inline double grad_rel_error(const Vec& a, const Vec& b) {
  double scale = 1e-6 * std::max(1.0, a.cwiseAbs().maxCoeff());
  double worst = 0.0;
  for (int i = 0; i < a.size(); ++i) {
    double denom = std::max({scale, std::fabs(a(i)), std::fabs(b(i))});
    worst = std::max(worst, std::fabs(a(i) - b(i)) / denom);
  }
  return worst;
}

/// Smallest distance of any activation pre-image to a kink (a = b or a = -b),
/// probing both layers at the given per-coordinate input values.
inline double diag_min_kink_margin(const DiagonalNet& net, const Vec& u) {
  auto margin = [](double a, double b) {
    return std::min(std::fabs(a - b), std::fabs(a + b));
  };
  double m = std::numeric_limits<double>::infinity();
  for (int i = 0; i < net.dim(); ++i) {
    double a1 = net.w1(i) * u(i);
    m = std::min(m, margin(a1, net.b1(i)));
    double h1 = symrelu(a1, net.b1(i));
    m = std::min(m, margin(net.w2(i) * h1, net.b2(i)));
  }
  return m;
}

// ---- shared fixtures ------------------------------------------------------

/// Pretraining data of the non-linear analysis: two unit features, the
/// second fully disrupted by augmentation.
inline PretrainSpec disrupted_pair_spec() {
  PretrainSpec s;
  s.d = 2;
  s.p = 2;
  s.phi = Vec::Ones(2);
  s.alpha = (Vec(2) << 0.0, 1.0).finished();
  s.sigma = 0.0;
  return s;
}

/// Five-feature spec with graded augmentation disruption (the "setting 1"
/// synthetic configuration).
inline PretrainSpec graded_alpha_spec() {
  PretrainSpec s;
  s.d = 5;
  s.p = 5;
  s.phi = Vec::Ones(5);
  s.alpha = (Vec(5) << 0.0, 0.25, 0.5, 0.75, 1.0).finished();
  s.sigma = 0.01;
  return s;
}

inline SubclassSpec small_subclass_spec() {
  SubclassSpec s;
  s.d = 5;
  s.residual_magnitudes = Vec::Constant(3, 0.001);
  return s;
}

// ---- criterion 1: balancedness conservation ------------------------------

inline SuiteReport criterion_balancedness(int jobs = 2) {
  SuiteReport rep{"balancedness", {}};
  const int n_specs = 20;
  struct Result {
    double max_defect, final_eta, final_eta_half, ratio;
  };
  std::vector<Result> res(n_specs);
  parallel_for(jobs, n_specs, [&](int t) {
    rng::Stream s(rng::derive(0x1234, static_cast<std::uint64_t>(t)));
    PretrainSpec spec;
    spec.d = 2 + static_cast<int>(s.next_below(7));
    spec.p = 2 + static_cast<int>(s.next_below(7));
    spec.phi.resize(spec.d);
    spec.alpha.resize(spec.d);
    for (int i = 0; i < spec.d; ++i) {
      spec.phi(i) = s.next_uniform(0.5, 1.3);
      spec.alpha(i) = s.next_uniform(0.0, 1.0);
    }
    spec.sigma = s.next_uniform(0.0, 0.3);

    LinearStack init = balanced_init_linear({spec.d, spec.p, spec.p}, 0.1,
                                            rng::derive(0x77, t));
    double finals[2];
    double max_defect = 0.0;
    for (int h = 0; h < 2; ++h) {
      TrainConfig cfg;
      cfg.step_size = h == 0 ? 1e-3 : 5e-4;
      cfg.max_steps = h == 0 ? 100000 : 200000;  // same integration horizon
      cfg.grad_tol = 0.0;
      cfg.record_every = 10000;
      Trajectory traj = train(make_linear(init.layers), cl_loss(spec), cfg);
      finals[h] = balancedness_defect(traj.final_model.linear());
      if (h == 0) max_defect = traj.max_defect;
    }
    res[t] = {max_defect, finals[0], finals[1], finals[1] / finals[0]};
  });
  double worst_defect = 0.0, lo_ratio = 1e9, hi_ratio = 0.0;
  for (const Result& r : res) {
    worst_defect = std::max(worst_defect, r.max_defect);
    lo_ratio = std::min(lo_ratio, r.ratio);
    hi_ratio = std::max(hi_ratio, r.ratio);
  }
  rep.add("max defect over 20 specs, 1e5 steps at eta=1e-3", worst_defect <= 1e-3,
          worst_defect, 1e-3);
  rep.add("defect ratio after halving eta, low end", lo_ratio >= 0.3, lo_ratio, 0.3);
  rep.add("defect ratio after halving eta, high end", hi_ratio <= 0.7, hi_ratio, 0.7);
  return rep;
}

// ---- criterion 2: feature-weight closed form ------------------------------

inline SuiteReport criterion_feature_weights(int jobs = 2) {
  SuiteReport rep{"feature_weights", {}};
  PretrainSpec spec = graded_alpha_spec();
  TheoryPrediction pred = beta_gamma(spec);
  const int n_seeds = 3;
  struct Result {
    double rel_err, dead_l2, flat1, flat2;
    bool converged, ratios_ok;
  };
  std::vector<Result> res(n_seeds);
  parallel_for(jobs, n_seeds, [&](int k) {
    Model m = make_linear(balanced_init_linear({5, 5, 5}, 3e-4, 100 + k).layers);
    TrainConfig cfg;
    cfg.step_size = 0.02;
    cfg.max_steps = 3'000'000;
    cfg.grad_tol = 1e-8;
    cfg.record_every = 100000;
    Trajectory traj = train(m, cl_loss(spec), cfg);
    FeatureWeightProfile prof = feature_weight_profile(traj.final_model);
    Result r{};
    r.converged = traj.stop_reason == StopReason::converged;
    r.rel_err = 0.0;
    for (int l = 0; l < 2; ++l)
      for (int i : pred.selected) {
        if (pred.gamma(i) <= 0.0) continue;
        double want = pred.predicted_profile(l, i);
        r.rel_err = std::max(r.rel_err, std::fabs(prof.weights(l, i) - want) / want);
      }
    r.dead_l2 = prof.weights(1, 4);  // the alpha = 1 feature at layer 2
    // every pairwise ratio must sit closer to 1 pre-projection
    r.ratios_ok = true;
    for (int i = 0; i < 4; ++i)
      for (int j = i + 1; j < 4; ++j) {
        double r1 = prof.weights(0, i) / prof.weights(0, j);
        double r2 = prof.weights(1, i) / prof.weights(1, j);
        double d1 = std::max(r1, 1.0 / r1), d2 = std::max(r2, 1.0 / r2);
        if (!(d1 < d2)) r.ratios_ok = false;
      }
    auto sel_flat = [&](int l) {
      double mx = 0, mn = 1e300;
      for (int i = 0; i < 4; ++i) {
        mx = std::max(mx, prof.weights(l, i));
        mn = std::min(mn, prof.weights(l, i));
      }
      return mx / mn;
    };
    r.flat1 = sel_flat(0);
    r.flat2 = sel_flat(1);
    res[k] = r;
  });
  for (int k = 0; k < n_seeds; ++k) {
    const Result& r = res[k];
    std::string tag = "seed " + std::to_string(k + 1);
    rep.add(tag + ": converged at grad_tol 1e-8", r.converged, r.converged ? 1 : 0, 1);
    rep.add(tag + ": selected-feature weights within 2% of gamma^l", r.rel_err <= 0.02,
            r.rel_err, 0.02);
    rep.add(tag + ": destroyed feature at layer 2 below 1e-3", r.dead_l2 <= 1e-3,
            r.dead_l2, 1e-3);
    rep.add(tag + ": all pre-projection weight ratios closer to 1", r.ratios_ok,
            r.flat1, r.flat2, "flatness layer1 vs layer2");
  }
  return rep;
}

// ---- criterion 3: Delta sign --------------------------------------------

struct DeltaCase {
  PretrainSpec spec;
  DownstreamSpec ds;
  double delta_value;
};

/// Random (spec, downstream) pair with unambiguous selection, a learned
/// relevant feature, and |Delta| >= 1e-3.
inline DeltaCase random_delta_case(rng::Stream& s, bool trainable) {
  for (int tries = 0; tries < 4000; ++tries) {
    PretrainSpec spec;
    spec.d = 3 + static_cast<int>(s.next_below(trainable ? 3 : 4));
    spec.p = 2 + static_cast<int>(s.next_below(spec.d - 1));
    spec.phi.resize(spec.d);
    spec.alpha.resize(spec.d);
    for (int i = 0; i < spec.d; ++i) {
      spec.phi(i) = s.next_uniform(0.7, 1.4);
      spec.alpha(i) = s.next_uniform(0.0, trainable ? 0.7 : 0.9);
    }
    spec.sigma = s.next_uniform(0.0, 0.3);
    TheoryPrediction t = beta_gamma(spec);
    double min_gap = 1e300;
    std::vector<double> betas(spec.d);
    for (int i = 0; i < spec.d; ++i) betas[i] = t.beta(i);
    std::sort(betas.begin(), betas.end());
    for (std::size_t i = 1; i < betas.size(); ++i)
      min_gap = std::min(min_gap, betas[i] - betas[i - 1]);
    if (min_gap < (trainable ? 0.02 : 1e-3)) continue;  // selection must be clean
    if (trainable && t.beta(t.selected.back()) < 0.05) continue;
    DownstreamSpec ds;
    ds.phi_hat.resize(spec.d);
    for (int i = 0; i < spec.d; ++i) ds.phi_hat(i) = s.next_uniform(0.5, 2.0);
    ds.j_star = t.selected[s.next_below(t.selected.size())];
    double dv;
    try {
      dv = delta(spec, ds);
    } catch (const SpecError&) {
      continue;
    }
    if (std::fabs(dv) < 1e-3) continue;
    return {spec, ds, dv};
  }
  throw SpecError("random_delta_case: generation failed");
}

inline SuiteReport criterion_delta_sign(int jobs = 2) {
  SuiteReport rep{"delta_sign", {}};

  // exact algebra on the predicted profile
  int exact_agree = 0;
  double worst_identity = 0.0;
  rng::Stream s(rng::derive(0xD517A, 0));
  for (int t = 0; t < 100; ++t) {
    DeltaCase c = random_delta_case(s, false);
    TheoryPrediction pred = beta_gamma(c.spec);
    double r1 = sample_complexity_indicator(pred.predicted_profile.row(0), c.ds);
    double r2 = sample_complexity_indicator(pred.predicted_profile.row(1), c.ds);
    if ((r1 - r2) * c.delta_value > 0.0) ++exact_agree;
    // identity: (r1 - r2) phi_hat_{j*}^2 = Delta
    double ph2 = c.ds.phi_hat(c.ds.j_star) * c.ds.phi_hat(c.ds.j_star);
    worst_identity = std::max(
        worst_identity,
        std::fabs((r1 - r2) * ph2 - c.delta_value) / std::max(1.0, std::fabs(c.delta_value)));
  }
  rep.add("predicted-profile sign agreement (100 cases)", exact_agree == 100, exact_agree, 100);
  rep.add("algebraic identity (r1 - r2) phihat^2 = Delta", worst_identity <= 1e-10,
          worst_identity, 1e-10);

  // trained models; keep cases whose measured indicator gap clears 5x the
  // measurement tolerance. Candidates are generated sequentially and trained
  // in parallel batches so the accepted set is deterministic.
  const int want = 100;
  int agree = 0, used = 0;
  rng::Stream gen(rng::derive(0xD517B, 1));
  int rounds = 0;
  while (used < want && rounds < 8) {
    ++rounds;
    const int batch = 60;
    std::vector<DeltaCase> cases;
    cases.reserve(batch);
    for (int i = 0; i < batch; ++i) cases.push_back(random_delta_case(gen, true));
    std::vector<std::uint64_t> seeds(batch);
    for (int i = 0; i < batch; ++i) seeds[i] = gen.next_u64();
    struct Outcome {
      bool usable = false;
      bool agrees = false;
    };
    std::vector<Outcome> outcomes(batch);
    parallel_for(jobs, batch, [&](int i) {
      const DeltaCase& c = cases[i];
      Model m = make_linear(
          balanced_init_linear({c.spec.d, c.spec.p, c.spec.p}, 3e-4, seeds[i]).layers);
      TrainConfig cfg;
      cfg.step_size = 0.02;
      cfg.max_steps = 4'000'000;
      cfg.grad_tol = 1e-8;
      cfg.record_every = 1000000;
      Trajectory traj = train(m, cl_loss(c.spec), cfg);
      if (traj.stop_reason != StopReason::converged) return;
      FeatureWeightProfile prof = feature_weight_profile(traj.final_model);
      double r1, r2;
      try {
        r1 = sample_complexity_indicator(prof.weights.row(0), c.ds);
        r2 = sample_complexity_indicator(prof.weights.row(1), c.ds);
      } catch (const SpecError&) {
        return;
      }
      double tol = 0.01 * (r1 + r2);  // measurement tolerance of the indicators
      if (std::fabs(r1 - r2) < 5.0 * tol) return;
      outcomes[i] = {true, (r1 - r2) * c.delta_value > 0.0};
    });
    for (int i = 0; i < batch && used < want; ++i) {
      if (!outcomes[i].usable) continue;
      ++used;
      agree += outcomes[i].agrees;
    }
  }
  rep.add("trained-model sign agreement", agree == want && used == want, agree, want,
          "cases with indicator gap >= 5x tolerance");
  return rep;
}

// ---- criterion 7: coordinate-wise loss decomposition ------------------------

inline SuiteReport criterion_decomposition(int jobs = 2) {
  SuiteReport rep{"decomposition", {}};
  const int n_nets = 20;
  struct Result {
    double decomp_err = 0.0;
    double mc_dev_se = 0.0;  // |mc mean - exact| in units of the standard error
  };
  std::vector<Result> res(n_nets);
  parallel_for(jobs, n_nets, [&](int t) {
    rng::Stream s(rng::derive(0xDEC0, t));
    int d = 3;
    DiagonalNet net;
    net.w1.resize(d);
    net.w2.resize(d);
    net.b1.resize(d);
    net.b2.resize(d);
    for (int i = 0; i < d; ++i) {
      net.w1(i) = s.next_sign() * s.next_uniform(0.4, 2.0);
      net.w2(i) = s.next_sign() * s.next_uniform(0.4, 2.0);
      net.b1(i) = s.next_uniform(0.05, 0.5);
      net.b2(i) = s.next_uniform(0.05, 0.5);
    }
    Model m = make_diagonal(net);

    LossKind kind = t % 3 == 0 ? LossKind::cl : (t % 3 == 1 ? LossKind::scl : LossKind::mse);
    LossBinding binding;
    double exact = 0.0, decomposed = 0.0;
    if (kind == LossKind::cl) {
      PretrainSpec spec;
      spec.d = d;
      spec.p = d;
      spec.phi.resize(d);
      spec.alpha.resize(d);
      for (int i = 0; i < d; ++i) {
        spec.phi(i) = s.next_uniform(0.5, 1.5);
        spec.alpha(i) = s.next_uniform(0.0, 1.0);
      }
      spec.sigma = 0.0;
      binding = cl_loss(spec);
      exact = reference::cl_loss_enumerated(m, spec);
    } else {
      SubclassSpec spec;
      spec.d = d;
      spec.residual_magnitudes = Vec::Constant(1, s.next_uniform(0.05, 0.8));
      binding = kind == LossKind::scl ? scl_loss(spec) : sl_mse_loss(spec);
      exact = kind == LossKind::scl ? reference::scl_loss_enumerated(m, spec)
                                    : reference::mse_loss_enumerated(m, spec);
    }
    decomposed = coordinate_losses_diagonal(m, binding).total();
    Result r;
    r.decomp_err = std::fabs(decomposed - exact) / std::max(1.0, std::fabs(exact));

    // Monte-Carlo agreement: K independent batches, 4 standard errors
    const int k_batches = 24, batch = 1500;
    Vec est(k_batches);
    for (int k = 0; k < k_batches; ++k) {
      std::uint64_t seed = rng::derive(0xAC5, t, k);
      if (kind == LossKind::cl)
        est(k) = cl_empirical_loss(m, *binding.pretrain, batch, seed);
      else if (kind == LossKind::scl)
        est(k) = scl_empirical_loss(m, *binding.subclass, batch, seed);
      else
        est(k) = mse_empirical_loss(m, *binding.subclass, batch, seed);
    }
    double mean = est.mean();
    double var = (est.array() - mean).square().sum() / (k_batches - 1);
    double se = std::sqrt(var / k_batches) + 1e-15;
    r.mc_dev_se = std::fabs(mean - exact) / se;
    res[t] = r;
  });
  double worst_decomp = 0.0, worst_mc = 0.0;
  for (const Result& r : res) {
    worst_decomp = std::max(worst_decomp, r.decomp_err);
    worst_mc = std::max(worst_mc, r.mc_dev_se);
  }
  rep.add("coordinate sum equals joint enumeration (rel, 20 nets)", worst_decomp <= 1e-10,
          worst_decomp, 1e-10);
  rep.add("MC estimator within 4 standard errors of exact", worst_mc <= 4.0, worst_mc, 4.0);
  return rep;
}

// ---- criterion 8: minimum-norm balancedness ---------------------------------

inline SuiteReport criterion_min_norm() {
  SuiteReport rep{"min_norm", {}};
  rng::Stream s(rng::derive(0x3A11, 9));
  bool all_minimal = true;
  double worst_margin = std::numeric_limits<double>::infinity();
  double strict_margin = std::numeric_limits<double>::infinity();
  for (int t = 0; t < 20; ++t) {
    int p = 2 + static_cast<int>(s.next_below(5));
    int d = 2 + static_cast<int>(s.next_below(5));
    Mat w(p, d);
    for (int r = 0; r < p; ++r)
      for (int c = 0; c < d; ++c) w(r, c) = 0.8 * s.next_gaussian();
    MinNormReport mr = min_norm_refactor_check(w, 100, s.next_u64());
    all_minimal = all_minimal && mr.balanced_is_minimal;
    worst_margin = std::min(worst_margin, mr.min_margin);
    for (std::size_t k = 0; k < mr.alternative_norms.size(); ++k)
      if (mr.a_defects[k] > 1e-6)
        strict_margin =
            std::min(strict_margin, mr.alternative_norms[k] - mr.balanced_norm);
  }
  rep.add("balanced factorization never beaten (20 x 100 trials)", all_minimal, worst_margin,
          0.0, "min(alternative - balanced)");
  rep.add("strictly smaller whenever A is non-orthogonal", strict_margin > 0.0, strict_margin,
          0.0);
  return rep;
}

// ---- criterion 4: corollary scenario generators ---------------------------

inline SuiteReport criterion_corollary_generators() {
  SuiteReport rep{"corollary_generators", {}};
  for (ScenarioKind kind : {ScenarioKind::bad_augmentation, ScenarioKind::weak_feature,
                            ScenarioKind::strong_feature}) {
    int neg = 0;
    for (int t = 0; t < 50; ++t) {
      Scenario sc = corollary_scenario(kind, 9000 + t);
      if (sc.delta_value < 0.0) ++neg;
    }
    std::string name = kind == ScenarioKind::bad_augmentation ? "bad_augmentation"
                       : kind == ScenarioKind::weak_feature   ? "weak_feature"
                                                              : "strong_feature";
    rep.add(name + ": Delta < 0 in 50/50 instances", neg == 50, neg, 50);
  }
  return rep;
}

// ---- criterion 5: non-linear CL ------------------------------------------

struct DiagRunChecks {
  bool converged = false;
  double f2_e2 = 0.0, f1_e2 = 0.0, sqrt_b0 = 0.0;
  bool monotone = true;
};

inline DiagRunChecks run_disrupted_diag(const LossBinding& binding, double b0,
                                        std::uint64_t seed, bool same_sign,
                                        double weight_decay = 0.0) {
  DiagonalInit init;
  init.b0 = b0;
  init.require_conditions = true;
  init.conditioned_coordinate = 1;
  init.same_sign = same_sign;
  int d = binding.data_dim();
  Model m = make_diagonal(init_diagonal(d, init, seed));

  TrainConfig cfg;
  cfg.step_size = 0.01;
  cfg.max_steps = 60'000'000;
  cfg.grad_tol = 1e-9;
  cfg.record_every = 2000;
  cfg.weight_decay = weight_decay;
  Trajectory traj = train(m, binding, cfg);

  DiagRunChecks out;
  out.converged = traj.stop_reason == StopReason::converged;
  out.sqrt_b0 = std::sqrt(b0);
  FeatureWeightProfile prof = feature_weight_profile(traj.final_model);
  out.f1_e2 = prof.weights(0, 1);
  out.f2_e2 = prof.weights(1, 1);
  double pw1 = -1, pw2 = -1, pb1 = 1e300, pb2 = 1e300;
  bool first = true;
  for (const Snapshot& snap : traj.snapshots) {
    const DiagonalNet& net = snap.model.diagonal();
    double w1 = std::fabs(net.w1(1)), w2 = std::fabs(net.w2(1));
    double bb1 = net.b1(1), bb2 = net.b2(1);
    if (!first) {
      if (w1 > pw1 + 1e-12 || w2 > pw2 + 1e-12 || bb1 < pb1 - 1e-12 || bb2 < pb2 - 1e-12)
        out.monotone = false;
    }
    pw1 = w1;
    pw2 = w2;
    pb1 = bb1;
    pb2 = bb2;
    first = false;
  }
  return out;
}

inline SuiteReport criterion_nonlinear_cl(int jobs = 2) {
  SuiteReport rep{"nonlinear_cl", {}};
  const double b0s[3] = {0.1, 0.25, 0.5};
  const int n_runs = 50;
  std::vector<DiagRunChecks> res(n_runs);
  LossBinding binding = cl_loss(disrupted_pair_spec());
  parallel_for(jobs, n_runs, [&](int t) {
    res[t] = run_disrupted_diag(binding, b0s[t % 3], rng::derive(0x38, t), false);
  });
  int conv = 0, f2_ok = 0, f1_ok = 0, mono = 0;
  double worst_f2 = 0.0, worst_f1_slack = 1e300;
  for (const DiagRunChecks& r : res) {
    conv += r.converged;
    f2_ok += (r.f2_e2 <= 1e-3);
    f1_ok += (r.f1_e2 >= r.sqrt_b0 - 1e-6);
    mono += r.monotone;
    worst_f2 = std::max(worst_f2, r.f2_e2);
    worst_f1_slack = std::min(worst_f1_slack, r.f1_e2 - r.sqrt_b0);
  }
  rep.add("all runs converged", conv == n_runs, conv, n_runs);
  rep.add("||f2(e2)|| <= 1e-3 in all runs", f2_ok == n_runs, worst_f2, 1e-3);
  rep.add("||f1(e2)|| >= sqrt(b0) - 1e-6 in all runs", f1_ok == n_runs, worst_f1_slack, -1e-6);
  rep.add("weight/bias monotonicity at every recorded step", mono == n_runs, mono, n_runs);
  return rep;
}

// ---- criterion 6: supervised collapse avoidance ----------------------------

inline SuiteReport criterion_collapse(int jobs = 2) {
  SuiteReport rep{"collapse", {}};
  const double b0s[3] = {0.1, 0.25, 0.5};
  const int n_runs = 50;
  SubclassSpec spec = small_subclass_spec();
  for (LossKind kind : {LossKind::scl, LossKind::mse}) {
    LossBinding binding = kind == LossKind::scl ? scl_loss(spec) : sl_mse_loss(spec);
    std::vector<DiagRunChecks> res(n_runs);
    std::vector<CollapseReport> collapse(n_runs);
    parallel_for(jobs, n_runs, [&](int t) {
      double b0 = b0s[t % 3];
      std::uint64_t seed = rng::derive(kind == LossKind::scl ? 0x41 : 0x42, t);
      DiagonalInit init;
      init.b0 = b0;
      init.require_conditions = true;
      init.conditioned_coordinate = 1;
      init.same_sign = true;  // the supervised theorems need w12 w22 > 0
      Model m = make_diagonal(init_diagonal(spec.d, init, seed));
      TrainConfig cfg;
      cfg.step_size = 0.01;
      cfg.max_steps = 60'000'000;
      cfg.grad_tol = 1e-9;
      cfg.record_every = 2000;
      Trajectory traj = train(m, binding, cfg);
      DiagRunChecks r;
      r.converged = traj.stop_reason == StopReason::converged;
      r.sqrt_b0 = std::sqrt(b0);
      FeatureWeightProfile prof = feature_weight_profile(traj.final_model);
      r.f1_e2 = prof.weights(0, 1);
      r.f2_e2 = prof.weights(1, 1);
      double pw1 = -1, pw2 = -1, pb1 = 1e300, pb2 = 1e300;
      bool first = true;
      for (const Snapshot& snap : traj.snapshots) {
        const DiagonalNet& net = snap.model.diagonal();
        double w1 = std::fabs(net.w1(1)), w2 = std::fabs(net.w2(1));
        if (!first && (w1 > pw1 + 1e-12 || w2 > pw2 + 1e-12 ||
                       net.b1(1) < pb1 - 1e-12 || net.b2(1) < pb2 - 1e-12))
          r.monotone = false;
        pw1 = w1;
        pw2 = w2;
        pb1 = net.b1(1);
        pb2 = net.b2(1);
        first = false;
      }
      res[t] = r;
      collapse[t] = collapse_metrics(traj.final_model, spec, 512, rng::derive(seed, 0xF));
    });
    std::string tag = kind == LossKind::scl ? "scl" : "sl_mse";
    int conv = 0, f2_ok = 0, f1_ok = 0, mono = 0, sub2 = 0, sub1 = 0;
    double worst_f2 = 0, worst_sub2 = 0, worst_sub1 = 1.0;
    for (int t = 0; t < n_runs; ++t) {
      conv += res[t].converged;
      f2_ok += (res[t].f2_e2 <= 1e-3);
      f1_ok += (res[t].f1_e2 >= res[t].sqrt_b0 - 1e-6);
      mono += res[t].monotone;
      sub2 += (collapse[t].subclass_accuracy[1] <= 0.55);
      sub1 += (collapse[t].subclass_accuracy[0] >= 0.95);
      worst_f2 = std::max(worst_f2, res[t].f2_e2);
      worst_sub2 = std::max(worst_sub2, collapse[t].subclass_accuracy[1]);
      worst_sub1 = std::min(worst_sub1, collapse[t].subclass_accuracy[0]);
    }
    rep.add(tag + ": all runs converged", conv == n_runs, conv, n_runs);
    rep.add(tag + ": ||f2(e2)|| <= 1e-3", f2_ok == n_runs, worst_f2, 1e-3);
    rep.add(tag + ": ||f1(e2)|| >= sqrt(b0) - 1e-6", f1_ok == n_runs, f1_ok, n_runs);
    rep.add(tag + ": monotone weights/biases", mono == n_runs, mono, n_runs);
    rep.add(tag + ": layer-2 subclass probe accuracy <= 0.55", sub2 == n_runs, worst_sub2,
            0.55);
    rep.add(tag + ": layer-1 subclass probe accuracy >= 0.95", sub1 == n_runs, worst_sub1,
            0.95);
  }
  return rep;
}

// ---- criterion 9: depth curve ---------------------------------------------

inline SuiteReport criterion_depth_curve() {
  SuiteReport rep{"depth", {}};
  const int L = 12;
  DownstreamSpec ds;
  ds.phi_hat.resize(10);
  for (int i = 0; i < 9; ++i) ds.phi_hat(i) = 1.0;
  ds.phi_hat(9) = 0.1;
  ds.j_star = 8;  // feature 9

  const double sweep[5] = {0.4, 0.45, 0.5, 0.55, 0.6};
  std::vector<int> argmins;
  for (double cj : sweep) {
    Vec c(10);
    for (int i = 0; i < 8; ++i) c(i) = 0.4;
    c(8) = cj;
    c(9) = 0.6;
    DepthCurve curve = depth_curve(c, ds, L);
    argmins.push_back(curve.optimal_layer);
  }
  for (int k = 1; k <= 3; ++k) {
    bool interior = argmins[k] > 1 && argmins[k] < L;
    rep.add("interior argmin at c_jstar = " + fmt_g(sweep[k]), interior, argmins[k], 0,
            "expected 1 < argmin < 12");
  }
  rep.add("argmin = L at c_jstar = 0.6", argmins[4] == L, argmins[4], L);
  bool monotone = true;
  for (int k = 0; k + 1 < 5; ++k)
    if (argmins[k] > argmins[k + 1]) monotone = false;  // sweep is increasing in c
  rep.add("argmin layer non-increasing as c_jstar decreases", monotone, monotone ? 1 : 0, 1);
  return rep;
}

// ---- criterion 10: weight decay --------------------------------------------

inline SuiteReport criterion_weight_decay() {
  SuiteReport rep{"weight_decay", {}};
  LossBinding binding = cl_loss(disrupted_pair_spec());
  const double lambdas[4] = {0.0, 1e-4, 1e-2, 1.0};
  double h2[4];
  for (int k = 0; k < 4; ++k) {
    DiagonalInit init;
    init.b0 = 0.25;
    init.require_conditions = true;
    init.conditioned_coordinate = 1;
    Model m = make_diagonal(init_diagonal(2, init, rng::derive(0x10dec, 7)));
    TrainConfig cfg;
    cfg.step_size = 1e-3;
    cfg.max_steps = 100000;  // fixed horizon T = 100
    cfg.grad_tol = 0.0;
    cfg.weight_decay = lambdas[k];
    cfg.record_every = 10000;
    Trajectory traj = train(m, binding, cfg);
    h2[k] = feature_weight_profile(traj.final_model).weights(0, 1);
  }
  bool nonincreasing = h2[0] >= h2[1] - 1e-12 && h2[1] >= h2[2] - 1e-12 && h2[2] >= h2[3] - 1e-12;
  rep.add("||f1(e2)|| non-increasing in lambda", nonincreasing, nonincreasing ? 1 : 0, 1);
  rep.add("||f1(e2)|| <= 1e-2 at lambda = 1", h2[3] <= 1e-2, h2[3], 1e-2);
  rep.add("lambda = 1e-4 retains >= 90% of the lambda = 0 weight", h2[1] >= 0.9 * h2[0],
          h2[1] / h2[0], 0.9);
  return rep;
}

// ---- criterion 11: reweighting head ----------------------------------------

inline SuiteReport criterion_reweight_head() {
  SuiteReport rep{"reweight_head", {}};
  PretrainSpec spec = graded_alpha_spec();
  spec.p = 4;  // drop the destroyed feature from the selected set
  TheoryPrediction pred = beta_gamma(spec);

  auto train_encoder = [&](bool with_head) {
    Model m = make_linear(balanced_init_linear({5, 4}, 1e-3, 0xE11).layers);
    if (with_head) m = compose_with_head(std::move(m), ReweightHead{1.05, 4});
    TrainConfig cfg;
    cfg.step_size = 2e-3;
    cfg.max_steps = 8'000'000;
    cfg.grad_tol = 1e-8;
    cfg.record_every = 1000000;
    return train(m, cl_loss(spec), cfg);
  };
  Trajectory none = train_encoder(false);
  Trajectory rw = train_encoder(true);

  // encoder weights are layer-1 norms in both cases
  Vec w_none = feature_weight_profile(none.final_model).weights.row(0);
  Vec w_rw = feature_weight_profile(rw.final_model).weights.row(0);
  auto flatness = [&](const Vec& w) {
    double mx = 0, mn = 1e300;
    for (int i : pred.selected) {
      mx = std::max(mx, w(i));
      mn = std::min(mn, w(i));
    }
    return mx / mn;
  };
  double f_none = flatness(w_none), f_rw = flatness(w_rw);
  rep.add("encoder flatness under the head strictly closer to 1", f_rw < f_none, f_rw,
          f_none, "max/min over selected features");

  // downstream task in which augmentation hits the relevant feature hardest
  // among the learned ones (corollary scenario 1 with matched dimensions)
  DownstreamSpec ds;
  ds.phi_hat = Vec::Ones(5);
  ds.j_star = 3;  // largest alpha among the selected features
  double delta_v = delta(spec, ds);
  double r_none = sample_complexity_indicator(w_none, ds);
  double r_rw = sample_complexity_indicator(w_rw, ds);
  rep.add("scenario has Delta < 0", delta_v < 0.0, delta_v, 0.0);
  rep.add("pre-head indicator <= no-head indicator", r_rw <= r_none, r_rw, r_none);
  rep.add("both encoders converged",
          none.stop_reason == StopReason::converged && rw.stop_reason == StopReason::converged,
          1, 1);
  return rep;
}

// ---- criterion 12: gradient oracle -----------------------------------------

inline SuiteReport criterion_gradient_oracle() {
  SuiteReport rep{"gradients", {}};
  rng::Stream s(rng::derive(0x97AD, 3));
  double worst = 0.0;
  int checked = 0;
  std::string worst_case;

  auto check_case = [&](const Model& m, const LossBinding& b, const GradOptions& opt,
                        const std::string& label) {
    ModelGrad g = gradient(m, b, opt);
    Vec ga = flatten_grad(g);
    Vec gf = fd_gradient(m, [&](const Model& mm) {
      if (opt.mode == GradMode::population) {
        if (b.kind == LossKind::cl && !mm.is_linear())
          return coordinate_losses_diagonal(mm, b).total();
        return population_loss(mm, b);
      }
      double loss = 0.0;
      gradient(mm, b, opt, &loss);
      return loss;
    });
    double err = grad_rel_error(ga, gf);
    if (err > worst) {
      worst = err;
      worst_case = label;
    }
    ++checked;
  };

  auto random_linear = [&](int d, int p, int layers, bool head) {
    std::vector<Mat> ws;
    std::vector<int> dims{d};
    for (int l = 0; l < layers; ++l) dims.push_back(p);
    for (int l = 0; l < layers; ++l) {
      Mat w(dims[l + 1], dims[l]);
      for (int r = 0; r < w.rows(); ++r)
        for (int c = 0; c < w.cols(); ++c) w(r, c) = s.next_gaussian() * 0.6;
      ws.push_back(std::move(w));
    }
    Model m = make_linear(std::move(ws));
    if (head) m = compose_with_head(std::move(m), ReweightHead{1.3, p});
    return m;
  };
  auto random_diag = [&](int d, bool head, const Vec& probes) {
    while (true) {
      DiagonalNet net;
      net.w1.resize(d);
      net.w2.resize(d);
      net.b1.resize(d);
      net.b2.resize(d);
      for (int i = 0; i < d; ++i) {
        net.w1(i) = s.next_sign() * s.next_uniform(0.3, 2.0);
        net.w2(i) = s.next_sign() * s.next_uniform(0.3, 2.0);
        // negative biases exercise the doubly-active branch of the activation
        net.b1(i) = s.next_uniform(-0.3, 0.6);
        net.b2(i) = s.next_uniform(-0.3, 0.6);
      }
      if (diag_min_kink_margin(net, probes) < 1e-3) continue;  // stay off the kinks
      Model m = make_diagonal(std::move(net));
      if (head) m = compose_with_head(std::move(m), ReweightHead{1.3, d});
      return m;
    }
  };
  auto random_pretrain = [&](int d, double sigma_hi) {
    PretrainSpec spec;
    spec.d = d;
    spec.p = d;
    spec.phi.resize(d);
    spec.alpha.resize(d);
    for (int i = 0; i < d; ++i) {
      spec.phi(i) = s.next_uniform(0.5, 1.5);
      spec.alpha(i) = s.next_uniform(0.0, 1.0);
    }
    spec.sigma = sigma_hi > 0.0 ? s.next_uniform(0.0, sigma_hi) : 0.0;
    if (s.next_double() < 0.3) spec.convention = AugmentationConvention::flip;
    return spec;
  };
  auto random_subclass = [&](int d) {
    SubclassSpec spec;
    spec.d = d;
    spec.residual_magnitudes.resize(d - 2);
    for (int i = 0; i + 2 < d; ++i) spec.residual_magnitudes(i) = s.next_uniform(0.05, 0.6);
    return spec;
  };

  // population mode, linear: cl / scl / mse across depths and heads
  for (int t = 0; t < 40; ++t) {
    int d = 2 + static_cast<int>(s.next_below(4));
    int p = 2 + static_cast<int>(s.next_below(4));
    int layers = 1 + static_cast<int>(s.next_below(3));
    bool head = s.next_double() < 0.4;
    Model m = random_linear(d, p, layers, head);
    int kind = t % 3;
    if (kind == 0)
      check_case(m, cl_loss(random_pretrain(d, 0.4)), {}, "linear-cl-pop");
    else if (kind == 1 && d >= 2)
      check_case(m, scl_loss(random_subclass(d)), {}, "linear-scl-pop");
    else
      check_case(m, sl_mse_loss(random_subclass(d)), {}, "linear-mse-pop");
  }
  // population mode, diagonal nets
  for (int t = 0; t < 30; ++t) {
    int d = 2 + static_cast<int>(s.next_below(4));
    bool head = s.next_double() < 0.4;
    int kind = t % 3;
    if (kind == 0) {
      PretrainSpec spec = random_pretrain(d, 0.0);
      Model m = random_diag(d, head, spec.phi);
      check_case(m, cl_loss(spec), {}, "diag-cl-pop");
    } else if (kind == 1) {
      SubclassSpec spec = random_subclass(d);
      Model m = random_diag(d, head, spec.coordinate_magnitudes());
      check_case(m, scl_loss(spec), {}, "diag-scl-pop");
    } else {
      SubclassSpec spec = random_subclass(d);
      Model m = random_diag(d, head, spec.coordinate_magnitudes());
      check_case(m, sl_mse_loss(spec), {}, "diag-mse-pop");
    }
  }
  // empirical mode across all loss kinds and both families
  for (int t = 0; t < 30; ++t) {
    int d = 2 + static_cast<int>(s.next_below(3));
    GradOptions opt{GradMode::empirical, 24, s.next_u64()};
    int kind = t % 3;
    bool lin = t % 2 == 0;
    if (kind == 0) {
      PretrainSpec spec = random_pretrain(d, lin ? 0.4 : 0.0);
      // diagonal empirical case: keep sampled augmentations off the kinks
      if (lin) {
        check_case(random_linear(d, d, 2, false), cl_loss(spec), opt, "linear-cl-emp");
      } else {
        spec.sigma = 0.0;
        Model m = random_diag(d, false, spec.phi);
        check_case(m, cl_loss(spec), opt, "diag-cl-emp");
      }
    } else if (kind == 1) {
      SubclassSpec spec = random_subclass(d);
      Model m = lin ? random_linear(d, d, 2, false)
                    : random_diag(d, false, spec.coordinate_magnitudes());
      check_case(m, scl_loss(spec), opt, "scl-emp");
    } else {
      SubclassSpec spec = random_subclass(d);
      Model m = lin ? random_linear(d, d, 2, false)
                    : random_diag(d, false, spec.coordinate_magnitudes());
      check_case(m, sl_mse_loss(spec), opt, "mse-emp");
    }
  }
  rep.add("max relative error vs central differences over " + std::to_string(checked) +
              " random points",
          worst <= 1e-5, worst, 1e-5, worst_case);
  return rep;
}

}  // namespace projhead::verify
