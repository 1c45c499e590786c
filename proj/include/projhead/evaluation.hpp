#pragma once
#include <cmath>
#include <optional>

#include "projhead/theory.hpp"

namespace projhead {

/// Row-wise forward pass at the given layer; no augmentation is applied to
/// downstream data.
inline Mat represent(const Model& m, int layer, const Mat& data) {
  Mat out;
  for (int k = 0; k < data.rows(); ++k) {
    Vec r = forward(m, data.row(k).transpose(), layer);
    if (k == 0) out.resize(data.rows(), r.size());
    out.row(k) = r.transpose();
  }
  return out;
}

struct MarginRadius {
  double gamma = 0.0;   // hard-margin along the best direction (zero offset)
  double rho = 0.0;     // max representation norm
  Vec direction;
  bool separable = false;

  double indicator() const { return (rho / gamma) * (rho / gamma); }
};

struct NotSeparable : std::runtime_error {
  double best_gamma;
  explicit NotSeparable(double g)
      : std::runtime_error("margin_radius: data not linearly separable"), best_gamma(g) {}
};

namespace detail {

// Hard-margin SVM through the origin, solved in the dual:
//   min_{lambda >= 0}  1/2 || sum lambda_i y_i x_i ||^2 - sum lambda_i
// by exact coordinate ascent. Small probe sets only.
inline MarginRadius hard_margin_solve(const Mat& x, const Vec& y, long max_sweeps = 200000,
                                      double kkt_tol = 1e-14) {
  int n = static_cast<int>(x.rows());
  int dim = static_cast<int>(x.cols());
  Vec lambda = Vec::Zero(n);
  Vec w = Vec::Zero(dim);
  Vec sq(n);
  for (int i = 0; i < n; ++i) sq(i) = x.row(i).squaredNorm();
  for (long sweep = 0; sweep < max_sweeps; ++sweep) {
    double worst = 0.0;
    for (int i = 0; i < n; ++i) {
      if (sq(i) <= 0.0) continue;
      double margin = y(i) * x.row(i).dot(w);
      double step = (1.0 - margin) / sq(i);
      double nl = std::max(0.0, lambda(i) + step);
      double change = nl - lambda(i);
      if (change != 0.0) {
        w += change * y(i) * x.row(i).transpose();
        lambda(i) = nl;
      }
      // KKT residual: active points need margin 1, inactive at least 1
      double viol = lambda(i) > 0.0 ? std::fabs(1.0 - margin) : std::max(0.0, 1.0 - margin);
      worst = std::max(worst, viol);
    }
    if (worst <= kkt_tol) break;
  }
  MarginRadius out;
  out.rho = 0.0;
  for (int i = 0; i < n; ++i) out.rho = std::max(out.rho, x.row(i).norm());
  double wn = w.norm();
  if (wn <= 0.0) {
    out.gamma = 0.0;
    out.direction = Vec::Zero(dim);
    out.separable = false;
    return out;
  }
  out.direction = w / wn;
  double g = std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i) g = std::min(g, y(i) * x.row(i).dot(out.direction));
  out.gamma = g;
  out.separable = g > 0.0;
  return out;
}

}  // namespace detail

/// Hard margin and radius of labeled representations; throws NotSeparable
/// (carrying the best margin found) on non-separable data.
inline MarginRadius margin_radius(const Mat& reps, const Vec& labels) {
  if (reps.rows() != labels.size() || reps.rows() < 2)
    throw SpecError("margin_radius: need matching reps/labels, n >= 2");
  MarginRadius out = detail::hard_margin_solve(reps, labels);
  if (!out.separable) throw NotSeparable(out.gamma);
  return out;
}

/// Non-throwing variant for callers that expect non-separable inputs.
inline MarginRadius try_margin_radius(const Mat& reps, const Vec& labels) {
  return detail::hard_margin_solve(reps, labels);
}

struct ProbeConfig {
  long steps = 10000;     // full-batch logistic GD budget
  double step_size = 0.1;
};

struct ProbeResult {
  int layer = 0;
  double gamma = 0.0;
  double rho = 0.0;
  double indicator = 0.0;  // (rho / gamma)^2
  double accuracy = 0.0;
};

/// Logistic-loss linear classifier (no offset, zero init) trained by
/// gradient descent for a fixed budget; returns heldout accuracy.
inline double linear_probe(const Mat& train_reps, const Vec& train_labels,
                           const Mat& test_reps, const Vec& test_labels,
                           const ProbeConfig& cfg = {}) {
  int n = static_cast<int>(train_reps.rows());
  if (n < 1 || train_labels.size() != n) throw SpecError("linear_probe: bad train set");
  if (test_reps.rows() < 1 || test_labels.size() != test_reps.rows())
    throw SpecError("linear_probe: empty heldout set");
  bool pos = false, neg = false;
  for (int i = 0; i < n; ++i) (train_labels(i) > 0 ? pos : neg) = true;
  if (!pos || !neg) throw SpecError("linear_probe: need both classes in the train set");

  Vec w = Vec::Zero(train_reps.cols());
  Vec margins(n);
  for (long t = 0; t < cfg.steps; ++t) {
    margins = train_labels.array() * (train_reps * w).array();
    // grad of mean log(1 + exp(-m)) is -mean sigmoid(-m) y x
    Vec coef(n);
    for (int i = 0; i < n; ++i) coef(i) = -train_labels(i) / (1.0 + std::exp(margins(i)));
    w -= (cfg.step_size / n) * (train_reps.transpose() * coef);
  }
  Vec pred = test_reps * w;
  long correct = 0;
  for (int i = 0; i < test_reps.rows(); ++i)
    if ((pred(i) > 0 ? 1.0 : -1.0) == test_labels(i)) ++correct;
  return static_cast<double>(correct) / test_reps.rows();
}

// Collapse diagnostics on subclass data: probe the class label and the
// subclass label at both layers. Index [0] is layer 1 (pre-projection),
// [1] is layer 2.
struct CollapseReport {
  double class_accuracy[2] = {0, 0};
  double subclass_accuracy[2] = {0, 0};
  double class_weight[2] = {0, 0};     // ||f_l(e_1)||
  double subclass_weight[2] = {0, 0};  // ||f_l(e_2)||
  double within_class_subclass_margin[2] = {0, 0};  // min over the two classes
};

/// Probes use an odd-sized train set so the empirical correlation between a
/// strong irrelevant coordinate and the probed label can never be exactly
/// zero; a vanishing-weight subclass coordinate then stays unlearnable
/// within the fixed probe budget.
inline CollapseReport collapse_metrics(const Model& m, const SubclassSpec& spec, int n,
                                       std::uint64_t seed, const ProbeConfig& probe = {}) {
  spec.validate();
  if (n < 8) throw SpecError("collapse_metrics: n too small");
  int n_train = n | 1;
  int n_test = std::max(4096, n);
  SubclassSample tr = sample_subclass(spec, n_train, rng::derive(seed, 0xE0));
  SubclassSample te = sample_subclass(spec, n_test, rng::derive(seed, 0xE1));

  CollapseReport rep;
  FeatureWeightProfile prof = feature_weight_profile(m);
  for (int layer = 1; layer <= 2; ++layer) {
    Mat rtr = represent(m, layer, tr.x);
    Mat rte = represent(m, layer, te.x);
    rep.class_accuracy[layer - 1] = linear_probe(rtr, tr.y, rte, te.y, probe);
    rep.subclass_accuracy[layer - 1] = linear_probe(rtr, tr.y_sub, rte, te.y_sub, probe);
    rep.class_weight[layer - 1] = prof.weights(layer - 1, 0);
    rep.subclass_weight[layer - 1] = prof.weights(layer - 1, 1);

    double margin = std::numeric_limits<double>::infinity();
    for (double cls : {1.0, -1.0}) {
      std::vector<int> idx;
      for (int i = 0; i < n_test; ++i)
        if (te.y(i) == cls) idx.push_back(i);
      if (idx.size() < 2) continue;
      Mat rx(idx.size(), rte.cols());
      Vec ry(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) {
        rx.row(i) = rte.row(idx[i]);
        ry(i) = te.y_sub(idx[i]);
      }
      MarginRadius mr = try_margin_radius(rx, ry);
      margin = std::min(margin, mr.separable ? mr.gamma : 0.0);
    }
    rep.within_class_subclass_margin[layer - 1] = margin;
  }
  return rep;
}

}  // namespace projhead
