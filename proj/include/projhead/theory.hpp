#pragma once
#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "projhead/training.hpp"

namespace projhead {

// Closed-form predictions for models trained to the balanced optimum:
//   beta_i  = retention_i^2 phi_i^2 / (phi_i^2 + sigma^2)   (selection score)
//   gamma_i = sqrt(|retention_i| phi_i / (phi_i^2 + sigma^2))  (per-layer weight)
// The model keeps the top min(d, p) features by beta and weights feature i
// by gamma_i^l at layer l; everything else gets weight zero.
struct TheoryPrediction {
  Vec beta;
  Vec gamma;
  std::vector<int> selected;   // ordered by beta descending, ties -> lower index
  Mat predicted_profile;       // layers x d, gamma_i^l on the selected set
  bool selection_ambiguous = false;
  double selection_gap = std::numeric_limits<double>::infinity();

  bool is_selected(int i) const {
    return std::find(selected.begin(), selected.end(), i) != selected.end();
  }
};

inline TheoryPrediction beta_gamma(const PretrainSpec& spec, int layers = 2) {
  spec.validate();
  if (layers < 1) throw SpecError("beta_gamma: layers must be >= 1");
  TheoryPrediction out;
  Vec ret = spec.retention();
  out.beta.resize(spec.d);
  out.gamma.resize(spec.d);
  for (int i = 0; i < spec.d; ++i) {
    double m = spec.phi(i) * spec.phi(i) + spec.sigma * spec.sigma;
    out.beta(i) = ret(i) * ret(i) * spec.phi(i) * spec.phi(i) / m;
    out.gamma(i) = std::sqrt(std::fabs(ret(i)) * spec.phi(i) / m);
  }

  std::vector<int> order(spec.d);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (out.beta(a) != out.beta(b)) return out.beta(a) > out.beta(b);
    return a < b;
  });
  int k = std::min(spec.d, spec.p);
  out.selected.assign(order.begin(), order.begin() + k);
  if (k < spec.d) {
    out.selection_gap = out.beta(order[k - 1]) - out.beta(order[k]);
    out.selection_ambiguous = out.selection_gap < 1e-9;
  }

  out.predicted_profile = Mat::Zero(layers, spec.d);
  for (int i : out.selected)
    for (int l = 1; l <= layers; ++l)
      out.predicted_profile(l - 1, i) = std::pow(out.gamma(i), l);
  return out;
}

/// Full-model feature weights c_j = gamma_j^2 on the selected set, else 0;
/// the natural input to depth_curve.
inline Vec depth_curve_weights(const PretrainSpec& spec) {
  TheoryPrediction t = beta_gamma(spec);
  Vec c = Vec::Zero(spec.d);
  for (int i : t.selected) c(i) = t.gamma(i) * t.gamma(i);
  return c;
}

/// Discriminant whose sign decides pre- vs post-projection sample
/// complexity: Delta < 0 means the pre-projection layer is better.
inline double delta(const PretrainSpec& spec, const DownstreamSpec& ds) {
  ds.validate();
  if (ds.d() != spec.d) throw SpecError("delta: downstream dimension mismatch");
  TheoryPrediction t = beta_gamma(spec);
  if (!t.is_selected(ds.j_star) || t.gamma(ds.j_star) <= 0.0)
    throw SpecError("delta: downstream-relevant feature is not learned");
  double gj2 = t.gamma(ds.j_star) * t.gamma(ds.j_star);
  double sum = 0.0;
  for (int i : t.selected) {
    if (i == ds.j_star) continue;
    double x = t.gamma(i) * t.gamma(i) / gj2;
    sum += ds.phi_hat(i) * ds.phi_hat(i) * (x - x * x);
  }
  return sum;
}

/// Sample-complexity indicator r = (rho / margin)^2 of one profile row:
/// margin = w_{j*} phi_hat_{j*}, rho^2 = sum_j w_j^2 phi_hat_j^2.
inline double sample_complexity_indicator(const Vec& profile_row, const DownstreamSpec& ds) {
  ds.validate();
  if (profile_row.size() != ds.d())
    throw SpecError("sample_complexity_indicator: dimension mismatch");
  double wj = profile_row(ds.j_star);
  if (!(wj > 0.0))
    throw SpecError("sample_complexity_indicator: zero weight at the relevant feature");
  double num = (profile_row.array().square() * ds.phi_hat.array().square()).sum();
  double den = wj * wj * ds.phi_hat(ds.j_star) * ds.phi_hat(ds.j_star);
  return num / den;
}

// ---- Corollary scenario generators -------------------------------------

enum class ScenarioKind { bad_augmentation, weak_feature, strong_feature };

struct Scenario {
  PretrainSpec pretrain;
  DownstreamSpec downstream;
  double delta_value = 0.0;
};

namespace detail {

// distinct values with pairwise gaps, for unambiguous selection
inline Vec distinct_uniform(rng::Stream& s, int n, double lo, double hi, double min_gap) {
  Vec v(n);
  for (int tries = 0; tries < 200; ++tries) {
    for (int i = 0; i < n; ++i) v(i) = s.next_uniform(lo, hi);
    bool ok = true;
    for (int i = 0; i < n && ok; ++i)
      for (int j = i + 1; j < n; ++j)
        if (std::fabs(v(i) - v(j)) < min_gap) { ok = false; break; }
    if (ok) return v;
  }
  throw SpecError("distinct_uniform: could not separate draws");
}

inline int rank_index(const Vec& v, int rank_from_smallest) {
  // index holding the k-th smallest value (1-based rank)
  std::vector<int> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) { return v(a) < v(b); });
  return order[rank_from_smallest - 1];
}

}  // namespace detail

/// Random instances of the three interpretable cases in which the
/// pre-projection representations provably win (Delta < 0). The generator
/// verifies Delta < 0 on every output and retries on failure.
inline Scenario corollary_scenario(ScenarioKind kind, std::uint64_t seed,
                                   int max_retries = 1000) {
  rng::Stream s(rng::derive(seed, 0xC0 + static_cast<std::uint64_t>(kind)));
  for (int attempt = 0; attempt < max_retries; ++attempt) {
    Scenario sc;
    PretrainSpec& ps = sc.pretrain;
    int d = 3 + static_cast<int>(s.next_below(6));  // 3..8
    int p = 2 + static_cast<int>(s.next_below(static_cast<std::uint64_t>(d - 1)));  // 2..d
    ps.d = d;
    ps.p = p;
    if (kind == ScenarioKind::bad_augmentation) {
      // augmentation hits the relevant feature hardest among the learned ones
      ps.phi = Vec::Ones(d);
      ps.alpha = detail::distinct_uniform(s, d, 0.0, 0.88, 0.01);
      ps.sigma = s.next_uniform(0.0, 0.5);
      sc.downstream.phi_hat = Vec::Ones(d);
      sc.downstream.j_star = detail::rank_index(ps.alpha, p);  // p-th smallest alpha
    } else if (kind == ScenarioKind::weak_feature) {
      ps.sigma = s.next_uniform(0.5, 2.0);
      double a = s.next_uniform(0.0, 0.8);
      ps.alpha = Vec::Constant(d, a);
      Vec u = detail::distinct_uniform(s, d, 0.15, 0.95, 0.01);
      ps.phi = ps.sigma * u;
      sc.downstream.phi_hat.resize(d);
      for (int i = 0; i < d; ++i) sc.downstream.phi_hat(i) = s.next_uniform(0.5, 2.0);
      sc.downstream.j_star = detail::rank_index(ps.phi, d - p + 1);  // p-th largest phi
    } else {
      ps.sigma = s.next_uniform(0.3, 1.5);
      double a = s.next_uniform(0.0, 0.8);
      ps.alpha = Vec::Constant(d, a);
      int j = static_cast<int>(s.next_below(d));
      ps.phi = detail::distinct_uniform(s, d, 0.3, 1.5, 0.01);
      double bound = 0.0;
      for (int i = 0; i < d; ++i) {
        if (i == j) continue;
        bound = std::max(bound, std::max(ps.phi(i), ps.sigma / ps.phi(i)));
      }
      ps.phi(j) = bound * s.next_uniform(1.05, 2.0);
      sc.downstream.phi_hat.resize(d);
      for (int i = 0; i < d; ++i) sc.downstream.phi_hat(i) = s.next_uniform(0.5, 2.0);
      sc.downstream.j_star = j;
    }
    try {
      sc.delta_value = delta(ps, sc.downstream);
    } catch (const SpecError&) {
      continue;
    }
    if (sc.delta_value < 0.0) return sc;
  }
  throw SpecError("corollary_scenario: generation failed within retry budget");
}

// ---- multi-layer depth curve --------------------------------------------

// r_l = sum_j c_j^{2l/L} phi_hat_j^2 / (c_{j*}^{2l/L} phi_hat_{j*}^2) for
// l = 1..L, with c the full-model feature weights.
struct DepthCurve {
  Vec c;
  Vec r;              // length L
  int optimal_layer;  // 1-based argmin, ties -> smallest l
};

inline DepthCurve depth_curve(const Vec& c, const DownstreamSpec& ds, int layers) {
  ds.validate();
  if (layers < 1) throw SpecError("depth_curve: layers must be >= 1");
  if (c.size() != ds.d()) throw SpecError("depth_curve: dimension mismatch");
  if (!(c(ds.j_star) > 0.0))
    throw SpecError("depth_curve: zero full-model weight at the relevant feature");
  DepthCurve out;
  out.c = c;
  out.r.resize(layers);
  for (int l = 1; l <= layers; ++l) {
    double e = 2.0 * l / layers;
    double num = 0.0;
    for (int j = 0; j < c.size(); ++j) {
      if (c(j) <= 0.0) continue;
      num += std::pow(c(j), e) * ds.phi_hat(j) * ds.phi_hat(j);
    }
    double den = std::pow(c(ds.j_star), e) * ds.phi_hat(ds.j_star) * ds.phi_hat(ds.j_star);
    out.r(l - 1) = num / den;
  }
  out.optimal_layer = 1;
  for (int l = 2; l <= layers; ++l)
    if (out.r(l - 1) < out.r(out.optimal_layer - 1)) out.optimal_layer = l;
  return out;
}

// ---- minimum-norm factorization check -----------------------------------

struct MinNormReport {
  double balanced_norm = 0.0;               // ||W1^T W1||_F^2 + ||W2^T W2||_F^2
  std::vector<double> alternative_norms;    // same quantity for (W2 A, A^-1 W1)
  std::vector<double> a_defects;            // ||A^T A - I||_F per trial
  double min_margin = 0.0;                  // min(alternative - balanced)
  bool balanced_is_minimal = false;
};

/// Numerical check that the balanced SVD split of W minimizes
/// ||W1^T W1||_F^2 + ||W2^T W2||_F^2 over refactorizations W = (W2 A)(A^-1 W1).
inline MinNormReport min_norm_refactor_check(const Mat& w, int trials, std::uint64_t seed) {
  int p = static_cast<int>(w.rows());
  Eigen::JacobiSVD<Mat> svd(w, Eigen::ComputeFullU | Eigen::ComputeFullV);
  int k = std::min<int>(p, static_cast<int>(w.cols()));
  Vec sv = svd.singularValues();
  Mat w1 = Mat::Zero(p, w.cols());
  Mat w2 = Mat::Zero(p, p);
  for (int i = 0; i < k; ++i) {
    w1.row(i) = std::sqrt(sv(i)) * svd.matrixV().col(i).transpose();
    w2.col(i) = std::sqrt(sv(i)) * svd.matrixU().col(i);
  }
  auto pair_norm = [](const Mat& a, const Mat& b) {
    return (a.transpose() * a).squaredNorm() + (b.transpose() * b).squaredNorm();
  };
  MinNormReport rep;
  rep.balanced_norm = pair_norm(w1, w2);
  rng::Stream s(rng::derive(seed, 0xAA));
  rep.min_margin = std::numeric_limits<double>::infinity();
  for (int t = 0; t < trials; ++t) {
    Mat a(p, p);
    while (true) {
      for (int r = 0; r < p; ++r)
        for (int c = 0; c < p; ++c) a(r, c) = s.next_gaussian() / std::sqrt(p);
      Eigen::JacobiSVD<Mat> asvd(a);
      if (asvd.singularValues()(p - 1) > 5e-2) break;  // singular A: resample
    }
    double alt = pair_norm(a.inverse() * w1, w2 * a);
    rep.alternative_norms.push_back(alt);
    rep.a_defects.push_back((a.transpose() * a - Mat::Identity(p, p)).norm());
    rep.min_margin = std::min(rep.min_margin, alt - rep.balanced_norm);
  }
  rep.balanced_is_minimal = rep.min_margin >= -1e-9 * std::max(1.0, rep.balanced_norm);
  return rep;
}

}  // namespace projhead
