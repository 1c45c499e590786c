#pragma once
#include <vector>

#include "projhead/losses.hpp"

// Brute-force reference evaluators: full joint enumeration of the finite
// outcome space, used only to verify the fast paths (coordinate
// decompositions and trace closed forms). Exponential in d; keep d small.
namespace projhead::reference {

namespace detail {

// per-coordinate atoms (value, probability) of a distribution
struct Atom {
  double value;
  double prob;
};
using CoordAtoms = std::vector<Atom>;

// all joint sign patterns from per-coordinate atoms
inline void enumerate_joint(const std::vector<CoordAtoms>& coords,
                            const std::function<void(const Vec&, double)>& fn) {
  int d = static_cast<int>(coords.size());
  Vec x(d);
  std::function<void(int, double)> rec = [&](int i, double p) {
    if (i == d) {
      fn(x, p);
      return;
    }
    for (const Atom& a : coords[i]) {
      x(i) = a.value;
      rec(i + 1, p * a.prob);
    }
  };
  rec(0, 1.0);
}

// view distribution given the input sign, per coordinate
inline CoordAtoms view_given(double xi, double phi, double alpha,
                             AugmentationConvention conv) {
  double p_keep_sign;
  if (conv == AugmentationConvention::randomize)
    p_keep_sign = xi > 0 ? 1.0 - 0.5 * alpha : 0.5 * alpha;  // P(view = +phi)
  else
    p_keep_sign = xi > 0 ? 1.0 - alpha : alpha;
  return {{phi, p_keep_sign}, {-phi, 1.0 - p_keep_sign}};
}

inline Vec rep(const Model& m, const Vec& x) { return forward(m, x, m.layer_count()); }

}  // namespace detail

/// Spectral CL loss by joint enumeration over (input, view, view) and over
/// independent augmented pairs. Requires sigma = 0.
inline double cl_loss_enumerated(const Model& m, const PretrainSpec& spec) {
  spec.validate();
  if (spec.sigma != 0.0) throw SpecError("cl_loss_enumerated: sigma must be 0");
  int d = spec.d;

  std::vector<detail::CoordAtoms> input(d);
  for (int i = 0; i < d; ++i) input[i] = {{spec.phi(i), 0.5}, {-spec.phi(i), 0.5}};

  double align = 0.0;
  detail::enumerate_joint(input, [&](const Vec& x, double px) {
    std::vector<detail::CoordAtoms> view(d);
    for (int i = 0; i < d; ++i)
      view[i] = detail::view_given(x(i), spec.phi(i), spec.alpha(i), spec.convention);
    // E[f(v1)|x]^T E[f(v2)|x]: views are conditionally independent, but f is
    // not linear, so enumerate both views fully.
    std::vector<std::pair<Vec, double>> reps;
    detail::enumerate_joint(view, [&](const Vec& v, double pv) {
      reps.emplace_back(detail::rep(m, v), pv);
    });
    for (const auto& [r1, p1] : reps)
      for (const auto& [r2, p2] : reps) align += px * p1 * p2 * r1.dot(r2);
  });

  // marginal of one augmented view
  std::vector<std::pair<Vec, double>> marg;
  {
    std::vector<detail::CoordAtoms> view(d);
    for (int i = 0; i < d; ++i) {
      detail::CoordAtoms pos =
          detail::view_given(spec.phi(i), spec.phi(i), spec.alpha(i), spec.convention);
      detail::CoordAtoms neg =
          detail::view_given(-spec.phi(i), spec.phi(i), spec.alpha(i), spec.convention);
      view[i] = {{spec.phi(i), 0.5 * (pos[0].prob + neg[0].prob)},
                 {-spec.phi(i), 0.5 * (pos[1].prob + neg[1].prob)}};
    }
    detail::enumerate_joint(view, [&](const Vec& v, double pv) {
      marg.emplace_back(detail::rep(m, v), pv);
    });
  }
  double unif = 0.0;
  for (const auto& [r1, p1] : marg)
    for (const auto& [r2, p2] : marg) {
      double ip = r1.dot(r2);
      unif += p1 * p2 * ip * ip;
    }
  return -2.0 * align + unif;
}

/// Supervised CL loss by enumeration over same-class positive pairs and
/// independent negative pairs.
inline double scl_loss_enumerated(const Model& m, const SubclassSpec& spec) {
  spec.validate();
  int d = spec.d;
  Vec mags = spec.coordinate_magnitudes();
  std::vector<detail::CoordAtoms> coords(d);
  for (int i = 0; i < d; ++i) coords[i] = {{mags(i), 0.5}, {-mags(i), 0.5}};

  std::vector<std::pair<Vec, double>> all;
  detail::enumerate_joint(coords, [&](const Vec& x, double p) {
    all.emplace_back(detail::rep(m, x), p);
  });

  // positives share the class coordinate only
  double align = 0.0;
  std::vector<detail::CoordAtoms> rest(coords.begin() + 1, coords.end());
  for (double y : {1.0, -1.0}) {
    std::vector<std::pair<Vec, double>> cls;
    Vec x(d);
    x(0) = y;
    detail::enumerate_joint(rest, [&](const Vec& r, double p) {
      for (int i = 1; i < d; ++i) x(i) = r(i - 1);
      cls.emplace_back(detail::rep(m, x), p);
    });
    for (const auto& [r1, p1] : cls)
      for (const auto& [r2, p2] : cls) align += 0.5 * p1 * p2 * r1.dot(r2);
  }

  double unif = 0.0;
  for (const auto& [r1, p1] : all)
    for (const auto& [r2, p2] : all) {
      double ip = r1.dot(r2);
      unif += p1 * p2 * ip * ip;
    }
  return -2.0 * align + unif;
}

/// MSE loss by enumeration; includes the data-dependent constant.
inline double mse_loss_enumerated(const Model& m, const SubclassSpec& spec) {
  spec.validate();
  int d = spec.d;
  Vec mags = spec.coordinate_magnitudes();
  std::vector<detail::CoordAtoms> coords(d);
  for (int i = 0; i < d; ++i) coords[i] = {{mags(i), 0.5}, {-mags(i), 0.5}};
  double loss = 0.0;
  detail::enumerate_joint(coords, [&](const Vec& x, double p) {
    double pred = detail::rep(m, x).sum();
    double y = x(0) > 0 ? 1.0 : -1.0;
    loss += p * (pred - y) * (pred - y);
  });
  return loss;
}

}  // namespace projhead::reference
