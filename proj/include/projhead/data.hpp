#pragma once
#include <Eigen/Dense>
#include <stdexcept>
#include <string>
#include <utility>

#include "projhead/rng.hpp"

namespace projhead {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Invalid spec or configuration input.
struct SpecError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// How "randomizing the sign" of a coordinate is realized.
//   randomize: with probability alpha the sign is redrawn uniformly,
//              so E[A(x)_i | x] = (1 - alpha_i) x_i.
//   flip:      with probability alpha the sign is negated,
//              so E[A(x)_i | x] = (1 - 2 alpha_i) x_i.
enum class AugmentationConvention { randomize, flip };

// Pretraining inputs: coordinate i is an independent uniform draw from
// {-phi_i, +phi_i}. Augmentation disrupts coordinate i with probability
// alpha_i and then adds isotropic Gaussian noise of std sigma.
struct PretrainSpec {
  int d = 0;  // input dimension
  int p = 0;  // hidden/output dimension of the models trained on this data
  Vec phi;
  Vec alpha;
  double sigma = 0.0;
  AugmentationConvention convention = AugmentationConvention::randomize;

  void validate() const {
    if (d < 1 || p < 1) throw SpecError("PretrainSpec: d and p must be positive");
    if (phi.size() != d || alpha.size() != d)
      throw SpecError("PretrainSpec: phi/alpha must have length d");
    for (int i = 0; i < d; ++i) {
      if (!(phi(i) > 0.0)) throw SpecError("PretrainSpec: phi must be positive");
      if (alpha(i) < 0.0 || alpha(i) > 1.0)
        throw SpecError("PretrainSpec: alpha must lie in [0, 1]");
    }
    if (sigma < 0.0) throw SpecError("PretrainSpec: sigma must be nonnegative");
  }

  /// Mean sign-retention factor of the augmentation, per coordinate.
  Vec retention() const {
    Vec r(d);
    for (int i = 0; i < d; ++i)
      r(i) = convention == AugmentationConvention::randomize ? 1.0 - alpha(i)
                                                             : 1.0 - 2.0 * alpha(i);
    return r;
  }
};

// Downstream inputs: coordinate i drawn from {-phi_hat_i, +phi_hat_i},
// label = sign of coordinate j_star. j_star is 0-based here; the JSON
// config uses 1-based indices.
struct DownstreamSpec {
  Vec phi_hat;
  int j_star = 0;

  int d() const { return static_cast<int>(phi_hat.size()); }

  void validate() const {
    if (phi_hat.size() < 1) throw SpecError("DownstreamSpec: empty phi_hat");
    for (int i = 0; i < phi_hat.size(); ++i)
      if (!(phi_hat(i) > 0.0)) throw SpecError("DownstreamSpec: phi_hat must be positive");
    if (j_star < 0 || j_star >= phi_hat.size())
      throw SpecError("DownstreamSpec: j_star out of range");
  }
};

// Subclass data: x = [y, y_sub, r_3, ..., r_d] with y, y_sub independent
// uniform signs and residual coordinate k drawn from {-m_k, +m_k}.
struct SubclassSpec {
  int d = 2;
  Vec residual_magnitudes;  // d - 2 entries

  void validate() const {
    if (d < 2) throw SpecError("SubclassSpec: d must be >= 2");
    if (residual_magnitudes.size() != d - 2)
      throw SpecError("SubclassSpec: expected d - 2 residual magnitudes");
    for (int i = 0; i < residual_magnitudes.size(); ++i)
      if (!(residual_magnitudes(i) > 0.0))
        throw SpecError("SubclassSpec: residual magnitudes must be positive");
  }

  /// Per-coordinate magnitudes (1, 1, m_3, ..., m_d).
  Vec coordinate_magnitudes() const {
    Vec m(d);
    m(0) = 1.0;
    m(1) = 1.0;
    for (int i = 2; i < d; ++i) m(i) = residual_magnitudes(i - 2);
    return m;
  }
};

// Diagonals of the two second-moment matrices of the augmentation:
//   M_i       = E[A(x)_i^2]            = phi_i^2 + sigma^2
//   M_tilde_i = E[(E[A(x)_i | x])^2]   = retention_i^2 phi_i^2
struct MomentPair {
  Vec M;
  Vec M_tilde;
};

inline MomentPair moments(const PretrainSpec& spec) {
  spec.validate();
  MomentPair m;
  m.M = spec.phi.array().square() + spec.sigma * spec.sigma;
  m.M_tilde = spec.retention().array().square() * spec.phi.array().square();
  return m;
}

namespace detail {
// Stream tags; each sampler owns a tag so seeds never collide across ops.
inline constexpr std::uint64_t kTagPretrain = 0x01;
inline constexpr std::uint64_t kTagAugment = 0x02;
inline constexpr std::uint64_t kTagDownstream = 0x03;
inline constexpr std::uint64_t kTagSubclass = 0x04;

inline double augment_coordinate(double x, double alpha, double sigma,
                                 AugmentationConvention conv, double phi,
                                 rng::Stream& s) {
  double v = x;
  double u = s.next_double();
  double fresh = s.next_sign();
  if (u < alpha) {
    if (conv == AugmentationConvention::randomize)
      v = fresh * phi;
    else
      v = -x;
  }
  if (sigma > 0.0) v += sigma * s.next_gaussian();
  return v;
}
}  // namespace detail

/// n iid pretraining inputs, one per row. Entry (k, i) depends only on
/// (seed, k, i).
inline Mat sample_pretrain(const PretrainSpec& spec, int n, std::uint64_t seed) {
  spec.validate();
  if (n < 1) throw SpecError("sample_pretrain: n must be >= 1");
  Mat x(n, spec.d);
  for (int k = 0; k < n; ++k)
    for (int i = 0; i < spec.d; ++i) {
      rng::Stream s(rng::derive(seed, detail::kTagPretrain, k, i));
      x(k, i) = s.next_sign() * spec.phi(i);
    }
  return x;
}

inline Vec sample_augmentation(const PretrainSpec& spec, const Vec& x,
                               std::uint64_t seed) {
  spec.validate();
  if (x.size() != spec.d) throw SpecError("sample_augmentation: dimension mismatch");
  Vec v(spec.d);
  for (int i = 0; i < spec.d; ++i) {
    rng::Stream s(rng::derive(seed, detail::kTagAugment, i));
    v(i) = detail::augment_coordinate(x(i), spec.alpha(i), spec.sigma,
                                      spec.convention, spec.phi(i), s);
  }
  return v;
}

/// Two independent augmented views of the same input.
inline std::pair<Vec, Vec> sample_positive_pair(const PretrainSpec& spec, const Vec& x,
                                                std::uint64_t seed) {
  return {sample_augmentation(spec, x, rng::derive(seed, 0x10)),
          sample_augmentation(spec, x, rng::derive(seed, 0x11))};
}

struct DownstreamSample {
  Mat x;   // n x d
  Vec y;   // labels in {-1, +1}
};

inline DownstreamSample sample_downstream(const DownstreamSpec& ds, int n,
                                          std::uint64_t seed) {
  ds.validate();
  if (n < 1) throw SpecError("sample_downstream: n must be >= 1");
  int d = ds.d();
  DownstreamSample out;
  out.x.resize(n, d);
  out.y.resize(n);
  for (int k = 0; k < n; ++k) {
    for (int i = 0; i < d; ++i) {
      rng::Stream s(rng::derive(seed, detail::kTagDownstream, k, i));
      out.x(k, i) = s.next_sign() * ds.phi_hat(i);
    }
    out.y(k) = out.x(k, ds.j_star) > 0.0 ? 1.0 : -1.0;
  }
  return out;
}

struct SubclassSample {
  Mat x;      // n x d
  Vec y;      // class labels
  Vec y_sub;  // subclass labels
};

inline SubclassSample sample_subclass(const SubclassSpec& spec, int n,
                                      std::uint64_t seed) {
  spec.validate();
  if (n < 1) throw SpecError("sample_subclass: n must be >= 1");
  Vec mags = spec.coordinate_magnitudes();
  SubclassSample out;
  out.x.resize(n, spec.d);
  out.y.resize(n);
  out.y_sub.resize(n);
  for (int k = 0; k < n; ++k) {
    for (int i = 0; i < spec.d; ++i) {
      rng::Stream s(rng::derive(seed, detail::kTagSubclass, k, i));
      out.x(k, i) = s.next_sign() * mags(i);
    }
    out.y(k) = out.x(k, 0) > 0.0 ? 1.0 : -1.0;
    out.y_sub(k) = out.x(k, 1) > 0.0 ? 1.0 : -1.0;
  }
  return out;
}

}  // namespace projhead
