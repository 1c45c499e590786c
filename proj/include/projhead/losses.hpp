#pragma once
#include <cmath>
#include <optional>

#include "projhead/models.hpp"

namespace projhead {

enum class LossKind { cl, scl, mse };

// A loss together with the data distribution it is taken over.
// cl binds a PretrainSpec; scl and mse bind a SubclassSpec.
struct LossBinding {
  LossKind kind = LossKind::cl;
  std::optional<PretrainSpec> pretrain;
  std::optional<SubclassSpec> subclass;

  void validate() const {
    if (kind == LossKind::cl) {
      if (!pretrain) throw SpecError("LossBinding: cl requires a PretrainSpec");
      pretrain->validate();
    } else {
      if (!subclass) throw SpecError("LossBinding: scl/mse require a SubclassSpec");
      subclass->validate();
    }
  }
  int data_dim() const { return kind == LossKind::cl ? pretrain->d : subclass->d; }
};

inline LossBinding cl_loss(PretrainSpec s) { return {LossKind::cl, std::move(s), std::nullopt}; }
inline LossBinding scl_loss(SubclassSpec s) { return {LossKind::scl, std::nullopt, std::move(s)}; }
inline LossBinding sl_mse_loss(SubclassSpec s) { return {LossKind::mse, std::nullopt, std::move(s)}; }

// ---- population losses, linear models ---------------------------------
//
// For a linear model with product matrix W the spectral CL loss has the
// exact trace form
//     L(W) = -2 tr(Q M~) + tr(Q M Q M),   Q = W^T W,
// where M, M~ are the diagonal second-moment matrices of the augmentation.
// Alignment: E f(x1+)^T f(x2+) = tr(Q M~); uniformity: E (a1^T Q a2)^2 =
// tr(Q M Q M) for independent zero-mean views whose coordinates are
// independent and symmetric.

inline double cl_population_loss_linear(const Mat& W, const MomentPair& m) {
  if (W.cols() != m.M.size()) throw SpecError("cl_population_loss_linear: shape mismatch");
  Mat Q = W.transpose() * W;
  double align = (Q.diagonal().array() * m.M_tilde.array()).sum();
  Mat QM = Q * m.M.asDiagonal();
  double unif = (QM.array() * QM.transpose().array()).sum();  // tr(QM QM)
  return -2.0 * align + unif;
}

namespace detail {

// The scl/mse population losses on Def-4.1 data reduce to the same trace
// forms with M -> diag of coordinate second moments and the alignment
// moment concentrated on the class coordinate.
inline MomentPair subclass_moments(const SubclassSpec& spec) {
  Vec m2 = spec.coordinate_magnitudes().array().square();
  Vec mt = Vec::Zero(spec.d);
  mt(0) = 1.0;  // positives share the class coordinate exactly
  return {m2, mt};
}

inline Mat model_product(const Model& m) {
  Mat P = m.linear().product();
  if (m.head) P = m.head->scales().asDiagonal() * P;
  return P;
}

}  // namespace detail

inline double scl_population_loss_linear(const Model& m, const SubclassSpec& spec) {
  return cl_population_loss_linear(detail::model_product(m), detail::subclass_moments(spec));
}

inline double mse_population_loss_linear(const Model& m, const SubclassSpec& spec) {
  Mat P = detail::model_product(m);
  Vec v = P.transpose() * Vec::Ones(P.rows());
  Vec m2 = spec.coordinate_magnitudes().array().square();
  return v.dot(m2.asDiagonal() * v) - 2.0 * v(0) + 1.0;
}

// ---- population losses, diagonal nets ---------------------------------
//
// With sigma = 0 every expectation is a finite sum over the input sign and
// the augmentation branch of each view, so per-coordinate losses are exact.

namespace detail {

// Value and parameter-gradient of coordinate i of the full net at input u.
struct CoordEval {
  double z = 0, dw1 = 0, dw2 = 0, db1 = 0, db2 = 0;
};

inline CoordEval eval_coordinate(const DiagonalNet& net, int i, double u, double scale) {
  double a1 = net.w1(i) * u;
  double h1 = symrelu(a1, net.b1(i));
  double a2 = net.w2(i) * h1;
  double s1 = symrelu_da(a1, net.b1(i));
  double s2 = symrelu_da(a2, net.b2(i));
  CoordEval e;
  e.z = scale * symrelu(a2, net.b2(i));
  e.dw2 = scale * s2 * h1;
  e.db2 = scale * symrelu_db(a2, net.b2(i));
  e.dw1 = scale * s2 * net.w2(i) * s1 * u;
  e.db1 = scale * s2 * net.w2(i) * symrelu_db(a1, net.b1(i));
  return e;
}

struct CoordLossGrad {
  double loss = 0, dw1 = 0, dw2 = 0, db1 = 0, db2 = 0;
};

// Spectral CL term of one coordinate, enumerated over input sign s and the
// kept / redrawn / flipped augmentation branches of each view.
inline CoordLossGrad cl_coordinate_term(const DiagonalNet& net, int i, double phi,
                                        double alpha, AugmentationConvention conv,
                                        double scale) {
  CoordEval zp = eval_coordinate(net, i, phi, scale);
  CoordEval zm = eval_coordinate(net, i, -phi, scale);

  // P(view = +phi | s) for s = +1 / -1
  double qp_pos, qp_neg;
  if (conv == AugmentationConvention::randomize) {
    qp_pos = 1.0 - 0.5 * alpha;  // kept, or redrawn to +
    qp_neg = 0.5 * alpha;
  } else {
    qp_pos = 1.0 - alpha;
    qp_neg = alpha;
  }

  // alignment: E_s (E[z(view)|s])^2, views conditionally independent
  double inner_p = qp_pos * zp.z + (1.0 - qp_pos) * zm.z;  // s = +1
  double inner_m = qp_neg * zp.z + (1.0 - qp_neg) * zm.z;  // s = -1
  double align = 0.5 * (inner_p * inner_p + inner_m * inner_m);

  // uniformity: (E z^2)^2 under the view marginal
  double ppos = 0.5 * (qp_pos + qp_neg);
  double ez2 = ppos * zp.z * zp.z + (1.0 - ppos) * zm.z * zm.z;

  CoordLossGrad out;
  out.loss = -2.0 * align + ez2 * ez2;
  auto accum = [&](double cp, double cm) {
    out.dw1 += cp * zp.dw1 + cm * zm.dw1;
    out.dw2 += cp * zp.dw2 + cm * zm.dw2;
    out.db1 += cp * zp.db1 + cm * zm.db1;
    out.db2 += cp * zp.db2 + cm * zm.db2;
  };
  // d(-2 align)
  accum(-2.0 * (inner_p * qp_pos + inner_m * qp_neg),
        -2.0 * (inner_p * (1.0 - qp_pos) + inner_m * (1.0 - qp_neg)));
  // d (E z^2)^2
  accum(2.0 * ez2 * ppos * 2.0 * zp.z, 2.0 * ez2 * (1.0 - ppos) * 2.0 * zm.z);
  return out;
}

inline CoordLossGrad scl_coordinate_term(const DiagonalNet& net, int i, double mag,
                                         double scale) {
  CoordEval zp = eval_coordinate(net, i, mag, scale);
  CoordEval zm = eval_coordinate(net, i, -mag, scale);
  double ez = 0.5 * (zp.z + zm.z);
  double ez2 = 0.5 * (zp.z * zp.z + zm.z * zm.z);
  CoordLossGrad out;
  double cp, cm;
  if (i == 0) {
    // positives share the class coordinate exactly: alignment = E[z(y)^2]
    out.loss = -2.0 * ez2 + ez2 * ez2;
    cp = (-2.0 + 2.0 * ez2) * zp.z;
    cm = (-2.0 + 2.0 * ez2) * zm.z;
  } else {
    // coordinate independent between positives: alignment = (E z)^2
    out.loss = -2.0 * ez * ez + ez2 * ez2;
    cp = -2.0 * ez + 2.0 * ez2 * zp.z;
    cm = -2.0 * ez + 2.0 * ez2 * zm.z;
  }
  out.dw1 = cp * zp.dw1 + cm * zm.dw1;
  out.dw2 = cp * zp.dw2 + cm * zm.dw2;
  out.db1 = cp * zp.db1 + cm * zm.db1;
  out.db2 = cp * zp.db2 + cm * zm.db2;
  return out;
}

inline CoordLossGrad mse_coordinate_term(const DiagonalNet& net, int i, double mag,
                                         double scale) {
  CoordEval zp = eval_coordinate(net, i, mag, scale);
  CoordEval zm = eval_coordinate(net, i, -mag, scale);
  CoordLossGrad out;
  double cp, cm;
  if (i == 0) {
    // x_0 = y exactly
    out.loss = 0.5 * ((zp.z - 1.0) * (zp.z - 1.0) + (zm.z + 1.0) * (zm.z + 1.0));
    cp = zp.z - 1.0;
    cm = zm.z + 1.0;
  } else {
    // x_i independent of y; cross term vanishes
    out.loss = 0.5 * (zp.z * zp.z + zm.z * zm.z) + 1.0;
    cp = zp.z;
    cm = zm.z;
  }
  out.dw1 = cp * zp.dw1 + cm * zm.dw1;
  out.dw2 = cp * zp.dw2 + cm * zm.dw2;
  out.db1 = cp * zp.db1 + cm * zm.db1;
  out.db2 = cp * zp.db2 + cm * zm.db2;
  return out;
}

// Everything the per-coordinate loss terms need, hoisted out of hot loops.
struct DiagLossContext {
  LossKind kind = LossKind::cl;
  AugmentationConvention conv = AugmentationConvention::randomize;
  Vec u;       // probe magnitude per coordinate (phi, or data magnitudes)
  Vec alpha;   // cl only
  Vec scales;  // head scales, or ones
};

inline DiagLossContext make_diag_context(const Model& m, const LossBinding& b) {
  DiagLossContext ctx;
  ctx.kind = b.kind;
  int d = m.diagonal().dim();
  if (b.kind == LossKind::cl) {
    ctx.conv = b.pretrain->convention;
    ctx.u = b.pretrain->phi;
    ctx.alpha = b.pretrain->alpha;
  } else {
    ctx.u = b.subclass->coordinate_magnitudes();
  }
  ctx.scales = m.head ? Vec(m.head->scales()) : Vec(Vec::Ones(d));
  return ctx;
}

inline CoordLossGrad diag_coordinate_term(const DiagonalNet& net,
                                          const DiagLossContext& ctx, int i) {
  switch (ctx.kind) {
    case LossKind::cl:
      return cl_coordinate_term(net, i, ctx.u(i), ctx.alpha(i), ctx.conv, ctx.scales(i));
    case LossKind::scl:
      return scl_coordinate_term(net, i, ctx.u(i), ctx.scales(i));
    case LossKind::mse:
      return mse_coordinate_term(net, i, ctx.u(i), ctx.scales(i));
  }
  throw SpecError("unreachable loss kind");
}

// Raw views into caller-owned gradient storage.
struct ModelGradRef {
  double* w1;
  double* w2;
  double* b1;
  double* b2;
};

/// Alloc-free population loss + gradient for diagonal nets; `grad` vectors
/// must already have length d.
inline double diag_population_loss_grad(const DiagonalNet& net, const DiagLossContext& ctx,
                                        ModelGradRef grad) {
  double total = 0.0;
  int d = net.dim();
  for (int i = 0; i < d; ++i) {
    CoordLossGrad t = diag_coordinate_term(net, ctx, i);
    total += t.loss;
    grad.w1[i] = t.dw1;
    grad.w2[i] = t.dw2;
    grad.b1[i] = t.db1;
    grad.b2[i] = t.db2;
  }
  if (ctx.kind == LossKind::mse) total += 1.0 - static_cast<double>(d);
  return total;
}

}  // namespace detail

struct CoordinateLosses {
  Vec per_coordinate;
  double constant = 0.0;  // (1 - p) E[y^2] for mse, 0 otherwise
  double total() const { return per_coordinate.sum() + constant; }
};

/// Exact per-coordinate losses of a diagonal net by finite enumeration.
/// Requires sigma = 0 for the CL binding.
inline CoordinateLosses coordinate_losses_diagonal(const Model& m, const LossBinding& b) {
  b.validate();
  if (m.is_linear())
    throw SpecError("coordinate_losses_diagonal: model must be a diagonal net");
  m.validate();
  if (b.kind == LossKind::cl && b.pretrain->sigma > 0.0)
    throw SpecError("coordinate_losses_diagonal: exact enumeration requires sigma = 0");
  int d = m.diagonal().dim();
  if (d != b.data_dim()) throw SpecError("coordinate_losses_diagonal: dimension mismatch");
  detail::DiagLossContext ctx = detail::make_diag_context(m, b);
  CoordinateLosses out;
  out.per_coordinate.resize(d);
  for (int i = 0; i < d; ++i)
    out.per_coordinate(i) = detail::diag_coordinate_term(m.diagonal(), ctx, i).loss;
  if (b.kind == LossKind::mse) out.constant = 1.0 - static_cast<double>(d);
  return out;
}

// ---- empirical (Monte-Carlo) losses ------------------------------------

namespace detail {

inline Mat augment_rows(const PretrainSpec& spec, const Mat& x, std::uint64_t seed) {
  Mat v(x.rows(), x.cols());
  for (int k = 0; k < x.rows(); ++k)
    v.row(k) = sample_augmentation(spec, x.row(k).transpose(),
                                   rng::derive(seed, static_cast<std::uint64_t>(k)))
                   .transpose();
  return v;
}

inline Mat represent_rows(const Model& m, const Mat& x) {
  Mat r(x.rows(), m.output_dim());
  for (int k = 0; k < x.rows(); ++k)
    r.row(k) = forward(m, x.row(k).transpose(), m.layer_count()).transpose();
  return r;
}

// -2 mean_k <r1_k, r2_k>  +  mean_{k != l} <rn_k, rn_l>^2
inline double pair_spectral_estimate(const Mat& r1, const Mat& r2, const Mat& rn) {
  int n = static_cast<int>(r1.rows());
  double align = (r1.array() * r2.array()).sum() / n;
  Mat g = rn * rn.transpose();
  double unif = (g.array().square().sum() - g.diagonal().array().square().sum()) /
                (static_cast<double>(n) * (n - 1));
  return -2.0 * align + unif;
}

}  // namespace detail

/// Unbiased plug-in estimator of the spectral CL loss; positive pairs are two
/// fresh augmentations per input, the uniformity mean excludes self-pairs.
inline double cl_empirical_loss(const Model& m, const PretrainSpec& spec, int batch,
                                std::uint64_t seed) {
  spec.validate();
  if (batch < 2) throw SpecError("cl_empirical_loss: batch must be >= 2");
  Mat x = sample_pretrain(spec, batch, rng::derive(seed, 0xD0));
  Mat v1 = detail::augment_rows(spec, x, rng::derive(seed, 0xA1));
  Mat v2 = detail::augment_rows(spec, x, rng::derive(seed, 0xA2));
  Mat r1 = detail::represent_rows(m, v1);
  Mat r2 = detail::represent_rows(m, v2);
  return detail::pair_spectral_estimate(r1, r2, r1);
}

inline double scl_empirical_loss(const Model& m, const SubclassSpec& spec, int batch,
                                 std::uint64_t seed) {
  spec.validate();
  if (batch < 2) throw SpecError("scl_empirical_loss: batch must be >= 2");
  SubclassSample a = sample_subclass(spec, batch, rng::derive(seed, 0xD1));
  SubclassSample b = sample_subclass(spec, batch, rng::derive(seed, 0xD2));
  b.x.col(0) = a.x.col(0);  // positives share the class label only
  Mat r1 = detail::represent_rows(m, a.x);
  Mat r2 = detail::represent_rows(m, b.x);
  return detail::pair_spectral_estimate(r1, r2, r1);
}

inline double mse_empirical_loss(const Model& m, const SubclassSpec& spec, int batch,
                                 std::uint64_t seed) {
  spec.validate();
  if (batch < 1) throw SpecError("mse_empirical_loss: batch must be >= 1");
  SubclassSample a = sample_subclass(spec, batch, rng::derive(seed, 0xD3));
  Mat r = detail::represent_rows(m, a.x);
  Vec pred = r.rowwise().sum();
  return (pred - a.y).squaredNorm() / batch;
}

/// Population loss of any model under any binding. Exact closed forms and
/// enumerations throughout; the one non-exact corner (diagonal net, CL with
/// sigma > 0) falls back to a fixed-seed Monte-Carlo estimate.
inline double population_loss(const Model& m, const LossBinding& b) {
  b.validate();
  m.validate();
  if (m.is_linear()) {
    switch (b.kind) {
      case LossKind::cl:
        return cl_population_loss_linear(detail::model_product(m), moments(*b.pretrain));
      case LossKind::scl:
        return scl_population_loss_linear(m, *b.subclass);
      case LossKind::mse:
        return mse_population_loss_linear(m, *b.subclass);
    }
  }
  if (b.kind == LossKind::cl && b.pretrain->sigma > 0.0)
    return cl_empirical_loss(m, *b.pretrain, 1 << 16, 0x5eed);
  return coordinate_losses_diagonal(m, b).total();
}

// ---- analytic gradients -------------------------------------------------

struct ModelGrad {
  bool linear = false;
  std::vector<Mat> layers;     // linear stacks
  Vec w1, w2, b1, b2;          // diagonal nets

  double squared_norm() const {
    double s = 0.0;
    if (linear) {
      for (const Mat& g : layers) s += g.squaredNorm();
    } else {
      s = w1.squaredNorm() + w2.squaredNorm() + b1.squaredNorm() + b2.squaredNorm();
    }
    return s;
  }
  double norm() const { return std::sqrt(squared_norm()); }
};

enum class GradMode { population, empirical };

struct GradOptions {
  GradMode mode = GradMode::population;
  int batch = 0;
  std::uint64_t seed = 0;
};

namespace detail {

// dL/dP for the trace-form losses of a linear model with product matrix P.
inline Mat linear_population_dP(const Mat& P, const LossBinding& b, double* loss_out) {
  if (b.kind == LossKind::mse) {
    Vec m2 = b.subclass->coordinate_magnitudes().array().square();
    Vec ones = Vec::Ones(P.rows());
    Vec v = P.transpose() * ones;
    Vec dv = 2.0 * (m2.asDiagonal() * v);
    dv(0) -= 2.0;
    if (loss_out) *loss_out = v.dot(m2.asDiagonal() * v) - 2.0 * v(0) + 1.0;
    return ones * dv.transpose();
  }
  MomentPair mm = b.kind == LossKind::cl ? moments(*b.pretrain)
                                         : subclass_moments(*b.subclass);
  Mat Q = P.transpose() * P;
  Mat MQM = mm.M.asDiagonal() * Q * mm.M.asDiagonal();
  if (loss_out) {
    double align = (Q.diagonal().array() * mm.M_tilde.array()).sum();
    *loss_out = -2.0 * align + (Q.array() * MQM.array()).sum();
  }
  Mat inner = MQM;
  inner.diagonal() -= mm.M_tilde;
  return 4.0 * P * inner;
}

// Chain dL/dP to the trainable layers through fixed head scales.
inline void linear_chain_to_layers(const LinearStack& stack,
                                   const std::optional<ReweightHead>& head,
                                   const Mat& dP, std::vector<Mat>& out) {
  int L = stack.depth();
  std::vector<Mat> below(L);  // below[l] = W_l ... W_1 (cumulative)
  below[0] = stack.layers[0];
  for (int l = 1; l < L; ++l) below[l] = stack.layers[l] * below[l - 1];
  std::vector<Mat> above(L);  // above[l] = S W_L ... W_{l+2}
  Mat acc = head ? Mat(head->scales().asDiagonal())
                 : Mat(Mat::Identity(stack.output_dim(), stack.output_dim()));
  for (int l = L - 1; l >= 0; --l) {
    above[l] = acc;
    if (l > 0) acc = acc * stack.layers[l];
  }
  out.resize(L);
  for (int l = 0; l < L; ++l) {
    Mat g = above[l].transpose() * dP;
    if (l > 0) g = g * below[l - 1].transpose();
    out[l] = std::move(g);
  }
}

// dL/dR terms of the empirical pairwise estimator, shared by cl and scl.
inline void pair_spectral_dR(const Mat& r1, const Mat& r2, Mat& d1, Mat& d2,
                             double* loss_out) {
  int n = static_cast<int>(r1.rows());
  Mat g = r1 * r1.transpose();
  if (loss_out)
    *loss_out = -2.0 * (r1.array() * r2.array()).sum() / n +
                (g.array().square().sum() - g.diagonal().array().square().sum()) /
                    (static_cast<double>(n) * (n - 1));
  g.diagonal().setZero();
  d1 = (-2.0 / n) * r2 + (4.0 / (static_cast<double>(n) * (n - 1))) * (g * r1);
  d2 = (-2.0 / n) * r1;
}

inline void diag_chain_from_dR(const Model& m, const Mat& x, const Mat& dR,
                               ModelGrad& grad) {
  const DiagonalNet& net = m.diagonal();
  int d = net.dim();
  for (int k = 0; k < x.rows(); ++k)
    for (int i = 0; i < d; ++i) {
      double c = dR(k, i);
      if (c == 0.0) continue;
      CoordEval e = eval_coordinate(net, i, x(k, i), m.head ? m.head->scales()(i) : 1.0);
      grad.w1(i) += c * e.dw1;
      grad.w2(i) += c * e.dw2;
      grad.b1(i) += c * e.db1;
      grad.b2(i) += c * e.db2;
    }
}

}  // namespace detail

/// Population loss and gradient written into `grad`; after the first call
/// the diagonal-net path performs no allocation, so the training loop can
/// run it tens of millions of times.
inline double population_loss_and_gradient(const Model& m, const LossBinding& b,
                                           ModelGrad& grad) {
  grad.linear = m.is_linear();
  if (grad.linear) {
    double loss = 0.0;
    Mat P = detail::model_product(m);
    Mat dP = detail::linear_population_dP(P, b, &loss);
    detail::linear_chain_to_layers(m.linear(), m.head, dP, grad.layers);
    return loss;
  }
  if (b.kind == LossKind::cl && b.pretrain->sigma > 0.0)
    throw SpecError("gradient: population CL gradient needs sigma = 0 for diagonal nets");
  int d = m.diagonal().dim();
  if (grad.w1.size() != d) {
    grad.w1.resize(d);
    grad.w2.resize(d);
    grad.b1.resize(d);
    grad.b2.resize(d);
  }
  detail::DiagLossContext ctx = detail::make_diag_context(m, b);
  return detail::diag_population_loss_grad(
      m.diagonal(), ctx,
      {grad.w1.data(), grad.w2.data(), grad.b1.data(), grad.b2.data()});
}

/// Analytic gradient of the bound loss with respect to all trainable
/// parameters. Population mode is exact; empirical mode differentiates the
/// plug-in estimator at fixed (batch, seed).
inline ModelGrad gradient(const Model& m, const LossBinding& b,
                          const GradOptions& opt = {}, double* loss_out = nullptr) {
  b.validate();
  m.validate();
  ModelGrad grad;
  grad.linear = m.is_linear();
  if (!grad.linear) {
    int d = m.diagonal().dim();
    grad.w1 = Vec::Zero(d);
    grad.w2 = Vec::Zero(d);
    grad.b1 = Vec::Zero(d);
    grad.b2 = Vec::Zero(d);
  }

  if (opt.mode == GradMode::population) {
    double loss = population_loss_and_gradient(m, b, grad);
    if (loss_out) *loss_out = loss;
    return grad;
  }

  // empirical mode
  if (opt.batch < 2) throw SpecError("gradient: empirical mode needs batch >= 2");
  Mat x1, x2;  // inputs feeding the two representation matrices
  if (b.kind == LossKind::cl) {
    Mat x = sample_pretrain(*b.pretrain, opt.batch, rng::derive(opt.seed, 0xD0));
    x1 = detail::augment_rows(*b.pretrain, x, rng::derive(opt.seed, 0xA1));
    x2 = detail::augment_rows(*b.pretrain, x, rng::derive(opt.seed, 0xA2));
  } else if (b.kind == LossKind::scl) {
    SubclassSample a = sample_subclass(*b.subclass, opt.batch, rng::derive(opt.seed, 0xD1));
    SubclassSample c = sample_subclass(*b.subclass, opt.batch, rng::derive(opt.seed, 0xD2));
    c.x.col(0) = a.x.col(0);
    x1 = a.x;
    x2 = c.x;
  } else {
    SubclassSample a = sample_subclass(*b.subclass, opt.batch, rng::derive(opt.seed, 0xD3));
    Mat r = detail::represent_rows(m, a.x);
    Vec resid = r.rowwise().sum() - a.y;
    if (loss_out) *loss_out = resid.squaredNorm() / opt.batch;
    Mat dR = (2.0 / opt.batch) * resid * Eigen::RowVectorXd::Ones(m.output_dim());
    if (grad.linear) {
      Mat dP = dR.transpose() * a.x;
      detail::linear_chain_to_layers(m.linear(), m.head, dP, grad.layers);
    } else {
      detail::diag_chain_from_dR(m, a.x, dR, grad);
    }
    return grad;
  }
  Mat r1 = detail::represent_rows(m, x1);
  Mat r2 = detail::represent_rows(m, x2);
  Mat d1, d2;
  detail::pair_spectral_dR(r1, r2, d1, d2, loss_out);
  if (grad.linear) {
    Mat dP = d1.transpose() * x1 + d2.transpose() * x2;
    detail::linear_chain_to_layers(m.linear(), m.head, dP, grad.layers);
  } else {
    detail::diag_chain_from_dR(m, x1, d1, grad);
    detail::diag_chain_from_dR(m, x2, d2, grad);
  }
  return grad;
}

}  // namespace projhead
