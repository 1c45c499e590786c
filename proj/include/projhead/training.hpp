#pragma once
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "projhead/losses.hpp"

namespace projhead {

struct TrainConfig {
  double step_size = 1e-3;     // explicit Euler step
  long max_steps = 1'000'000;
  double grad_tol = 1e-8;      // stop when the update-direction norm drops below
  double weight_decay = 0.0;
  bool decay_biases = true;    // apply weight decay to diagonal-net biases too
  long record_every = 1000;
  double divergence_threshold = 1e12;
  int max_step_halvings = 3;   // retries after a detected loss increase
  double loss_increase_tol = 1e-6;
};

enum class StopReason { converged, max_steps, diverged };

inline const char* to_string(StopReason r) {
  switch (r) {
    case StopReason::converged: return "converged";
    case StopReason::max_steps: return "max_steps";
    case StopReason::diverged: return "diverged";
  }
  return "unknown";
}

struct Snapshot {
  long step = 0;
  double loss = 0.0;
  double defect = std::numeric_limits<double>::quiet_NaN();  // linear stacks only
  Model model;
};

struct Trajectory {
  std::vector<Snapshot> snapshots;
  Model final_model;
  StopReason stop_reason = StopReason::max_steps;
  long steps = 0;
  double final_loss = 0.0;
  double final_grad_norm = 0.0;
  double max_defect = 0.0;          // max balancedness defect seen (per step)
  double max_loss_increase = 0.0;   // largest accepted single-step loss increase
  double step_size_used = 0.0;      // after any halvings
  int halvings = 0;
  double wall_seconds = 0.0;
};

/// ||W1 W1^T - W2^T W2||_F, pairwise-summed for deeper stacks.
inline double balancedness_defect(const LinearStack& stack) {
  stack.validate();
  double total = 0.0;
  for (int l = 0; l + 1 < stack.depth(); ++l) {
    const Mat& a = stack.layers[l];
    const Mat& b = stack.layers[l + 1];
    total += (a * a.transpose() - b.transpose() * b).norm();
  }
  return total;
}

/// Balanced random init: draw G of std `scale`, split its SVD so that every
/// adjacent pair satisfies W_l W_l^T = W_{l+1}^T W_{l+1} to rounding error.
/// dims = [d, p, ..., p], L = dims.size() - 1 layers.
inline LinearStack balanced_init_linear(const std::vector<int>& dims, double scale,
                                        std::uint64_t seed) {
  if (dims.size() < 2) throw SpecError("balanced_init_linear: need at least 2 dims");
  int d = dims[0];
  int p = dims.back();
  if (d < 1 || p < 1) throw SpecError("balanced_init_linear: degenerate dims");
  for (std::size_t i = 1; i < dims.size(); ++i)
    if (dims[i] != p) throw SpecError("balanced_init_linear: hidden dims must equal p");
  int L = static_cast<int>(dims.size()) - 1;

  Mat g(p, d);
  rng::Stream s(rng::derive(seed, 0xB0));
  for (int r = 0; r < p; ++r)
    for (int c = 0; c < d; ++c) g(r, c) = scale * s.next_gaussian();

  LinearStack stack;
  if (L == 1) {
    stack.layers.push_back(std::move(g));  // single layer: nothing to balance
    return stack;
  }

  Eigen::JacobiSVD<Mat> svd(g, Eigen::ComputeFullU | Eigen::ComputeFullV);
  int k = std::min(p, d);
  Vec sv = svd.singularValues();
  Vec root(k);
  for (int i = 0; i < k; ++i) root(i) = std::pow(sv(i), 1.0 / L);

  Mat w1 = Mat::Zero(p, d);
  for (int i = 0; i < k; ++i) w1.row(i) = root(i) * svd.matrixV().col(i).transpose();
  stack.layers.push_back(std::move(w1));
  for (int l = 1; l < L - 1; ++l) {
    Mat mid = Mat::Zero(p, p);
    for (int i = 0; i < k; ++i) mid(i, i) = root(i);
    stack.layers.push_back(std::move(mid));
  }
  Mat wl = Mat::Zero(p, p);
  for (int i = 0; i < k; ++i) wl.col(i) = root(i) * svd.matrixU().col(i);
  stack.layers.push_back(std::move(wl));
  stack.validate();
  return stack;
}

// Initialization of the diagonal net. Biases start at b0 everywhere. The
// conditioned coordinate (the one the augmentation disrupts) can be forced
// to satisfy |w2c| <= sqrt(b0) and |w2c| (|w1c| - b0) >= b0, optionally with
// w1c w2c > 0 for the supervised losses.
struct DiagonalInit {
  double b0 = 0.25;
  std::optional<Vec> w1;  // explicit weights; random when absent
  std::optional<Vec> w2;
  bool require_conditions = false;
  int conditioned_coordinate = 1;  // 0-based
  bool same_sign = false;
  int max_retries = 1000;
};

namespace detail {
inline bool diag_conditions_hold(double w1c, double w2c, double b0, bool same_sign) {
  if (!(std::fabs(w2c) <= std::sqrt(b0))) return false;
  if (!(std::fabs(w2c) * (std::fabs(w1c) - b0) >= b0)) return false;
  if (same_sign && !(w1c * w2c > 0.0)) return false;
  return true;
}
}  // namespace detail

inline DiagonalNet init_diagonal(int d, const DiagonalInit& cfg, std::uint64_t seed) {
  if (d < 1) throw SpecError("init_diagonal: d must be positive");
  if (!(cfg.b0 > 0.0)) throw SpecError("init_diagonal: b0 must be positive");
  int c = cfg.conditioned_coordinate;
  if (c < 0 || c >= d) throw SpecError("init_diagonal: conditioned coordinate out of range");

  DiagonalNet net;
  net.b1 = Vec::Constant(d, cfg.b0);
  net.b2 = Vec::Constant(d, cfg.b0);

  if (cfg.w1 && cfg.w2) {
    if (cfg.w1->size() != d || cfg.w2->size() != d)
      throw SpecError("init_diagonal: explicit weights must have length d");
    net.w1 = *cfg.w1;
    net.w2 = *cfg.w2;
    if (cfg.require_conditions &&
        !detail::diag_conditions_hold(net.w1(c), net.w2(c), cfg.b0, cfg.same_sign))
      throw SpecError("init_diagonal: explicit weights violate the required conditions");
    return net;
  }

  rng::Stream s(rng::derive(seed, 0xB1));
  net.w1.resize(d);
  net.w2.resize(d);
  double b0 = cfg.b0;
  for (int i = 0; i < d; ++i) {
    if (i == c && cfg.require_conditions) {
      net.w1(i) = 0.0;  // filled below
      net.w2(i) = 0.0;
    } else if (i == 0 || i == c) {
      // keep the clean/conditioned coordinates alive through both layers
      double w1i = s.next_sign() * s.next_uniform(b0 + 0.5, b0 + 2.0);
      double gap = std::fabs(w1i) - b0;
      double w2i = s.next_sign() * s.next_uniform(b0 / gap + 0.2, b0 / gap + 1.5);
      net.w1(i) = w1i;
      net.w2(i) = w2i;
    } else {
      net.w1(i) = s.next_uniform(-0.1, 0.1);
      net.w2(i) = s.next_uniform(-0.1, 0.1);
    }
  }
  if (cfg.require_conditions) {
    int tries = 0;
    while (true) {
      double w2c = s.next_sign() * s.next_uniform(0.1, 1.2) * std::sqrt(b0);
      double w1c = s.next_sign() * s.next_uniform(b0, b0 + 4.0);
      if (detail::diag_conditions_hold(w1c, w2c, b0, cfg.same_sign)) {
        net.w1(c) = w1c;
        net.w2(c) = w2c;
        break;
      }
      if (++tries > cfg.max_retries)
        throw SpecError("init_diagonal: rejection sampling exceeded retry budget");
    }
  }
  return net;
}

/// Discretized gradient flow: theta <- theta - eta (grad L + lambda theta).
/// Records snapshots every `record_every` steps (plus step 0 and the final
/// step), tracks the balancedness defect per step for linear stacks, and
/// retries with a halved step on a detected loss increase.
inline Trajectory train(const Model& model0, const LossBinding& binding,
                        const TrainConfig& cfg) {
  if (!(cfg.step_size > 0.0)) throw SpecError("train: step_size must be positive");
  if (cfg.record_every < 1) throw SpecError("train: record_every must be >= 1");
  binding.validate();
  model0.validate();
  if (model0.input_dim() != binding.data_dim())
    throw SpecError("train: model and data dimensions do not match");

  auto t0 = std::chrono::steady_clock::now();
  Trajectory traj;
  Model m = model0;
  const bool linear = m.is_linear();
  double eta = cfg.step_size;
  const double lambda = cfg.weight_decay;

  ModelGrad g;
  g.linear = linear;
  detail::DiagLossContext diag_ctx;
  if (!linear) {
    int d = m.diagonal().dim();
    g.w1.resize(d);
    g.w2.resize(d);
    g.b1.resize(d);
    g.b2.resize(d);
    diag_ctx = detail::make_diag_context(m, binding);
  }
  auto compute = [&]() -> double {
    if (linear) return population_loss_and_gradient(m, binding, g);
    return detail::diag_population_loss_grad(
        m.diagonal(), diag_ctx, {g.w1.data(), g.w2.data(), g.b1.data(), g.b2.data()});
  };

  double loss = compute();
  double defect = linear ? balancedness_defect(m.linear())
                         : std::numeric_limits<double>::quiet_NaN();
  traj.snapshots.push_back({0, loss, defect, m});
  if (linear) traj.max_defect = defect;

  // reusable backup for the step-halving revert
  Model backup = m;
  auto save_params = [&]() {
    if (linear) {
      for (std::size_t l = 0; l < m.linear().layers.size(); ++l)
        backup.linear().layers[l] = m.linear().layers[l];
    } else {
      backup.diagonal().w1 = m.diagonal().w1;
      backup.diagonal().w2 = m.diagonal().w2;
      backup.diagonal().b1 = m.diagonal().b1;
      backup.diagonal().b2 = m.diagonal().b2;
    }
  };
  auto restore_params = [&]() {
    if (linear) {
      for (std::size_t l = 0; l < m.linear().layers.size(); ++l)
        m.linear().layers[l] = backup.linear().layers[l];
    } else {
      m.diagonal().w1 = backup.diagonal().w1;
      m.diagonal().w2 = backup.diagonal().w2;
      m.diagonal().b1 = backup.diagonal().b1;
      m.diagonal().b2 = backup.diagonal().b2;
    }
  };

  double prev_loss = loss;
  long step = 0;
  double grad_norm = 0.0;
  traj.stop_reason = StopReason::max_steps;

  while (step < cfg.max_steps) {
    double sq = 0.0;
    if (linear) {
      for (std::size_t l = 0; l < g.layers.size(); ++l) {
        if (lambda > 0.0) g.layers[l] += lambda * m.linear().layers[l];
        sq += g.layers[l].squaredNorm();
      }
    } else {
      DiagonalNet& net = m.diagonal();
      if (lambda > 0.0) {
        g.w1 += lambda * net.w1;
        g.w2 += lambda * net.w2;
        if (cfg.decay_biases) {
          g.b1 += lambda * net.b1;
          g.b2 += lambda * net.b2;
        }
      }
      sq = g.squared_norm();
    }
    grad_norm = std::sqrt(sq);
    if (grad_norm <= cfg.grad_tol) {
      traj.stop_reason = StopReason::converged;
      break;
    }

    save_params();
    if (linear) {
      for (std::size_t l = 0; l < g.layers.size(); ++l)
        m.linear().layers[l] -= eta * g.layers[l];
    } else {
      DiagonalNet& net = m.diagonal();
      net.w1 -= eta * g.w1;
      net.w2 -= eta * g.w2;
      net.b1 -= eta * g.b1;
      net.b2 -= eta * g.b2;
    }
    ++step;

    loss = compute();

    if (!std::isfinite(loss) || loss > cfg.divergence_threshold) {
      traj.stop_reason = StopReason::diverged;
      break;
    }
    double increase = loss - prev_loss;
    if (increase > cfg.loss_increase_tol && traj.halvings < cfg.max_step_halvings) {
      restore_params();
      eta *= 0.5;
      ++traj.halvings;
      --step;
      loss = compute();
      prev_loss = loss;
      continue;
    }
    if (increase > traj.max_loss_increase) traj.max_loss_increase = increase;
    prev_loss = loss;

    if (linear) {
      defect = balancedness_defect(m.linear());
      if (defect > traj.max_defect) traj.max_defect = defect;
    }
    if (step % cfg.record_every == 0)
      traj.snapshots.push_back({step, loss, defect, m});
  }

  if (traj.snapshots.back().step != step)
    traj.snapshots.push_back({step, loss, defect, m});
  traj.final_model = std::move(m);
  traj.steps = step;
  traj.final_loss = loss;
  traj.final_grad_norm = grad_norm;
  traj.step_size_used = eta;
  traj.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return traj;
}

}  // namespace projhead
