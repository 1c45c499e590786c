#pragma once
#include <cmath>
#include <optional>
#include <variant>
#include <vector>

#include <json.hpp>

#include "projhead/data.hpp"

namespace projhead {

// Stack of L linear layers, f(x) = W_L ... W_1 x. layers[l] has shape
// dims[l+1] x dims[l].
struct LinearStack {
  std::vector<Mat> layers;

  int depth() const { return static_cast<int>(layers.size()); }
  int input_dim() const { return static_cast<int>(layers.front().cols()); }
  int output_dim() const { return static_cast<int>(layers.back().rows()); }

  void validate() const {
    if (layers.empty()) throw SpecError("LinearStack: needs at least one layer");
    for (std::size_t l = 1; l < layers.size(); ++l)
      if (layers[l].cols() != layers[l - 1].rows())
        throw SpecError("LinearStack: adjacent layer shapes do not compose");
  }

  Mat product() const {
    Mat w = layers[0];
    for (std::size_t l = 1; l < layers.size(); ++l) w = layers[l] * w;
    return w;
  }
};

// Symmetrized ReLU, sigma(a, b) = relu(a - b) - relu(-a - b); odd in a.
// For b >= 0 this is a soft threshold; for b < 0 both branches can fire.
// Subgradients treat a piece sitting exactly at its kink as inactive.
inline double symrelu(double a, double b) {
  double pos = a - b;
  double neg = -a - b;
  return (pos > 0.0 ? pos : 0.0) - (neg > 0.0 ? neg : 0.0);
}
inline double symrelu_da(double a, double b) {
  return (a - b > 0.0 ? 1.0 : 0.0) + (-a - b > 0.0 ? 1.0 : 0.0);
}
inline double symrelu_db(double a, double b) {
  return (-a - b > 0.0 ? 1.0 : 0.0) - (a - b > 0.0 ? 1.0 : 0.0);
}

// Width-d diagonal network with one unit per coordinate:
//   f1(x)_i = sigma(w1_i x_i, b1_i),  f2(x)_i = sigma(w2_i f1(x)_i, b2_i).
struct DiagonalNet {
  Vec w1, w2, b1, b2;

  int dim() const { return static_cast<int>(w1.size()); }

  void validate() const {
    auto n = w1.size();
    if (n < 1 || w2.size() != n || b1.size() != n || b2.size() != n)
      throw SpecError("DiagonalNet: w1, w2, b1, b2 must share a positive length");
  }
};

// Fixed reweighting head: coordinate k of the representation is scaled by
// kappa^{-(k-1)}. Non-trainable by design.
struct ReweightHead {
  double kappa = 1.0;
  int p = 0;

  void validate() const {
    if (!(kappa > 1.0)) throw SpecError("ReweightHead: kappa must be > 1");
    if (p < 1) throw SpecError("ReweightHead: p must be positive");
  }

  Vec scales() const {
    Vec s(p);
    for (int k = 0; k < p; ++k) s(k) = std::pow(kappa, -k);
    return s;
  }
};

inline Vec apply_reweight_head(const ReweightHead& head, const Vec& r) {
  head.validate();
  if (r.size() != head.p) throw SpecError("apply_reweight_head: dimension mismatch");
  return head.scales().cwiseProduct(r);
}

struct Model {
  std::variant<LinearStack, DiagonalNet> net;
  std::optional<ReweightHead> head;

  bool is_linear() const { return std::holds_alternative<LinearStack>(net); }
  const LinearStack& linear() const { return std::get<LinearStack>(net); }
  LinearStack& linear() { return std::get<LinearStack>(net); }
  const DiagonalNet& diagonal() const { return std::get<DiagonalNet>(net); }
  DiagonalNet& diagonal() { return std::get<DiagonalNet>(net); }

  int input_dim() const {
    return is_linear() ? linear().input_dim() : diagonal().dim();
  }
  int output_dim() const {
    return is_linear() ? linear().output_dim() : diagonal().dim();
  }
  int net_layers() const { return is_linear() ? linear().depth() : 2; }
  /// Layer count including the head, when present.
  int layer_count() const { return net_layers() + (head ? 1 : 0); }

  void validate() const {
    if (is_linear()) linear().validate(); else diagonal().validate();
    if (head) {
      head->validate();
      if (head->p != output_dim())
        throw SpecError("Model: head dimension does not match net output");
    }
  }
};

inline Model make_linear(std::vector<Mat> layers) {
  Model m{LinearStack{std::move(layers)}, std::nullopt};
  m.validate();
  return m;
}

inline Model make_diagonal(DiagonalNet net) {
  Model m{std::move(net), std::nullopt};
  m.validate();
  return m;
}

/// The head becomes the final (fixed) layer of the model.
inline Model compose_with_head(Model m, ReweightHead head) {
  m.head = head;
  m.validate();
  return m;
}

/// Output after layer `upto_layer` (1-based). The head, when present, counts
/// as the last layer.
inline Vec forward(const Model& m, const Vec& x, int upto_layer) {
  if (x.size() != m.input_dim()) throw SpecError("forward: dimension mismatch");
  if (upto_layer < 1 || upto_layer > m.layer_count())
    throw SpecError("forward: layer index out of range");
  Vec v;
  if (m.is_linear()) {
    v = x;
    int nl = std::min(upto_layer, m.net_layers());
    for (int l = 0; l < nl; ++l) v = m.linear().layers[l] * v;
  } else {
    const DiagonalNet& net = m.diagonal();
    int d = net.dim();
    v.resize(d);
    for (int i = 0; i < d; ++i) v(i) = symrelu(net.w1(i) * x(i), net.b1(i));
    if (upto_layer >= 2)
      for (int i = 0; i < d; ++i) v(i) = symrelu(net.w2(i) * v(i), net.b2(i));
  }
  if (m.head && upto_layer == m.layer_count()) v = apply_reweight_head(*m.head, v);
  return v;
}

// Per-layer, per-coordinate weights ||f_l(e_i)||; the central measured
// quantity. Row l-1 holds layer l; the head contributes the last row.
struct FeatureWeightProfile {
  Mat weights;  // layer_count x d

  int layers() const { return static_cast<int>(weights.rows()); }
  Eigen::RowVectorXd row(int layer) const { return weights.row(layer - 1); }
};

inline FeatureWeightProfile feature_weight_profile(const Model& m) {
  int d = m.input_dim();
  FeatureWeightProfile prof;
  prof.weights.resize(m.layer_count(), d);
  for (int i = 0; i < d; ++i) {
    Vec e = Vec::Zero(d);
    e(i) = 1.0;
    for (int l = 1; l <= m.layer_count(); ++l)
      prof.weights(l - 1, i) = forward(m, e, l).norm();
  }
  return prof;
}

// ---- JSON checkpoints -------------------------------------------------

// Doubles round-trip exactly: nlohmann serializes with shortest
// representation that parses back to the same bits.
inline nlohmann::json model_to_json(const Model& m) {
  nlohmann::json j;
  if (m.is_linear()) {
    j["kind"] = "linear";
    std::vector<int> dims{m.input_dim()};
    for (const Mat& w : m.linear().layers) dims.push_back(static_cast<int>(w.rows()));
    j["dims"] = dims;
    nlohmann::json params = nlohmann::json::array();
    for (const Mat& w : m.linear().layers) {
      nlohmann::json rows = nlohmann::json::array();
      for (int r = 0; r < w.rows(); ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (int c = 0; c < w.cols(); ++c) row.push_back(w(r, c));
        rows.push_back(std::move(row));
      }
      params.push_back(std::move(rows));
    }
    j["params"] = std::move(params);
  } else {
    j["kind"] = "diagonal";
    const DiagonalNet& net = m.diagonal();
    j["dims"] = std::vector<int>{net.dim(), net.dim(), net.dim()};
    auto vec = [](const Vec& v) {
      nlohmann::json a = nlohmann::json::array();
      for (int i = 0; i < v.size(); ++i) a.push_back(v(i));
      return a;
    };
    j["params"] = {{"w1", vec(net.w1)}, {"w2", vec(net.w2)},
                   {"b1", vec(net.b1)}, {"b2", vec(net.b2)}};
  }
  if (m.head) j["head"] = {{"kappa", m.head->kappa}};
  return j;
}

inline Model model_from_json(const nlohmann::json& j) {
  Model m;
  std::string kind = j.at("kind").get<std::string>();
  if (kind == "linear") {
    LinearStack stack;
    for (const auto& rows : j.at("params")) {
      int nr = static_cast<int>(rows.size());
      int nc = static_cast<int>(rows.at(0).size());
      Mat w(nr, nc);
      for (int r = 0; r < nr; ++r)
        for (int c = 0; c < nc; ++c) w(r, c) = rows.at(r).at(c).get<double>();
      stack.layers.push_back(std::move(w));
    }
    m.net = std::move(stack);
  } else if (kind == "diagonal") {
    auto vec = [](const nlohmann::json& a) {
      Vec v(a.size());
      for (std::size_t i = 0; i < a.size(); ++i) v(i) = a.at(i).get<double>();
      return v;
    };
    const auto& p = j.at("params");
    m.net = DiagonalNet{vec(p.at("w1")), vec(p.at("w2")), vec(p.at("b1")), vec(p.at("b2"))};
  } else {
    throw SpecError("model_from_json: unknown kind '" + kind + "'");
  }
  if (j.contains("head"))
    m.head = ReweightHead{j.at("head").at("kappa").get<double>(), m.output_dim()};
  m.validate();
  return m;
}

}  // namespace projhead
