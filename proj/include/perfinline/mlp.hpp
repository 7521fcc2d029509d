#pragma once

// Small fully connected network with Leaky ReLU hidden layers and a linear
// head. Samples are matrix columns.

#include <Eigen/Dense>

#include <cmath>
#include <string>
#include <vector>

#include "perfinline/error.hpp"
#include "perfinline/module_io.hpp"
#include "perfinline/util.hpp"

namespace perfinline {

inline constexpr double kLeakySlope = 0.01;

struct DenseLayer {
  Eigen::MatrixXd w;  // out x in
  Eigen::VectorXd b;

  bool operator==(const DenseLayer& o) const { return w == o.w && b == o.b; }
};

class Mlp {
 public:
  struct Trace {
    std::vector<Eigen::MatrixXd> pre;  // per layer, before activation
    std::vector<Eigen::MatrixXd> act;  // act[0] is the input
  };

  Mlp() = default;

  // All parameters zero.
  explicit Mlp(std::vector<int> dims, double slope = kLeakySlope) : slope_(slope) {
    if (dims.size() < 2) throw Error(ErrorKind::Config, "network needs at least two layer sizes");
    for (int d : dims)
      if (d < 1) throw Error(ErrorKind::Config, "layer sizes must be positive");
    for (std::size_t l = 0; l + 1 < dims.size(); ++l)
      layers_.push_back({Eigen::MatrixXd::Zero(dims[l + 1], dims[l]), Eigen::VectorXd::Zero(dims[l + 1])});
  }

  // He-style normal initialisation, zero biases.
  static Mlp random(std::vector<int> dims, std::uint64_t seed, double slope = kLeakySlope) {
    Mlp net(std::move(dims), slope);
    Rng rng(seed);
    for (auto& layer : net.layers_) {
      const double scale = std::sqrt(2.0 / static_cast<double>(layer.w.cols()));
      for (Eigen::Index i = 0; i < layer.w.rows(); ++i)
        for (Eigen::Index j = 0; j < layer.w.cols(); ++j) layer.w(i, j) = scale * rng.normal();
    }
    return net;
  }

  std::vector<int> dims() const {
    std::vector<int> d;
    if (layers_.empty()) return d;
    d.push_back(static_cast<int>(layers_.front().w.cols()));
    for (const auto& l : layers_) d.push_back(static_cast<int>(l.w.rows()));
    return d;
  }

  int input_size() const { return static_cast<int>(layers_.front().w.cols()); }
  int output_size() const { return static_cast<int>(layers_.back().w.rows()); }
  double slope() const { return slope_; }
  std::vector<DenseLayer>& layers() { return layers_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }

  double activate(double t) const { return t >= 0 ? t : slope_ * t; }
  double activate_grad(double t) const { return t > 0 ? 1.0 : slope_; }

  Eigen::MatrixXd forward(const Eigen::MatrixXd& x) const {
    Eigen::MatrixXd a = x;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      Eigen::MatrixXd z = (layers_[l].w * a).colwise() + layers_[l].b;
      if (l + 1 < layers_.size()) z = z.unaryExpr([this](double t) { return activate(t); });
      a = std::move(z);
    }
    return a;
  }

  Eigen::MatrixXd forward(const Eigen::MatrixXd& x, Trace& tr) const {
    tr.pre.clear();
    tr.act.assign(1, x);
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      tr.pre.push_back((layers_[l].w * tr.act.back()).colwise() + layers_[l].b);
      if (l + 1 < layers_.size())
        tr.act.push_back(tr.pre.back().unaryExpr([this](double t) { return activate(t); }));
      else
        tr.act.push_back(tr.pre.back());
    }
    return tr.act.back();
  }

  // Parameter gradient given dL/d(output), shaped like the output.
  Mlp backward(const Trace& tr, const Eigen::MatrixXd& grad_out) const {
    Mlp g = zeros_like();
    Eigen::MatrixXd delta = grad_out;
    for (std::size_t l = layers_.size(); l-- > 0;) {
      if (l + 1 < layers_.size())
        delta = delta.cwiseProduct(tr.pre[l].unaryExpr([this](double t) { return activate_grad(t); }));
      g.layers_[l].w = delta * tr.act[l].transpose();
      g.layers_[l].b = delta.rowwise().sum();
      if (l > 0) delta = layers_[l].w.transpose() * delta;
    }
    return g;
  }

  Mlp zeros_like() const {
    Mlp z = *this;
    for (auto& l : z.layers_) {
      l.w.setZero();
      l.b.setZero();
    }
    return z;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += static_cast<std::size_t>(l.w.size() + l.b.size());
    return n;
  }

  // Layer by layer: weights row-major, then biases.
  Eigen::VectorXd flatten() const {
    Eigen::VectorXd v(static_cast<Eigen::Index>(parameter_count()));
    Eigen::Index k = 0;
    for (const auto& l : layers_) {
      for (Eigen::Index i = 0; i < l.w.rows(); ++i)
        for (Eigen::Index j = 0; j < l.w.cols(); ++j) v[k++] = l.w(i, j);
      for (Eigen::Index i = 0; i < l.b.size(); ++i) v[k++] = l.b[i];
    }
    return v;
  }

  void assign(const Eigen::VectorXd& v) {
    if (static_cast<std::size_t>(v.size()) != parameter_count())
      throw Error(ErrorKind::InvariantViolation, "parameter vector has the wrong length");
    Eigen::Index k = 0;
    for (auto& l : layers_) {
      for (Eigen::Index i = 0; i < l.w.rows(); ++i)
        for (Eigen::Index j = 0; j < l.w.cols(); ++j) l.w(i, j) = v[k++];
      for (Eigen::Index i = 0; i < l.b.size(); ++i) l.b[i] = v[k++];
    }
  }

  // this += a * other
  void axpy(double a, const Mlp& other) {
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      layers_[l].w += a * other.layers_[l].w;
      layers_[l].b += a * other.layers_[l].b;
    }
  }

  bool all_finite() const {
    for (const auto& l : layers_)
      if (!l.w.allFinite() || !l.b.allFinite()) return false;
    return true;
  }

  bool operator==(const Mlp& o) const { return slope_ == o.slope_ && layers_ == o.layers_; }

 private:
  double slope_ = kLeakySlope;
  std::vector<DenseLayer> layers_;
};

inline Json to_json(const Mlp& net) {
  Json j;
  j["dims"] = net.dims();
  j["leaky_slope"] = net.slope();
  j["layers"] = Json::array();
  for (const auto& l : net.layers()) {
    Json w = Json::array();
    for (Eigen::Index i = 0; i < l.w.rows(); ++i)
      for (Eigen::Index k = 0; k < l.w.cols(); ++k) w.push_back(l.w(i, k));
    Json b = Json::array();
    for (Eigen::Index i = 0; i < l.b.size(); ++i) b.push_back(l.b[i]);
    j["layers"].push_back({{"weights", std::move(w)}, {"biases", std::move(b)}});
  }
  return j;
}

inline Mlp mlp_from_json(const Json& j, const std::vector<int>& expected_dims) {
  try {
    const auto dims = j.at("dims").get<std::vector<int>>();
    if (dims != expected_dims) throw Error(ErrorKind::Schema, "network dimensions do not match");
    Mlp net(dims, j.at("leaky_slope").get<double>());
    const auto& layers = j.at("layers");
    if (!layers.is_array() || layers.size() != net.layers().size())
      throw Error(ErrorKind::Schema, "wrong number of layers");
    for (std::size_t l = 0; l < layers.size(); ++l) {
      auto& dst = net.layers()[l];
      const auto& w = layers[l].at("weights");
      const auto& b = layers[l].at("biases");
      if (w.size() != static_cast<std::size_t>(dst.w.size()) || b.size() != static_cast<std::size_t>(dst.b.size()))
        throw Error(ErrorKind::Schema, "layer " + std::to_string(l) + " has the wrong parameter count");
      std::size_t k = 0;
      for (Eigen::Index r = 0; r < dst.w.rows(); ++r)
        for (Eigen::Index c = 0; c < dst.w.cols(); ++c) dst.w(r, c) = w[k++].get<double>();
      for (Eigen::Index r = 0; r < dst.b.size(); ++r) dst.b[r] = b[static_cast<std::size_t>(r)].get<double>();
    }
    return net;
  } catch (const Json::exception& e) {
    throw Error(ErrorKind::Schema, std::string("network: ") + e.what());
  }
}

}  // namespace perfinline
