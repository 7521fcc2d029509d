#pragma once

// Function speedup regressor: 7 principal components in, one speedup out.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "perfinline/dataset.hpp"
#include "perfinline/features.hpp"
#include "perfinline/mlp.hpp"
#include "perfinline/util.hpp"

namespace perfinline {

inline const std::vector<int> kIr2PerfDims = {kPrincipalComponents, 128, 256, 32, 1};
inline constexpr const char* kIr2PerfSchema = "ir2perf/1";

struct TrainSpec {
  double learning_rate = 0.01;
  int batch_size = 16;
  int epochs = 60;
  std::uint64_t seed = 1;
  double validation_fraction = 0.0;

  void check() const {
    if (!(learning_rate >= 0) || !std::isfinite(learning_rate)) throw Error(ErrorKind::Config, "learning_rate must be >= 0");
    if (batch_size < 1) throw Error(ErrorKind::Config, "batch_size must be >= 1");
    if (epochs < 0) throw Error(ErrorKind::Config, "epochs must be >= 0");
    if (!(validation_fraction >= 0 && validation_fraction < 1))
      throw Error(ErrorKind::Config, "validation_fraction must lie in [0,1)");
  }
};

struct Ir2PerfModel {
  Mlp net = Mlp(kIr2PerfDims);
  PreprocessState preproc;
  bool clamp = true;
  double clamp_lo = 0.1;
  double clamp_hi = 10.0;

  bool operator==(const Ir2PerfModel&) const = default;
};

// He initialisation with a damped head, so a fresh model starts close to a
// constant predictor.
inline Mlp make_ir2perf_net(std::uint64_t seed) {
  Mlp net = Mlp::random(kIr2PerfDims, seed);
  net.layers().back().w *= 0.1;
  return net;
}

inline double forward(const Mlp& net, const Eigen::VectorXd& x) { return net.forward(x)(0, 0); }

struct LossGradient {
  double loss = 0;
  Mlp grad;
};

// Mean squared error over the batch (columns of x) and its exact gradient.
inline LossGradient mse_backward(const Mlp& net, const Eigen::MatrixXd& x, const Eigen::RowVectorXd& y) {
  if (x.cols() == 0) throw Error(ErrorKind::InsufficientData, "empty batch");
  Mlp::Trace tr;
  const Eigen::RowVectorXd resid = net.forward(x, tr).row(0) - y;
  const double n = static_cast<double>(x.cols());
  LossGradient out;
  out.loss = resid.squaredNorm() / n;
  out.grad = net.backward(tr, (2.0 / n) * resid);
  return out;
}

struct LossRecord {
  int epoch = 0;
  int batch = 0;
  double loss = 0;
};

struct TrainResult {
  Ir2PerfModel model;
  std::vector<LossRecord> history;
  double train_mse = 0;
  double validation_mse = 0;  // 0 when no validation split
};

inline double mse(const Mlp& net, const Eigen::MatrixXd& x, const Eigen::RowVectorXd& y) {
  if (x.cols() == 0) return 0;
  return (net.forward(x).row(0) - y).squaredNorm() / static_cast<double>(x.cols());
}

// Columns of `x` are preprocessed inputs.
inline TrainResult train_on(const Eigen::MatrixXd& x, const Eigen::RowVectorXd& y, const PreprocessState& ps,
                            const TrainSpec& spec) {
  spec.check();
  const auto n = static_cast<std::size_t>(x.cols());
  if (n < 2 * static_cast<std::size_t>(spec.batch_size))
    throw Error(ErrorKind::InsufficientData, "need at least " + std::to_string(2 * spec.batch_size) + " samples, got " +
                                                 std::to_string(n));
  Rng rng(derive_seed(spec.seed, 0x7261696e));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  auto shuffle = [&rng](std::vector<std::size_t>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
  };
  const auto n_val = static_cast<std::size_t>(spec.validation_fraction * static_cast<double>(n));
  shuffle(order);
  std::vector<std::size_t> val(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> tr(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  std::sort(tr.begin(), tr.end());

  TrainResult res;
  res.model.net = make_ir2perf_net(derive_seed(spec.seed, 0x6e6574));
  res.model.preproc = ps;
  auto& net = res.model.net;
  double y_mean = 0;
  for (auto i : tr) y_mean += y[static_cast<Eigen::Index>(i)];
  net.layers().back().b[0] = y_mean / static_cast<double>(tr.size());
  const auto bs = static_cast<std::size_t>(spec.batch_size);
  for (int epoch = 0; epoch < spec.epochs; ++epoch) {
    shuffle(tr);
    int batch = 0;
    for (std::size_t start = 0; start < tr.size(); start += bs, ++batch) {
      const std::size_t len = std::min(bs, tr.size() - start);
      Eigen::MatrixXd bx(x.rows(), static_cast<Eigen::Index>(len));
      Eigen::RowVectorXd by(static_cast<Eigen::Index>(len));
      for (std::size_t k = 0; k < len; ++k) {
        bx.col(static_cast<Eigen::Index>(k)) = x.col(static_cast<Eigen::Index>(tr[start + k]));
        by[static_cast<Eigen::Index>(k)] = y[static_cast<Eigen::Index>(tr[start + k])];
      }
      const auto lg = mse_backward(net, bx, by);
      res.history.push_back({epoch, batch, lg.loss});
      if (spec.learning_rate != 0) net.axpy(-spec.learning_rate, lg.grad);
    }
  }
  if (!net.all_finite()) throw Error(ErrorKind::InvariantViolation, "training diverged; lower the learning rate");
  auto gather = [&](const std::vector<std::size_t>& idx, Eigen::MatrixXd& gx, Eigen::RowVectorXd& gy) {
    gx.resize(x.rows(), static_cast<Eigen::Index>(idx.size()));
    gy.resize(static_cast<Eigen::Index>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) {
      gx.col(static_cast<Eigen::Index>(k)) = x.col(static_cast<Eigen::Index>(idx[k]));
      gy[static_cast<Eigen::Index>(k)] = y[static_cast<Eigen::Index>(idx[k])];
    }
  };
  Eigen::MatrixXd gx;
  Eigen::RowVectorXd gy;
  gather(tr, gx, gy);
  res.train_mse = mse(net, gx, gy);
  gather(val, gx, gy);
  res.validation_mse = mse(net, gx, gy);
  return res;
}

inline void design_matrix(const std::vector<TrainingSample>& samples, const PreprocessState& ps, Eigen::MatrixXd& x,
                          Eigen::RowVectorXd& y) {
  x = transform_rows(ps, feature_matrix(samples)).transpose();
  y.resize(static_cast<Eigen::Index>(samples.size()));
  for (std::size_t i = 0; i < samples.size(); ++i) y[static_cast<Eigen::Index>(i)] = samples[i].label;
}

inline TrainResult train(const std::vector<TrainingSample>& samples, const PreprocessState& ps, const TrainSpec& spec) {
  Eigen::MatrixXd x;
  Eigen::RowVectorXd y;
  design_matrix(samples, ps, x, y);
  return train_on(x, y, ps, spec);
}

inline double predict_raw(const Ir2PerfModel& model, const FeatureVector& v) {
  return forward(model.net, transform(model.preproc, v));
}

inline double clamp_prediction(const Ir2PerfModel& model, double raw) {
  return model.clamp ? std::clamp(raw, model.clamp_lo, model.clamp_hi) : raw;
}

inline double predict_speedup(const Ir2PerfModel& model, const Module& m, const CallGraph& cg, const Function& f) {
  return clamp_prediction(model, predict_raw(model, extract_function_features(m, cg, f)));
}

inline double predict_speedup(const Ir2PerfModel& model, const Module& m, std::string_view f) {
  return predict_speedup(model, m, CallGraph(m), m.function(f));
}

// Rollout reward: predicted speedups summed over every function of the module.
inline double module_reward(const Ir2PerfModel& model, const Module& m) {
  const CallGraph cg(m);
  double r = 0;
  for (const auto& [_, f] : m.functions) r += predict_speedup(model, m, cg, f);
  return r;
}

// ---- leave-one-program-out ----

struct CrossValRow {
  std::string program;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  bool absent = false;
  double mse = 0;
  double mean_predictor_mse = 0;
  std::uint64_t train_hash = 0;
  std::uint64_t test_hash = 0;
};

struct CrossValReport {
  std::vector<CrossValRow> rows;
  double geomean_mse = 0;
  double pooled_mse = 0;
  double pooled_mean_predictor_mse = 0;
};

// Order-independent digest of a set of sample ids.
inline std::uint64_t split_hash(std::vector<std::string> ids) {
  std::sort(ids.begin(), ids.end());
  std::uint64_t h = fnv1a("");
  for (const auto& id : ids) h = mix64(h ^ fnv1a(id));
  return h;
}

inline CrossValReport cross_validate(const std::vector<TrainingSample>& samples, const TrainSpec& spec,
                                     const std::vector<std::string>& programs = {}) {
  std::set<std::string> names(programs.begin(), programs.end());
  for (const auto& s : samples) names.insert(s.meta.program_id);
  if (names.size() < 3) throw Error(ErrorKind::InsufficientData, "cross-validation needs at least 3 programs");
  CrossValReport rep;
  double sq = 0, sq_mean = 0, log_sum = 0;
  std::size_t total = 0, present = 0;
  for (const auto& p : names) {
    CrossValRow row;
    row.program = p;
    std::vector<TrainingSample> tr, te;
    std::vector<std::string> tr_ids, te_ids;
    for (const auto& s : samples) {
      if (s.meta.program_id == p) {
        te.push_back(s);
        te_ids.push_back(s.id());
      } else {
        tr.push_back(s);
        tr_ids.push_back(s.id());
      }
    }
    row.n_train = tr.size();
    row.n_test = te.size();
    row.train_hash = split_hash(tr_ids);
    row.test_hash = split_hash(te_ids);
    if (te.empty()) {
      row.absent = true;
      rep.rows.push_back(row);
      continue;
    }
    const PreprocessState ps = fit_preprocess(tr);
    const TrainResult fit = train(tr, ps, spec);
    double mean_label = 0;
    for (const auto& s : tr) mean_label += s.label;
    mean_label /= static_cast<double>(tr.size());
    double e = 0, em = 0;
    for (const auto& s : te) {
      const double d = predict_raw(fit.model, s.features) - s.label;
      e += d * d;
      em += (mean_label - s.label) * (mean_label - s.label);
    }
    sq += e;
    sq_mean += em;
    total += te.size();
    row.mse = e / static_cast<double>(te.size());
    row.mean_predictor_mse = em / static_cast<double>(te.size());
    log_sum += std::log(row.mse);
    ++present;
    rep.rows.push_back(row);
  }
  if (present > 0) {
    rep.geomean_mse = std::exp(log_sum / static_cast<double>(present));
    rep.pooled_mse = sq / static_cast<double>(total);
    rep.pooled_mean_predictor_mse = sq_mean / static_cast<double>(total);
  }
  return rep;
}

// ---- serialization ----

inline Json to_json(const Ir2PerfModel& model) {
  Json j;
  j["schema"] = kIr2PerfSchema;
  j["network"] = to_json(model.net);
  j["clamp"] = {{"enabled", model.clamp}, {"lo", model.clamp_lo}, {"hi", model.clamp_hi}};
  j["preprocess"] = to_json(model.preproc);
  return j;
}

inline Ir2PerfModel ir2perf_from_json(const Json& j) {
  expect_schema(j, kIr2PerfSchema);
  try {
    Ir2PerfModel m;
    m.net = mlp_from_json(j.at("network"), kIr2PerfDims);
    m.clamp = j.at("clamp").at("enabled").get<bool>();
    m.clamp_lo = j.at("clamp").at("lo").get<double>();
    m.clamp_hi = j.at("clamp").at("hi").get<double>();
    m.preproc = preprocess_from_json(j.at("preprocess"));
    return m;
  } catch (const Json::exception& e) {
    throw Error(ErrorKind::Schema, std::string("ir2perf: ") + e.what());
  }
}

inline std::string loss_csv(const std::vector<LossRecord>& history) {
  std::string out = "epoch,batch,loss\n";
  for (const auto& r : history) out += std::to_string(r.epoch) + "," + std::to_string(r.batch) + "," + fmt_double(r.loss) + "\n";
  return out;
}

}  // namespace perfinline
