#pragma once

// Training-data collection: explore inlining configurations per program,
// label post-inlining function features with their speedup over the
// never-inline build, and fit the scaling + PCA preprocessing.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "perfinline/analysis.hpp"
#include "perfinline/error.hpp"
#include "perfinline/features.hpp"
#include "perfinline/inliner.hpp"
#include "perfinline/ir.hpp"
#include "perfinline/module_io.hpp"
#include "perfinline/perf_oracle.hpp"
#include "perfinline/util.hpp"

namespace perfinline {

// Call-site id -> inline?  Keys are sites of the pristine module.
using InlineConfig = std::map<int, bool>;

enum class SearchStrategy { Random, HillClimb };

inline std::string to_string(SearchStrategy s) { return s == SearchStrategy::Random ? "random" : "hill-climb"; }

inline SearchStrategy parse_strategy(std::string_view s) {
  if (s == "random") return SearchStrategy::Random;
  if (s == "hill-climb") return SearchStrategy::HillClimb;
  throw Error(ErrorKind::Config, "unknown search strategy '" + std::string(s) + "'");
}

struct CollectConfig {
  double exclusion_threshold = 3.0;
  double min_overhead_fraction = 0.01;
  int iterations = 32;
  SearchStrategy strategy = SearchStrategy::Random;
  std::uint64_t seed = 1;
  bool symmetric_guard = false;  // also drop labels below 1/threshold

  void check() const {
    if (!(exclusion_threshold > 1)) throw Error(ErrorKind::Config, "exclusion_threshold must be > 1");
    if (!(min_overhead_fraction > 0 && min_overhead_fraction < 1))
      throw Error(ErrorKind::Config, "min_overhead_fraction must lie in (0,1)");
    if (iterations < 1) throw Error(ErrorKind::Config, "iterations must be >= 1");
  }
};

struct SampleMeta {
  std::string program_id;
  std::string function;
  int config_id = 0;
  double global_speedup = 1;

  bool operator==(const SampleMeta&) const = default;
};

struct TrainingSample {
  FeatureVector features;
  double label = 1;
  SampleMeta meta;

  bool operator==(const TrainingSample&) const = default;

  std::string id() const { return meta.program_id + "/" + meta.function + "/" + std::to_string(meta.config_id); }
};

// Sites that may ever be inlined: everything except direct recursion.
inline std::vector<int> inlinable_sites(const Module& m) {
  std::vector<int> ids;
  for (const auto& cs : enumerate_callsites(m))
    if (cs.caller != cs.callee) ids.push_back(cs.id);
  return ids;
}

// Applies the true entries of `cfg` in enumerate order of the pristine module.
inline Module apply_config(const Module& m, const InlineConfig& cfg) {
  Module out = m;
  for (const auto& cs : enumerate_callsites(m)) {
    const auto it = cfg.find(cs.id);
    if (it == cfg.end() || !it->second || cs.caller == cs.callee) continue;
    out = apply_inline(out, cs.id);
  }
  return out;
}

namespace detail {

inline void emit_samples(const Module& configured, const RuntimeResult& base, const RuntimeResult& run, int config_id,
                         const CollectConfig& cc, std::vector<TrainingSample>& out) {
  const CallGraph cg(configured);
  std::vector<const ProfileRecord*> recs;
  for (const auto& r : run.profile) recs.push_back(&r);
  std::sort(recs.begin(), recs.end(), [](auto* a, auto* b) { return a->function < b->function; });
  for (const auto* r : recs) {
    if (r->t_func < cc.min_overhead_fraction) continue;
    const auto* b = base.find(r->function);
    if (!b) continue;
    const double label = func_speedup(func_runtime(base.total, b->t_func, static_cast<double>(b->n_func)),
                                      func_runtime(run.total, r->t_func, static_cast<double>(r->n_func)));
    if (label > cc.exclusion_threshold) continue;
    if (cc.symmetric_guard && label < 1.0 / cc.exclusion_threshold) continue;
    TrainingSample s;
    s.features = extract_function_features(configured, cg, configured.function(r->function));
    s.label = label;
    s.meta = {configured.program_id, r->function, config_id, base.total / run.total};
    out.push_back(std::move(s));
  }
}

}  // namespace detail

struct CollectResult {
  std::vector<TrainingSample> samples;
  std::vector<InlineConfig> configs;
  std::vector<double> runtimes;
};

inline CollectResult autotune_collect_detailed(const Module& m, const CollectConfig& cc, const CostModel& cm = {}) {
  cc.check();
  cm.check();
  const auto sites = inlinable_sites(m);
  const RuntimeResult base = module_runtime(m, cm);
  Rng rng(derive_seed(cc.seed, fnv1a(m.program_id)));

  CollectResult res;
  InlineConfig best;
  for (int id : sites) best[id] = false;
  double best_runtime = base.total;

  for (int k = 0; k < cc.iterations; ++k) {
    InlineConfig cfg = best;
    if (k > 0 && !sites.empty()) {
      if (cc.strategy == SearchStrategy::Random) {
        for (int id : sites) cfg[id] = rng.bernoulli(0.5);
      } else {
        const int id = sites[rng.below(sites.size())];
        cfg[id] = !cfg[id];
      }
    }
    const Module configured = k == 0 ? m : apply_config(m, cfg);
    const RuntimeResult run = k == 0 ? base : module_runtime(configured, cm);
    detail::emit_samples(configured, base, run, k, cc, res.samples);
    if (cc.strategy == SearchStrategy::HillClimb && run.total < best_runtime) {
      best = cfg;
      best_runtime = run.total;
    }
    res.configs.push_back(std::move(cfg));
    res.runtimes.push_back(run.total);
  }
  return res;
}

inline std::vector<TrainingSample> autotune_collect(const Module& m, const CollectConfig& cc, const CostModel& cm = {}) {
  return autotune_collect_detailed(m, cc, cm).samples;
}

inline std::vector<TrainingSample> dedup(const std::vector<TrainingSample>& samples) {
  std::set<std::pair<std::array<double, kFunctionFeatures>, double>> seen;
  std::vector<TrainingSample> out;
  for (const auto& s : samples)
    if (seen.emplace(s.features.values, s.label).second) out.push_back(s);
  return out;
}

// Fraction of samples whose function got faster while the program got slower.
inline double contradiction_rate(const std::vector<TrainingSample>& samples) {
  if (samples.empty()) return 0;
  std::size_t n = 0;
  for (const auto& s : samples) n += s.label > 1 && s.meta.global_speedup < 1;
  return static_cast<double>(n) / static_cast<double>(samples.size());
}

// ---- dataset CSV ----

inline std::string dataset_csv_header() {
  return FeatureVector::csv_header() + ",label,program,function,config,global_speedup";
}

inline std::string to_csv(const std::vector<TrainingSample>& samples) {
  std::string out = dataset_csv_header() + "\n";
  for (const auto& s : samples)
    out += s.features.csv_row() + "," + fmt_double(s.label) + "," + s.meta.program_id + "," + s.meta.function + "," +
           std::to_string(s.meta.config_id) + "," + fmt_double(s.meta.global_speedup) + "\n";
  return out;
}

inline std::vector<TrainingSample> dataset_from_csv(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  // Leading '#' lines carry the manifest digest.
  while (std::getline(in, line) && line.rfind('#', 0) == 0) {
  }
  if (!in || line != dataset_csv_header())
    throw Error(ErrorKind::Schema, "dataset header does not match the expected columns");
  std::vector<TrainingSample> out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cols = split(line, ',');
    if (cols.size() != kFunctionFeatures + 5)
      throw Error(ErrorKind::Schema, "dataset line " + std::to_string(lineno) + ": wrong column count");
    TrainingSample s;
    try {
      for (std::size_t i = 0; i < kFunctionFeatures; ++i) s.features[i] = std::stod(cols[i]);
      s.label = std::stod(cols[kFunctionFeatures]);
      s.meta.program_id = cols[kFunctionFeatures + 1];
      s.meta.function = cols[kFunctionFeatures + 2];
      s.meta.config_id = std::stoi(cols[kFunctionFeatures + 3]);
      s.meta.global_speedup = std::stod(cols[kFunctionFeatures + 4]);
    } catch (const std::logic_error&) {
      throw Error(ErrorKind::Schema, "dataset line " + std::to_string(lineno) + ": bad number");
    }
    out.push_back(std::move(s));
  }
  return out;
}

// ---- scaling + PCA ----

inline constexpr int kPrincipalComponents = 7;
inline constexpr std::size_t kMinPreprocessSamples = 8;
inline constexpr const char* kPreprocSchema = "preproc/1";

struct PreprocessState {
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(kFunctionFeatures);
  Eigen::VectorXd stddev = Eigen::VectorXd::Ones(kFunctionFeatures);
  std::vector<bool> constant = std::vector<bool>(kFunctionFeatures, false);
  Eigen::MatrixXd components = Eigen::MatrixXd::Zero(kPrincipalComponents, kFunctionFeatures);  // rows
  Eigen::VectorXd variances = Eigen::VectorXd::Zero(kPrincipalComponents);

  bool operator==(const PreprocessState& o) const {
    return mean == o.mean && stddev == o.stddev && constant == o.constant && components == o.components &&
           variances == o.variances;
  }
};

inline Eigen::VectorXd to_eigen(const FeatureVector& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.values.data(), static_cast<Eigen::Index>(v.values.size()));
}

inline Eigen::MatrixXd feature_matrix(const std::vector<TrainingSample>& samples) {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(samples.size()), kFunctionFeatures);
  for (std::size_t i = 0; i < samples.size(); ++i) x.row(static_cast<Eigen::Index>(i)) = to_eigen(samples[i].features);
  return x;
}

// Rows of `x` are observations.
inline PreprocessState fit_preprocess(const Eigen::MatrixXd& x) {
  const Eigen::Index n = x.rows();
  {
    std::set<std::vector<double>> distinct;
    for (Eigen::Index i = 0; i < n; ++i) distinct.emplace(x.row(i).begin(), x.row(i).end());
    if (distinct.size() < kMinPreprocessSamples)
      throw Error(ErrorKind::InsufficientData, "need at least " + std::to_string(kMinPreprocessSamples) +
                                                   " distinct samples, got " + std::to_string(distinct.size()));
  }
  PreprocessState ps;
  ps.mean = x.colwise().mean().transpose();
  const Eigen::MatrixXd centered = x.rowwise() - ps.mean.transpose();
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const double sd = std::sqrt(centered.col(j).squaredNorm() / static_cast<double>(n));
    ps.constant[static_cast<std::size_t>(j)] = !(sd > 0);
    ps.stddev[j] = sd > 0 ? sd : 1.0;
  }
  const Eigen::MatrixXd z = centered.array().rowwise() / ps.stddev.transpose().array();
  const Eigen::MatrixXd cov = (z.transpose() * z) / static_cast<double>(n);

  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  if (es.info() != Eigen::Success) throw Error(ErrorKind::InvariantViolation, "eigendecomposition failed");
  // Eigen sorts ascending; take from the top.
  for (int k = 0; k < kPrincipalComponents; ++k) {
    const Eigen::Index src = cov.rows() - 1 - k;
    Eigen::VectorXd v = es.eigenvectors().col(src);
    Eigen::Index arg = 0;
    for (Eigen::Index j = 1; j < v.size(); ++j)
      if (std::abs(v[j]) > std::abs(v[arg])) arg = j;
    if (v[arg] < 0) v = -v;
    ps.components.row(k) = v.transpose();
    ps.variances[k] = std::max(0.0, es.eigenvalues()[src]);
  }
  return ps;
}

inline PreprocessState fit_preprocess(const std::vector<TrainingSample>& samples) {
  return fit_preprocess(feature_matrix(samples));
}

inline Eigen::VectorXd transform(const PreprocessState& ps, const Eigen::VectorXd& v) {
  return ps.components * ((v - ps.mean).array() / ps.stddev.array()).matrix();
}

inline Eigen::VectorXd transform(const PreprocessState& ps, const FeatureVector& v) { return transform(ps, to_eigen(v)); }

// Rows in, rows out.
inline Eigen::MatrixXd transform_rows(const PreprocessState& ps, const Eigen::MatrixXd& x) {
  const Eigen::MatrixXd z = (x.rowwise() - ps.mean.transpose()).array().rowwise() / ps.stddev.transpose().array();
  return z * ps.components.transpose();
}

namespace detail {

inline Json vec_json(const Eigen::VectorXd& v) {
  Json a = Json::array();
  for (double x : v) a.push_back(x);
  return a;
}

inline Eigen::VectorXd json_vec(const Json& a, Eigen::Index n, const char* what) {
  if (!a.is_array() || static_cast<Eigen::Index>(a.size()) != n)
    throw Error(ErrorKind::Schema, std::string(what) + ": expected " + std::to_string(n) + " numbers");
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = a[static_cast<std::size_t>(i)].get<double>();
  return v;
}

}  // namespace detail

inline Json to_json(const PreprocessState& ps) {
  Json j;
  j["schema"] = kPreprocSchema;
  j["features"] = Json::array();
  for (auto n : kFunctionFeatureNames) j["features"].push_back(std::string(n));
  j["mean"] = detail::vec_json(ps.mean);
  j["std"] = detail::vec_json(ps.stddev);
  j["constant"] = Json::array();
  for (bool c : ps.constant) j["constant"].push_back(c);
  j["components"] = Json::array();
  for (Eigen::Index k = 0; k < ps.components.rows(); ++k)
    j["components"].push_back(detail::vec_json(ps.components.row(k).transpose()));
  j["variances"] = detail::vec_json(ps.variances);
  return j;
}

inline PreprocessState preprocess_from_json(const Json& j) {
  expect_schema(j, kPreprocSchema);
  try {
    PreprocessState ps;
    ps.mean = detail::json_vec(j.at("mean"), kFunctionFeatures, "mean");
    ps.stddev = detail::json_vec(j.at("std"), kFunctionFeatures, "std");
    const auto& c = j.at("constant");
    if (!c.is_array() || c.size() != kFunctionFeatures) throw Error(ErrorKind::Schema, "constant: wrong length");
    for (std::size_t i = 0; i < kFunctionFeatures; ++i) ps.constant[i] = c[i].get<bool>();
    const auto& comps = j.at("components");
    if (!comps.is_array() || comps.size() != kPrincipalComponents)
      throw Error(ErrorKind::Schema, "components: expected " + std::to_string(kPrincipalComponents) + " rows");
    for (int k = 0; k < kPrincipalComponents; ++k)
      ps.components.row(k) = detail::json_vec(comps[static_cast<std::size_t>(k)], kFunctionFeatures, "component").transpose();
    ps.variances = detail::json_vec(j.at("variances"), kPrincipalComponents, "variances");
    return ps;
  } catch (const Json::exception& e) {
    throw Error(ErrorKind::Schema, std::string("preproc: ") + e.what());
  }
}

}  // namespace perfinline
