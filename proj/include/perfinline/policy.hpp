#pragma once

// Inlining agent: a small policy network over call-site features, trained
// with perturbed rollouts and a log-likelihood update, plus the deployment
// advisor, baseline inliners, evaluation report and loop-region tuner.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "perfinline/analysis.hpp"
#include "perfinline/dataset.hpp"
#include "perfinline/features.hpp"
#include "perfinline/inliner.hpp"
#include "perfinline/mlp.hpp"
#include "perfinline/perf_oracle.hpp"
#include "perfinline/util.hpp"

namespace perfinline {

inline const std::vector<int> kPolicyDims = {static_cast<int>(kCallSiteFeatures), 64, 64, 2};
inline constexpr const char* kPolicySchema = "policy/1";
inline constexpr double kRolloutGrowthCap = 64.0;

struct PolicyParams {
  Mlp net = Mlp(kPolicyDims);

  static PolicyParams random(std::uint64_t seed) { return {Mlp::random(kPolicyDims, seed)}; }
  bool operator==(const PolicyParams&) const = default;
};

// Features are non-negative counts and frequencies spanning several orders
// of magnitude; log1p keeps the network input in a narrow range.
inline Eigen::VectorXd policy_input(const CalleeFeatureVector& x) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(kCallSiteFeatures));
  for (std::size_t i = 0; i < kCallSiteFeatures; ++i) v[static_cast<Eigen::Index>(i)] = std::log1p(std::max(0.0, x[i]));
  return v;
}

// Numerically stable log-softmax over the two logits.
inline Eigen::Vector2d log_softmax(const Eigen::Vector2d& logits) {
  const double mx = logits.maxCoeff();
  const double lse = mx + std::log(std::exp(logits[0] - mx) + std::exp(logits[1] - mx));
  return logits.array() - lse;
}

enum class ActMode { Sample, Argmax };

struct Action {
  bool inline_call = false;
  double log_prob = 0;
};

inline Action act(const PolicyParams& p, const CalleeFeatureVector& x, ActMode mode, Rng& rng) {
  const Eigen::Vector2d lp = log_softmax(p.net.forward(policy_input(x)).col(0));
  bool a;
  if (mode == ActMode::Argmax)
    a = lp[1] > lp[0];  // ties go to no-inline
  else
    a = rng.uniform() < std::exp(lp[1]);
  return {a, lp[a ? 1 : 0]};
}

struct Step {
  int callsite_id = -1;
  CalleeFeatureVector features;
  bool action = false;
  double log_prob = 0;
  bool forced = false;  // direct recursion or growth cap: always no-inline
};

struct Trajectory {
  std::string program_id;
  std::vector<Step> steps;
  double total_reward = 0;
  bool guard_triggered = false;
};

using RewardFn = std::function<double(const Module&)>;
using InlineDecider = std::function<bool(const Module&, const CallGraph&, const CallSite&)>;

// Visits the first not-yet-visited site of the evolving module until none
// is left. `decide` is consulted for every site that is not forced.
inline Module inline_walk(const Module& m, const InlineDecider& decide, std::vector<Step>* steps = nullptr,
                          bool* guard = nullptr, const CostModel& cm = {}) {
  Module cur = m;
  std::set<int> visited;
  const double cap = kRolloutGrowthCap * std::max(1.0, module_size(m));
  for (;;) {
    const CallGraph cg(cur);
    const auto sites = enumerate_callsites(cur, cg);
    const auto it = std::find_if(sites.begin(), sites.end(), [&](const CallSite& cs) { return !visited.count(cs.id); });
    if (it == sites.end()) break;
    const CallSite cs = *it;
    visited.insert(cs.id);
    Step step;
    step.callsite_id = cs.id;
    if (steps) step.features = extract_callsite_features(cur, cg, cs, cm);
    const bool over_cap = module_size(cur) > cap;
    if (over_cap && guard) *guard = true;
    step.forced = cs.caller == cs.callee || over_cap;
    if (!step.forced) step.action = decide(cur, cg, cs);
    if (steps) steps->push_back(step);
    if (step.action) cur = apply_inline(cur, cs.id);
  }
  return cur;
}

struct RolloutResult {
  Trajectory trajectory;
  Module module;
};

// Acts with `actor`; log-probs of the chosen actions are scored under
// `scorer` (the actor itself when null).
inline RolloutResult rollout(const Module& m, const PolicyParams& actor, ActMode mode, Rng& rng,
                             const RewardFn& reward = {}, const PolicyParams* scorer = nullptr,
                             const CostModel& cm = {}) {
  RolloutResult res;
  res.trajectory.program_id = m.program_id;
  const PolicyParams& score = scorer ? *scorer : actor;
  auto& steps = res.trajectory.steps;
  res.module = inline_walk(
      m,
      [&](const Module& cur, const CallGraph& cg, const CallSite& cs) {
        const auto x = extract_callsite_features(cur, cg, cs, cm);
        const Action a = act(actor, x, mode, rng);
        return a.inline_call;
      },
      &steps, &res.trajectory.guard_triggered, cm);
  for (auto& s : steps) {
    if (s.forced) {
      s.log_prob = 0;  // probability one
      continue;
    }
    const Eigen::Vector2d lp = log_softmax(score.net.forward(policy_input(s.features)).col(0));
    s.log_prob = lp[s.action ? 1 : 0];
  }
  if (reward) res.trajectory.total_reward = reward(res.module);
  return res;
}

// Gradient of (1/n) * sum_i w_i * sum_t log pi(a_it | s_it) with respect to
// the network parameters; forced steps are excluded.
inline Mlp policy_gradient(const PolicyParams& p, const std::vector<Trajectory>& trajs, const std::vector<double>& weights) {
  Mlp g = p.net.zeros_like();
  std::size_t cols = 0;
  for (const auto& t : trajs)
    for (const auto& s : t.steps) cols += !s.forced;
  if (cols == 0 || trajs.empty()) return g;
  Eigen::MatrixXd x(static_cast<Eigen::Index>(kCallSiteFeatures), static_cast<Eigen::Index>(cols));
  std::vector<std::pair<std::size_t, bool>> meta;
  Eigen::Index c = 0;
  for (std::size_t i = 0; i < trajs.size(); ++i)
    for (const auto& s : trajs[i].steps) {
      if (s.forced) continue;
      x.col(c++) = policy_input(s.features);
      meta.emplace_back(i, s.action);
    }
  Mlp::Trace tr;
  const Eigen::MatrixXd logits = p.net.forward(x, tr);
  Eigen::MatrixXd grad_out(2, x.cols());
  const double n = static_cast<double>(trajs.size());
  for (Eigen::Index k = 0; k < x.cols(); ++k) {
    const Eigen::Vector2d lp = log_softmax(logits.col(k));
    const double w = weights[meta[static_cast<std::size_t>(k)].first] / n;
    const int a = meta[static_cast<std::size_t>(k)].second ? 1 : 0;
    for (int j = 0; j < 2; ++j) grad_out(j, k) = w * ((j == a ? 1.0 : 0.0) - std::exp(lp[j]));
  }
  return p.net.backward(tr, grad_out);
}

// The objective whose gradient policy_gradient returns.
inline double policy_objective(const PolicyParams& p, const std::vector<Trajectory>& trajs,
                               const std::vector<double>& weights) {
  double j = 0;
  for (std::size_t i = 0; i < trajs.size(); ++i)
    for (const auto& s : trajs[i].steps) {
      if (s.forced) continue;
      const Eigen::Vector2d lp = log_softmax(p.net.forward(policy_input(s.features)).col(0));
      j += weights[i] * lp[s.action ? 1 : 0];
    }
  return trajs.empty() ? 0 : j / static_cast<double>(trajs.size());
}

inline std::vector<double> normalize_rewards(const std::vector<double>& r) {
  std::vector<double> out(r.size(), 0.0);
  if (r.empty() || std::all_of(r.begin(), r.end(), [&](double v) { return v == r.front(); })) return out;
  double mean = 0;
  for (double v : r) mean += v;
  mean /= static_cast<double>(r.size());
  double var = 0;
  for (double v : r) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / static_cast<double>(r.size()));
  for (std::size_t i = 0; i < r.size(); ++i) out[i] = (r[i] - mean) / (sd + 1e-8);
  return out;
}

struct TrainerConfig {
  double alpha = 0.01;
  double sigma = 0.01;
  int rollouts = 8;
  int iterations = 200;
  bool normalize_rewards = true;
  std::uint64_t seed = 1;
  std::vector<Module> corpus;

  void check() const {
    if (!(alpha >= 0) || !std::isfinite(alpha)) throw Error(ErrorKind::Config, "alpha must be >= 0");
    if (!(sigma >= 0) || !std::isfinite(sigma)) throw Error(ErrorKind::Config, "sigma must be >= 0");
    if (rollouts < 1) throw Error(ErrorKind::Config, "rollouts must be >= 1");
    if (iterations < 0) throw Error(ErrorKind::Config, "iterations must be >= 0");
    if (corpus.empty()) throw Error(ErrorKind::Config, "training corpus is empty");
  }
};

struct IterationRecord {
  int iteration = 0;
  std::string program_id;
  double mean_reward = 0;
  double reward_std = 0;
  bool skipped = false;
};

struct PolicyTrainResult {
  PolicyParams params;
  std::vector<IterationRecord> history;
  int skipped = 0;
};

inline PolicyTrainResult train_policy(const TrainerConfig& tc, const RewardFn& reward,
                                      const PolicyParams* init = nullptr, const CostModel& cm = {}) {
  tc.check();
  PolicyTrainResult res;
  res.params = init ? *init : PolicyParams::random(derive_seed(tc.seed, 0x696e6974));
  const auto nparam = static_cast<Eigen::Index>(res.params.net.parameter_count());
  for (int it = 0; it < tc.iterations; ++it) {
    const Module& m = tc.corpus[static_cast<std::size_t>(it) % tc.corpus.size()];
    std::vector<Trajectory> trajs;
    std::vector<double> rewards;
    for (int i = 0; i < tc.rollouts; ++i) {
      Rng rng(derive_seed(tc.seed, static_cast<std::uint64_t>(it), static_cast<std::uint64_t>(i)));
      PolicyParams perturbed = res.params;
      if (tc.sigma > 0) {
        Eigen::VectorXd theta = perturbed.net.flatten();
        for (Eigen::Index k = 0; k < nparam; ++k) theta[k] += tc.sigma * rng.normal();
        perturbed.net.assign(theta);
      }
      auto r = rollout(m, perturbed, ActMode::Sample, rng, reward, &res.params, cm);
      rewards.push_back(r.trajectory.total_reward);
      trajs.push_back(std::move(r.trajectory));
    }
    IterationRecord rec;
    rec.iteration = it;
    rec.program_id = m.program_id;
    for (double r : rewards) rec.mean_reward += r;
    rec.mean_reward /= static_cast<double>(rewards.size());
    for (double r : rewards) rec.reward_std += (r - rec.mean_reward) * (r - rec.mean_reward);
    rec.reward_std = std::sqrt(rec.reward_std / static_cast<double>(rewards.size()));
    rec.skipped = std::all_of(trajs.begin(), trajs.end(), [](const Trajectory& t) {
      return std::all_of(t.steps.begin(), t.steps.end(), [](const Step& s) { return s.forced; });
    });
    if (rec.skipped) {
      ++res.skipped;
    } else {
      const auto w = tc.normalize_rewards ? normalize_rewards(rewards) : rewards;
      if (tc.alpha != 0) res.params.net.axpy(tc.alpha, policy_gradient(res.params, trajs, w));
    }
    res.history.push_back(rec);
  }
  if (!res.params.net.all_finite()) throw Error(ErrorKind::InvariantViolation, "policy parameters diverged");
  return res;
}

// ---- deployment ----

struct Decision {
  int callsite_id = -1;
  CalleeFeatureVector features;
  bool inline_call = false;
  bool forced = false;
};

struct Advice {
  Module module;
  std::vector<Decision> log;
};

inline Advice advise(const Module& m, const PolicyParams& p, const CostModel& cm = {}) {
  Rng unused(0);
  auto r = rollout(m, p, ActMode::Argmax, unused, {}, nullptr, cm);
  Advice a{std::move(r.module), {}};
  for (const auto& s : r.trajectory.steps) a.log.push_back({s.callsite_id, s.features, s.action, s.forced});
  return a;
}

inline std::string decision_log_csv(const std::vector<Decision>& log) {
  std::string out = "callsite," + CalleeFeatureVector::csv_header() + ",inline,forced\n";
  for (const auto& d : log)
    out += std::to_string(d.callsite_id) + "," + d.features.csv_row() + "," + (d.inline_call ? "1" : "0") + "," +
           (d.forced ? "1" : "0") + "\n";
  return out;
}

// ---- baselines ----

inline constexpr double kHeuristicThreshold = 30;

inline Module never_inline(const Module& m) { return m; }

inline Module heuristic_inline(const Module& m, const CostModel& cm = {}) {
  return inline_walk(
      m,
      [&](const Module& cur, const CallGraph& cg, const CallSite& cs) {
        return !cg.is_recursive(cs.callee) && static_cost(cur, cs.callee, cm) <= kHeuristicThreshold;
      },
      nullptr, nullptr, cm);
}

inline Module size_inline(const Module& m, const CostModel& cm = {}) {
  return inline_walk(
      m,
      [](const Module& cur, const CallGraph&, const CallSite& cs) {
        return module_size(apply_inline(cur, cs.id)) <= module_size(cur);
      },
      nullptr, nullptr, cm);
}

inline Module random_inline(const Module& m, std::uint64_t seed, const CostModel& cm = {}) {
  Rng rng(seed);
  return inline_walk(
      m, [&](const Module&, const CallGraph&, const CallSite&) { return rng.bernoulli(0.5); }, nullptr, nullptr, cm);
}

inline Module policy_inline(const Module& m, const PolicyParams& p, const CostModel& cm = {}) {
  return advise(m, p, cm).module;
}

struct OptimumResult {
  double runtime = 0;
  InlineConfig config;
  std::size_t configs_evaluated = 0;
};

// Exhaustive search over the pristine module's inlinable sites.
inline OptimumResult exhaustive_optimum(const Module& m, const CostModel& cm = {}, std::size_t max_sites = 16) {
  const auto sites = inlinable_sites(m);
  if (sites.size() > max_sites) throw Error(ErrorKind::Config, "too many call sites for exhaustive search");
  OptimumResult best;
  best.runtime = std::numeric_limits<double>::infinity();
  for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << sites.size()); ++mask) {
    InlineConfig cfg;
    for (std::size_t i = 0; i < sites.size(); ++i) cfg[sites[i]] = (mask >> i) & 1;
    const double t = module_runtime(apply_config(m, cfg), cm).total;
    ++best.configs_evaluated;
    if (t < best.runtime) {
      best.runtime = t;
      best.config = cfg;
    }
  }
  return best;
}

// ---- loop-region tuning ----

struct RegionTuneResult {
  double baseline_runtime = 0;
  double best_runtime = 0;
  std::size_t regions = 0;
  std::size_t evaluations = 0;
  std::map<Region, LoopConfig> best_config;
};

inline RegionTuneResult autotune_regions(const Module& m, int budget = 120, const CostModel& cm = {},
                                         std::uint64_t seed = 1) {
  if (budget < 1) throw Error(ErrorKind::Config, "tuning budget must be >= 1");
  std::vector<LoopConfig> grid;
  for (int u : kUnrollGrid)
    for (int i : kInterleaveGrid) grid.push_back({u, i});
  const auto regions = tunable_regions(m);
  RegionTuneResult res;
  res.regions = regions.size();
  res.baseline_runtime = module_runtime(m, cm).total;

  std::vector<std::size_t> cur(regions.size(), 0);  // grid index 0 is (0,1), the identity
  auto eval = [&](const std::vector<std::size_t>& pick) {
    std::map<Region, LoopConfig> cfg;
    for (std::size_t r = 0; r < regions.size(); ++r) cfg[regions[r]] = grid[pick[r]];
    const double t = module_runtime(apply_unroll_config(m, cfg), cm).total;
    ++res.evaluations;
    if (t < res.best_runtime) {
      res.best_runtime = t;
      res.best_config = cfg;
    }
    return t;
  };
  res.best_runtime = std::numeric_limits<double>::infinity();
  double cur_t = eval(cur);
  if (regions.empty()) return res;

  double space = 1;
  for (std::size_t r = 0; r < regions.size() && space <= budget; ++r) space *= static_cast<double>(grid.size());
  if (space <= budget) {
    std::vector<std::size_t> pick(regions.size(), 0);
    for (;;) {
      std::size_t r = 0;
      while (r < pick.size() && ++pick[r] == grid.size()) pick[r++] = 0;
      if (r == pick.size()) break;
      eval(pick);
    }
    return res;
  }
  Rng rng(derive_seed(seed, fnv1a(m.program_id)));
  const int random_phase = budget / 2;
  while (static_cast<int>(res.evaluations) < random_phase) {
    std::vector<std::size_t> pick(regions.size());
    for (auto& p : pick) p = rng.below(grid.size());
    const double t = eval(pick);
    if (t < cur_t) {
      cur_t = t;
      cur = pick;
    }
  }
  while (static_cast<int>(res.evaluations) < budget) {
    auto pick = cur;
    const std::size_t r = rng.below(regions.size());
    pick[r] = (pick[r] + 1 + rng.below(grid.size() - 1)) % grid.size();
    const double t = eval(pick);
    if (t < cur_t) {
      cur_t = t;
      cur = pick;
    }
  }
  return res;
}

// ---- evaluation ----

inline const std::vector<std::string> kStrategies = {"never-inline", "heuristic-baseline", "size-baseline", "policy"};

struct StrategyResult {
  double runtime = 0;  // trimmed mean
  double relative_variance = 0;
  double size = 0;  // instruction count
  std::size_t regions = 0;
};

struct ProgramEvaluation {
  std::string program_id;
  std::map<std::string, StrategyResult> strategies;
};

struct EvaluationReport {
  std::vector<ProgramEvaluation> programs;
  std::map<std::string, double> geomean_speedup;     // policy vs each strategy
  std::map<std::string, double> geomean_size_ratio;  // policy size / strategy size
  double noise_epsilon = 0;
};

inline void check_disjoint(const std::vector<std::string>& train_ids, const std::vector<Module>& test) {
  const std::set<std::string> tr(train_ids.begin(), train_ids.end());
  for (const auto& m : test)
    if (tr.count(m.program_id))
      throw Error(ErrorKind::Overlap, "program '" + m.program_id + "' appears in both training and evaluation sets");
}

inline ProgramEvaluation evaluate_program(const Module& m, const PolicyParams& p, const CostModel& cm,
                                          double noise_epsilon = 0, std::uint64_t seed = 1) {
  ProgramEvaluation pe;
  pe.program_id = m.program_id;
  const std::map<std::string, Module> variants = {{"never-inline", never_inline(m)},
                                                  {"heuristic-baseline", heuristic_inline(m, cm)},
                                                  {"size-baseline", size_inline(m, cm)},
                                                  {"policy", policy_inline(m, p, cm)}};
  for (const auto& name : kStrategies) {
    const Module& v = variants.at(name);
    const auto meas = measure(v, cm, noise_epsilon, derive_seed(seed, fnv1a(m.program_id), fnv1a(name)));
    pe.strategies[name] = {meas.trimmed_mean, meas.relative_variance, static_cast<double>(v.instruction_count()),
                           count_tunable_regions(v)};
  }
  return pe;
}

// Geometric means of the policy's speedup and size ratio against each strategy.
inline EvaluationReport summarize(std::vector<ProgramEvaluation> programs, double noise_epsilon) {
  EvaluationReport rep;
  rep.noise_epsilon = noise_epsilon;
  std::map<std::string, double> log_speed, log_size;
  for (const auto& pe : programs) {
    const auto& pol = pe.strategies.at("policy");
    for (const auto& name : kStrategies) {
      log_speed[name] += std::log(pe.strategies.at(name).runtime / pol.runtime);
      log_size[name] += std::log(pol.size / pe.strategies.at(name).size);
    }
  }
  const double n = static_cast<double>(programs.size());
  for (const auto& name : kStrategies) {
    rep.geomean_speedup[name] = programs.empty() ? 1.0 : std::exp(log_speed[name] / n);
    rep.geomean_size_ratio[name] = programs.empty() ? 1.0 : std::exp(log_size[name] / n);
  }
  rep.programs = std::move(programs);
  return rep;
}

inline EvaluationReport evaluate(const std::vector<Module>& corpus, const PolicyParams& p, const CostModel& cm,
                                 const std::vector<std::string>& train_ids, double noise_epsilon = 0,
                                 std::uint64_t seed = 1) {
  check_disjoint(train_ids, corpus);
  std::vector<ProgramEvaluation> programs;
  for (const auto& m : corpus) programs.push_back(evaluate_program(m, p, cm, noise_epsilon, seed));
  return summarize(std::move(programs), noise_epsilon);
}

// ---- serialization ----

inline Json to_json(const PolicyParams& p) {
  Json j;
  j["schema"] = kPolicySchema;
  j["input_transform"] = "log1p";
  j["tie_rule"] = "no-inline";
  j["forced_no_rule"] = "direct-recursion";
  j["network"] = to_json(p.net);
  return j;
}

inline PolicyParams policy_from_json(const Json& j) {
  expect_schema(j, kPolicySchema);
  try {
    return {mlp_from_json(j.at("network"), kPolicyDims)};
  } catch (const Json::exception& e) {
    throw Error(ErrorKind::Schema, std::string("policy: ") + e.what());
  }
}

}  // namespace perfinline
