#pragma once

// Deterministic stand-in for running a program: a static cost model over the
// synthetic IR, a flat profile (self-time shares and call counts), the
// function-runtime attribution and speedup label formulas, a noisy
// measurement protocol with trimmed means, and cost-side loop unrolling.

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "perfinline/analysis.hpp"
#include "perfinline/ir.hpp"
#include "perfinline/util.hpp"

namespace perfinline {

struct CostModel {
  double w_fdiv = 8;
  double w_fmul = 4;
  double w_fadd = 2;
  double w_fsub = 2;
  double w_ret = 1;
  double w_generic = 1;
  double call_overhead = 10;
  double per_arg_setup = 1;
  double const_param_bonus = 0.05;
  double const_bonus_floor = 0.5;
  double icache_beta = 0.5;
  double trip_estimate = 8;
  // Per-iteration loop bookkeeping carried by every block inside a loop (part
  // of its instruction cost); unrolling by u divides it by u.
  double loop_overhead = 1;

  void check() const {
    for (double w : {w_fdiv, w_fmul, w_fadd, w_fsub, w_ret, w_generic, call_overhead, trip_estimate})
      if (!(w > 0)) throw Error(ErrorKind::Config, "cost model weights must be positive");
    if (per_arg_setup < 0 || loop_overhead < 0 || icache_beta < 0 || const_param_bonus < 0)
      throw Error(ErrorKind::Config, "cost model terms must be non-negative");
    if (!(const_bonus_floor > 0 && const_bonus_floor <= 1)) throw Error(ErrorKind::Config, "bonus floor must be in (0,1]");
  }

  double weight(Opcode op) const {
    switch (op) {
      case Opcode::FDiv: return w_fdiv;
      case Opcode::FMul: return w_fmul;
      case Opcode::FAdd: return w_fadd;
      case Opcode::FSub: return w_fsub;
      case Opcode::Ret: return w_ret;
      case Opcode::Generic: return w_generic;
      case Opcode::Call: return call_overhead;
    }
    return w_generic;
  }

  // Cost multiplier applied to a callee invoked with `const_args` constant arguments.
  double const_multiplier(int const_args) const {
    return std::max(const_bonus_floor, 1.0 - const_param_bonus * const_args);
  }

  double context_multiplier(const std::vector<int>& ctx) const {
    double m = 1.0;
    for (int k : ctx) m *= const_multiplier(k);
    return m;
  }

  double call_cost(const Module& m, const Instruction& call) const {
    return call_overhead + per_arg_setup * m.function(call.callee).param_count;
  }

  bool operator==(const CostModel&) const = default;
};

// Weighted instruction sum of a function body; frequencies ignored.
inline double static_cost(const Module& m, const Function& f, const CostModel& cm = {}) {
  double c = 0;
  for (const auto& b : f.blocks)
    for (const auto& ins : b.instructions) c += ins.op == Opcode::Call ? cm.call_cost(m, ins) : cm.weight(ins.op);
  return c;
}

inline double static_cost(const Module& m, std::string_view f, const CostModel& cm = {}) {
  return static_cost(m, m.function(f), cm);
}

inline double icache_penalty(double size, double budget, const CostModel& cm) {
  return 1.0 + cm.icache_beta * std::max(0.0, size - budget) / budget;
}

struct ProfileRecord {
  std::string function;
  double t_func = 0;        // share of total runtime spent in the function itself
  double n_func = 0;        // call count; 1 for the entry function
  double total_runtime = 0;
  bool in_cycle = false;    // member of a recursive call-graph cycle
};

struct RuntimeResult {
  double total = 0;
  double penalty = 1;
  std::vector<ProfileRecord> profile;  // reached functions, by name

  const ProfileRecord* find(std::string_view f) const {
    for (const auto& r : profile)
      if (r.function == f) return &r;
    return nullptr;
  }
};

namespace detail {

struct SelfCost {
  double per_invocation = 0;
  // (callee, frequency x context x constant-argument multiplier, frequency) per call.
  struct Edge {
    std::size_t callee;
    double weighted;
    double raw;
  };
  std::vector<Edge> calls;
};

inline SelfCost self_cost(const Module& m, const Function& f, const CallGraph& cg, const CostModel& cm) {
  const FunctionAnalysis fa(f);
  SelfCost sc;
  for (std::size_t bi = 0; bi < f.blocks.size(); ++bi) {
    const auto& b = f.blocks[bi];
    const int depth = fa.depth(bi);
    const double freq = std::pow(cm.trip_estimate, depth);
    const double arith_div = b.interleave > 1 ? std::min(b.interleave, 2) : 1;
    double body = 0;
    for (const auto& ins : b.instructions) {
      const double ctx = cm.context_multiplier(ins.inline_context);
      if (ins.op == Opcode::Call) {
        body += ctx * cm.call_cost(m, ins);
        sc.calls.push_back({cg.index.at(ins.callee), freq * ctx * cm.const_multiplier(ins.const_args), freq});
      } else {
        const double w = cm.weight(ins.op);
        body += ctx * (is_arithmetic(ins.op) ? w / arith_div : w);
      }
    }
    if (depth > 0 && b.unroll >= 2) body -= (1.0 - 1.0 / b.unroll) * std::min(cm.loop_overhead, body);
    sc.per_invocation += freq * body;
  }
  return sc;
}

}  // namespace detail

// Total runtime and flat profile. Within a recursive component a call back
// into the component contributes the callee's own body once instead of
// recursing, and call counts along intra-component edges are counted once.
inline RuntimeResult module_runtime(const Module& m, const CostModel& cm = {}) {
  const CallGraph cg(m);
  const std::size_t n = cg.names.size();
  std::vector<detail::SelfCost> self(n);
  for (std::size_t v = 0; v < n; ++v) self[v] = detail::self_cost(m, m.functions.at(cg.names[v]), cg, cm);

  // Inclusive cost, callees first (Tarjan order).
  std::vector<double> dyn(n, 0);
  for (const auto& comp : cg.components)
    for (auto v : comp) {
      double d = self[v].per_invocation;
      for (const auto& e : self[v].calls)
        d += e.weighted * (cg.scc[e.callee] == cg.scc[v] ? self[e.callee].per_invocation : dyn[e.callee]);
      dyn[v] = d;
    }

  // Call counts, callers first.
  const std::size_t entry = cg.index.at(m.entry_function);
  std::vector<double> calls(n, 0), eff(n, 0), calls_ext(n, 0), eff_ext(n, 0);
  calls_ext[entry] = eff_ext[entry] = 1;
  for (auto c = cg.components.size(); c-- > 0;) {
    const auto& comp = cg.components[c];
    const auto cid = static_cast<int>(c);
    for (auto v : comp) {
      calls[v] = calls_ext[v];
      eff[v] = eff_ext[v];
    }
    for (auto u : comp)
      for (const auto& e : self[u].calls)
        if (cg.scc[e.callee] == cid) {
          calls[e.callee] += e.raw * calls_ext[u];
          eff[e.callee] += e.weighted * eff_ext[u];
        }
    for (auto u : comp)
      for (const auto& e : self[u].calls)
        if (cg.scc[e.callee] != cid) {
          calls_ext[e.callee] += e.raw * calls[u];
          eff_ext[e.callee] += e.weighted * eff[u];
        }
  }

  RuntimeResult r;
  r.penalty = icache_penalty(module_size(m), static_cast<double>(m.cache_budget), cm);
  r.total = dyn[entry] * r.penalty;
  double self_sum = 0;
  for (std::size_t v = 0; v < n; ++v)
    if (calls[v] > 0) self_sum += eff[v] * self[v].per_invocation;
  for (std::size_t v = 0; v < n; ++v) {
    if (calls[v] <= 0) continue;
    ProfileRecord p;
    p.function = cg.names[v];
    p.t_func = eff[v] * self[v].per_invocation / self_sum;
    p.n_func = calls[v];
    p.total_runtime = r.total;
    p.in_cycle = cg.cyclic[static_cast<std::size_t>(cg.scc[v])];
    r.profile.push_back(std::move(p));
  }
  return r;
}

// Per-call runtime attributed to a function from a flat profile.
inline double func_runtime(double total, double t_func, double n_func) {
  if (!(n_func > 0)) throw Error(ErrorKind::UndefinedProfile, "function was never called");
  if (!(total > 0) || !(t_func > 0 && t_func <= 1))
    throw Error(ErrorKind::UndefinedProfile, "runtime and share must be positive");
  return total * t_func / n_func;
}

inline double func_speedup(double base, double configured) {
  if (!(configured > 0)) throw Error(ErrorKind::DivisionGuard, "configured runtime must be positive");
  if (!(base > 0)) throw Error(ErrorKind::DivisionGuard, "base runtime must be positive");
  return base / configured;
}

// Drops one minimum and one maximum and averages the rest.
inline double trimmed_mean(std::vector<double> runs) {
  if (runs.size() < 3) throw Error(ErrorKind::Protocol, "trimmed mean needs at least 3 runs");
  std::sort(runs.begin(), runs.end());
  double s = 0;
  for (std::size_t i = 1; i + 1 < runs.size(); ++i) s += runs[i];
  return s / static_cast<double>(runs.size() - 2);
}

// Coefficient of variation (population standard deviation over mean).
inline double relative_variation(const std::vector<double>& runs) {
  const double mean = std::accumulate(runs.begin(), runs.end(), 0.0) / static_cast<double>(runs.size());
  double ss = 0;
  for (double x : runs) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(runs.size())) / mean;
}

struct Measurement {
  std::vector<double> runs;
  double noise_epsilon = 0;
  std::uint64_t seed = 0;
  double trimmed_mean = 0;
  double relative_variance = 0;
  bool repeated = false;
};

inline constexpr double kMaxRelativeVariance = 0.02;

inline Measurement measure_runtime(double runtime, double noise_epsilon, std::uint64_t seed, int runs = 5) {
  if (runs < 3) throw Error(ErrorKind::Protocol, "need at least 3 runs");
  if (!(noise_epsilon >= 0 && noise_epsilon <= 0.1)) throw Error(ErrorKind::Config, "noise epsilon must be in [0, 0.1]");
  auto once = [&](std::uint64_t s) {
    Measurement meas;
    meas.noise_epsilon = noise_epsilon;
    meas.seed = s;
    Rng rng(s);
    for (int i = 0; i < runs; ++i) meas.runs.push_back(runtime * rng.uniform(1.0 - noise_epsilon, 1.0 + noise_epsilon));
    meas.trimmed_mean = trimmed_mean(meas.runs);
    meas.relative_variance = relative_variation(meas.runs);
    return meas;
  };
  Measurement first = once(seed);
  if (first.relative_variance <= kMaxRelativeVariance) return first;
  Measurement again = once(derive_seed(seed, 0x7e9ea7));
  again.repeated = true;
  return again;
}

inline Measurement measure(const Module& m, const CostModel& cm, double noise_epsilon, std::uint64_t seed, int runs = 5) {
  return measure_runtime(module_runtime(m, cm).total, noise_epsilon, seed, runs);
}

// Unroll/interleave grid of the post-inlining region tuner.
inline constexpr int kUnrollGrid[] = {0, 2, 4, 8};
inline constexpr int kInterleaveGrid[] = {1, 2, 4};

struct LoopConfig {
  int unroll = 0;
  int interleave = 1;
  auto operator<=>(const LoopConfig&) const = default;
};

inline Module apply_unroll_config(const Module& m, const std::map<Region, LoopConfig>& config) {
  Module out = m;
  for (const auto& [region, lc] : config) {
    if (std::find(std::begin(kUnrollGrid), std::end(kUnrollGrid), lc.unroll) == std::end(kUnrollGrid) ||
        std::find(std::begin(kInterleaveGrid), std::end(kInterleaveGrid), lc.interleave) == std::end(kInterleaveGrid))
      throw Error(ErrorKind::Config, "loop config outside the tuning grid");
    auto it = out.functions.find(region.function);
    if (it == out.functions.end()) throw Error(ErrorKind::Config, "unknown region function " + region.function);
    Function& f = it->second;
    const auto nest = detect_loops(f);
    const auto hdr = f.find_block(region.header);
    std::size_t loop = nest.loops.size();
    if (hdr)
      for (std::size_t i = 0; i < nest.loops.size(); ++i)
        if (nest.loops[i].header == *hdr) loop = i;
    if (loop == nest.loops.size() || !nest.is_innermost(loop))
      throw Error(ErrorKind::Config, "not a tunable region: " + region.function + "/" + region.header);
    for (auto b : nest.loops[loop].members) {
      f.blocks[b].unroll = lc.unroll;
      f.blocks[b].interleave = lc.interleave;
    }
  }
  return out;
}

}  // namespace perfinline
