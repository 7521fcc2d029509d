#include <gtest/gtest.h>

#include <cmath>

#include "perfinline/generator.hpp"
#include "perfinline/module_io.hpp"
#include "perfinline/policy.hpp"
#include "numeric_oracle.hpp"
#include "test_support.hpp"

using namespace perfinline;
using namespace perfinline::testing;

namespace {

PolicyParams pinned(bool inline_all) {
  PolicyParams p;
  p.net.layers().back().b << (inline_all ? -10.0 : 10.0), (inline_all ? 10.0 : -10.0);
  return p;
}

Module chain() {
  return module({fn("main", 0, {{"b0", {"call:a", "call:a", "ret"}, {}}}),
                 fn("a", 1, {{"b0", {"fmul", "call:b:1", "ret"}, {}}}),
                 fn("b", 1, {{"b0", {"fadd", "ret"}, {}}})});
}

std::size_t count_calls(const Module& m) { return all_callsites(m).size(); }

CalleeFeatureVector some_features(Rng& rng) {
  CalleeFeatureVector x;
  for (auto& v : x.values) v = static_cast<double>(rng.below(40));
  return x;
}

}  // namespace

TEST(Act, ZeroNetworkIsUniform) {
  const PolicyParams p;
  Rng rng(1);
  int inlined = 0;
  for (int i = 0; i < 10000; ++i) {
    const auto a = act(p, some_features(rng), ActMode::Sample, rng);
    EXPECT_EQ(a.log_prob, std::log(0.5));
    inlined += a.inline_call;
  }
  EXPECT_NEAR(inlined / 10000.0, 0.5, 0.02);
}

TEST(Act, ArgmaxPicksLargerLogitAndTiesGoToNoInline) {
  PolicyParams p;
  Rng rng(1);
  p.net.layers().back().b << 2.0, -1.0;
  EXPECT_FALSE(act(p, some_features(rng), ActMode::Argmax, rng).inline_call);
  p.net.layers().back().b << -1.0, 2.0;
  EXPECT_TRUE(act(p, some_features(rng), ActMode::Argmax, rng).inline_call);
  p.net.layers().back().b << 0.5, 0.5;
  EXPECT_FALSE(act(p, some_features(rng), ActMode::Argmax, rng).inline_call);
}

TEST(Act, ProbabilitiesSumToOne) {
  Rng rng(2);
  for (int i = 0; i < 200; ++i) {
    const auto p = PolicyParams::random(static_cast<std::uint64_t>(i));
    const auto lp = log_softmax(p.net.forward(policy_input(some_features(rng))).col(0));
    EXPECT_NEAR(std::exp(lp[0]) + std::exp(lp[1]), 1.0, 1e-12);
  }
}

TEST(Rollout, NoCallSites) {
  const auto m = module({fn("main", 0, {{"b0", {"fadd", "ret"}, {}}})});
  Rng rng(1);
  const auto r = rollout(m, PolicyParams::random(1), ActMode::Sample, rng,
                         [](const Module& x) { return static_cast<double>(x.functions.size()) * 1.25; });
  EXPECT_TRUE(r.trajectory.steps.empty());
  EXPECT_EQ(r.trajectory.total_reward, 1.25);
  EXPECT_EQ(r.module, m);
}

TEST(Rollout, PinnedNoInlineLeavesModuleUnchanged) {
  const auto m = chain();
  Rng rng(1);
  const auto r = rollout(m, pinned(false), ActMode::Sample, rng);
  EXPECT_EQ(r.module, m);
  EXPECT_EQ(r.trajectory.steps.size(), 3u);
}

TEST(Rollout, PinnedInlineOnAcyclicModuleTerminates) {
  const auto m = chain();
  Rng rng(1);
  const auto r = rollout(m, pinned(true), ActMode::Sample, rng);
  // a->b first (bottom-up), then both main->a sites.
  EXPECT_EQ(r.trajectory.steps.size(), 3u);
  EXPECT_EQ(r.trajectory.steps[0].callsite_id, site_id(m, "a", "b"));
  EXPECT_EQ(count_calls(r.module), 0u);
  EXPECT_FALSE(r.trajectory.guard_triggered);
  for (std::uint64_t s = 0; s < 100; ++s) {
    GenConfig g;
    g.seed = s;
    g.callsite_density = 0.6;  // full inlining at 0.8 can legitimately exceed the growth cap
    const Module gm = generate_program(g);
    const auto gr = rollout(gm, pinned(true), ActMode::Argmax, rng);
    EXPECT_FALSE(gr.trajectory.guard_triggered);
    EXPECT_EQ(count_calls(gr.module), 0u);
    EXPECT_NO_THROW(validate(gr.module));
  }
}

TEST(Rollout, ClonedSitesAreVisited) {
  const auto m = chain();
  const int ab = site_id(m, "a", "b");
  std::vector<Step> steps;
  // Refuse a->b, accept everything else: each inlined copy of a brings a
  // fresh b call into main, which is then visited and inlined.
  const Module out = inline_walk(
      m, [&](const Module&, const CallGraph&, const CallSite& cs) { return cs.id != ab; }, &steps);
  EXPECT_EQ(steps.size(), 5u);
  EXPECT_EQ(callsites_of(out.function("main")).size(), 0u);
  EXPECT_EQ(callsites_of(out.function("a")).size(), 1u);
}

TEST(Rollout, GrowthCapStopsMutualRecursion) {
  const auto m = module({fn("main", 0, {{"b0", {"call:a", "ret"}, {}}}),
                         fn("a", 0, {{"b0", {"fadd", "call:b", "ret"}, {}}}),
                         fn("b", 0, {{"b0", {"fmul", "call:a", "ret"}, {}}})});
  Rng rng(1);
  const auto r = rollout(m, pinned(true), ActMode::Argmax, rng);
  EXPECT_TRUE(r.trajectory.guard_triggered);
  for (const auto& s : r.trajectory.steps) {
    if (s.forced) {
      EXPECT_EQ(s.log_prob, 0.0);
    }
  }
  EXPECT_NO_THROW(validate(r.module));
}

TEST(Rollout, DirectRecursionIsForcedNo) {
  const auto m = module({fn("main", 0, {{"b0", {"call:s", "ret"}, {}}}), fn("s", 0, {{"b0", {"fadd", "call:s", "ret"}, {}}})});
  const int main_s = site_id(m, "main", "s");
  std::vector<Step> steps;
  inline_walk(m, [&](const Module&, const CallGraph&, const CallSite& cs) { return cs.id == main_s; }, &steps);
  // s->s, main->s, then the copy of s->s that now sits in main.
  ASSERT_EQ(steps.size(), 3u);
  EXPECT_TRUE(steps[0].forced);
  EXPECT_FALSE(steps[0].action);
  EXPECT_TRUE(steps[1].action);
  EXPECT_FALSE(steps[2].forced);
  EXPECT_GE(steps[2].callsite_id, m.next_callsite_id);
}

TEST(PolicyGradient, MatchesCentralDifferences) {
  Rng rng(21);
  FdReport total;
  for (int inst = 0; inst < 15; ++inst) {
    const auto p = PolicyParams::random(500 + static_cast<std::uint64_t>(inst));
    std::vector<Trajectory> trajs(3);
    std::vector<double> w;
    for (auto& t : trajs) {
      for (int k = 0; k < 4; ++k) {
        Step s;
        s.features = some_features(rng);
        s.action = rng.bernoulli(0.5);
        s.forced = k == 3 && rng.bernoulli(0.5);
        t.steps.push_back(s);
      }
      w.push_back(rng.normal());
    }
    const auto g = policy_gradient(p, trajs, w);
    const auto obj = policy_objective_ld(trajs, w);
    EXPECT_NEAR(policy_objective(p, trajs, w), static_cast<double>(obj(LdNet(p.net), nullptr)), 1e-10);
    const auto rep = fd_check(p.net, g.flatten(), obj, 30, rng);
    total.max_rel_error = std::max(total.max_rel_error, rep.max_rel_error);
    total.checked += rep.checked;
  }
  EXPECT_LT(total.max_rel_error, 1e-5);
  EXPECT_GT(total.checked, 400);
}

TEST(PolicyGradient, ForcedStepsAndZeroWeightsContributeNothing) {
  const auto p = PolicyParams::random(3);
  Rng rng(3);
  Trajectory t;
  Step s;
  s.features = some_features(rng);
  s.forced = true;
  t.steps.push_back(s);
  EXPECT_EQ(policy_gradient(p, {t}, {1.0}).flatten().cwiseAbs().maxCoeff(), 0.0);
  t.steps[0].forced = false;
  EXPECT_EQ(policy_gradient(p, {t}, {0.0}).flatten().cwiseAbs().maxCoeff(), 0.0);
}

TEST(NormalizeRewards, ZeroMeanUnitStd) {
  const auto z = normalize_rewards({1.0, 2.0, 4.0, 8.0});
  double mean = 0, var = 0;
  for (double v : z) mean += v;
  mean /= 4;
  for (double v : z) var += (v - mean) * (v - mean);
  EXPECT_NEAR(mean, 0, 1e-12);
  EXPECT_NEAR(std::sqrt(var / 4), 1, 1e-6);
  for (double v : normalize_rewards({0.1, 0.1, 0.1})) EXPECT_EQ(v, 0.0);
}

namespace {

TrainerConfig bandit_config() {
  TrainerConfig tc;
  tc.corpus = {module({fn("main", 0, {{"b0", {"generic", "call:leaf", "ret"}, {}}}),
                       fn("leaf", 0, {{"b0", {"fmul", "ret"}, {}}})})};
  tc.rollouts = 8;
  tc.iterations = 500;
  tc.alpha = 0.02;
  tc.sigma = 0.01;
  return tc;
}

// Surrogate reward: speedup 3 when the call was inlined, 1 otherwise.
double bandit_reward(const Module& m) { return callsites_of(m.function("main")).empty() ? 3.0 : 1.0; }

double inline_probability(const PolicyParams& p, const Module& m) {
  const auto x = extract_callsite_features(m, enumerate_callsites(m).front());
  return std::exp(log_softmax(p.net.forward(policy_input(x)).col(0))[1]);
}

}  // namespace

TEST(TrainPolicy, BanditLearnsToInline) {
  const auto tc = bandit_config();
  const auto res = train_policy(tc, bandit_reward);
  EXPECT_GT(inline_probability(res.params, tc.corpus[0]), 0.9);
  EXPECT_EQ(res.history.size(), 500u);
}

TEST(TrainPolicy, ZeroLearningRateKeepsParameters) {
  auto tc = bandit_config();
  tc.alpha = 0;
  tc.iterations = 20;
  const auto init = PolicyParams::random(9);
  EXPECT_EQ(train_policy(tc, bandit_reward, &init).params, init);
}

TEST(TrainPolicy, EqualRewardsLeaveParametersUnchanged) {
  auto tc = bandit_config();
  tc.iterations = 20;
  const auto init = PolicyParams::random(9);
  EXPECT_EQ(train_policy(tc, [](const Module&) { return 0.7; }, &init).params, init);
}

TEST(TrainPolicy, DeterministicPerSeed) {
  auto tc = bandit_config();
  tc.iterations = 30;
  EXPECT_EQ(train_policy(tc, bandit_reward).params, train_policy(tc, bandit_reward).params);
  auto other = tc;
  other.seed = 2;
  EXPECT_FALSE(train_policy(other, bandit_reward).params == train_policy(tc, bandit_reward).params);
}

TEST(TrainPolicy, EmptyTrajectoriesAreSkipped) {
  auto tc = bandit_config();
  tc.corpus = {module({fn("main", 0, {{"b0", {"fadd", "ret"}, {}}})})};
  tc.iterations = 5;
  const auto init = PolicyParams::random(4);
  const auto res = train_policy(tc, bandit_reward, &init);
  EXPECT_EQ(res.skipped, 5);
  EXPECT_EQ(res.params, init);
  tc.corpus.clear();
  EXPECT_THROW(train_policy(tc, bandit_reward), Error);
}

TEST(Advise, ZeroPolicyInlinesNothing) {
  GenConfig g;
  g.seed = 31;
  g.callsite_density = 0.7;
  const Module m = generate_program(g);
  const auto a = advise(m, PolicyParams{});
  EXPECT_EQ(a.module, m);
  EXPECT_EQ(a.log.size(), all_callsites(m).size());
  for (const auto& d : a.log) EXPECT_FALSE(d.inline_call);
}

TEST(Advise, LogCoversEveryVisitedSiteAndIsDeterministic) {
  const auto p = PolicyParams::random(17);
  for (std::uint64_t s = 0; s < 30; ++s) {
    GenConfig g;
    g.seed = s;
    const Module m = generate_program(g);
    const auto a = advise(m, p), b = advise(m, p);
    EXPECT_EQ(a.module, b.module);
    std::size_t inlined = 0;
    for (const auto& d : a.log) inlined += d.inline_call;
    // Each visited site is either still present or was consumed by inlining.
    EXPECT_EQ(a.log.size(), count_calls(a.module) + inlined);
  }
}

TEST(Advise, GoldenDecisionLog) {
  const auto m = parse_module(read_file(std::string(PERFINLINE_FIXTURES) + "/golden_seed7.json"));
  const auto a = advise(m, PolicyParams::random(5));
  EXPECT_EQ(decision_log_csv(a.log), read_file(std::string(PERFINLINE_FIXTURES) + "/golden_seed7_decisions.csv"));
}

TEST(Baselines, HeuristicAndSizeRules) {
  // leaf (cost 4) and tiny (cost 3) are cheap, big (cost 8*5+1 = 41) is not.
  // Only tiny can be inlined without growing the module.
  const auto m = module({fn("main", 0, {{"b0", {"call:leaf", "call:big", "call:tiny", "ret"}, {}}}),
                         fn("leaf", 0, {{"b0", {"fadd", "generic", "ret"}, {}}}),
                         fn("big", 0, {{"b0", {"fdiv", "fdiv", "fdiv", "fdiv", "fdiv", "ret"}, {}}}),
                         fn("tiny", 0, {{"b0", {"fadd", "ret"}, {}}})});
  const auto h = heuristic_inline(m);
  EXPECT_EQ(callsites_of(h.function("main")).size(), 1u);
  EXPECT_EQ(callsites_of(h.function("main")).front().callee, "big");
  const auto s = size_inline(m);
  EXPECT_EQ(callsites_of(s.function("main")).size(), 2u);
  EXPECT_EQ(site_id(s, "main", "leaf"), site_id(m, "main", "leaf"));
  EXPECT_LE(module_size(s), module_size(m));
  EXPECT_EQ(never_inline(m), m);
}

TEST(ExhaustiveOptimum, EnumeratesAllConfigs) {
  const auto m = chain();
  const auto opt = exhaustive_optimum(m);
  EXPECT_EQ(opt.configs_evaluated, 8u);
  double best = std::numeric_limits<double>::infinity();
  for (int mask = 0; mask < 8; ++mask) {
    InlineConfig c;
    int bit = 0;
    for (const auto& cs : enumerate_callsites(m)) c[cs.id] = (mask >> bit++) & 1;
    best = std::min(best, module_runtime(apply_config(m, c)).total);
  }
  EXPECT_EQ(opt.runtime, best);
}

TEST(Evaluate, NeverVersusNeverIsIdentity) {
  std::vector<Module> corpus;
  for (std::uint64_t s = 0; s < 4; ++s) {
    GenConfig g;
    g.seed = 200 + s;
    corpus.push_back(generate_program(g));
  }
  const auto rep = evaluate(corpus, PolicyParams{}, {}, {"prog-1"});
  EXPECT_EQ(rep.geomean_speedup.at("never-inline"), 1.0);
  EXPECT_EQ(rep.geomean_size_ratio.at("never-inline"), 1.0);
  for (const auto& p : rep.programs)
    EXPECT_EQ(p.strategies.at("policy").runtime, p.strategies.at("never-inline").runtime);
}

TEST(Evaluate, PolicyMatchingHeuristicScoresOne) {
  // Every callee costs more than the threshold, so the heuristic inlines
  // nothing, exactly like the zero policy.
  std::vector<Module> corpus;
  for (int i = 0; i < 3; ++i) {
    auto m = module({fn("main", 0, {{"b0", {"call:big", "ret"}, {}}}),
                     fn("big", 0, {{"b0", {"fdiv", "fdiv", "fdiv", "fdiv", "fdiv", "ret"}, {}}})});
    m.program_id = "h" + std::to_string(i);
    corpus.push_back(m);
  }
  const auto rep = evaluate(corpus, PolicyParams{}, {}, {});
  EXPECT_EQ(rep.geomean_speedup.at("heuristic-baseline"), 1.0);
  for (const auto& p : rep.programs) EXPECT_EQ(p.strategies.at("policy").relative_variance, 0.0);
}

TEST(Evaluate, OverlapIsRejected) {
  GenConfig g;
  g.seed = 1;
  try {
    evaluate({generate_program(g)}, PolicyParams{}, {}, {"prog-1"});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Overlap);
  }
}

TEST(Evaluate, GeometricMean) {
  const std::vector<double> xs = {1.1, 1.1, 1.1};
  EXPECT_NEAR(geometric_mean(xs), 1.1, 1e-15);
}

namespace {

Module loop_module(int body, std::int64_t budget) {
  std::vector<std::string> ins(static_cast<std::size_t>(body), "generic");
  return module({fn("main", 0, {{"b0", {"generic"}, {"h"}}, {"h", ins, {"h", "x"}}, {"x", {"generic", "ret"}, {}}})},
                budget);
}

}  // namespace

TEST(AutotuneRegions, NoRegions) {
  const auto m = module({fn("main", 0, {{"b0", {"fadd", "ret"}, {}}})});
  const auto r = autotune_regions(m);
  EXPECT_EQ(r.regions, 0u);
  EXPECT_EQ(r.best_runtime, r.baseline_runtime);
}

TEST(AutotuneRegions, FindsExhaustiveOptimumOfOneRegion) {
  const auto m = loop_module(3, 10000);
  const auto region = tunable_regions(m).at(0);
  double best = std::numeric_limits<double>::infinity();
  LoopConfig arg;
  for (int u : kUnrollGrid)
    for (int i : kInterleaveGrid) {
      const double t = module_runtime(apply_unroll_config(m, {{region, {u, i}}})).total;
      if (t < best) best = t, arg = {u, i};
    }
  EXPECT_EQ(arg.unroll, 8);
  EXPECT_EQ(arg.interleave, 1);
  const auto r = autotune_regions(m, 12);
  EXPECT_EQ(r.best_runtime, best);
  EXPECT_EQ(r.evaluations, 12u);
  EXPECT_EQ(r.best_config.at(region).unroll, 8);
}

TEST(AutotuneRegions, NeverWorseThanUntuned) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    GenConfig g;
    g.seed = s;
    g.loop_probability = 0.6;
    const Module m = generate_program(g);
    const auto r = autotune_regions(m, 120, {}, s);
    EXPECT_LE(r.best_runtime, r.baseline_runtime);
    EXPECT_LE(r.evaluations, 120u);
    EXPECT_EQ(r.regions, count_tunable_regions(m));
  }
}

TEST(AutotuneRegions, InliningLoopCalleeAddsRegion) {
  const auto m = module({fn("main", 0, {{"b0", {"call:k", "ret"}, {}}}),
                         fn("k", 0, {{"b0", {"generic"}, {"h"}}, {"h", {"fmul"}, {"h", "x"}}, {"x", {"generic", "ret"}, {}}})});
  const auto before = count_tunable_regions(m);
  const auto after = count_tunable_regions(apply_inline(m, 0));
  EXPECT_EQ(after, before + 1);
}

TEST(PolicyJson, RoundTrip) {
  const auto p = PolicyParams::random(8);
  EXPECT_EQ(policy_from_json(Json::parse(to_json(p).dump())), p);
  Json bad = to_json(p);
  bad["schema"] = "policy/2";
  EXPECT_THROW(policy_from_json(bad), Error);
}
