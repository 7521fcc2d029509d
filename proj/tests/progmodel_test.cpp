#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "perfinline/analysis.hpp"
#include "perfinline/generator.hpp"
#include "perfinline/inliner.hpp"
#include "perfinline/module_io.hpp"
#include "test_support.hpp"

using namespace perfinline;
using namespace perfinline::testing;

namespace {

// Textbook O(n^2) dominator sets: Dom(entry) = {entry},
// Dom(n) = {n} U intersection of Dom(p) over predecessors, iterated to a fixed point.
std::vector<std::size_t> idom_oracle(const Cfg& cfg) {
  const std::size_t n = cfg.size();
  std::vector<std::set<std::size_t>> dom(n);
  std::set<std::size_t> all;
  for (std::size_t i = 0; i < n; ++i) all.insert(i);
  for (std::size_t i = 0; i < n; ++i) dom[i] = i == cfg.entry ? std::set<std::size_t>{cfg.entry} : all;
  bool changed = true;
  while (changed) {
    changed = false;
    for (std::size_t b = 0; b < n; ++b) {
      if (b == cfg.entry) continue;
      std::set<std::size_t> next = all;
      for (auto p : cfg.preds[b]) {
        std::set<std::size_t> tmp;
        std::set_intersection(next.begin(), next.end(), dom[p].begin(), dom[p].end(), std::inserter(tmp, tmp.begin()));
        next = std::move(tmp);
      }
      next.insert(b);
      if (next != dom[b]) {
        dom[b] = std::move(next);
        changed = true;
      }
    }
  }
  // The immediate dominator is the strict dominator with the largest dominator set.
  std::vector<std::size_t> idom(n, kNoBlock);
  idom[cfg.entry] = cfg.entry;
  for (std::size_t b = 0; b < n; ++b) {
    if (b == cfg.entry) continue;
    std::size_t best = kNoBlock;
    for (auto d : dom[b])
      if (d != b && (best == kNoBlock || dom[d].size() > dom[best].size())) best = d;
    idom[b] = best;
  }
  return idom;
}

Function doubly_nested() {
  return fn("main", 0,
            {{"b0", {"generic"}, {"h1"}},
             {"h1", {"fadd"}, {"h2", "x"}},
             {"h2", {"fmul"}, {"bb", "h1"}},
             {"bb", {"fdiv", "generic"}, {"h2"}},
             {"x", {"generic", "ret"}, {}}});
}

GenConfig small_config(std::uint64_t seed) {
  GenConfig c;
  c.seed = seed;
  c.n_functions = 6;
  c.max_blocks = 8;
  c.callsite_density = 0.5;
  return c;
}

}  // namespace

TEST(Generator, DegenerateKnobsGiveSingleCallFreeFunction) {
  GenConfig c;
  c.n_functions = 1;
  c.callsite_density = 0;
  const Module m = generate_program(c);
  EXPECT_EQ(m.functions.size(), 1u);
  EXPECT_TRUE(all_callsites(m).empty());
  EXPECT_EQ(m.cache_budget, static_cast<std::int64_t>(std::ceil(1.2 * m.instruction_count() - 1e-9)));
  validate(m);
}

TEST(Generator, IsPureFunctionOfConfig) {
  const auto c = small_config(42);
  EXPECT_EQ(generate_program(c), generate_program(c));
  EXPECT_EQ(dump_module(generate_program(c)), dump_module(generate_program(c)));
  EXPECT_NE(dump_module(generate_program(c)), dump_module(generate_program(small_config(43))));
}

TEST(Generator, MatchesGoldenSnapshot) {
  GenConfig c;
  c.seed = 7;
  c.n_functions = 5;
  const auto expected = read_file(std::string(PERFINLINE_FIXTURES) + "/golden_seed7.json");
  EXPECT_EQ(dump_module(generate_program(c)), expected);
}

TEST(Generator, RejectsBadKnobs) {
  GenConfig c;
  c.n_functions = 0;
  EXPECT_THROW(generate_program(c), Error);
  c = {};
  c.loop_probability = 1.5;
  EXPECT_THROW(generate_program(c), Error);
  c = {};
  c.min_blocks = 4;
  c.max_blocks = 2;
  try {
    generate_program(c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Config);
  }
}

TEST(Generator, ProducesWellFormedModulesAcrossSeeds) {
  for (std::uint64_t s = 0; s < 300; ++s) {
    auto c = small_config(s);
    c.recursion_probability = s % 3 == 0 ? 0.2 : 0.0;
    c.loop_probability = 0.5;
    const Module m = generate_program(c);
    ASSERT_NO_THROW(validate(m)) << "seed " << s;
    EXPECT_EQ(m.cache_budget, static_cast<std::int64_t>((6 * m.instruction_count() + 4) / 5));
    if (c.recursion_probability == 0) {
      const CallGraph cg(m);
      for (auto cyc : cg.cyclic) EXPECT_FALSE(cyc) << "seed " << s;
    }
  }
}

TEST(Dominators, SingleBlock) {
  const auto f = fn("main", 0, {{"b0", {"fadd", "ret"}, {}}});
  const auto dt = compute_dominators(f);
  EXPECT_EQ(dt.idom[0], 0u);
  EXPECT_EQ(dt.max_level(), 1);
}

TEST(Dominators, Diamond) {
  const auto f = fn("main", 0,
                    {{"A", {"generic"}, {"B", "C"}},
                     {"B", {"generic"}, {"D"}},
                     {"C", {"generic"}, {"D"}},
                     {"D", {"generic", "ret"}, {}}});
  const auto dt = compute_dominators(f);
  EXPECT_EQ(dt.idom[f.block_index("D")], f.block_index("A"));
  EXPECT_EQ(dt.idom[f.block_index("B")], f.block_index("A"));
  EXPECT_EQ(dt.max_level(), 2);
}

TEST(Dominators, MatchSetIntersectionOracleOnRandomCfgs) {
  Rng rng(99);
  for (int trial = 0; trial < 200; ++trial) {
    // Random reducible CFG: a DAG over 20 blocks plus back edges to dominators.
    Function f;
    f.name = "r";
    const int n = 20;
    for (int i = 0; i < n; ++i) f.blocks.push_back({"b" + std::to_string(i), {Instruction::plain(Opcode::Generic)}, {}, 0, 1});
    f.entry = "b0";
    for (int i = 1; i < n; ++i) {
      const auto p = rng.below(static_cast<std::size_t>(i));
      f.blocks[p].successors.push_back(f.blocks[static_cast<std::size_t>(i)].id);
      if (rng.bernoulli(0.4)) {
        const auto q = rng.below(static_cast<std::size_t>(i));
        if (q != p) f.blocks[q].successors.push_back(f.blocks[static_cast<std::size_t>(i)].id);
      }
    }
    const Cfg dag(f);
    const auto dag_dt = compute_dominators(dag);
    for (int e = 0; e < 3; ++e) {
      const auto u = 1 + rng.below(n - 1);
      // walk up to an arbitrary dominator of u
      auto h = u;
      for (auto k = rng.below(4); k > 0 && h != dag.entry; --k) h = dag_dt.idom[h];
      if (h != dag.entry) f.blocks[u].successors.push_back(f.blocks[h].id);
    }
    const Cfg cfg(f);
    const auto fast = compute_dominators(cfg);
    EXPECT_EQ(fast.idom, idom_oracle(cfg)) << "trial " << trial;
  }
  for (std::uint64_t s = 0; s < 50; ++s) {
    auto c = small_config(s);
    c.max_blocks = 20;
    c.min_blocks = 15;
    c.loop_probability = 0.5;
    for (const auto& [_, f] : generate_program(c).functions) {
      const Cfg cfg(f);
      EXPECT_EQ(compute_dominators(cfg).idom, idom_oracle(cfg));
    }
  }
}

TEST(Loops, LoopFreeFunctionHasNoLoops) {
  const auto f = fn("main", 0, {{"b0", {"generic"}, {"b1"}}, {"b1", {"generic", "ret"}, {}}});
  EXPECT_TRUE(detect_loops(f).loops.empty());
}

TEST(Loops, SelfLoopIsDepthOne) {
  const auto f = fn("main", 0,
                    {{"b0", {"generic"}, {"s"}}, {"s", {"fadd"}, {"s", "x"}}, {"x", {"generic", "ret"}, {}}});
  const auto nest = detect_loops(f);
  ASSERT_EQ(nest.loops.size(), 1u);
  EXPECT_EQ(nest.loops[0].depth, 1);
  EXPECT_EQ(nest.loops[0].members, std::vector<std::size_t>{1});
}

TEST(Loops, DoublyNestedDepths) {
  const auto f = doubly_nested();
  const auto nest = detect_loops(f);
  ASSERT_EQ(nest.loops.size(), 2u);
  const auto& outer = nest.loops[0];
  const auto& inner = nest.loops[1];
  EXPECT_EQ(f.blocks[outer.header].id, "h1");
  EXPECT_EQ(f.blocks[inner.header].id, "h2");
  EXPECT_EQ(outer.depth, 1);
  EXPECT_EQ(inner.depth, 2);
  const auto dt = compute_dominators(f);
  for (const auto& l : nest.loops)
    for (auto b : l.members) EXPECT_TRUE(dt.dominates(l.header, b));
  for (auto b : inner.members) EXPECT_TRUE(outer.contains(b));
  EXPECT_EQ(nest.block_depth[f.block_index("bb")], 2);
  EXPECT_EQ(nest.block_depth[f.block_index("x")], 0);
}

TEST(Loops, IrreducibleCfgIsRejected) {
  const auto f = fn("main", 0,
                    {{"e", {"generic"}, {"a", "b"}},
                     {"a", {"generic"}, {"b", "x"}},
                     {"b", {"generic"}, {"a"}},
                     {"x", {"generic", "ret"}, {}}});
  try {
    detect_loops(f);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InvariantViolation);
  }
}

TEST(BlockFrequency, FollowsLoopDepth) {
  const auto f = doubly_nested();
  EXPECT_EQ(block_frequency(f, "b0"), 1.0);
  EXPECT_EQ(block_frequency(f, "x"), 1.0);
  EXPECT_EQ(block_frequency(f, "h1"), 8.0);
  EXPECT_EQ(block_frequency(f, "bb"), 64.0);
}

TEST(BlockFrequency, EntryIsAlwaysOne) {
  for (std::uint64_t s = 0; s < 100; ++s) {
    auto c = small_config(s);
    c.loop_probability = 0.8;
    for (const auto& [_, f] : generate_program(c).functions) EXPECT_EQ(block_frequency(f, f.entry), 1.0);
  }
}

TEST(CallGraphHeight, LeafChainAndCycle) {
  const auto leaf = module({fn("main", 0, {{"b0", {"fadd", "ret"}, {}}})});
  EXPECT_EQ(call_graph_height(leaf, "main"), 0);

  const auto chain = module({fn("main", 0, {{"b0", {"call:a", "ret"}, {}}}),
                             fn("a", 0, {{"b0", {"call:b", "ret"}, {}}}),
                             fn("b", 0, {{"b0", {"fadd", "ret"}, {}}})});
  EXPECT_EQ(call_graph_height(chain, "main"), 2);
  EXPECT_EQ(call_graph_height(chain, "a"), 1);
  EXPECT_EQ(call_graph_height(chain, "b"), 0);

  const auto cyc = module({fn("main", 0, {{"b0", {"call:a", "ret"}, {}}}),
                           fn("a", 0, {{"b0", {"call:b", "call:c", "ret"}, {}}}),
                           fn("b", 0, {{"b0", {"call:a", "ret"}, {}}}),
                           fn("c", 0, {{"b0", {"fadd", "ret"}, {}}})});
  EXPECT_EQ(call_graph_height(cyc, "a"), 1);
  EXPECT_EQ(call_graph_height(cyc, "b"), 1);
  EXPECT_EQ(call_graph_height(cyc, "main"), 2);
  EXPECT_THROW(call_graph_height(cyc, "nope"), Error);
}

TEST(CallGraphHeight, UnchangedByInliningLeafWhenEqualHeightCallRemains) {
  // main calls two leaves; inlining one keeps another height-0 callee.
  const auto m = module({fn("main", 0, {{"b0", {"call:l1", "call:l2", "ret"}, {}}}),
                         fn("l1", 0, {{"b0", {"fadd", "ret"}, {}}}),
                         fn("l2", 0, {{"b0", {"fmul", "ret"}, {}}})});
  const auto after = apply_inline(m, site_id(m, "main", "l1"));
  EXPECT_EQ(call_graph_height(m, "main"), 1);
  EXPECT_EQ(call_graph_height(after, "main"), 1);
}

TEST(Inline, LeafIntoStraightLineCaller) {
  const auto m = module({fn("main", 0, {{"b0", {"generic", "call:leaf", "fadd", "ret"}, {}}}),
                         fn("leaf", 0, {{"b0", {"fmul", "fsub", "ret"}, {}}})});
  const std::size_t n = m.function("main").instruction_count();
  const std::size_t k = m.function("leaf").instruction_count();
  const auto out = apply_inline(m, 0);
  EXPECT_EQ(out.function("main").instruction_count(), n - 1 + (k - 1));
  EXPECT_EQ(out.function("main").blocks.size(), 1u);
  EXPECT_EQ(out.function("leaf"), m.function("leaf"));
  EXPECT_EQ(m.function("main").instruction_count(), n);  // input untouched
  validate(out);
}

TEST(Inline, ClonedLoopNestsUnderCallSiteLoop) {
  const auto m = module({fn("main", 0,
                            {{"b0", {"generic"}, {"h"}},
                             {"h", {"call:g", "generic"}, {"h", "x"}},
                             {"x", {"generic", "ret"}, {}}}),
                         fn("g", 1,
                            {{"e", {"generic"}, {"l"}},
                             {"l", {"fadd"}, {"l", "r"}},
                             {"r", {"generic", "ret"}, {}}})});
  const auto out = apply_inline(m, 0);
  validate(out);
  const auto& f = out.function("main");
  const auto nest = detect_loops(f);
  EXPECT_EQ(nest.block_depth[f.block_index("l.i0")], 2);
  EXPECT_EQ(block_frequency(f, "l.i0"), 64.0);
}

TEST(Inline, ConsumedSiteCannotBeInlinedTwice) {
  const auto m = module({fn("main", 0, {{"b0", {"call:g", "ret"}, {}}}), fn("g", 0, {{"b0", {"fadd", "ret"}, {}}})});
  const auto once = apply_inline(m, 0);
  try {
    apply_inline(once, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NotFound);
  }
}

TEST(Inline, DirectRecursionRefused) {
  const auto m = module({fn("main", 0, {{"b0", {"call:main", "fadd", "ret"}, {}}})});
  try {
    apply_inline(m, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::RefusedInline);
  }
}

TEST(Inline, MultiBlockCalleeSplitsCallBlock) {
  const auto m = module({fn("main", 0, {{"b0", {"fadd", "call:g:1", "fsub"}, {"b1"}}, {"b1", {"generic", "ret"}, {}}}),
                         fn("g", 2,
                            {{"e", {"fmul", "call:h"}, {"t", "f"}},
                             {"t", {"generic"}, {"j"}},
                             {"f", {"generic"}, {"j"}},
                             {"j", {"fdiv", "ret"}, {}}}),
                         fn("h", 0, {{"b0", {"generic", "ret"}, {}}})});
  const auto out = apply_inline(m, site_id(m, "main", "g"));
  validate(out);
  const auto& f = out.function("main");
  std::vector<std::string> ids;
  for (const auto& b : f.blocks) ids.push_back(b.id);
  EXPECT_EQ(ids, (std::vector<std::string>{"b0", "t.i0", "f.i0", "b0.r0", "b1"}));
  EXPECT_EQ(f.blocks[0].successors, (std::vector<std::string>{"t.i0", "f.i0"}));
  EXPECT_EQ(f.blocks[3].successors, std::vector<std::string>{"b1"});
  // Cloned call gets a fresh id and the constant-argument context.
  const auto sites = callsites_of(f);
  ASSERT_EQ(sites.size(), 1u);
  EXPECT_EQ(sites[0].id, m.next_callsite_id);
  EXPECT_EQ(instruction_at(out, sites[0]).inline_context, std::vector<int>{1});
  EXPECT_EQ(out.next_callsite_id, m.next_callsite_id + 1);
}

TEST(Inline, PreservesInvariantsOnEveryGeneratedSite) {
  for (std::uint64_t s = 0; s < 40; ++s) {
    auto c = small_config(s);
    c.recursion_probability = s % 4 == 0 ? 0.3 : 0.0;
    c.loop_probability = 0.4;
    const Module m = generate_program(c);
    const auto before_dump = dump_module(m);
    for (const auto& cs : all_callsites(m)) {
      if (cs.caller == cs.callee) {
        EXPECT_THROW(apply_inline(m, cs.id), Error);
        continue;
      }
      const Module out = apply_inline(m, cs.id);
      ASSERT_NO_THROW(validate(out)) << "seed " << s << " site " << cs.id;
      const auto& callee = m.function(cs.callee);
      const auto cloned_calls = callsites_of(callee).size();
      EXPECT_EQ(out.call_count(), m.call_count() + cloned_calls - 1);
      EXPECT_EQ(out.instruction_count(), m.instruction_count() + callee.instruction_count() - 2);
      EXPECT_EQ(out.function(cs.callee), callee);
    }
    EXPECT_EQ(dump_module(m), before_dump);
  }
}

TEST(Enumerate, NoCallsGivesEmptyList) {
  EXPECT_TRUE(enumerate_callsites(module({fn("main", 0, {{"b0", {"fadd", "ret"}, {}}})})).empty());
}

TEST(Enumerate, BottomUpOrder) {
  const auto m = module({fn("main", 0, {{"b0", {"call:a", "ret"}, {}}}),
                         fn("a", 0, {{"b0", {"call:b", "ret"}, {}}}),
                         fn("b", 0, {{"b0", {"fadd", "ret"}, {}}})});
  const auto order = enumerate_callsites(m);
  ASSERT_EQ(order.size(), 2u);
  EXPECT_EQ(order[0].caller, "a");
  EXPECT_EQ(order[0].callee, "b");
  EXPECT_EQ(order[1].caller, "main");
}

TEST(Enumerate, StableAndCoversEverySite) {
  for (std::uint64_t s = 0; s < 30; ++s) {
    const Module m = generate_program(small_config(s));
    const auto a = enumerate_callsites(m);
    EXPECT_EQ(a, enumerate_callsites(m));
    EXPECT_EQ(a.size(), all_callsites(m).size());
    const CallGraph cg(m);
    for (std::size_t i = 1; i < a.size(); ++i) EXPECT_LE(cg.height_of(a[i - 1].caller), cg.height_of(a[i].caller));
  }
}

TEST(TunableRegions, CountsInnermostLoops) {
  EXPECT_EQ(count_tunable_regions(module({fn("main", 0, {{"b0", {"fadd", "ret"}, {}}})})), 0u);
  EXPECT_EQ(count_tunable_regions(module({doubly_nested()})), 1u);
}

TEST(TunableRegions, InliningLoopCalleeAtNonLoopSiteAddsOne) {
  const auto m = module({fn("main", 0, {{"b0", {"generic", "call:g"}, {"b1"}}, {"b1", {"generic", "ret"}, {}}}),
                         fn("g", 0,
                            {{"e", {"generic"}, {"l"}},
                             {"l", {"fadd"}, {"l", "r"}},
                             {"r", {"generic", "ret"}, {}}})});
  const auto before = count_tunable_regions(m);
  EXPECT_EQ(count_tunable_regions(apply_inline(m, 0)), before + 1);
}

TEST(ModuleJson, RoundTripsGeneratedModules) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    auto m = generate_program(small_config(s));
    for (const auto& cs : enumerate_callsites(m))
      if (cs.caller != cs.callee) {
        m = apply_inline(m, cs.id);
        break;
      }
    EXPECT_EQ(parse_module(dump_module(m)), m);
  }
}

TEST(ModuleJson, RejectsWrongSchema) {
  auto j = to_json(module({fn("main", 0, {{"b0", {"fadd", "ret"}, {}}})}));
  j["schema"] = "progmodel/0";
  try {
    module_from_json(j);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Schema);
  }
}
