#pragma once

// CFG and call-graph analyses: dominators, natural loops, static block
// frequency, SCC-contracted call-graph heights and bottom-up traversal order.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "perfinline/ir.hpp"

namespace perfinline {

inline constexpr double kTripEstimate = 8.0;
inline constexpr std::size_t kNoBlock = static_cast<std::size_t>(-1);

// Index-based view of a function's CFG.
struct Cfg {
  std::size_t entry = 0;
  std::vector<std::vector<std::size_t>> succs;
  std::vector<std::vector<std::size_t>> preds;

  explicit Cfg(const Function& f) : entry(f.block_index(f.entry)), succs(f.blocks.size()), preds(f.blocks.size()) {
    for (std::size_t i = 0; i < f.blocks.size(); ++i)
      for (const auto& s : f.blocks[i].successors) {
        const auto j = f.block_index(s);
        succs[i].push_back(j);
        preds[j].push_back(i);
      }
  }

  std::size_t size() const { return succs.size(); }

  // Reverse post-order of blocks reachable from entry.
  std::vector<std::size_t> reverse_post_order() const {
    std::vector<std::size_t> post;
    std::vector<char> seen(size(), 0);
    std::vector<std::pair<std::size_t, std::size_t>> stack{{entry, 0}};
    seen[entry] = 1;
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < succs[node].size()) {
        const auto s = succs[node][next++];
        if (!seen[s]) {
          seen[s] = 1;
          stack.push_back({s, 0});
        }
      } else {
        post.push_back(node);
        stack.pop_back();
      }
    }
    std::reverse(post.begin(), post.end());
    return post;
  }
};

struct DominatorTree {
  std::vector<std::size_t> idom;  // idom[entry] == entry; kNoBlock if unreachable
  std::vector<int> level;         // entry at level 1

  bool dominates(std::size_t a, std::size_t b) const {
    if (idom[b] == kNoBlock) return false;
    while (true) {
      if (a == b) return true;
      if (idom[b] == b) return false;
      b = idom[b];
    }
  }

  int max_level() const {
    int m = 0;
    for (int l : level) m = std::max(m, l);
    return m;
  }
};

// Cooper-Harvey-Kennedy iterative dominators over reverse post-order.
inline DominatorTree compute_dominators(const Cfg& cfg) {
  const auto rpo = cfg.reverse_post_order();
  std::vector<std::size_t> order(cfg.size(), kNoBlock);
  for (std::size_t i = 0; i < rpo.size(); ++i) order[rpo[i]] = i;

  DominatorTree dt;
  dt.idom.assign(cfg.size(), kNoBlock);
  dt.idom[cfg.entry] = cfg.entry;

  auto intersect = [&](std::size_t a, std::size_t b) {
    while (a != b) {
      while (order[a] > order[b]) a = dt.idom[a];
      while (order[b] > order[a]) b = dt.idom[b];
    }
    return a;
  };

  bool changed = true;
  while (changed) {
    changed = false;
    for (std::size_t k = 1; k < rpo.size(); ++k) {
      const auto b = rpo[k];
      std::size_t new_idom = kNoBlock;
      for (auto p : cfg.preds[b]) {
        if (dt.idom[p] == kNoBlock) continue;
        new_idom = new_idom == kNoBlock ? p : intersect(p, new_idom);
      }
      if (new_idom != dt.idom[b]) {
        dt.idom[b] = new_idom;
        changed = true;
      }
    }
  }

  dt.level.assign(cfg.size(), 0);
  for (auto b : rpo) dt.level[b] = b == cfg.entry ? 1 : dt.level[dt.idom[b]] + 1;
  return dt;
}

inline DominatorTree compute_dominators(const Function& f) { return compute_dominators(Cfg(f)); }

struct Loop {
  std::size_t header = 0;
  std::vector<std::size_t> members;  // sorted, includes header
  int depth = 1;

  bool contains(std::size_t b) const { return std::binary_search(members.begin(), members.end(), b); }
};

struct LoopNest {
  std::vector<Loop> loops;          // ordered by header block index
  std::vector<int> block_depth;     // 0 outside all loops
  std::vector<int> innermost;       // innermost loop index per block, -1 if none

  bool is_innermost(std::size_t loop) const {
    for (std::size_t j = 0; j < loops.size(); ++j)
      if (j != loop && loops[loop].contains(loops[j].header)) return false;
    return true;
  }
};

// Natural loops, one per back-edge target. Throws on irreducible control flow
// (a retreating edge whose target does not dominate its source).
inline LoopNest detect_loops(const Cfg& cfg, const DominatorTree& dt) {
  const std::size_t n = cfg.size();

  // Retreating edges via DFS; each must be a back edge in a reducible CFG.
  std::vector<char> state(n, 0);  // 0 new, 1 on stack, 2 done
  std::vector<std::pair<std::size_t, std::size_t>> back_edges;
  std::vector<std::pair<std::size_t, std::size_t>> stack{{cfg.entry, 0}};
  state[cfg.entry] = 1;
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < cfg.succs[node].size()) {
      const auto s = cfg.succs[node][next++];
      if (state[s] == 1) {
        if (!dt.dominates(s, node))
          throw Error(ErrorKind::InvariantViolation, "irreducible control flow");
        back_edges.push_back({node, s});
      } else if (state[s] == 0) {
        state[s] = 1;
        stack.push_back({s, 0});
      }
    } else {
      state[node] = 2;
      stack.pop_back();
    }
  }
  std::map<std::size_t, std::set<std::size_t>> by_header;
  for (auto [src, header] : back_edges) {
    auto& body = by_header[header];
    body.insert(header);
    std::vector<std::size_t> work;
    if (body.insert(src).second) work.push_back(src);
    while (!work.empty()) {
      const auto b = work.back();
      work.pop_back();
      for (auto p : cfg.preds[b])
        if (dt.idom[p] != kNoBlock && body.insert(p).second) work.push_back(p);
    }
  }

  LoopNest nest;
  for (auto& [header, body] : by_header) nest.loops.push_back({header, {body.begin(), body.end()}, 1});
  for (auto& l : nest.loops) {
    int d = 1;
    for (const auto& other : nest.loops)
      if (&other != &l && other.contains(l.header) && other.header != l.header) ++d;
    l.depth = d;
  }
  nest.block_depth.assign(n, 0);
  nest.innermost.assign(n, -1);
  for (std::size_t i = 0; i < nest.loops.size(); ++i)
    for (auto b : nest.loops[i].members)
      if (nest.loops[i].depth > nest.block_depth[b]) {
        nest.block_depth[b] = nest.loops[i].depth;
        nest.innermost[b] = static_cast<int>(i);
      }
  return nest;
}

inline LoopNest detect_loops(const Function& f) {
  const Cfg cfg(f);
  return detect_loops(cfg, compute_dominators(cfg));
}

inline double frequency_for_depth(int depth) { return std::pow(kTripEstimate, depth); }

// Everything the feature extractor and the cost model need about one function.
struct FunctionAnalysis {
  const Function* fn;
  Cfg cfg;
  DominatorTree dom;
  LoopNest loops;
  std::size_t exit_block = kNoBlock;

  explicit FunctionAnalysis(const Function& f) : fn(&f), cfg(f), dom(compute_dominators(cfg)), loops(detect_loops(cfg, dom)) {
    for (std::size_t i = 0; i < f.blocks.size(); ++i)
      if (f.blocks[i].is_exit()) exit_block = i;
  }

  double frequency(std::size_t b) const { return frequency_for_depth(loops.block_depth[b]); }
  int depth(std::size_t b) const { return loops.block_depth[b]; }

  // Blocks that do not dominate the exit block: not on the must-execute spine.
  std::size_t conditionally_executed_blocks() const {
    std::size_t n = 0;
    for (std::size_t b = 0; b < cfg.size(); ++b)
      if (exit_block == kNoBlock || !dom.dominates(b, exit_block)) ++n;
    return n;
  }
};

inline double block_frequency(const Function& f, std::string_view block) {
  FunctionAnalysis fa(f);
  return fa.frequency(f.block_index(block));
}

// Call graph with strongly connected components contracted.
struct CallGraph {
  std::vector<std::string> names;                 // sorted
  std::unordered_map<std::string, std::size_t> index;
  std::vector<std::vector<std::size_t>> callees;  // distinct, sorted
  std::vector<std::size_t> call_sites_into;       // number of call sites targeting each node
  std::size_t edge_count = 0;                     // total call sites
  std::vector<int> scc;                           // component id per node
  std::vector<std::vector<std::size_t>> components;
  std::vector<char> cyclic;                       // per component: size > 1 or self call
  std::vector<int> height;                        // per component

  explicit CallGraph(const Module& m) {
    for (const auto& [name, _] : m.functions) {
      index[name] = names.size();
      names.push_back(name);
    }
    callees.resize(names.size());
    call_sites_into.assign(names.size(), 0);
    for (const auto& [name, f] : m.functions) {
      auto& out = callees[index[name]];
      for (const auto& b : f.blocks)
        for (const auto& ins : b.instructions)
          if (ins.op == Opcode::Call) {
            const auto c = index.at(ins.callee);
            out.push_back(c);
            ++call_sites_into[c];
            ++edge_count;
          }
      std::sort(out.begin(), out.end());
      out.erase(std::unique(out.begin(), out.end()), out.end());
    }
    tarjan();
    compute_heights();
  }

  int height_of(std::string_view f) const { return height[scc[index.at(std::string(f))]]; }

  bool is_recursive(std::string_view f) const { return cyclic[scc[index.at(std::string(f))]]; }

  bool same_scc(std::string_view a, std::string_view b) const {
    return scc[index.at(std::string(a))] == scc[index.at(std::string(b))];
  }

 private:
  void tarjan() {
    const std::size_t n = names.size();
    std::vector<int> idx(n, -1), low(n, 0);
    std::vector<char> on_stack(n, 0);
    std::vector<std::size_t> stack;
    scc.assign(n, -1);
    int counter = 0;
    std::function<void(std::size_t)> visit = [&](std::size_t v) {
      idx[v] = low[v] = counter++;
      stack.push_back(v);
      on_stack[v] = 1;
      for (auto w : callees[v]) {
        if (idx[w] < 0) {
          visit(w);
          low[v] = std::min(low[v], low[w]);
        } else if (on_stack[w]) {
          low[v] = std::min(low[v], idx[w]);
        }
      }
      if (low[v] == idx[v]) {
        std::vector<std::size_t> comp;
        std::size_t w;
        do {
          w = stack.back();
          stack.pop_back();
          on_stack[w] = 0;
          scc[w] = static_cast<int>(components.size());
          comp.push_back(w);
        } while (w != v);
        std::sort(comp.begin(), comp.end());
        bool cyc = comp.size() > 1;
        if (!cyc) cyc = std::binary_search(callees[v].begin(), callees[v].end(), v);
        components.push_back(std::move(comp));
        cyclic.push_back(cyc);
      }
    };
    for (std::size_t v = 0; v < n; ++v)
      if (idx[v] < 0) visit(v);
  }

  void compute_heights() {
    // Tarjan emits components callees-first, so one forward pass suffices.
    height.assign(components.size(), 0);
    for (std::size_t c = 0; c < components.size(); ++c)
      for (auto v : components[c])
        for (auto w : callees[v]) {
          const auto cw = static_cast<std::size_t>(scc[w]);
          if (cw != c) height[c] = std::max(height[c], height[cw] + 1);
        }
  }
};

inline int call_graph_height(const Module& m, std::string_view f) {
  m.function(f);
  return CallGraph(m).height_of(f);
}

// Bottom-up traversal: components by ascending height (ties by smallest
// member name), functions by name within a component, then block and
// instruction order within a function.
inline std::vector<CallSite> enumerate_callsites(const Module& m, const CallGraph& cg) {
  std::vector<std::size_t> comps(cg.components.size());
  for (std::size_t c = 0; c < comps.size(); ++c) comps[c] = c;
  std::sort(comps.begin(), comps.end(), [&](std::size_t a, std::size_t b) {
    if (cg.height[a] != cg.height[b]) return cg.height[a] < cg.height[b];
    return cg.components[a].front() < cg.components[b].front();
  });
  std::vector<CallSite> out;
  for (auto c : comps)
    for (auto v : cg.components[c]) {
      auto cs = callsites_of(m.functions.at(cg.names[v]));
      out.insert(out.end(), cs.begin(), cs.end());
    }
  return out;
}

inline std::vector<CallSite> enumerate_callsites(const Module& m) { return enumerate_callsites(m, CallGraph(m)); }

// Each innermost loop is one unroll/interleave-tunable region.
struct Region {
  std::string function;
  std::string header;
  auto operator<=>(const Region&) const = default;
};

inline std::vector<Region> tunable_regions(const Module& m) {
  std::vector<Region> out;
  for (const auto& [name, f] : m.functions) {
    const auto nest = detect_loops(f);
    for (std::size_t i = 0; i < nest.loops.size(); ++i)
      if (nest.is_innermost(i)) out.push_back({name, f.blocks[nest.loops[i].header].id});
  }
  return out;
}

inline std::size_t count_tunable_regions(const Module& m) { return tunable_regions(m).size(); }

// Checks every structural invariant of the IR; throws InvariantViolation.
inline void validate(const Module& m) {
  auto fail = [](const std::string& what) { throw Error(ErrorKind::InvariantViolation, what); };
  if (m.cache_budget <= 0) fail("cache_budget must be positive");
  if (!m.functions.count(m.entry_function)) fail("entry function '" + m.entry_function + "' missing");
  std::set<int> ids;
  for (const auto& [name, f] : m.functions) {
    if (f.name != name) fail("function key/name mismatch for " + name);
    if (f.param_count < 0) fail(name + ": negative param_count");
    if (f.blocks.empty()) fail(name + ": no blocks");
    std::set<std::string> block_ids;
    for (const auto& b : f.blocks)
      if (!block_ids.insert(b.id).second) fail(name + ": duplicate block id " + b.id);
    if (!block_ids.count(f.entry)) fail(name + ": entry block missing");
    std::size_t rets = 0;
    for (const auto& b : f.blocks) {
      if (b.instructions.empty()) fail(name + "/" + b.id + ": empty block");
      for (const auto& s : b.successors)
        if (!block_ids.count(s)) fail(name + "/" + b.id + ": unknown successor " + s);
      for (std::size_t i = 0; i < b.instructions.size(); ++i) {
        const auto& ins = b.instructions[i];
        if (ins.op == Opcode::Ret) {
          ++rets;
          if (i + 1 != b.instructions.size()) fail(name + "/" + b.id + ": ret not last");
          if (!b.successors.empty()) fail(name + "/" + b.id + ": ret block has successors");
          if (b.instructions.size() < 2) fail(name + "/" + b.id + ": exit block holds only ret");
        }
        if (ins.op == Opcode::Call) {
          auto it = m.functions.find(ins.callee);
          if (it == m.functions.end()) fail(name + ": call to unknown " + ins.callee);
          if (ins.const_args < 0 || ins.const_args > it->second.param_count)
            fail(name + ": const_args out of range");
          if (ins.callsite_id < 0 || ins.callsite_id >= m.next_callsite_id)
            fail(name + ": call site id out of range");
          if (!ids.insert(ins.callsite_id).second) fail("duplicate call site id " + std::to_string(ins.callsite_id));
        }
        for (int k : ins.inline_context)
          if (k < 0) fail(name + ": negative constant-argument count in inline context");
      }
      if (b.successors.empty() && !b.is_exit()) fail(name + "/" + b.id + ": dead-end block without ret");
    }
    if (rets != 1) fail(name + ": expected exactly one ret");

    const Cfg cfg(f);
    if (!cfg.preds[cfg.entry].empty()) fail(name + ": entry block has predecessors");
    const auto dt = compute_dominators(cfg);
    for (std::size_t b = 0; b < cfg.size(); ++b)
      if (dt.idom[b] == kNoBlock) fail(name + "/" + f.blocks[b].id + ": unreachable block");
    detect_loops(cfg, dt);
  }
}

}  // namespace perfinline
