#pragma once

// Seeded generator of well-formed synthetic programs. Control flow is built
// from structured regions (sequence, if/else diamond, natural loop), so every
// CFG is reducible, every block reaches the single Ret block, and the entry
// block is never inside a loop.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "perfinline/analysis.hpp"
#include "perfinline/ir.hpp"
#include "perfinline/util.hpp"

namespace perfinline {

struct GenConfig {
  std::uint64_t seed = 1;
  std::string program_id;  // defaults to "prog-<seed>"
  int n_functions = 6;
  int min_blocks = 1;      // control-flow blocks per function, excluding entry and exit
  int max_blocks = 6;
  int min_instrs = 1;      // non-call instructions per block
  int max_instrs = 5;
  double loop_probability = 0.3;
  int max_loop_depth = 2;
  double callsite_density = 0.4;  // expected calls per block
  double recursion_probability = 0.0;
  int max_params = 3;
  double local_probability = 0.5;
  int max_callsites = 0;   // 0 = unbounded
  bool ensure_reachable = true;

  void check() const {
    auto bad = [](const std::string& w) { throw Error(ErrorKind::Config, w); };
    if (n_functions < 1) bad("n_functions must be >= 1");
    if (min_blocks < 1 || max_blocks < min_blocks) bad("block range");
    if (min_instrs < 1 || max_instrs < min_instrs) bad("instruction range");
    auto prob = [&](double p, const char* n) {
      if (!(p >= 0.0 && p <= 1.0)) bad(std::string(n) + " must be in [0,1]");
    };
    prob(loop_probability, "loop_probability");
    prob(recursion_probability, "recursion_probability");
    prob(local_probability, "local_probability");
    if (!(callsite_density >= 0.0) || !std::isfinite(callsite_density)) bad("callsite_density must be >= 0");
    if (max_params < 0) bad("max_params must be >= 0");
    if (max_loop_depth < 0) bad("max_loop_depth must be >= 0");
    if (max_callsites < 0) bad("max_callsites must be >= 0");
  }
};

namespace detail {

class FunctionBuilder {
 public:
  FunctionBuilder(Rng& rng, const GenConfig& cfg) : rng_(rng), cfg_(cfg) {}

  std::vector<BasicBlock> build(int budget) {
    blocks_.clear();
    const auto entry = add_block();
    auto [head, tail] = region(budget, 0);
    link(entry, head);
    const auto exit = add_block();
    link(tail, exit);
    for (auto& b : blocks_) fill(b);
    blocks_[exit].instructions.push_back(Instruction::plain(Opcode::Ret));
    return std::move(blocks_);
  }

 private:
  std::size_t add_block() {
    BasicBlock b;
    b.id = "b" + std::to_string(blocks_.size());
    blocks_.push_back(std::move(b));
    return blocks_.size() - 1;
  }

  void link(std::size_t from, std::size_t to) { blocks_[from].successors.push_back(blocks_[to].id); }

  // Single-entry single-exit region of `budget` blocks; returns (entry, exit).
  std::pair<std::size_t, std::size_t> region(int budget, int depth) {
    if (budget <= 1) {
      const auto b = add_block();
      return {b, b};
    }
    const bool can_loop = depth < cfg_.max_loop_depth;
    if (can_loop && rng_.bernoulli(cfg_.loop_probability)) {
      const auto header = add_block();
      const int body_budget = budget - 1;
      if (body_budget == 0) {
        link(header, header);
      } else {
        auto [b_in, b_out] = region(body_budget, depth + 1);
        link(header, b_in);
        link(b_out, header);
      }
      return {header, header};
    }
    if (budget >= 3 && rng_.bernoulli(0.5)) {
      const auto cond = add_block();
      const int inner = budget - 2;
      const int then_budget = inner == 1 ? 1 : 1 + static_cast<int>(rng_.below(static_cast<std::size_t>(inner)));
      const int else_budget = inner - then_budget;
      auto [t_in, t_out] = region(then_budget, depth);
      std::pair<std::size_t, std::size_t> e{kNoBlock, kNoBlock};
      if (else_budget > 0) e = region(else_budget, depth);
      const auto join = add_block();
      link(cond, t_in);
      link(t_out, join);
      if (else_budget > 0) {
        link(cond, e.first);
        link(e.second, join);
      } else {
        link(cond, join);
      }
      return {cond, join};
    }
    const int first = 1 + static_cast<int>(rng_.below(static_cast<std::size_t>(budget - 1)));
    auto [a_in, a_out] = region(first, depth);
    auto [b_in, b_out] = region(budget - first, depth);
    link(a_out, b_in);
    return {a_in, b_out};
  }

  void fill(BasicBlock& b) {
    const int n = cfg_.min_instrs + static_cast<int>(rng_.below(static_cast<std::size_t>(cfg_.max_instrs - cfg_.min_instrs + 1)));
    for (int i = 0; i < n; ++i) {
      const double u = rng_.uniform();
      Opcode op = Opcode::Generic;
      if (u < 0.15) op = Opcode::FAdd;
      else if (u < 0.25) op = Opcode::FSub;
      else if (u < 0.45) op = Opcode::FMul;
      else if (u < 0.55) op = Opcode::FDiv;
      b.instructions.push_back(Instruction::plain(op));
    }
  }

  Rng& rng_;
  const GenConfig& cfg_;
  std::vector<BasicBlock> blocks_;
};

inline std::string function_name(int i, int n) {
  if (i == 0) return "main";
  const int width = n <= 10 ? 1 : n <= 100 ? 2 : 3;
  std::string digits = std::to_string(i);
  return "f" + std::string(static_cast<std::size_t>(std::max(0, width - static_cast<int>(digits.size()))), '0') + digits;
}

}  // namespace detail

inline Module generate_program(const GenConfig& cfg) {
  cfg.check();
  Rng rng(cfg.seed);
  Module m;
  m.program_id = cfg.program_id.empty() ? "prog-" + std::to_string(cfg.seed) : cfg.program_id;
  m.entry_function = "main";

  const int n = cfg.n_functions;
  std::vector<std::string> names;
  std::vector<Function> fns;
  detail::FunctionBuilder builder(rng, cfg);
  for (int i = 0; i < n; ++i) {
    Function f;
    f.name = detail::function_name(i, n);
    f.is_local = i != 0 && rng.bernoulli(cfg.local_probability);
    f.param_count = i == 0 ? 0 : static_cast<int>(rng.below(static_cast<std::size_t>(cfg.max_params + 1)));
    const int budget = cfg.min_blocks + static_cast<int>(rng.below(static_cast<std::size_t>(cfg.max_blocks - cfg.min_blocks + 1)));
    f.blocks = builder.build(budget);
    f.entry = f.blocks.front().id;
    names.push_back(f.name);
    fns.push_back(std::move(f));
  }

  int next_id = 0;
  std::vector<int> incoming(static_cast<std::size_t>(n), 0);
  auto room = [&] { return cfg.max_callsites == 0 || next_id < cfg.max_callsites; };
  auto insert_call = [&](int caller, std::size_t block, int callee) {
    auto& b = fns[static_cast<std::size_t>(caller)].blocks[block];
    const std::size_t limit = b.is_exit() ? b.instructions.size() - 1 : b.instructions.size();
    const std::size_t pos = rng.below(limit + 1);
    const int params = fns[static_cast<std::size_t>(callee)].param_count;
    const int konst = static_cast<int>(rng.below(static_cast<std::size_t>(params + 1)));
    b.instructions.insert(b.instructions.begin() + static_cast<std::ptrdiff_t>(pos),
                          Instruction::call(names[static_cast<std::size_t>(callee)], konst, next_id++));
    ++incoming[static_cast<std::size_t>(callee)];
  };

  const int whole = static_cast<int>(std::floor(cfg.callsite_density));
  const double frac = cfg.callsite_density - whole;
  for (int i = 0; i < n; ++i) {
    for (std::size_t bi = 0; bi < fns[static_cast<std::size_t>(i)].blocks.size(); ++bi) {
      const int calls = whole + (rng.bernoulli(frac) ? 1 : 0);
      for (int c = 0; c < calls && room(); ++c) {
        int callee = -1;
        if (cfg.recursion_probability > 0.0 && rng.bernoulli(cfg.recursion_probability)) {
          callee = static_cast<int>(rng.below(static_cast<std::size_t>(i + 1)));
        } else if (i + 1 < n) {
          callee = i + 1 + static_cast<int>(rng.below(static_cast<std::size_t>(n - i - 1)));
        }
        if (callee >= 0) insert_call(i, bi, callee);
      }
    }
  }
  if (cfg.ensure_reachable && cfg.callsite_density > 0.0) {
    for (int i = 1; i < n && room(); ++i) {
      if (incoming[static_cast<std::size_t>(i)] > 0) continue;
      const int caller = static_cast<int>(rng.below(static_cast<std::size_t>(i)));
      const auto block = rng.below(fns[static_cast<std::size_t>(caller)].blocks.size());
      insert_call(caller, block, i);
    }
  }

  for (auto& f : fns) m.functions.emplace(f.name, std::move(f));
  m.next_callsite_id = next_id;
  // ceil(1.2 * size) in integer arithmetic.
  m.cache_budget = static_cast<std::int64_t>((6 * m.instruction_count() + 4) / 5);
  return m;
}

}  // namespace perfinline
