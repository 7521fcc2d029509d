#pragma once

// Synthetic IR: functions made of basic blocks holding a flat list of
// opcodes. The only semantics are what the feature extractor counts and what
// the cost model charges.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "perfinline/error.hpp"

namespace perfinline {

enum class Opcode { FAdd, FSub, FMul, FDiv, Ret, Call, Generic };

inline std::string_view opcode_name(Opcode op) {
  switch (op) {
    case Opcode::FAdd: return "fadd";
    case Opcode::FSub: return "fsub";
    case Opcode::FMul: return "fmul";
    case Opcode::FDiv: return "fdiv";
    case Opcode::Ret: return "ret";
    case Opcode::Call: return "call";
    case Opcode::Generic: return "generic";
  }
  return "generic";
}

inline Opcode parse_opcode(std::string_view s) {
  if (s == "fadd") return Opcode::FAdd;
  if (s == "fsub") return Opcode::FSub;
  if (s == "fmul") return Opcode::FMul;
  if (s == "fdiv") return Opcode::FDiv;
  if (s == "ret") return Opcode::Ret;
  if (s == "call") return Opcode::Call;
  if (s == "generic") return Opcode::Generic;
  throw Error(ErrorKind::Schema, "unknown opcode '" + std::string(s) + "'");
}

inline bool is_arithmetic(Opcode op) {
  return op == Opcode::FAdd || op == Opcode::FSub || op == Opcode::FMul || op == Opcode::FDiv;
}

struct Instruction {
  Opcode op = Opcode::Generic;
  // Call operands.
  std::string callee;
  int const_args = 0;
  int callsite_id = -1;
  // Constant-argument counts of the call sites this instruction was inlined
  // through, outermost last. Empty for original code. The cost model turns
  // these into the constant-propagation discount the call would have had.
  std::vector<int> inline_context;

  static Instruction plain(Opcode op) { return Instruction{op, {}, 0, -1, {}}; }
  static Instruction call(std::string callee, int const_args, int id) {
    return Instruction{Opcode::Call, std::move(callee), const_args, id, {}};
  }

  bool operator==(const Instruction&) const = default;
};

struct BasicBlock {
  std::string id;
  std::vector<Instruction> instructions;
  std::vector<std::string> successors;
  // Loop-tuning knobs; only meaningful on innermost-loop blocks. 0 = as is.
  int unroll = 0;
  int interleave = 1;

  bool is_exit() const { return !instructions.empty() && instructions.back().op == Opcode::Ret; }

  bool operator==(const BasicBlock&) const = default;
};

struct Function {
  std::string name;
  bool is_local = false;
  int param_count = 0;
  std::vector<BasicBlock> blocks;
  std::string entry;

  std::optional<std::size_t> find_block(std::string_view id) const {
    for (std::size_t i = 0; i < blocks.size(); ++i)
      if (blocks[i].id == id) return i;
    return std::nullopt;
  }

  std::size_t block_index(std::string_view id) const {
    if (auto i = find_block(id)) return *i;
    throw Error(ErrorKind::NotFound, "block '" + std::string(id) + "' in " + name);
  }

  std::size_t instruction_count() const {
    std::size_t n = 0;
    for (const auto& b : blocks) n += b.instructions.size();
    return n;
  }

  bool operator==(const Function&) const = default;
};

struct CallSite {
  int id = -1;
  std::string caller;
  std::string block;
  std::size_t instr_index = 0;
  std::string callee;

  bool operator==(const CallSite&) const = default;
};

struct Module {
  std::string program_id;
  std::map<std::string, Function> functions;
  std::string entry_function;
  std::int64_t cache_budget = 1;
  // Next fresh call-site id; inlining allocates ids for cloned calls here.
  int next_callsite_id = 0;

  const Function& function(std::string_view name) const {
    auto it = functions.find(std::string(name));
    if (it == functions.end()) throw Error(ErrorKind::NotFound, "function '" + std::string(name) + "'");
    return it->second;
  }

  std::size_t instruction_count() const {
    std::size_t n = 0;
    for (const auto& [_, f] : functions) n += f.instruction_count();
    return n;
  }

  std::size_t call_count() const {
    std::size_t n = 0;
    for (const auto& [_, f] : functions)
      for (const auto& b : f.blocks)
        for (const auto& ins : b.instructions) n += ins.op == Opcode::Call;
    return n;
  }

  bool operator==(const Module&) const = default;
};

// Code size as seen by the instruction cache: unrolled and interleaved
// blocks count once per copy.
inline double block_size(const BasicBlock& b) {
  const int u = b.unroll >= 2 ? b.unroll : 1;
  return static_cast<double>(b.instructions.size()) * u * b.interleave;
}

inline double module_size(const Module& m) {
  double s = 0;
  for (const auto& [_, f] : m.functions)
    for (const auto& b : f.blocks) s += block_size(b);
  return s;
}

// All call sites in function-name, block, instruction order.
inline std::vector<CallSite> callsites_of(const Function& f) {
  std::vector<CallSite> out;
  for (const auto& b : f.blocks)
    for (std::size_t i = 0; i < b.instructions.size(); ++i) {
      const auto& ins = b.instructions[i];
      if (ins.op == Opcode::Call) out.push_back({ins.callsite_id, f.name, b.id, i, ins.callee});
    }
  return out;
}

inline std::vector<CallSite> all_callsites(const Module& m) {
  std::vector<CallSite> out;
  for (const auto& [_, f] : m.functions) {
    auto cs = callsites_of(f);
    out.insert(out.end(), cs.begin(), cs.end());
  }
  return out;
}

inline CallSite find_callsite(const Module& m, int id) {
  for (const auto& [_, f] : m.functions)
    for (const auto& b : f.blocks)
      for (std::size_t i = 0; i < b.instructions.size(); ++i) {
        const auto& ins = b.instructions[i];
        if (ins.op == Opcode::Call && ins.callsite_id == id) return {id, f.name, b.id, i, ins.callee};
      }
  throw Error(ErrorKind::NotFound, "call site " + std::to_string(id));
}

inline const Instruction& instruction_at(const Module& m, const CallSite& cs) {
  const auto& f = m.function(cs.caller);
  const auto& b = f.blocks[f.block_index(cs.block)];
  if (cs.instr_index >= b.instructions.size())
    throw Error(ErrorKind::NotFound, "call site " + std::to_string(cs.id) + " instruction index");
  return b.instructions[cs.instr_index];
}

}  // namespace perfinline
