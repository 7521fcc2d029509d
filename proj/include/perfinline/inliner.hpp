#pragma once

#include <set>
#include <string>
#include <vector>

#include "perfinline/ir.hpp"

namespace perfinline {

// Inlines call site `callsite_id` and returns the transformed module; the
// input is left untouched.
//
// The call block is split at the call. The head keeps the original block id
// and absorbs the callee's entry block; the callee's exit block (minus its
// Ret) is merged with the instructions that followed the call. Remaining
// callee blocks are cloned in between with ids "<callee block>.i<site>".
// Cloned calls receive fresh call-site ids. The callee's own body stays in
// the module. Loop membership of the clones follows from the CFG, so clones
// nest under whatever loops enclose the call block.
inline Module apply_inline(const Module& m, int callsite_id) {
  const CallSite cs = find_callsite(m, callsite_id);
  if (cs.callee == cs.caller)
    throw Error(ErrorKind::RefusedInline, "call site " + std::to_string(callsite_id) + " is directly recursive");

  Module out = m;
  const Function& callee = m.function(cs.callee);
  Function& caller = out.functions.at(cs.caller);
  const std::size_t bi = caller.block_index(cs.block);
  const BasicBlock call_block = caller.blocks[bi];
  const Instruction call = call_block.instructions[cs.instr_index];
  const std::string suffix = std::to_string(callsite_id);

  const std::size_t c_entry = callee.block_index(callee.entry);
  std::size_t c_exit = 0;
  for (std::size_t j = 0; j < callee.blocks.size(); ++j)
    if (callee.blocks[j].is_exit()) c_exit = j;
  const bool single = c_entry == c_exit;
  const std::string tail_id = single ? call_block.id : call_block.id + ".r" + suffix;

  auto renamed = [&](std::size_t j) {
    if (j == c_entry) return call_block.id;
    if (j == c_exit) return tail_id;
    return callee.blocks[j].id + ".i" + suffix;
  };
  auto map_succs = [&](const BasicBlock& b) {
    std::vector<std::string> s;
    for (const auto& id : b.successors) s.push_back(renamed(callee.block_index(id)));
    return s;
  };
  auto clone_body = [&](const BasicBlock& b, std::vector<Instruction>& into) {
    for (const auto& src : b.instructions) {
      if (src.op == Opcode::Ret) continue;
      Instruction ins = src;
      ins.inline_context.push_back(call.const_args);
      ins.inline_context.insert(ins.inline_context.end(), call.inline_context.begin(), call.inline_context.end());
      if (ins.op == Opcode::Call) ins.callsite_id = out.next_callsite_id++;
      into.push_back(std::move(ins));
    }
  };

  const auto k = static_cast<std::ptrdiff_t>(cs.instr_index);
  std::vector<BasicBlock> spliced;

  BasicBlock head;
  head.id = call_block.id;
  head.unroll = call_block.unroll;
  head.interleave = call_block.interleave;
  head.instructions.assign(call_block.instructions.begin(), call_block.instructions.begin() + k);
  clone_body(callee.blocks[c_entry], head.instructions);

  if (single) {
    head.instructions.insert(head.instructions.end(), call_block.instructions.begin() + k + 1, call_block.instructions.end());
    head.successors = call_block.successors;
    spliced.push_back(std::move(head));
  } else {
    head.successors = map_succs(callee.blocks[c_entry]);
    spliced.push_back(std::move(head));
    for (std::size_t j = 0; j < callee.blocks.size(); ++j) {
      if (j == c_entry || j == c_exit) continue;
      BasicBlock b;
      b.id = renamed(j);
      b.unroll = callee.blocks[j].unroll;
      b.interleave = callee.blocks[j].interleave;
      clone_body(callee.blocks[j], b.instructions);
      b.successors = map_succs(callee.blocks[j]);
      spliced.push_back(std::move(b));
    }
    BasicBlock tail;
    tail.id = tail_id;
    tail.unroll = call_block.unroll;
    tail.interleave = call_block.interleave;
    clone_body(callee.blocks[c_exit], tail.instructions);
    tail.instructions.insert(tail.instructions.end(), call_block.instructions.begin() + k + 1, call_block.instructions.end());
    tail.successors = call_block.successors;
    spliced.push_back(std::move(tail));
  }

  std::set<std::string> existing;
  for (std::size_t i = 0; i < caller.blocks.size(); ++i)
    if (i != bi) existing.insert(caller.blocks[i].id);
  for (const auto& b : spliced)
    if (!existing.insert(b.id).second)
      throw Error(ErrorKind::InvariantViolation, "block id clash while inlining: " + b.id);

  std::vector<BasicBlock> blocks(caller.blocks.begin(), caller.blocks.begin() + static_cast<std::ptrdiff_t>(bi));
  for (auto& b : spliced) blocks.push_back(std::move(b));
  blocks.insert(blocks.end(), caller.blocks.begin() + static_cast<std::ptrdiff_t>(bi) + 1, caller.blocks.end());
  caller.blocks = std::move(blocks);
  return out;
}

}  // namespace perfinline
