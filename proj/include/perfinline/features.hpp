#pragma once

// Static features: 20 caller-level features for the speedup regressor and
// 13 call-site features for the inlining policy.

#include <array>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "perfinline/analysis.hpp"
#include "perfinline/ir.hpp"
#include "perfinline/perf_oracle.hpp"
#include "perfinline/util.hpp"

namespace perfinline {

inline constexpr std::size_t kFunctionFeatures = 20;
inline constexpr std::size_t kCallSiteFeatures = 13;

inline constexpr std::array<std::string_view, kFunctionFeatures> kFunctionFeatureNames = {
    "InstructionPerBlock",
    "SuccessorPerBlock",
    "AvgNestedLoopLevel",
    "InstrPerLoop",
    "BlockWithMultipleSuccecorsPerLoop",
    "CallsNo",
    "IsLocal",
    "MaxLoopDepth",
    "MaxDomTreeLevel",
    "CallerHeight",
    "CallUsage",
    "IsRecursive",
    "NumCallsiteInLoop",
    "EntryBlockFreq",
    "MaxCallsiteBlockFreq",
    "NoOfInstructionsRet",
    "NoOfInstructionsFMul",
    "NoOfInstructionsFDiv",
    "NoOfInstructionsFAdd",
    "NoOfInstructionsFSub",
};

inline constexpr std::array<std::string_view, kCallSiteFeatures> kCallSiteFeatureNames = {
    "CalleeBasicBlockCount",
    "CallSiteHeight",
    "NodeCount",
    "EdgeCount",
    "NrConstantParams",
    "CalleeUsers",
    "CallerUsers",
    "CallerBasicBlockCount",
    "CallerConditionallyExecutedBlocks",
    "CalleeConditionallyExecutedBlocks",
    "CalleeCostEstimate",
    "CallSiteBlockFreq",
    "CallSiteLoopLevel",
};

template <std::size_t N, const std::array<std::string_view, N>& Names>
struct NamedVector {
  std::array<double, N> values{};

  static constexpr std::size_t size() { return N; }
  static constexpr const std::array<std::string_view, N>& names() { return Names; }

  double& operator[](std::size_t i) { return values[i]; }
  double operator[](std::size_t i) const { return values[i]; }

  double& at(std::string_view name) { return values[index_of(name)]; }
  double at(std::string_view name) const { return values[index_of(name)]; }

  static std::size_t index_of(std::string_view name) {
    for (std::size_t i = 0; i < N; ++i)
      if (Names[i] == name) return i;
    throw Error(ErrorKind::NotFound, "feature " + std::string(name));
  }

  bool operator==(const NamedVector&) const = default;

  static std::string csv_header() {
    std::string h;
    for (std::size_t i = 0; i < N; ++i) h += (i ? "," : "") + std::string(Names[i]);
    return h;
  }

  std::string csv_row() const {
    std::string r;
    for (std::size_t i = 0; i < N; ++i) r += (i ? "," : "") + fmt_double(values[i]);
    return r;
  }
};

using FeatureVector = NamedVector<kFunctionFeatures, kFunctionFeatureNames>;
using CalleeFeatureVector = NamedVector<kCallSiteFeatures, kCallSiteFeatureNames>;

inline FeatureVector extract_function_features([[maybe_unused]] const Module& m, const CallGraph& cg, const Function& f) {
  const FunctionAnalysis fa(f);
  FeatureVector v;
  const auto nblocks = static_cast<double>(f.blocks.size());

  std::size_t instrs = 0, succs = 0, calls = 0, calls_in_loop = 0;
  double max_call_freq = 0;
  std::array<std::size_t, 5> counts{};  // ret, fmul, fdiv, fadd, fsub
  for (std::size_t bi = 0; bi < f.blocks.size(); ++bi) {
    const auto& b = f.blocks[bi];
    instrs += b.instructions.size();
    succs += b.successors.size();
    for (const auto& ins : b.instructions) {
      switch (ins.op) {
        case Opcode::Ret: ++counts[0]; break;
        case Opcode::FMul: ++counts[1]; break;
        case Opcode::FDiv: ++counts[2]; break;
        case Opcode::FAdd: ++counts[3]; break;
        case Opcode::FSub: ++counts[4]; break;
        case Opcode::Call:
          ++calls;
          if (fa.depth(bi) >= 1) ++calls_in_loop;
          max_call_freq = std::max(max_call_freq, fa.frequency(bi));
          break;
        case Opcode::Generic: break;
      }
    }
  }

  const auto& loops = fa.loops.loops;
  double depth_sum = 0, loop_instrs = 0;
  int max_depth = 0;
  for (const auto& l : loops) {
    depth_sum += l.depth;
    max_depth = std::max(max_depth, l.depth);
    for (auto b : l.members) loop_instrs += static_cast<double>(f.blocks[b].instructions.size());
  }
  std::size_t branchy_loop_blocks = 0;
  for (std::size_t bi = 0; bi < f.blocks.size(); ++bi)
    if (fa.depth(bi) >= 1 && fa.cfg.succs[bi].size() >= 2) ++branchy_loop_blocks;
  const auto nloops = static_cast<double>(loops.size());
  auto ratio = [](double a, double b) { return b == 0 ? 0.0 : a / b; };

  v.at("InstructionPerBlock") = ratio(static_cast<double>(instrs), nblocks);
  v.at("SuccessorPerBlock") = ratio(static_cast<double>(succs), nblocks);
  v.at("AvgNestedLoopLevel") = ratio(depth_sum, nloops);
  v.at("InstrPerLoop") = ratio(loop_instrs, nloops);
  v.at("BlockWithMultipleSuccecorsPerLoop") = ratio(static_cast<double>(branchy_loop_blocks), nloops);
  v.at("CallsNo") = static_cast<double>(calls);
  v.at("IsLocal") = f.is_local ? 1 : 0;
  v.at("MaxLoopDepth") = max_depth;
  v.at("MaxDomTreeLevel") = fa.dom.max_level();
  v.at("CallerHeight") = cg.height_of(f.name);
  v.at("CallUsage") = static_cast<double>(cg.call_sites_into[cg.index.at(f.name)]);
  v.at("IsRecursive") = cg.is_recursive(f.name) ? 1 : 0;
  v.at("NumCallsiteInLoop") = static_cast<double>(calls_in_loop);
  v.at("EntryBlockFreq") = fa.frequency(fa.cfg.entry);
  v.at("MaxCallsiteBlockFreq") = max_call_freq;
  v.at("NoOfInstructionsRet") = static_cast<double>(counts[0]);
  v.at("NoOfInstructionsFMul") = static_cast<double>(counts[1]);
  v.at("NoOfInstructionsFDiv") = static_cast<double>(counts[2]);
  v.at("NoOfInstructionsFAdd") = static_cast<double>(counts[3]);
  v.at("NoOfInstructionsFSub") = static_cast<double>(counts[4]);
  return v;
}

inline FeatureVector extract_function_features(const Module& m, std::string_view f) {
  const Function& fn = m.function(f);
  return extract_function_features(m, CallGraph(m), fn);
}

inline std::map<std::string, FeatureVector> extract_all_function_features(const Module& m) {
  const CallGraph cg(m);
  std::map<std::string, FeatureVector> out;
  for (const auto& [name, f] : m.functions) out.emplace(name, extract_function_features(m, cg, f));
  return out;
}

inline CalleeFeatureVector extract_callsite_features(const Module& m, const CallGraph& cg, const CallSite& cs,
                                                     const CostModel& cm = {}) {
  const Function& caller = m.function(cs.caller);
  const Function& callee = m.function(cs.callee);
  const Instruction& call = instruction_at(m, cs);
  if (call.op != Opcode::Call || call.callsite_id != cs.id)
    throw Error(ErrorKind::NotFound, "call site " + std::to_string(cs.id) + " does not match its instruction");
  const FunctionAnalysis caller_fa(caller);
  const FunctionAnalysis callee_fa(callee);
  const std::size_t bi = caller.block_index(cs.block);

  CalleeFeatureVector v;
  v.at("CalleeBasicBlockCount") = static_cast<double>(callee.blocks.size());
  v.at("CallSiteHeight") = cg.height_of(cs.caller);
  v.at("NodeCount") = static_cast<double>(cg.names.size());
  v.at("EdgeCount") = static_cast<double>(cg.edge_count);
  v.at("NrConstantParams") = call.const_args;
  v.at("CalleeUsers") = static_cast<double>(cg.call_sites_into[cg.index.at(cs.callee)]);
  v.at("CallerUsers") = static_cast<double>(cg.call_sites_into[cg.index.at(cs.caller)]);
  v.at("CallerBasicBlockCount") = static_cast<double>(caller.blocks.size());
  v.at("CallerConditionallyExecutedBlocks") = static_cast<double>(caller_fa.conditionally_executed_blocks());
  v.at("CalleeConditionallyExecutedBlocks") = static_cast<double>(callee_fa.conditionally_executed_blocks());
  v.at("CalleeCostEstimate") = static_cast<double>(static_cost(m, callee, cm));
  v.at("CallSiteBlockFreq") = caller_fa.frequency(bi);
  v.at("CallSiteLoopLevel") = caller_fa.depth(bi);
  return v;
}

inline CalleeFeatureVector extract_callsite_features(const Module& m, const CallSite& cs, const CostModel& cm = {}) {
  return extract_callsite_features(m, CallGraph(m), cs, cm);
}

inline CalleeFeatureVector extract_callsite_features(const Module& m, int callsite_id, const CostModel& cm = {}) {
  return extract_callsite_features(m, find_callsite(m, callsite_id), cm);
}

}  // namespace perfinline
