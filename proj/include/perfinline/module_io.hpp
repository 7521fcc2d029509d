#pragma once

// JSON forms of programs ("progmodel/1") and cost models ("costmodel/1").

#include <string>

#include <json.hpp>

#include "perfinline/analysis.hpp"
#include "perfinline/ir.hpp"
#include "perfinline/perf_oracle.hpp"

namespace perfinline {

using Json = nlohmann::ordered_json;

inline constexpr const char* kModuleSchema = "progmodel/1";
inline constexpr const char* kCostModelSchema = "costmodel/1";

inline void expect_schema(const Json& j, std::string_view schema) {
  if (!j.is_object() || !j.contains("schema") || j.at("schema") != schema)
    throw Error(ErrorKind::Schema, "expected schema " + std::string(schema) +
                                       (j.is_object() && j.contains("schema") ? ", got " + j.at("schema").dump() : ""));
}

inline Json to_json(const Instruction& ins) {
  if (ins.op != Opcode::Call && ins.inline_context.empty()) return std::string(opcode_name(ins.op));
  Json j;
  j["op"] = std::string(opcode_name(ins.op));
  if (ins.op == Opcode::Call) {
    j["callee"] = ins.callee;
    j["const_args"] = ins.const_args;
    j["id"] = ins.callsite_id;
  }
  if (!ins.inline_context.empty()) j["ctx"] = ins.inline_context;
  return j;
}

inline Instruction instruction_from_json(const Json& j) {
  if (j.is_string()) {
    const auto op = parse_opcode(j.get<std::string>());
    if (op == Opcode::Call) throw Error(ErrorKind::Schema, "call instruction needs operands");
    return Instruction::plain(op);
  }
  Instruction ins = Instruction::plain(parse_opcode(j.at("op").get<std::string>()));
  if (ins.op == Opcode::Call) {
    ins.callee = j.at("callee").get<std::string>();
    ins.const_args = j.at("const_args").get<int>();
    ins.callsite_id = j.at("id").get<int>();
  }
  if (j.contains("ctx")) ins.inline_context = j.at("ctx").get<std::vector<int>>();
  return ins;
}

inline Json to_json(const Module& m) {
  Json j;
  j["schema"] = kModuleSchema;
  j["program_id"] = m.program_id;
  j["entry_function"] = m.entry_function;
  j["cache_budget"] = m.cache_budget;
  j["next_callsite_id"] = m.next_callsite_id;
  Json fns = Json::array();
  for (const auto& [_, f] : m.functions) {
    Json jf;
    jf["name"] = f.name;
    jf["is_local"] = f.is_local;
    jf["param_count"] = f.param_count;
    jf["entry"] = f.entry;
    Json blocks = Json::array();
    for (const auto& b : f.blocks) {
      Json jb;
      jb["id"] = b.id;
      Json instrs = Json::array();
      for (const auto& ins : b.instructions) instrs.push_back(to_json(ins));
      jb["instructions"] = std::move(instrs);
      jb["successors"] = b.successors;
      if (b.unroll != 0) jb["unroll"] = b.unroll;
      if (b.interleave != 1) jb["interleave"] = b.interleave;
      blocks.push_back(std::move(jb));
    }
    jf["blocks"] = std::move(blocks);
    fns.push_back(std::move(jf));
  }
  j["functions"] = std::move(fns);
  return j;
}

inline Module module_from_json(const Json& j) {
  expect_schema(j, kModuleSchema);
  try {
    Module m;
    m.program_id = j.at("program_id").get<std::string>();
    m.entry_function = j.at("entry_function").get<std::string>();
    m.cache_budget = j.at("cache_budget").get<std::int64_t>();
    m.next_callsite_id = j.at("next_callsite_id").get<int>();
    for (const auto& jf : j.at("functions")) {
      Function f;
      f.name = jf.at("name").get<std::string>();
      f.is_local = jf.at("is_local").get<bool>();
      f.param_count = jf.at("param_count").get<int>();
      f.entry = jf.at("entry").get<std::string>();
      for (const auto& jb : jf.at("blocks")) {
        BasicBlock b;
        b.id = jb.at("id").get<std::string>();
        for (const auto& ji : jb.at("instructions")) b.instructions.push_back(instruction_from_json(ji));
        b.successors = jb.at("successors").get<std::vector<std::string>>();
        b.unroll = jb.value("unroll", 0);
        b.interleave = jb.value("interleave", 1);
        f.blocks.push_back(std::move(b));
      }
      if (!m.functions.emplace(f.name, f).second) throw Error(ErrorKind::InvariantViolation, "duplicate function " + f.name);
    }
    validate(m);
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Schema, std::string("malformed module: ") + e.what());
  }
}

inline std::string dump_module(const Module& m) { return to_json(m).dump(1) + "\n"; }

inline Module parse_module(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Schema, std::string("not JSON: ") + e.what());
  }
  return module_from_json(j);
}

inline Json to_json(const CostModel& cm) {
  Json j;
  j["schema"] = kCostModelSchema;
  j["w_fdiv"] = cm.w_fdiv;
  j["w_fmul"] = cm.w_fmul;
  j["w_fadd"] = cm.w_fadd;
  j["w_fsub"] = cm.w_fsub;
  j["w_ret"] = cm.w_ret;
  j["w_generic"] = cm.w_generic;
  j["call_overhead"] = cm.call_overhead;
  j["per_arg_setup"] = cm.per_arg_setup;
  j["const_param_bonus"] = cm.const_param_bonus;
  j["const_bonus_floor"] = cm.const_bonus_floor;
  j["icache_beta"] = cm.icache_beta;
  j["trip_estimate"] = cm.trip_estimate;
  j["loop_overhead"] = cm.loop_overhead;
  return j;
}

inline CostModel cost_model_from_json(const Json& j) {
  expect_schema(j, kCostModelSchema);
  CostModel cm;
  cm.w_fdiv = j.value("w_fdiv", cm.w_fdiv);
  cm.w_fmul = j.value("w_fmul", cm.w_fmul);
  cm.w_fadd = j.value("w_fadd", cm.w_fadd);
  cm.w_fsub = j.value("w_fsub", cm.w_fsub);
  cm.w_ret = j.value("w_ret", cm.w_ret);
  cm.w_generic = j.value("w_generic", cm.w_generic);
  cm.call_overhead = j.value("call_overhead", cm.call_overhead);
  cm.per_arg_setup = j.value("per_arg_setup", cm.per_arg_setup);
  cm.const_param_bonus = j.value("const_param_bonus", cm.const_param_bonus);
  cm.const_bonus_floor = j.value("const_bonus_floor", cm.const_bonus_floor);
  cm.icache_beta = j.value("icache_beta", cm.icache_beta);
  cm.trip_estimate = j.value("trip_estimate", cm.trip_estimate);
  cm.loop_overhead = j.value("loop_overhead", cm.loop_overhead);
  cm.check();
  return cm;
}

}  // namespace perfinline
