#pragma once

// One JSON file configures every stage. Each section is optional; unknown
// keys are rejected so typos fail loudly instead of silently using defaults.

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "perfinline/dataset.hpp"
#include "perfinline/generator.hpp"
#include "perfinline/ir2perf.hpp"
#include "perfinline/module_io.hpp"
#include "perfinline/policy.hpp"

namespace perfinline {

inline constexpr const char* kPipelineConfigSchema = "pipeline-config/1";
inline constexpr const char* kCorpusSpecSchema = "corpus-spec/1";

struct CorpusSpec {
  std::vector<std::uint64_t> seeds;
  std::string prefix = "prog";
  GenConfig generator;
};

struct PipelineConfig {
  std::uint64_t seed = 1;
  CostModel cost_model;
  std::optional<CorpusSpec> train_corpus;
  std::optional<CorpusSpec> test_corpus;
  CollectConfig collect;
  TrainSpec ir2perf;
  TrainerConfig policy;  // corpus stays empty here; it is loaded from disk
  double noise_epsilon = 0.0;
  std::uint64_t evaluate_seed = 1;
  int autotune_budget = 120;
};

namespace detail {

inline void only_keys(const Json& j, std::initializer_list<const char*> keys, const std::string& where) {
  if (!j.is_object()) throw Error(ErrorKind::Config, where + " must be an object");
  const std::set<std::string> ok(keys.begin(), keys.end());
  for (const auto& [k, _] : j.items())
    if (!ok.count(k)) throw Error(ErrorKind::Config, where + ": unknown key '" + k + "'");
}

template <class T>
void read(const Json& j, const char* key, T& dst, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    dst = j.at(key).get<T>();
  } catch (const Json::exception&) {
    throw Error(ErrorKind::Config, where + "." + key + " has the wrong type");
  }
}

}  // namespace detail

inline Json to_json(const GenConfig& g) {
  return {{"n_functions", g.n_functions},
          {"min_blocks", g.min_blocks},
          {"max_blocks", g.max_blocks},
          {"min_instrs", g.min_instrs},
          {"max_instrs", g.max_instrs},
          {"loop_probability", g.loop_probability},
          {"max_loop_depth", g.max_loop_depth},
          {"callsite_density", g.callsite_density},
          {"recursion_probability", g.recursion_probability},
          {"max_params", g.max_params},
          {"local_probability", g.local_probability},
          {"max_callsites", g.max_callsites},
          {"ensure_reachable", g.ensure_reachable}};
}

inline GenConfig gen_config_from_json(const Json& j) {
  const std::string w = "generator";
  detail::only_keys(j,
                    {"n_functions", "min_blocks", "max_blocks", "min_instrs", "max_instrs", "loop_probability",
                     "max_loop_depth", "callsite_density", "recursion_probability", "max_params", "local_probability",
                     "max_callsites", "ensure_reachable"},
                    w);
  GenConfig g;
  detail::read(j, "n_functions", g.n_functions, w);
  detail::read(j, "min_blocks", g.min_blocks, w);
  detail::read(j, "max_blocks", g.max_blocks, w);
  detail::read(j, "min_instrs", g.min_instrs, w);
  detail::read(j, "max_instrs", g.max_instrs, w);
  detail::read(j, "loop_probability", g.loop_probability, w);
  detail::read(j, "max_loop_depth", g.max_loop_depth, w);
  detail::read(j, "callsite_density", g.callsite_density, w);
  detail::read(j, "recursion_probability", g.recursion_probability, w);
  detail::read(j, "max_params", g.max_params, w);
  detail::read(j, "local_probability", g.local_probability, w);
  detail::read(j, "max_callsites", g.max_callsites, w);
  detail::read(j, "ensure_reachable", g.ensure_reachable, w);
  g.check();
  return g;
}

inline Json to_json(const CorpusSpec& c) {
  Json j;
  j["schema"] = kCorpusSpecSchema;
  j["seeds"] = c.seeds;
  j["prefix"] = c.prefix;
  j["generator"] = to_json(c.generator);
  return j;
}

// Seeds are either an explicit list or {"first": s, "count": n}.
inline CorpusSpec corpus_spec_from_json(const Json& j) {
  const std::string w = "corpus";
  detail::only_keys(j, {"schema", "seeds", "prefix", "generator"}, w);
  if (j.contains("schema") && j.at("schema") != kCorpusSpecSchema)
    throw Error(ErrorKind::Schema, "expected schema " + std::string(kCorpusSpecSchema));
  CorpusSpec c;
  if (!j.contains("seeds")) throw Error(ErrorKind::Config, "corpus: missing 'seeds'");
  const Json& s = j.at("seeds");
  if (s.is_object()) {
    detail::only_keys(s, {"first", "count"}, "corpus.seeds");
    std::uint64_t first = 1;
    std::int64_t count = 0;
    detail::read(s, "first", first, "corpus.seeds");
    detail::read(s, "count", count, "corpus.seeds");
    for (std::int64_t i = 0; i < count; ++i) c.seeds.push_back(first + static_cast<std::uint64_t>(i));
  } else {
    detail::read(j, "seeds", c.seeds, w);
  }
  if (c.seeds.empty()) throw Error(ErrorKind::Config, "corpus: no seeds");
  if (std::set<std::uint64_t>(c.seeds.begin(), c.seeds.end()).size() != c.seeds.size())
    throw Error(ErrorKind::Config, "corpus: duplicate seeds");
  detail::read(j, "prefix", c.prefix, w);
  if (c.prefix.empty() || c.prefix.find_first_of("/\\,") != std::string::npos)
    throw Error(ErrorKind::Config, "corpus: prefix must be a plain non-empty name");
  if (j.contains("generator")) c.generator = gen_config_from_json(j.at("generator"));
  return c;
}

inline std::string corpus_program_id(const CorpusSpec& c, std::uint64_t seed) {
  return c.prefix + "-" + std::to_string(seed);
}

inline Json to_json(const CollectConfig& c) {
  return {{"exclusion_threshold", c.exclusion_threshold},
          {"min_overhead_fraction", c.min_overhead_fraction},
          {"iterations", c.iterations},
          {"strategy", to_string(c.strategy)},
          {"seed", c.seed},
          {"symmetric_guard", c.symmetric_guard}};
}

inline Json to_json(const TrainSpec& t) {
  return {{"learning_rate", t.learning_rate},
          {"batch_size", t.batch_size},
          {"epochs", t.epochs},
          {"seed", t.seed},
          {"validation_fraction", t.validation_fraction}};
}

inline Json trainer_json(const TrainerConfig& t) {
  return {{"alpha", t.alpha},
          {"sigma", t.sigma},
          {"rollouts", t.rollouts},
          {"iterations", t.iterations},
          {"normalize_rewards", t.normalize_rewards},
          {"seed", t.seed}};
}

inline Json to_json(const PipelineConfig& pc) {
  Json j;
  j["schema"] = kPipelineConfigSchema;
  j["seed"] = pc.seed;
  j["cost_model"] = to_json(pc.cost_model);
  if (pc.train_corpus) j["train_corpus"] = to_json(*pc.train_corpus);
  if (pc.test_corpus) j["test_corpus"] = to_json(*pc.test_corpus);
  j["collect"] = to_json(pc.collect);
  j["ir2perf"] = to_json(pc.ir2perf);
  j["policy"] = trainer_json(pc.policy);
  j["evaluate"] = {{"noise_epsilon", pc.noise_epsilon}, {"seed", pc.evaluate_seed}};
  j["autotune"] = {{"budget", pc.autotune_budget}};
  return j;
}

// Stage sections without their own "seed" inherit the top-level one, which
// `seed_override` (the --seed flag) replaces.
inline PipelineConfig pipeline_config_from_json(const Json& j, std::optional<std::uint64_t> seed_override = {}) {
  detail::only_keys(j,
                    {"schema", "seed", "cost_model", "train_corpus", "test_corpus", "collect", "ir2perf", "policy",
                     "evaluate", "autotune"},
                    "config");
  if (j.contains("schema") && j.at("schema") != kPipelineConfigSchema)
    throw Error(ErrorKind::Schema, "expected schema " + std::string(kPipelineConfigSchema));
  PipelineConfig pc;
  detail::read(j, "seed", pc.seed, "config");
  if (seed_override) pc.seed = *seed_override;
  const Json empty = Json::object();
  auto section = [&](const char* k) -> const Json& { return j.contains(k) ? j.at(k) : empty; };
  auto stage_seed = [&](const Json& s, std::uint64_t tag) {
    return s.contains("seed") && !seed_override ? s.at("seed").get<std::uint64_t>() : derive_seed(pc.seed, tag);
  };

  if (j.contains("cost_model")) {
    Json cm = j.at("cost_model");
    if (!cm.contains("schema")) cm["schema"] = kCostModelSchema;
    pc.cost_model = cost_model_from_json(cm);
  }
  if (j.contains("train_corpus")) pc.train_corpus = corpus_spec_from_json(j.at("train_corpus"));
  if (j.contains("test_corpus")) pc.test_corpus = corpus_spec_from_json(j.at("test_corpus"));

  {
    const Json& s = section("collect");
    detail::only_keys(s, {"exclusion_threshold", "min_overhead_fraction", "iterations", "strategy", "seed", "symmetric_guard"},
                      "collect");
    detail::read(s, "exclusion_threshold", pc.collect.exclusion_threshold, "collect");
    detail::read(s, "min_overhead_fraction", pc.collect.min_overhead_fraction, "collect");
    detail::read(s, "iterations", pc.collect.iterations, "collect");
    detail::read(s, "symmetric_guard", pc.collect.symmetric_guard, "collect");
    if (s.contains("strategy")) {
      std::string st;
      detail::read(s, "strategy", st, "collect");
      pc.collect.strategy = parse_strategy(st);
    }
    pc.collect.seed = stage_seed(s, 1);
    pc.collect.check();
  }
  {
    const Json& s = section("ir2perf");
    detail::only_keys(s, {"learning_rate", "batch_size", "epochs", "seed", "validation_fraction"}, "ir2perf");
    detail::read(s, "learning_rate", pc.ir2perf.learning_rate, "ir2perf");
    detail::read(s, "batch_size", pc.ir2perf.batch_size, "ir2perf");
    detail::read(s, "epochs", pc.ir2perf.epochs, "ir2perf");
    detail::read(s, "validation_fraction", pc.ir2perf.validation_fraction, "ir2perf");
    pc.ir2perf.seed = stage_seed(s, 2);
    pc.ir2perf.check();
  }
  {
    const Json& s = section("policy");
    detail::only_keys(s, {"alpha", "sigma", "rollouts", "iterations", "normalize_rewards", "seed"}, "policy");
    detail::read(s, "alpha", pc.policy.alpha, "policy");
    detail::read(s, "sigma", pc.policy.sigma, "policy");
    detail::read(s, "rollouts", pc.policy.rollouts, "policy");
    detail::read(s, "iterations", pc.policy.iterations, "policy");
    detail::read(s, "normalize_rewards", pc.policy.normalize_rewards, "policy");
    pc.policy.seed = stage_seed(s, 3);
  }
  {
    const Json& s = section("evaluate");
    detail::only_keys(s, {"noise_epsilon", "seed"}, "evaluate");
    detail::read(s, "noise_epsilon", pc.noise_epsilon, "evaluate");
    if (!(pc.noise_epsilon >= 0 && pc.noise_epsilon < 1)) throw Error(ErrorKind::Config, "evaluate.noise_epsilon must lie in [0,1)");
    pc.evaluate_seed = stage_seed(s, 4);
  }
  {
    const Json& s = section("autotune");
    detail::only_keys(s, {"budget"}, "autotune");
    detail::read(s, "budget", pc.autotune_budget, "autotune");
    if (pc.autotune_budget < 1) throw Error(ErrorKind::Config, "autotune.budget must be >= 1");
  }
  return pc;
}

inline PipelineConfig load_pipeline_config(const std::string& path, std::optional<std::uint64_t> seed_override = {}) {
  if (path.empty()) return pipeline_config_from_json(Json::object(), seed_override);
  Json j;
  try {
    j = Json::parse(read_file(path));
  } catch (const Json::exception& e) {
    throw Error(ErrorKind::Config, path + ": not JSON: " + e.what());
  }
  return pipeline_config_from_json(j, seed_override);
}

}  // namespace perfinline
