#pragma once

// Stage commands behind the command-line tool. Every stage reads artifacts
// from disk, writes its outputs plus a run manifest into an output
// directory, and returns a report for stdout.

#include <algorithm>
#include <cstdio>
#include <ctime>
#include <exception>
#include <filesystem>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include "perfinline/config.hpp"

namespace perfinline {

inline constexpr const char* kToolVersion = "perfinline 0.1.0";
inline constexpr const char* kManifestSchema = "manifest/1";

// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitInternal = 1;
inline constexpr int kExitBadInput = 2;
inline constexpr int kExitSchema = 3;
inline constexpr int kExitInsufficientData = 4;
inline constexpr int kExitOverlap = 5;

inline int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::Config:
    case ErrorKind::NotFound:
    case ErrorKind::Io: return kExitBadInput;
    case ErrorKind::Schema: return kExitSchema;
    case ErrorKind::InsufficientData: return kExitInsufficientData;
    case ErrorKind::Overlap: return kExitOverlap;
    default: return kExitInternal;
  }
}

enum class ReportFormat { Table, Json };

struct CommandOptions {
  std::string out_dir;
  ReportFormat format = ReportFormat::Table;
  int jobs = 1;
};

struct StageResult {
  std::string report;  // what goes to stdout
  Json summary;        // headline numbers, also used by run-all
};

namespace fs = std::filesystem;

// Runs f(0..n-1) on up to `jobs` threads. Results must be written to
// per-index slots so that the outcome does not depend on scheduling; the
// lowest-index exception wins.
template <class F>
void parallel_for(std::size_t n, int jobs, F f) {
  if (jobs <= 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  const auto workers = std::min<std::size_t>(static_cast<std::size_t>(jobs), n);
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += workers) {
        try {
          f(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline std::string wall_clock_utc() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline std::string digest_of(std::string_view content) { return hex64(fnv1a(content)); }

// The digest covers tool version, subcommand, resolved configuration, seed
// and input digests. Output digests and the wall clock are recorded next to
// it but excluded, so outputs can embed the digest.
class Manifest {
 public:
  Manifest(std::string subcommand, Json config, std::uint64_t seed)
      : subcommand_(std::move(subcommand)), config_(std::move(config)), seed_(seed) {}

  void add_input(const std::string& name, std::string_view content) { inputs_[name] = digest_of(content); }

  std::string digest() const {
    Json j;
    j["tool_version"] = kToolVersion;
    j["subcommand"] = subcommand_;
    j["config"] = config_;
    j["seed"] = seed_;
    j["inputs"] = inputs_;
    return digest_of(j.dump());
  }

  void write_json(const std::string& dir, const std::string& name, Json j) {
    j["manifest_digest"] = digest();
    write(dir, name, j.dump(1) + "\n");
  }

  void write_csv(const std::string& dir, const std::string& name, const std::string& csv) {
    write(dir, name, "# manifest_digest=" + digest() + "\n" + csv);
  }

  void finish(const std::string& dir) const {
    Json j;
    j["schema"] = kManifestSchema;
    j["tool_version"] = kToolVersion;
    j["subcommand"] = subcommand_;
    j["config"] = config_;
    j["seed"] = seed_;
    j["inputs"] = inputs_;
    j["outputs"] = outputs_;
    j["manifest_digest"] = digest();
    j["wall_clock"] = wall_clock_utc();
    write_file((fs::path(dir) / ("manifest-" + subcommand_ + ".json")).string(), j.dump(1) + "\n");
  }

 private:
  void write(const std::string& dir, const std::string& name, const std::string& content) {
    fs::create_directories(dir);
    write_file((fs::path(dir) / name).string(), content);
    outputs_[name] = digest_of(content);
  }

  std::string subcommand_;
  Json config_;
  std::uint64_t seed_;
  std::map<std::string, std::string> inputs_;
  std::map<std::string, std::string> outputs_;
};

inline std::string require_file(const std::string& path, const std::string& role) {
  if (path.empty()) throw Error(ErrorKind::NotFound, role + ": no path given");
  if (!fs::is_regular_file(path)) throw Error(ErrorKind::NotFound, role + ": no such file " + path);
  return read_file(path);
}

inline Json parse_artifact(const std::string& text, const std::string& role) {
  try {
    return Json::parse(text);
  } catch (const Json::exception& e) {
    throw Error(ErrorKind::Schema, role + ": not JSON: " + e.what());
  }
}

// Every *.json in the directory except manifests, in file-name order.
inline std::vector<Module> load_corpus(const std::string& dir, Manifest* man) {
  if (dir.empty() || !fs::is_directory(dir)) throw Error(ErrorKind::NotFound, "corpus directory not found: " + dir);
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (e.is_regular_file() && e.path().extension() == ".json" && name.rfind("manifest-", 0) != 0) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw Error(ErrorKind::Config, "corpus directory holds no modules: " + dir);
  std::vector<Module> out;
  std::set<std::string> ids;
  for (const auto& f : files) {
    const std::string text = read_file(f.string());
    if (man) man->add_input("corpus/" + f.filename().string(), text);
    out.push_back(parse_module(text));
    if (!ids.insert(out.back().program_id).second)
      throw Error(ErrorKind::Config, "duplicate program id " + out.back().program_id + " in " + dir);
  }
  return out;
}

inline std::vector<TrainingSample> load_dataset(const std::string& path, Manifest* man) {
  const std::string text = require_file(path, "dataset");
  if (man) man->add_input("dataset", text);
  return dataset_from_csv(text);
}

// ---- report rendering ----

inline std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

class Table {
 public:
  explicit Table(std::vector<std::string> header) : header_(std::move(header)) {}
  void add(std::vector<std::string> row) { rows_.push_back(std::move(row)); }

  // First column left-aligned, the rest right-aligned.
  std::string render() const {
    std::vector<std::size_t> w(header_.size(), 0);
    auto widen = [&](const std::vector<std::string>& r) {
      for (std::size_t i = 0; i < r.size() && i < w.size(); ++i) w[i] = std::max(w[i], r[i].size());
    };
    widen(header_);
    for (const auto& r : rows_) widen(r);
    auto line = [&](const std::vector<std::string>& r) {
      std::string s;
      for (std::size_t i = 0; i < w.size(); ++i) {
        const std::string cell = i < r.size() ? r[i] : "";
        const std::string pad(w[i] - cell.size(), ' ');
        s += (i ? "  " : "") + (i == 0 ? cell + pad : pad + cell);
      }
      while (!s.empty() && s.back() == ' ') s.pop_back();
      return s + "\n";
    };
    std::string out = line(header_);
    std::size_t total = 0;
    for (auto x : w) total += x;
    out += std::string(total + 2 * (w.size() - 1), '-') + "\n";
    for (const auto& r : rows_) out += line(r);
    return out;
  }

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

inline std::string render(const CommandOptions& o, const Json& json, const std::string& table) {
  return o.format == ReportFormat::Json ? json.dump(1) + "\n" : table;
}

inline void require_out(const CommandOptions& o) {
  if (o.out_dir.empty()) throw Error(ErrorKind::Config, "--out is required");
}

// ---- gen ----

inline StageResult gen_corpus(const CorpusSpec& spec, const CommandOptions& o) {
  require_out(o);
  Manifest man("gen", to_json(spec), spec.seeds.front());
  std::vector<Module> mods(spec.seeds.size());
  parallel_for(mods.size(), o.jobs, [&](std::size_t i) {
    GenConfig g = spec.generator;
    g.seed = spec.seeds[i];
    g.program_id = corpus_program_id(spec, spec.seeds[i]);
    mods[i] = generate_program(g);
  });
  Table t({"program", "functions", "call sites", "instructions", "regions"});
  Json rows = Json::array();
  for (const auto& m : mods) {
    man.write_json(o.out_dir, m.program_id + ".json", to_json(m));
    const auto sites = all_callsites(m).size();
    t.add({m.program_id, std::to_string(m.functions.size()), std::to_string(sites), std::to_string(m.instruction_count()),
           std::to_string(count_tunable_regions(m))});
    rows.push_back({{"program", m.program_id},
                    {"functions", m.functions.size()},
                    {"call_sites", sites},
                    {"instructions", m.instruction_count()}});
  }
  man.finish(o.out_dir);
  Json summary = {{"programs", mods.size()}, {"manifest_digest", man.digest()}};
  Json json = {{"subcommand", "gen"}, {"programs", rows}, {"manifest_digest", man.digest()}};
  return {render(o, json, t.render()), summary};
}

// Accepts a corpus spec, or a pipeline config from which `section` is taken.
inline StageResult cmd_gen(const std::string& spec_path, const std::string& section, const CommandOptions& o) {
  const std::string text = require_file(spec_path, "corpus spec");
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::exception& e) {
    throw Error(ErrorKind::Config, spec_path + ": not JSON: " + e.what());
  }
  if (!j.is_object()) throw Error(ErrorKind::Config, spec_path + ": expected an object");
  if (!j.contains("seeds")) {
    if (!j.contains(section)) throw Error(ErrorKind::Config, spec_path + ": no corpus spec and no '" + section + "' section");
    j = j.at(section);
  }
  return gen_corpus(corpus_spec_from_json(j), o);
}

// ---- collect ----

inline StageResult cmd_collect(const std::string& corpus_dir, const PipelineConfig& pc, const CommandOptions& o) {
  require_out(o);
  Manifest man("collect", to_json(pc), pc.seed);
  const auto corpus = load_corpus(corpus_dir, &man);
  std::vector<std::vector<TrainingSample>> per(corpus.size());
  parallel_for(corpus.size(), o.jobs,
               [&](std::size_t i) { per[i] = autotune_collect(corpus[i], pc.collect, pc.cost_model); });
  std::vector<TrainingSample> raw;
  for (auto& v : per) raw.insert(raw.end(), v.begin(), v.end());
  const auto samples = dedup(raw);
  const double frac = contradiction_rate(samples);
  std::size_t contradicting = 0;
  for (const auto& s : samples) contradicting += s.label > 1 && s.meta.global_speedup < 1;

  man.write_csv(o.out_dir, "dataset.csv", to_csv(samples));
  man.write_json(o.out_dir, "contradiction.json",
                 {{"schema", "contradiction/1"},
                  {"samples", samples.size()},
                  {"function_faster_global_slower", contradicting},
                  {"fraction", frac}});
  man.write_json(o.out_dir, "cost_model.json", to_json(pc.cost_model));
  man.finish(o.out_dir);

  double lo = samples.empty() ? 0 : samples.front().label, hi = lo, mean = 0;
  for (const auto& s : samples) {
    lo = std::min(lo, s.label);
    hi = std::max(hi, s.label);
    mean += s.label;
  }
  if (!samples.empty()) mean /= static_cast<double>(samples.size());
  Json summary = {{"programs", corpus.size()},
                  {"samples_raw", raw.size()},
                  {"samples", samples.size()},
                  {"label_mean", mean},
                  {"label_min", lo},
                  {"label_max", hi},
                  {"contradiction_fraction", frac},
                  {"manifest_digest", man.digest()}};
  Table t({"quantity", "value"});
  t.add({"programs", std::to_string(corpus.size())});
  t.add({"samples (raw)", std::to_string(raw.size())});
  t.add({"samples (deduplicated)", std::to_string(samples.size())});
  t.add({"label mean", fixed(mean)});
  t.add({"label range", fixed(lo) + " .. " + fixed(hi)});
  t.add({"function faster, program slower", std::to_string(contradicting) + " (" + fixed(frac) + ")"});
  return {render(o, summary, t.render()), summary};
}

// ---- preprocess ----

inline StageResult cmd_preprocess(const std::string& dataset_path, const PipelineConfig& pc, const CommandOptions& o) {
  require_out(o);
  Manifest man("preprocess", to_json(pc), pc.seed);
  const auto samples = load_dataset(dataset_path, &man);
  const auto ps = fit_preprocess(samples);
  man.write_json(o.out_dir, "preproc.json", to_json(ps));
  man.finish(o.out_dir);
  const double total = ps.variances.sum() + 0.0;
  Table t({"component", "variance", "share of top 7"});
  Json vars = Json::array();
  for (int k = 0; k < kPrincipalComponents; ++k) {
    t.add({std::to_string(k + 1), fixed(ps.variances[k]), fixed(total > 0 ? ps.variances[k] / total : 0)});
    vars.push_back(ps.variances[k]);
  }
  Json summary = {{"samples", samples.size()}, {"variances", vars}, {"manifest_digest", man.digest()}};
  return {render(o, summary, t.render()), summary};
}

// ---- train-ir2perf ----

inline StageResult cmd_train_ir2perf(const std::string& dataset_path, const std::string& preproc_path,
                                     const PipelineConfig& pc, const CommandOptions& o) {
  require_out(o);
  Manifest man("train-ir2perf", to_json(pc), pc.ir2perf.seed);
  const auto samples = load_dataset(dataset_path, &man);
  const std::string ptext = require_file(preproc_path, "preprocess state");
  man.add_input("preproc", ptext);
  const auto ps = preprocess_from_json(parse_artifact(ptext, "preprocess state"));
  const auto res = train(samples, ps, pc.ir2perf);
  double mean = 0, var = 0;
  for (const auto& s : samples) mean += s.label;
  mean /= static_cast<double>(samples.size());
  for (const auto& s : samples) var += (s.label - mean) * (s.label - mean);
  var /= static_cast<double>(samples.size());
  man.write_json(o.out_dir, "ir2perf.json", to_json(res.model));
  man.write_csv(o.out_dir, "ir2perf_loss.csv", loss_csv(res.history));
  man.finish(o.out_dir);
  Json summary = {{"samples", samples.size()},
                  {"epochs", pc.ir2perf.epochs},
                  {"train_mse", res.train_mse},
                  {"mean_predictor_mse", var},
                  {"validation_mse", res.validation_mse},
                  {"manifest_digest", man.digest()}};
  Table t({"quantity", "value"});
  t.add({"samples", std::to_string(samples.size())});
  t.add({"epochs", std::to_string(pc.ir2perf.epochs)});
  t.add({"training MSE", fixed(res.train_mse, 6)});
  t.add({"constant-mean MSE", fixed(var, 6)});
  return {render(o, summary, t.render()), summary};
}

// ---- crossval ----

inline StageResult cmd_crossval(const std::string& dataset_path, const PipelineConfig& pc, const CommandOptions& o,
                                const std::string& corpus_dir = {}) {
  require_out(o);
  Manifest man("crossval", to_json(pc), pc.ir2perf.seed);
  const auto samples = load_dataset(dataset_path, &man);
  std::vector<std::string> names;
  if (!corpus_dir.empty())
    for (const auto& m : load_corpus(corpus_dir, &man)) names.push_back(m.program_id);
  const auto rep = cross_validate(samples, pc.ir2perf, names);
  Table t({"program", "train", "test", "MSE", "mean-predictor MSE"});
  std::string csv = "program,n_train,n_test,absent,mse,mean_predictor_mse,train_hash,test_hash\n";
  Json rows = Json::array();
  for (const auto& r : rep.rows) {
    t.add({r.program, std::to_string(r.n_train), std::to_string(r.n_test), r.absent ? "absent" : fixed(r.mse, 6),
           r.absent ? "-" : fixed(r.mean_predictor_mse, 6)});
    csv += r.program + "," + std::to_string(r.n_train) + "," + std::to_string(r.n_test) + "," + (r.absent ? "1" : "0") +
           "," + fmt_double(r.mse) + "," + fmt_double(r.mean_predictor_mse) + "," + hex64(r.train_hash) + "," +
           hex64(r.test_hash) + "\n";
    rows.push_back({{"program", r.program},
                    {"n_train", r.n_train},
                    {"n_test", r.n_test},
                    {"absent", r.absent},
                    {"mse", r.mse},
                    {"mean_predictor_mse", r.mean_predictor_mse}});
  }
  t.add({"geometric mean", "", "", fixed(rep.geomean_mse, 6), ""});
  t.add({"pooled", "", "", fixed(rep.pooled_mse, 6), fixed(rep.pooled_mean_predictor_mse, 6)});
  Json summary = {{"rows", rows},
                  {"geomean_mse", rep.geomean_mse},
                  {"pooled_mse", rep.pooled_mse},
                  {"pooled_mean_predictor_mse", rep.pooled_mean_predictor_mse},
                  {"manifest_digest", man.digest()}};
  man.write_csv(o.out_dir, "crossval.csv", csv);
  man.write_json(o.out_dir, "crossval.json", summary);
  man.finish(o.out_dir);
  return {render(o, summary, t.render()), summary};
}

// ---- train-policy ----

inline StageResult cmd_train_policy(const std::string& corpus_dir, const std::string& ir2perf_path,
                                    const PipelineConfig& pc, const CommandOptions& o) {
  require_out(o);
  Manifest man("train-policy", to_json(pc), pc.policy.seed);
  const std::string mtext = require_file(ir2perf_path, "ir2perf model");
  man.add_input("ir2perf", mtext);
  const auto model = ir2perf_from_json(parse_artifact(mtext, "ir2perf model"));
  TrainerConfig tc = pc.policy;
  tc.corpus = load_corpus(corpus_dir, &man);
  const auto res = train_policy(tc, [&](const Module& m) { return module_reward(model, m); }, nullptr, pc.cost_model);

  std::size_t decisions = 0, inlined = 0;
  std::vector<std::string> ids;
  for (const auto& m : tc.corpus) {
    ids.push_back(m.program_id);
    for (const auto& d : advise(m, res.params, pc.cost_model).log) {
      decisions += !d.forced;
      inlined += d.inline_call;
    }
  }
  std::string curve = "iteration,program,mean_reward,reward_std,skipped\n";
  for (const auto& r : res.history)
    curve += std::to_string(r.iteration) + "," + r.program_id + "," + fmt_double(r.mean_reward) + "," +
             fmt_double(r.reward_std) + "," + (r.skipped ? "1" : "0") + "\n";
  Json pj = to_json(res.params);
  pj["trained_on"] = ids;
  man.write_json(o.out_dir, "policy.json", pj);
  man.write_csv(o.out_dir, "policy_curve.csv", curve);
  man.finish(o.out_dir);

  const auto window = std::min<std::size_t>(res.history.size(), 50);
  double first = 0, last = 0;
  for (std::size_t i = 0; i < window; ++i) {
    first += res.history[i].mean_reward;
    last += res.history[res.history.size() - 1 - i].mean_reward;
  }
  if (window) first /= static_cast<double>(window), last /= static_cast<double>(window);
  const double rate = decisions ? static_cast<double>(inlined) / static_cast<double>(decisions) : 0.0;
  Json summary = {{"iterations", res.history.size()},
                  {"skipped", res.skipped},
                  {"mean_reward_first", first},
                  {"mean_reward_last", last},
                  {"deployed_inline_rate", rate},
                  {"manifest_digest", man.digest()}};
  Table t({"quantity", "value"});
  t.add({"iterations", std::to_string(res.history.size())});
  t.add({"skipped (no free decision)", std::to_string(res.skipped)});
  t.add({"mean reward, first " + std::to_string(window), fixed(first)});
  t.add({"mean reward, last " + std::to_string(window), fixed(last)});
  t.add({"deployed inline rate on training corpus", fixed(rate)});
  return {render(o, summary, t.render()), summary};
}

// ---- evaluate ----

// `policy_arg` is a policy file, or "never-inline" for the zero policy, which
// breaks every tie toward not inlining.
inline PolicyParams load_policy(const std::string& policy_arg, Manifest& man, std::vector<std::string>* trained_on) {
  if (policy_arg == "never-inline") return PolicyParams{};
  const std::string text = require_file(policy_arg, "policy");
  man.add_input("policy", text);
  const Json j = parse_artifact(text, "policy");
  auto p = policy_from_json(j);
  if (trained_on && j.contains("trained_on")) *trained_on = j.at("trained_on").get<std::vector<std::string>>();
  return p;
}

inline StageResult cmd_evaluate(const std::string& corpus_dir, const std::string& policy_arg, const PipelineConfig& pc,
                                const CommandOptions& o) {
  require_out(o);
  Manifest man("evaluate", to_json(pc), pc.evaluate_seed);
  std::vector<std::string> trained_on;
  const auto policy = load_policy(policy_arg, man, &trained_on);
  const auto corpus = load_corpus(corpus_dir, &man);
  check_disjoint(trained_on, corpus);
  std::vector<ProgramEvaluation> per(corpus.size());
  parallel_for(corpus.size(), o.jobs, [&](std::size_t i) {
    per[i] = evaluate_program(corpus[i], policy, pc.cost_model, pc.noise_epsilon, pc.evaluate_seed);
  });
  const auto rep = summarize(std::move(per), pc.noise_epsilon);

  Table t({"program", "never-inline", "heuristic", "size", "policy", "policy var", "size vs never"});
  Json rows = Json::array();
  for (const auto& pe : rep.programs) {
    const auto& s = pe.strategies;
    t.add({pe.program_id, fixed(s.at("never-inline").runtime, 2), fixed(s.at("heuristic-baseline").runtime, 2),
           fixed(s.at("size-baseline").runtime, 2), fixed(s.at("policy").runtime, 2),
           fixed(100 * s.at("policy").relative_variance, 2) + "%",
           fixed(s.at("policy").size / s.at("never-inline").size, 3)});
    Json r;
    r["program"] = pe.program_id;
    for (const auto& [name, sr] : s)
      r[name] = {{"runtime", sr.runtime}, {"relative_variance", sr.relative_variance}, {"size", sr.size}, {"regions", sr.regions}};
    rows.push_back(r);
  }
  Table g({"policy vs", "geomean speedup", "geomean size ratio"});
  Json geo;
  for (const auto& name : kStrategies) {
    g.add({name, fixed(rep.geomean_speedup.at(name)), fixed(rep.geomean_size_ratio.at(name))});
    geo[name] = {{"speedup", rep.geomean_speedup.at(name)}, {"size_ratio", rep.geomean_size_ratio.at(name)}};
  }
  Json report = {{"schema", "evaluation/1"},
                 {"noise_epsilon", pc.noise_epsilon},
                 {"cost_model", to_json(pc.cost_model)},
                 {"programs", rows},
                 {"geomean", geo}};
  man.write_json(o.out_dir, "evaluation.json", report);
  man.finish(o.out_dir);
  Json summary = {{"programs", rep.programs.size()}, {"geomean", geo}, {"manifest_digest", man.digest()}};
  report["manifest_digest"] = man.digest();
  return {render(o, report, t.render() + "\n" + g.render()), summary};
}

// ---- autotune ----

struct RegionRow {
  std::string program;
  std::string variant;
  RegionTuneResult tune;
};

inline StageResult cmd_autotune(const std::string& corpus_dir, const std::string& policy_arg, const PipelineConfig& pc,
                                const CommandOptions& o) {
  require_out(o);
  Manifest man("autotune", to_json(pc), pc.seed);
  std::optional<PolicyParams> policy;
  if (!policy_arg.empty()) policy = load_policy(policy_arg, man, nullptr);
  const auto corpus = load_corpus(corpus_dir, &man);
  std::vector<std::string> variants = {"never-inline", "heuristic-baseline", "size-baseline"};
  if (policy) variants.push_back("policy");
  std::vector<std::vector<RegionRow>> per(corpus.size());
  parallel_for(corpus.size(), o.jobs, [&](std::size_t i) {
    const Module& m = corpus[i];
    for (const auto& v : variants) {
      const Module mv = v == "never-inline"         ? never_inline(m)
                        : v == "heuristic-baseline" ? heuristic_inline(m, pc.cost_model)
                        : v == "size-baseline"      ? size_inline(m, pc.cost_model)
                                                    : policy_inline(m, *policy, pc.cost_model);
      per[i].push_back({m.program_id, v, autotune_regions(mv, pc.autotune_budget, pc.cost_model, pc.seed)});
    }
  });
  Table t({"program", "variant", "regions", "untuned", "tuned", "tuning speedup"});
  Json rows = Json::array();
  std::size_t policy_ge_size = 0;
  for (const auto& prog : per) {
    std::map<std::string, std::size_t> regions;
    for (const auto& r : prog) {
      regions[r.variant] = r.tune.regions;
      t.add({r.program, r.variant, std::to_string(r.tune.regions), fixed(r.tune.baseline_runtime, 2),
             fixed(r.tune.best_runtime, 2), fixed(r.tune.baseline_runtime / r.tune.best_runtime)});
      rows.push_back({{"program", r.program},
                      {"variant", r.variant},
                      {"regions", r.tune.regions},
                      {"evaluations", r.tune.evaluations},
                      {"untuned_runtime", r.tune.baseline_runtime},
                      {"tuned_runtime", r.tune.best_runtime}});
    }
    if (policy) policy_ge_size += regions.at("policy") >= regions.at("size-baseline");
  }
  Json report = {{"schema", "regions/1"}, {"budget", pc.autotune_budget}, {"rows", rows}};
  if (policy)
    report["policy_regions_ge_size_fraction"] =
        corpus.empty() ? 0.0 : static_cast<double>(policy_ge_size) / static_cast<double>(corpus.size());
  man.write_json(o.out_dir, "regions.json", report);
  man.finish(o.out_dir);
  Json summary = {{"programs", corpus.size()}, {"manifest_digest", man.digest()}};
  if (policy) summary["policy_regions_ge_size_fraction"] = report["policy_regions_ge_size_fraction"];
  std::string text = t.render();
  if (policy)
    text += "\npolicy regions >= size-baseline regions on " + std::to_string(policy_ge_size) + " of " +
            std::to_string(corpus.size()) + " programs\n";
  report["manifest_digest"] = man.digest();
  return {render(o, report, text), summary};
}

// ---- profile ----

inline std::string profile_csv(const Module& m, const CostModel& cm) {
  const auto rt = module_runtime(m, cm);
  std::string out = "function,t_func,n_func,total\n";
  for (const auto& r : rt.profile)
    out += r.function + "," + fmt_double(r.t_func) + "," + fmt_double(r.n_func) + "," + fmt_double(r.total_runtime) + "\n";
  return out;
}

inline StageResult cmd_profile(const std::string& module_path, const PipelineConfig& pc, const CommandOptions& o) {
  const Module m = parse_module(require_file(module_path, "module"));
  const std::string csv = profile_csv(m, pc.cost_model);
  if (!o.out_dir.empty()) {
    Manifest man("profile", to_json(pc), pc.seed);
    man.add_input("module", read_file(module_path));
    man.write_csv(o.out_dir, "profile.csv", csv);
    man.finish(o.out_dir);
  }
  Json rows = Json::array();
  for (const auto& r : module_runtime(m, pc.cost_model).profile)
    rows.push_back({{"function", r.function}, {"t_func", r.t_func}, {"n_func", r.n_func}, {"total", r.total_runtime}});
  return {o.format == ReportFormat::Json ? rows.dump(1) + "\n" : csv, rows};
}

// ---- run-all ----

// gen (train and test) -> collect -> preprocess -> train-ir2perf -> crossval
// -> train-policy -> evaluate -> autotune, each stage in its own directory.
inline StageResult cmd_run_all(const std::string& config_path, std::optional<std::uint64_t> seed, const CommandOptions& o) {
  require_out(o);
  require_file(config_path, "config");
  const PipelineConfig pc = load_pipeline_config(config_path, seed);
  if (!pc.train_corpus || !pc.test_corpus)
    throw Error(ErrorKind::Config, "run-all needs both train_corpus and test_corpus sections");
  const fs::path root(o.out_dir);
  auto sub = [&](const char* name) {
    CommandOptions so = o;
    so.out_dir = (root / name).string();
    return so;
  };
  const auto train_dir = (root / "corpus-train").string(), test_dir = (root / "corpus-test").string();
  const auto collect_dir = (root / "collect").string(), pre_dir = (root / "preprocess").string();
  const auto model_dir = (root / "ir2perf").string(), policy_dir = (root / "policy").string();

  Json s;
  s["gen_train"] = gen_corpus(*pc.train_corpus, sub("corpus-train")).summary;
  s["gen_test"] = gen_corpus(*pc.test_corpus, sub("corpus-test")).summary;
  s["collect"] = cmd_collect(train_dir, pc, sub("collect")).summary;
  const auto dataset = (fs::path(collect_dir) / "dataset.csv").string();
  s["preprocess"] = cmd_preprocess(dataset, pc, sub("preprocess")).summary;
  s["train_ir2perf"] = cmd_train_ir2perf(dataset, (fs::path(pre_dir) / "preproc.json").string(), pc, sub("ir2perf")).summary;
  s["crossval"] = cmd_crossval(dataset, pc, sub("crossval")).summary;
  s["train_policy"] = cmd_train_policy(train_dir, (fs::path(model_dir) / "ir2perf.json").string(), pc, sub("policy")).summary;
  const auto policy = (fs::path(policy_dir) / "policy.json").string();
  s["evaluate"] = cmd_evaluate(test_dir, policy, pc, sub("evaluate")).summary;
  s["autotune"] = cmd_autotune(test_dir, policy, pc, sub("autotune")).summary;

  Manifest man("run-all", to_json(pc), pc.seed);
  for (const auto& [stage, v] : s.items()) man.add_input(stage, v.at("manifest_digest").get<std::string>());
  man.write_json(o.out_dir, "summary.json", s);
  man.finish(o.out_dir);

  Table t({"stage", "headline"});
  t.add({"gen", std::to_string(s["gen_train"]["programs"].get<int>()) + " training / " +
                    std::to_string(s["gen_test"]["programs"].get<int>()) + " evaluation programs"});
  t.add({"collect", std::to_string(s["collect"]["samples"].get<int>()) + " samples, contradiction fraction " +
                        fixed(s["collect"]["contradiction_fraction"].get<double>())});
  t.add({"train-ir2perf", "training MSE " + fixed(s["train_ir2perf"]["train_mse"].get<double>(), 6) + " vs constant " +
                              fixed(s["train_ir2perf"]["mean_predictor_mse"].get<double>(), 6)});
  t.add({"crossval", "geomean MSE " + fixed(s["crossval"]["geomean_mse"].get<double>(), 6)});
  t.add({"train-policy", "deployed inline rate " + fixed(s["train_policy"]["deployed_inline_rate"].get<double>())});
  for (const auto& name : kStrategies)
    if (name != "policy")
      t.add({"evaluate", "policy vs " + name + ": " + fixed(s["evaluate"]["geomean"][name]["speedup"].get<double>())});
  t.add({"autotune", "policy regions >= size-baseline on " +
                         fixed(100 * s["autotune"]["policy_regions_ge_size_fraction"].get<double>(), 1) + "% of programs"});
  s["manifest_digest"] = man.digest();
  return {render(o, s, t.render()), s};
}

}  // namespace perfinline
