// Command-line front end for the inlining pipeline.
//
// Exit codes: 0 ok, 1 internal error, 2 missing or bad input, 3 schema
// mismatch, 4 insufficient data, 5 train/test overlap.

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

#include "perfinline/pipeline.hpp"

using namespace perfinline;

namespace {

struct Common {
  std::string config;
  std::string out;
  std::string format = "table";
  int jobs = 1;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* sub, Common& c, bool with_config = true) {
  if (with_config) sub->add_option("--config", c.config, "Pipeline config file (JSON)")->check(CLI::ExistingFile);
  sub->add_option("--out", c.out, "Output directory");
  sub->add_option("--format", c.format, "Report format")->check(CLI::IsMember({"table", "json"}));
  sub->add_option("--jobs", c.jobs, "Worker threads")->check(CLI::PositiveNumber);
  sub->add_option("--seed", c.seed, "Override the top-level seed");
}

CommandOptions options(const Common& c) {
  return {c.out, c.format == "json" ? ReportFormat::Json : ReportFormat::Table, c.jobs};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learned inlining pipeline on a synthetic program model"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  Common c;
  std::string corpus, dataset, preproc, model, policy, module, section = "train_corpus";

  auto* gen = app.add_subcommand("gen", "Generate a program corpus from a corpus spec");
  gen->add_option("--config", c.config, "Corpus spec, or a pipeline config")->required();
  gen->add_option("--section", section, "Pipeline config section to use")->check(CLI::IsMember({"train_corpus", "test_corpus"}));
  add_common(gen, c, false);

  auto* collect = app.add_subcommand("collect", "Autotune inlining configurations and emit the training dataset");
  collect->add_option("--corpus", corpus, "Corpus directory")->required();
  add_common(collect, c);

  auto* pre = app.add_subcommand("preprocess", "Fit feature scaling and principal components");
  pre->add_option("--dataset", dataset, "Dataset CSV")->required();
  add_common(pre, c);

  auto* tir = app.add_subcommand("train-ir2perf", "Train the speedup regression model");
  tir->add_option("--dataset", dataset, "Dataset CSV")->required();
  tir->add_option("--preproc", preproc, "Preprocess state JSON")->required();
  add_common(tir, c);

  auto* cv = app.add_subcommand("crossval", "Leave-one-program-out cross-validation");
  cv->add_option("--dataset", dataset, "Dataset CSV")->required();
  cv->add_option("--corpus", corpus, "Corpus directory (lists programs without samples too)");
  add_common(cv, c);

  auto* tpol = app.add_subcommand("train-policy", "Train the inlining policy against the regression model");
  tpol->add_option("--corpus", corpus, "Training corpus directory")->required();
  tpol->add_option("--ir2perf", model, "Regression model JSON")->required();
  add_common(tpol, c);

  auto* ev = app.add_subcommand("evaluate", "Compare the policy with the baselines on held-out programs");
  ev->add_option("--corpus", corpus, "Evaluation corpus directory")->required();
  ev->add_option("--policy", policy, "Policy JSON, or 'never-inline'")->required();
  add_common(ev, c);

  auto* at = app.add_subcommand("autotune", "Count and tune loop regions after inlining");
  at->add_option("--corpus", corpus, "Corpus directory")->required();
  at->add_option("--policy", policy, "Policy JSON, or 'never-inline'");
  add_common(at, c);

  auto* prof = app.add_subcommand("profile", "Dump the per-function profile of a module as CSV");
  prof->add_option("--module", module, "Module JSON")->required();
  add_common(prof, c);

  auto* all = app.add_subcommand("run-all", "Run every stage from one config");
  all->alias("demo");
  add_common(all, c);
  all->get_option("--config")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitBadInput;
  }

  try {
    const CommandOptions o = options(c);
    StageResult r;
    if (*gen) {
      r = cmd_gen(c.config, section, o);
    } else if (*all) {
      r = cmd_run_all(c.config, c.seed, o);
    } else {
      const PipelineConfig pc = load_pipeline_config(c.config, c.seed);
      if (*collect) r = cmd_collect(corpus, pc, o);
      else if (*pre) r = cmd_preprocess(dataset, pc, o);
      else if (*tir) r = cmd_train_ir2perf(dataset, preproc, pc, o);
      else if (*cv) r = cmd_crossval(dataset, pc, o, corpus);
      else if (*tpol) r = cmd_train_policy(corpus, model, pc, o);
      else if (*ev) r = cmd_evaluate(corpus, policy, pc, o);
      else if (*at) r = cmd_autotune(corpus, policy, pc, o);
      else if (*prof) r = cmd_profile(module, pc, o);
    }
    std::cout << r.report;
    return kExitOk;
  } catch (const Error& e) {
    std::cerr << "error (" << to_string(e.kind()) << "): " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
}
