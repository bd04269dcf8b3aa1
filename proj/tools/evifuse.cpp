// Command-line front end: generate, train, eval, report, selftest.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "evifuse/checkpoint.hpp"
#include "evifuse/dataset.hpp"
#include "evifuse/error.hpp"
#include "evifuse/experiment.hpp"
#include "evifuse/simd/kernels.hpp"
#include "evifuse_verify/checks.hpp"

namespace {

using namespace evifuse;

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string checkpoint;
  bool eval_only = false;
};

ExperimentConfig resolve(const Options& opt) {
  ExperimentConfig config = opt.config.empty() ? parse_experiment_config(nlohmann::json::object())
                                               : load_experiment_config(opt.config);
  if (opt.seed) {
    config.seed = *opt.seed;
    config.resolve_seeds();
  }
  return config;
}

void print_report(const ExperimentResult& result) {
  for (const auto& w : result.report.warnings) std::cerr << "warning: " << w << '\n';
  write_summary_csv(std::cout, result.report);
}

int run_generate(const Options& opt) {
  if (opt.out.empty()) fail(ErrorCode::Config, "generate needs --out <file>");
  const auto config = resolve(opt);
  const auto data = generate(config.synthetic, config.split.total());
  save_dataset(opt.out, data);
  std::cout << "wrote " << data.examples.size() << " examples to " << opt.out << '\n';
  return 0;
}

int run_train(const Options& opt, bool eval_only) {
  if (opt.out.empty()) fail(ErrorCode::Config, "--out <directory> is required");
  RunOptions run;
  run.eval_only = eval_only;
  if (!opt.checkpoint.empty()) run.checkpoint = opt.checkpoint;
  const auto result = run_experiment(resolve(opt), opt.out, run);
  print_report(result);
  if (result.diverged) fail(ErrorCode::NonFinite, "training diverged, best checkpoint kept: " + result.divergence);
  return 0;
}

int run_report(const Options& opt) {
  if (opt.checkpoint.empty()) fail(ErrorCode::Config, "report needs --checkpoint <file>");
  if (opt.out.empty()) {
    report_beta(opt.checkpoint, std::cout);
    return 0;
  }
  std::ofstream out(opt.out, std::ios::binary);
  if (!out) fail(ErrorCode::Io, "cannot open " + opt.out + " for writing");
  report_beta(opt.checkpoint, out);
  return 0;
}

int run_selftest(const Options& opt) {
  std::cout << "simd: " << (simd::active_level() == simd::Level::Avx2 ? "avx2" : "scalar") << '\n';
  const auto results = verify::run_fast_checks(opt.seed.value_or(20240601));
  bool ok = true;
  for (const auto& r : results) {
    std::cout << verify::format(r) << '\n';
    ok = ok && r.passed;
  }
  if (!ok) fail(ErrorCode::InvalidArgument, "selftest failed");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Evidential multimodal segmentation with learned reliability discounting"};
  app.require_subcommand(1);
  Options opt;
  auto common = [&opt](CLI::App* cmd) {
    cmd->add_option("--config", opt.config, "Experiment config (JSON)")->check(CLI::ExistingFile);
    cmd->add_option("--seed", opt.seed, "Master seed, overrides the config");
  };
  auto* gen = app.add_subcommand("generate", "Write a synthetic dataset container");
  common(gen);
  gen->add_option("--out", opt.out, "Output container path");

  auto* tr = app.add_subcommand("train", "Run the training protocol and evaluate");
  common(tr);
  tr->add_option("--out", opt.out, "Artifacts directory");
  tr->add_option("--checkpoint", opt.checkpoint, "Checkpoint to warm start from, or to evaluate");
  tr->add_flag("--eval-only", opt.eval_only, "Skip training and evaluate --checkpoint");

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
  common(ev);
  ev->add_option("--out", opt.out, "Artifacts directory");
  ev->add_option("--checkpoint", opt.checkpoint, "Checkpoint to evaluate");

  auto* rep = app.add_subcommand("report", "Print the learned reliability table");
  rep->add_option("--checkpoint", opt.checkpoint, "Checkpoint");
  rep->add_option("--out", opt.out, "Write the CSV here instead of stdout");

  auto* self = app.add_subcommand("selftest", "Run the built-in oracle checks");
  self->add_option("--seed", opt.seed, "Seed for the randomized checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::string msg = e.what();
    for (char& c : msg) {
      if (c == '\n') c = ' ';
    }
    std::cerr << "EVIFUSE-USAGE: " << msg << '\n';
    return 2;
  }

  try {
    if (*gen) return run_generate(opt);
    if (*tr) return run_train(opt, opt.eval_only);
    if (*ev) {
      if (opt.checkpoint.empty()) fail(ErrorCode::Config, "eval needs --checkpoint <file>");
      return run_train(opt, true);
    }
    if (*rep) return run_report(opt);
    if (*self) return run_selftest(opt);
  } catch (const Error& e) {
    std::string msg = e.what();
    for (char& c : msg) {
      if (c == '\n') c = ' ';
    }
    std::cerr << "EVIFUSE-" << to_string(e.code()) << ": " << msg << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "EVIFUSE-INTERNAL: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
