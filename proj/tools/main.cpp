#include <cstdio>
#include <iostream>

#include "CLI11.hpp"

#include "commands.hpp"
#include "eatkit/train/run_config.hpp"

using namespace eatkit;
using namespace eatkit::cli;

int main(int argc, char** argv) {
  CLI::App app{"eatkit: train, evaluate and verify the EAT vision transformer"};
  app.require_subcommand(1);

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "train a model and write a run directory");
  train->add_option("--config", ta.config, "JSON file with flat dotted keys");
  auto* data_opt = train->add_option("--data", ta.data, "class-per-directory image tree");
  auto* synth_opt = train->add_flag("--synthetic", ta.synthetic, "use the generated pattern dataset");
  data_opt->excludes(synth_opt);
  train->add_option("--epochs", ta.epochs);
  train->add_option("--seed", ta.seed);
  train->add_option("--out", ta.out, "run directory")->required();
  train->add_option("--set", ta.set, "override: key=value (repeatable)");
  train->add_flag("--quiet", ta.quiet);

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint and print its metrics");
  eval->add_option("--checkpoint", ea.checkpoint)->required();
  auto* edata = eval->add_option("--data", ea.data, "defaults to the checkpoint's data source");
  auto* esynth = eval->add_flag("--synthetic", ea.synthetic);
  edata->excludes(esynth);
  eval->add_option("--split", ea.split, "train, val or test")->capture_default_str();
  eval->add_flag("--json", ea.json, "key-sorted JSON on stdout");

  VerifyArgs va;
  auto* ver = app.add_subcommand("verify", "run the numerical self-checks");
  ver->add_option("--config", va.config);
  ver->add_option("--seed", va.seed)->capture_default_str();
  ver->add_option("--filter", va.filter, "substring of check names");
  ver->add_option("--fault-op", va.fault_op, "corrupt the backward pass of this op (negative control)");
  ver->add_flag("--json", va.json);

  InspectArgs ia;
  auto* insp = app.add_subcommand("inspect", "print shapes and parameter counts");
  insp->add_option("--config", ia.config);
  insp->add_option("--size", ia.size, "input side length")->capture_default_str();
  insp->add_flag("--json", ia.json);

  BenchArgs ba;
  auto* bench = app.add_subcommand("bench", "forward-pass throughput");
  bench->add_option("--checkpoint", ba.checkpoint);
  bench->add_option("--config", ba.config, "used when no checkpoint is given");
  bench->add_option("--batch", ba.batch)->capture_default_str();
  bench->add_option("--iters", ba.iters)->capture_default_str();
  bench->add_option("--size", ba.size)->capture_default_str();
  bench->add_flag("--json", ba.json);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfigError;
  }

  auto usage = [](CLI::App* sub) { std::cerr << sub->help(); };
  try {
    if (*train) return run_train(ta, std::cout);
    if (*eval) return run_eval(ea, std::cout);
    if (*ver) return run_verify(va, std::cout);
    if (*insp) return run_inspect(ia, std::cout);
    if (*bench) return run_bench(ba, std::cout);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    if (*train) usage(train);
    if (*eval) usage(eval);
    return kConfigError;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return kDataError;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kNumericError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailed;
  }
  return kFailed;
}
