#include "hmla/app/cli.hpp"

#include <CLI11.hpp>

#include "hmla/app/commands.hpp"
#include "hmla/errors.hpp"

namespace hmla::app {

int run_cli(int argc, const char* const* argv, char** envp, std::ostream& out, std::ostream& err) {
  CLI::App app{"Hybrid MLA decode engine: equivalence checks, cost model and simulator", "hmla"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", tool_version());

  std::string config_path;
  std::uint64_t seed = 0;
  std::string output_dir;
  std::string format;
  std::string model;
  std::string hardware;
  std::vector<std::string> sets;
  app.add_option("--config", config_path, "INI config file")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "Random seed");
  app.add_option("--output", output_dir, "Write results and manifests into this directory");
  app.add_option("--format", format, "Output format")->check(CLI::IsMember({"csv", "jsonl"}));
  app.add_option("--model", model, "Model preset (shorthand for --set model.preset=...)");
  app.add_option("--hardware", hardware, "Hardware preset (shorthand for --set hardware.preset=...)");
  app.add_option("--set", sets, "Override a config value: section.key=value");

  EquivalenceArgs eq;
  auto* eq_cmd = app.add_subcommand("equivalence", "Randomized naive/absorb/hybrid agreement check");
  eq_cmd->add_option("--trials", eq.trials, "Number of random instances");
  eq_cmd->add_option("--precision", eq.precision, "32, 64 or both")->check(CLI::IsMember({"32", "64", "both"}));
  eq_cmd->add_option("--tolerance", eq.tolerance, "Maximum relative error (default 1e-5 / 1e-10)");
  eq_cmd->add_flag("--inject-fault", eq.inject_fault, "Perturb one weight copy; the check must fail");

  RooflineArgs rl;
  auto* rl_cmd = app.add_subcommand("roofline", "Roofline throughput sweep over batch size and method");
  rl_cmd->add_option("--batches", rl.batches, "Batch sizes, e.g. 1,8,64 or 1:1024");
  rl_cmd->add_option("--methods", rl.methods, "Comma list of naive, absorb, typhoon");
  rl_cmd->add_option("--shared-len", rl.shared_len, "Shared prefix lengths");
  rl_cmd->add_option("--nonshared-len", rl.nonshared_len, "Per-sequence non-shared lengths");
  rl_cmd->add_option("--query-len", rl.query_len, "Query tokens per sequence");
  rl_cmd->add_option("--hardware-presets", rl.hardware, "Comma list of hardware presets");

  ThresholdArgs th;
  auto* th_cmd = app.add_subcommand("threshold", "Batch size where the hybrid path starts to pay off");
  th_cmd->add_flag("--all-hardware", th.all_hardware, "One row per hardware preset");
  th_cmd->add_option("--max-batch", th.max_batch, "Search cap")->check(CLI::PositiveNumber);

  FootprintArgs fp;
  auto* fp_cmd = app.add_subcommand("footprint", "Per-device HBM footprint of the expanded shared prefix");
  fp_cmd->add_option("--batches", fp.batches, "Global batch sizes");
  fp_cmd->add_option("--max-seq", fp.max_seqs, "Maximum sequence lengths");
  fp_cmd->add_option("--shared-len", fp.shared_len, "Shared prefix length");
  fp_cmd->add_flag("--no-typhoon", fp.no_typhoon, "Footprint without the expanded prefix copy");

  SimulateArgs sm;
  auto* sm_cmd = app.add_subcommand("simulate", "Continuous-batching decode simulation");
  sm_cmd->add_option("--batch", sm.batch, "Maximum active sequences")->check(CLI::PositiveNumber);
  sm_cmd->add_option("--prefix-len", sm.prefix_len, "Shared prefix length");
  sm_cmd->add_option("--tail", sm.tail, "Per-request prefill length: fixed:N, uniform:A:B, lognormal:MU:SIGMA");
  sm_cmd->add_option("--gen", sm.generation, "Generated tokens per request (same syntax)");
  sm_cmd->add_option("--requests", sm.requests, "Total requests");
  sm_cmd->add_option("--method", sm.method, "naive, absorb, typhoon or all")
      ->check(CLI::IsMember({"naive", "absorb", "typhoon", "all"}));
  sm_cmd->add_option("--math", sm.math, "off or full")->check(CLI::IsMember({"off", "full"}));
  sm_cmd->add_flag("--parity", sm.parity, "Re-run each real-math step on the other decode path");
  sm_cmd->add_flag("--no-trace", sm.no_trace, "Skip per-step traces");
  sm_cmd->add_option("--sweep", sm.sweep, "Batch sizes for a speedup table");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForVersion& e) {
    out << tool_version() << '\n';
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return kExitOk;
    }
    err << "hmla: " << e.what() << '\n';
    return kExitUsage;
  }

  CommandContext ctx;
  ctx.err = &err;
  try {
    Settings file = config_path.empty() ? Settings{} : read_config_file(config_path);
    Settings flags;
    for (const auto& s : sets) flags.insert_or_assign(parse_assignment(s).first, parse_assignment(s).second);
    if (!model.empty()) flags["model.preset"] = model;
    if (!hardware.empty()) flags["hardware.preset"] = hardware;
    if (!format.empty()) flags["output.format"] = format;
    ctx.config = resolve_config(file, env_settings(envp), flags);
    ctx.seed = seed;
    ctx.sink.out = &out;
    ctx.sink.format = ctx.config.format;
    if (!output_dir.empty()) ctx.sink.dir = output_dir;

    if (*eq_cmd) return cmd_equivalence(ctx, eq);
    if (*rl_cmd) return cmd_roofline(ctx, rl);
    if (*th_cmd) return cmd_threshold(ctx, th);
    if (*fp_cmd) return cmd_footprint(ctx, fp);
    return cmd_simulate(ctx, sm);
  } catch (const CapacityError& e) {
    err << "hmla: capacity: " << e.what() << '\n';
    return kExitCapacity;
  } catch (const std::invalid_argument& e) {
    err << "hmla: " << e.what() << '\n';
    return kExitUsage;
  } catch (const NotFoundError& e) {
    err << "hmla: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "hmla: error: " << e.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace hmla::app
