// prefopt: desk-scale preference-optimization lab.
//
// Subcommands: gen-data, train, eval, compare, gradcheck, theorycheck,
// plotdata. Exit codes: 0 success, 1 failed check, 2 configuration error,
// 3 numerical abort.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "prefopt/analysis.hpp"
#include "prefopt/checkpoint.hpp"
#include "prefopt/config.hpp"
#include "prefopt/gradcheck.hpp"
#include "prefopt/trainer.hpp"

namespace {

using namespace prefopt;

std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot open output file \"" + path + "\"");
  out << text;
}

int cmd_gen_data(const std::string& config_path, const std::string& out_path) {
  const RunConfig cfg = load_config(config_path);
  const World world = gen_world(cfg.world);
  const DatasetManifest data =
      annotate(world, cfg.data.annotator, cfg.data.form, cfg.data.records_per_prompt,
               cfg.data.construction_seed);
  save_manifest(data, out_path);
  std::cout << "wrote " << data.records.size() << " records to " << out_path << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& metrics_override,
              const std::string& checkpoint_override) {
  RunConfig cfg = load_config(config_path);
  if (!metrics_override.empty()) cfg.metrics_path = metrics_override;
  if (!checkpoint_override.empty()) cfg.checkpoint_path = checkpoint_override;
  const TrainResult res = train(cfg);
  const MetricsRow& last = res.rows.back();
  std::cout << "trained " << method_name(cfg.objective.method) << " for " << res.steps
            << " steps in " << g17(res.wall_seconds) << " s\n"
            << "final loss " << g17(last.loss) << ", accuracy " << g17(last.accuracy)
            << ", margin " << g17(last.margin) << "\n"
            << "metrics: " << cfg.metrics_path << "\n"
            << "checkpoint: " << cfg.checkpoint_path << "\n";
  return 0;
}

int cmd_eval(const std::string& config_path, const std::string& checkpoint_path,
             const std::string& out_path) {
  const RunConfig cfg = load_config(config_path);
  const Checkpoint ckpt = load_checkpoint(checkpoint_path);
  if (ckpt.world_seed != cfg.world.seed) {
    throw ConfigError("checkpoint \"" + checkpoint_path + "\" was trained on world seed " +
                      std::to_string(ckpt.world_seed) + ", config has " +
                      std::to_string(cfg.world.seed));
  }
  const World world = gen_world(cfg.world);
  const ReferencePair pair(ckpt.policy, ckpt.reference);
  const EvalReport rep = evaluate(cfg, pair, ckpt.head, world, ckpt.step);

  std::string text;
  text += "step," + std::to_string(rep.step) + "\n";
  text += "heldout_accuracy," + g17(rep.heldout_accuracy) + "\n";
  text += "heldout_records," + std::to_string(rep.heldout_records) + "\n";
  text += "true_winrate," + g17(rep.true_winrate) + "\n";
  text += "kl_exact," + g17(rep.kl_exact) + "\n";
  text += "kl_winner_logratio," + g17(rep.kl_winner_logratio) + "\n";
  if (!out_path.empty()) write_text(out_path, text);
  std::cout << text;
  return 0;
}

int cmd_compare(const std::vector<std::string>& config_paths, const std::string& out_path) {
  if (config_paths.empty()) throw ConfigError("compare needs at least one config");
  std::vector<RunConfig> configs;
  configs.reserve(config_paths.size());
  for (const std::string& p : config_paths) configs.push_back(load_config(p));
  const std::vector<CompareRow> rows = compare(configs);
  const std::string text = format_compare_csv(rows);
  if (!out_path.empty()) write_text(out_path, text);
  std::cout << text;
  return 0;
}

int cmd_gradcheck(const std::string& method_arg, const std::string& mode_arg,
                  uint32_t instances, uint64_t seed, double tolerance) {
  std::vector<Method> methods;
  if (method_arg == "all") {
    methods = {Method::DPO,  Method::IPO,     Method::CPO,
               Method::KTO,  Method::ORPO,    Method::RDPO,
               Method::SimPO, Method::UAPO,   Method::SimUAPO,
               Method::UAPOMulti, Method::SimUAPOMulti};
  } else {
    methods.push_back(parse_method(method_arg));
  }
  std::vector<PolicyMode> modes;
  if (mode_arg == "both") {
    modes = {PolicyMode::Tabular, PolicyMode::TinyLM};
  } else {
    modes.push_back(parse_mode(mode_arg));
  }

  bool all_pass = true;
  for (Method m : methods) {
    for (PolicyMode mode : modes) {
      const GradCheckReport rep = gradcheck_method(m, mode, instances, seed, tolerance);
      all_pass = all_pass && rep.pass;
      std::printf("%-13s %-8s max_rel_error %-12.3e %s\n", method_name(m),
                  mode_name(mode), rep.max_rel_err, rep.pass ? "pass" : "FAIL");
    }
  }
  return all_pass ? 0 : 1;
}

void print_theory(const TheoryReport& rep) {
  std::printf("%-28s instances %-8llu violations %-6llu worst %-13.3e %s\n",
              rep.check.c_str(), static_cast<unsigned long long>(rep.instances),
              static_cast<unsigned long long>(rep.violations), rep.worst_margin,
              rep.pass ? "pass" : "FAIL");
}

int cmd_theorycheck(const std::string& check, uint32_t instances, uint64_t seed,
                    bool parallel) {
  bool all_pass = true;
  const bool all = check == "all";
  bool matched = false;
  if (all || check == "sigmoid-product-bound") {
    const TheoryReport rep =
        check_sigmoid_bound(instances, 50.0, seed, parallel ? Exec::Parallel : Exec::Serial);
    print_theory(rep);
    all_pass = all_pass && rep.pass;
    matched = true;
  }
  if (all || check == "anchored-loss-lower-bound") {
    const TheoryReport rep = check_lower_bound(instances, seed);
    print_theory(rep);
    all_pass = all_pass && rep.pass;
    matched = true;
  }
  if (all || check == "winner-gradient-decomposition") {
    const TheoryReport rep = check_gradient_decomposition(instances, seed);
    print_theory(rep);
    all_pass = all_pass && rep.pass;
    matched = true;
  }
  if (!matched) {
    throw ConfigError("unknown check \"" + check +
                      "\" (expected all, sigmoid-product-bound, "
                      "anchored-loss-lower-bound, or winner-gradient-decomposition)");
  }
  return all_pass ? 0 : 1;
}

int cmd_plotdata(const std::string& metrics_path, const std::string& series_arg,
                 const std::string& out_path) {
  const std::vector<MetricsRow> rows = load_metrics(metrics_path);
  const std::string text = plot_series(rows, parse_series(series_arg));
  if (!out_path.empty()) write_text(out_path, text);
  std::cout << text;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale preference-optimization lab"};
  app.require_subcommand(1);

  std::string config_path, out_path, metrics_path, checkpoint_path, series_arg;
  std::string method_arg = "all", mode_arg = "both", check_arg = "all";
  std::vector<std::string> compare_configs;
  uint32_t instances = 100;
  uint64_t seed = 1;
  double tolerance = 1e-4;
  bool no_parallel = false;

  CLI::App* gen = app.add_subcommand("gen-data", "generate a preference dataset manifest");
  gen->add_option("--config", config_path, "run config (world and data sections)")->required();
  gen->add_option("--out", out_path, "manifest output path")->required();

  CLI::App* tr = app.add_subcommand("train", "train one objective from a config");
  tr->add_option("--config", config_path, "run config")->required();
  tr->add_option("--metrics", metrics_path, "override output.metrics");
  tr->add_option("--checkpoint", checkpoint_path, "override output.checkpoint");

  CLI::App* ev = app.add_subcommand("eval", "evaluate a checkpoint on its world");
  ev->add_option("--config", config_path, "run config")->required();
  ev->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
  ev->add_option("--out", out_path, "also write the report here");

  CLI::App* cmp = app.add_subcommand("compare", "train several configs and tabulate");
  cmp->add_option("--out", out_path, "also write the comparison CSV here");
  cmp->add_option("configs", compare_configs, "config files (must share world.seed)");

  CLI::App* gc = app.add_subcommand("gradcheck", "tape gradients vs finite differences");
  gc->add_option("--method", method_arg, "objective name or 'all'");
  gc->add_option("--mode", mode_arg, "tabular, tiny-lm, or both");
  gc->add_option("--instances", instances, "random instances per combination");
  gc->add_option("--seed", seed, "base seed");
  gc->add_option("--tolerance", tolerance, "max relative error allowed");

  CLI::App* th = app.add_subcommand("theorycheck", "numerical checks of the algebraic claims");
  th->add_option("--check", check_arg, "check name or 'all'");
  th->add_option("--instances", instances, "random instances");
  th->add_option("--seed", seed, "base seed");
  th->add_flag("--no-parallel", no_parallel, "force serial evaluation");

  CLI::App* pd = app.add_subcommand("plotdata", "extract a plot-ready series from metrics");
  pd->add_option("--metrics", metrics_path, "metrics CSV from train")->required();
  pd->add_option("--series", series_arg, "anchor, margin, accuracy, or kl")->required();
  pd->add_option("--out", out_path, "also write the series here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;  // usage problems are configuration errors
  }

  try {
    if (gen->parsed()) return cmd_gen_data(config_path, out_path);
    if (tr->parsed()) return cmd_train(config_path, metrics_path, checkpoint_path);
    if (ev->parsed()) return cmd_eval(config_path, checkpoint_path, out_path);
    if (cmp->parsed()) return cmd_compare(compare_configs, out_path);
    if (gc->parsed()) return cmd_gradcheck(method_arg, mode_arg, instances, seed, tolerance);
    if (th->parsed()) return cmd_theorycheck(check_arg, instances, seed, !no_parallel);
    if (pd->parsed()) return cmd_plotdata(metrics_path, series_arg, out_path);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numerical abort: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
