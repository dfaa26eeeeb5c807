#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "anyway/errors.hpp"
#include "anyway/harness.hpp"

using namespace anyway;

namespace {

struct ConfigArgs {
  std::string file;
  std::vector<std::string> sets;
};

void add_config_args(CLI::App* cmd, ConfigArgs& args, const std::string& suffix = "") {
  cmd->add_option("--config" + suffix, args.file, "key=value config file");
  cmd->add_option("--set" + suffix, args.sets, "override one key, e.g. --set" + suffix + " shots=1")
      ->take_all();
}

ExperimentConfig load_config(const ConfigArgs& args) {
  ExperimentConfig cfg;
  if (!args.file.empty()) cfg.apply_file(args.file);
  for (const auto& kv : args.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    cfg.apply(kv.substr(0, eq), kv.substr(eq + 1));
  }
  cfg.validate();
  return cfg;
}

std::string run_dir_or_default(const std::string& out, const std::string& command) {
  if (!out.empty()) return out;
  return (std::filesystem::path(default_output_dir()) / command).string();
}

void print_rows(const std::vector<ReportRow>& rows) {
  for (const auto& r : rows) {
    fmt::print("N={:<3} {:<9} J={:<3} acc={:.4f} +- {:.4f} (ci95 {:.4f})\n", r.N, r.method,
               r.j_repeats, r.acc_mean, r.acc_std, r.acc_ci95);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"any-way meta-learning experiment harness"};
  app.require_subcommand(1);

  std::string out;
  std::string checkpoint;
  ConfigArgs cfg_args;

  auto* train_cmd = app.add_subcommand("train", "meta-train a model from a config");
  add_config_args(train_cmd, cfg_args);
  train_cmd->add_option("--out", out, "run directory");

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  add_config_args(eval_cmd, cfg_args);
  eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  eval_cmd->add_option("--out", out, "run directory");

  std::size_t sweep_n = 5;
  std::vector<std::size_t> sweep_sets{1, 2, 3, 6, 12, 18};
  std::vector<std::string> sweep_methods{"original", "softmax", "max"};
  auto* sweep_cmd = app.add_subcommand("sweep-ensemble", "ensemble size x method table");
  add_config_args(sweep_cmd, cfg_args);
  sweep_cmd->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  sweep_cmd->add_option("--n", sweep_n, "task cardinality")->capture_default_str();
  sweep_cmd->add_option("--sets", sweep_sets, "ensemble sizes")->delimiter(',')->capture_default_str();
  sweep_cmd->add_option("--methods", sweep_methods, "original|softmax|max")->delimiter(',')->capture_default_str();
  sweep_cmd->add_option("--out", out, "run directory");

  std::vector<std::size_t> widths{10, 20, 30};
  std::vector<std::uint64_t> seeds{0, 1, 2};
  auto* ablate_cmd = app.add_subcommand("ablate-o", "train and evaluate one model per output width");
  add_config_args(ablate_cmd, cfg_args);
  ablate_cmd->add_option("--widths", widths, "output widths O")->delimiter(',')->capture_default_str();
  ablate_cmd->add_option("--seeds", seeds, "training seeds")->delimiter(',')->capture_default_str();
  ablate_cmd->add_option("--out", out, "run directory");

  GradcheckOptions gc;
  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference check of every backward pass");
  grad_cmd->add_option("--seed", gc.seed)->capture_default_str();
  grad_cmd->add_option("--trials", gc.trials)->capture_default_str();
  grad_cmd->add_option("--max-dim", gc.max_dim)->capture_default_str();
  grad_cmd->add_option("--tolerance", gc.tolerance)->capture_default_str();
  grad_cmd->add_option("--out", out, "run directory");

  ConfigArgs cfg_b;
  std::vector<std::size_t> compare_ns{3, 5, 10};
  auto* compare_cmd = app.add_subcommand("compare", "paired A/B training and evaluation");
  add_config_args(compare_cmd, cfg_args, "-a");
  add_config_args(compare_cmd, cfg_b, "-b");
  compare_cmd->add_option("--ns", compare_ns, "evaluation cardinalities")->delimiter(',')->capture_default_str();
  compare_cmd->add_option("--seeds", seeds, "training seeds")->delimiter(',')->capture_default_str();
  compare_cmd->add_option("--out", out, "run directory");

  auto* gen_cmd = app.add_subcommand("gen-data", "write the synthetic splits as feature files");
  add_config_args(gen_cmd, cfg_args);
  gen_cmd->add_option("--out", out, "output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) {
      const auto cfg = load_config(cfg_args);
      const std::string dir = run_dir_or_default(out, "train");
      const auto outcome = cmd_train(cfg, dir);
      for (const auto& s : outcome.run.stalls) {
        std::cerr << fmt::format("warning: N={} stayed at chance level through step {}\n", s.N, s.step);
      }
      fmt::print("best step {} (val acc sum {:.4f}), {:.1f}s -> {}\n", outcome.run.best_step,
                 outcome.run.best_val_sum, outcome.run.seconds, dir);
    } else if (*eval_cmd) {
      const auto cfg = load_config(cfg_args);
      print_rows(cmd_eval(load_checkpoint(checkpoint), cfg, run_dir_or_default(out, "eval")));
    } else if (*sweep_cmd) {
      const auto cfg = load_config(cfg_args);
      std::vector<EnsembleMethod> methods;
      for (const auto& m : sweep_methods) methods.push_back(parse_ensemble_method(m));
      print_rows(cmd_sweep_ensemble(load_checkpoint(checkpoint), cfg, sweep_n, sweep_sets, methods,
                                    run_dir_or_default(out, "sweep-ensemble")));
    } else if (*ablate_cmd) {
      const auto cfg = load_config(cfg_args);
      std::cout << ablation_csv(cmd_ablate_o(cfg, widths, seeds, run_dir_or_default(out, "ablate-o")));
    } else if (*grad_cmd) {
      const auto report = cmd_gradcheck(gc, run_dir_or_default(out, "gradcheck"));
      std::cout << report.to_csv();
      if (!report.passed()) {
        std::cerr << "gradcheck: FAILED\n";
        return 1;
      }
    } else if (*compare_cmd) {
      const auto a = load_config(cfg_args);
      const auto b = load_config(cfg_b);
      std::cout << compare_csv(cmd_compare(a, b, compare_ns, seeds, run_dir_or_default(out, "compare")));
    } else if (*gen_cmd) {
      const auto cfg = load_config(cfg_args);
      const std::string dir = run_dir_or_default(out, "gen-data");
      cmd_gen_data(cfg, dir);
      fmt::print("wrote train/val/test feature files to {}\n", dir);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
