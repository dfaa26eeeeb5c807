#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "anyway/errors.hpp"
#include "anyway/harness.hpp"
#include "oracles.hpp"

using namespace anyway;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string first_line(const std::string& text) { return text.substr(0, text.find('\n') + 1); }

std::size_t line_count(const std::string& text) {
  return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("anyway_harness_" + name);
  fs::remove_all(p);
  return p;
}

ExperimentConfig small_config() {
  ExperimentConfig cfg;
  cfg.output_width = 10;
  cfg.cardinality_pool = {3, 5};
  cfg.queries = 5;
  cfg.episodes = 40;
  cfg.meta_batch = 2;
  cfg.eval_interval = 20;
  cfg.val_episodes = 10;
  cfg.inner_steps = 2;
  cfg.per_class = 25;
  cfg.eval_ns = {3, 5};
  cfg.eval_episodes = 30;
  return cfg;
}

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(ANYWAY_CLI) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("config text") {
  SUBCASE("round trip") {
    ExperimentConfig cfg;
    cfg.apply_text("# comment\nmode = fixed\nfixed_n=5\noutput_width=5\nlambda=0.25\nhidden=8,8\n\n");
    cfg.apply("eval_ns", "5");
    cfg.apply("j_repeats", "1,6");
    cfg.apply("ensemble_methods", "original,max");
    cfg.validate();
    ExperimentConfig back;
    back.apply_text(cfg.to_text());
    CHECK(back.to_text() == cfg.to_text());
    CHECK(back.to_map() == cfg.to_map());
    CHECK(back.mode == TrainMode::fixed);
    CHECK(back.fixed_n == std::optional<std::size_t>{5});
    CHECK(back.lambda == std::optional<double>{0.25});
    CHECK(back.hidden == std::vector<std::size_t>{8, 8});
  }
  SUBCASE("errors name the field") {
    auto message = [](auto&& fn) {
      try {
        fn();
      } catch (const ConfigError& e) {
        return std::string(e.what());
      }
      return std::string();
    };
    ExperimentConfig cfg;
    CHECK(message([&] { cfg.apply("inner_lr", "fast"); }).find("inner_lr") != std::string::npos);
    CHECK(message([&] { cfg.apply("no_such_key", "1"); }).find("no_such_key") != std::string::npos);
    CHECK(message([&] { cfg.apply("episodes", "-3"); }).find("episodes") != std::string::npos);
    CHECK(message([&] { cfg.apply_text("seed 4\n"); }) != "");
    ExperimentConfig fixed;
    fixed.mode = TrainMode::fixed;
    CHECK(message([&] { fixed.validate(); }).find("fixed_n") != std::string::npos);
    ExperimentConfig wide;
    wide.output_width = 8;
    CHECK(message([&] { wide.validate(); }).find("output_width") != std::string::npos);
    ExperimentConfig rates;
    rates.outer_lr = -0.1;
    CHECK(message([&] { rates.validate(); }).find("outer_lr") != std::string::npos);
    ExperimentConfig mix;
    mix.mixup_enabled = true;
    CHECK(message([&] { mix.validate(); }).find("mixup_enabled") != std::string::npos);
  }
}

TEST_CASE("checkpoint encoding") {
  ExperimentConfig cfg = small_config();
  const DataSplits data = build_data(cfg);
  SUBCASE("maml round trip") {
    const Checkpoint ck = initial_checkpoint(cfg, data);
    const std::string bytes = encode_checkpoint(ck);
    CHECK(decode_checkpoint(bytes).bit_equal(ck));
    CHECK(encode_checkpoint(decode_checkpoint(bytes)) == bytes);
  }
  SUBCASE("protonet round trip keeps memory") {
    cfg.backend = Backend::protonet;
    Checkpoint ck = initial_checkpoint(cfg, data);
    ck.proto.memory.prototypes(2, 3) = 0.125;
    ck.proto.memory.seen[2] = true;
    const Checkpoint back = decode_checkpoint(encode_checkpoint(ck));
    CHECK(back.backend == Backend::protonet);
    CHECK(back.bit_equal(ck));
    CHECK(back.proto.memory.seen[2]);
  }
  SUBCASE("corruption") {
    const std::string bytes = encode_checkpoint(initial_checkpoint(cfg, data));
    CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), LoadError);
    CHECK_THROWS_AS(decode_checkpoint(bytes + "zz"), LoadError);
    CHECK_THROWS_AS(decode_checkpoint("not a checkpoint"), LoadError);
    std::string tag = bytes;
    tag.replace(tag.find("AWCKPT"), 6, "XXXXXX");
    CHECK_THROWS_AS(decode_checkpoint(tag), LoadError);
    CHECK_THROWS_AS(load_checkpoint(scratch("missing.bin").string()), LoadError);
  }
}

TEST_CASE("data splits") {
  ExperimentConfig cfg = small_config();
  const DataSplits d = build_data(cfg);
  CHECK(d.train.class_count() == 20);
  CHECK(d.val.class_count() == 10);
  CHECK(d.test.class_count() == 10);
  CHECK(d.test_label == "test");
  cfg.test_rotation_seed = 4;
  CHECK(build_data(cfg).test_label == "shifted");
  CHECK(build_data(cfg).train.bit_equal(d.train));
  CHECK_FALSE(build_data(cfg).test.bit_equal(d.test));
}

TEST_CASE("cmd_train") {
  SUBCASE("episodes=0 writes the initial checkpoint and an empty curve") {
    ExperimentConfig cfg = small_config();
    cfg.episodes = 0;
    const fs::path dir = scratch("train0");
    const auto out = cmd_train(cfg, dir.string());
    const Checkpoint init = initial_checkpoint(cfg, build_data(cfg));
    CHECK(load_checkpoint((dir / "checkpoint_final.bin").string()).bit_equal(init));
    CHECK(load_checkpoint((dir / "checkpoint_best.bin").string()).bit_equal(init));
    const std::string curve = slurp(dir / "curve.csv");
    CHECK(curve == "step,train_loss,val_acc_N3,val_acc_N5,val_acc_sum\n");
    fs::remove_all(dir);
  }
  SUBCASE("same config and seed give byte-identical outputs; manifest bookkeeping") {
    ExperimentConfig cfg = small_config();
    const fs::path a = scratch("train_a");
    const fs::path b = scratch("train_b");
    cmd_train(cfg, a.string());
    cmd_train(cfg, b.string());
    for (const char* f : {"checkpoint_best.bin", "checkpoint_final.bin", "curve.csv", "config.txt"}) {
      CAPTURE(f);
      CHECK(slurp(a / f) == slurp(b / f));
    }
    const auto m = nlohmann::json::parse(slurp(a / "manifest.json"));
    CHECK(m["seed"] == 0);
    CHECK(m["wall_time_seconds"].get<double>() >= 0.0);
    const auto by_n = m["final_val_acc_by_N"];
    REQUIRE(by_n.size() == 2);
    CHECK(by_n.contains("3"));
    CHECK(by_n.contains("5"));
    CHECK(m["final_val_acc_sum"].get<double>() ==
          doctest::Approx(by_n["3"].get<double>() + by_n["5"].get<double>()).epsilon(1e-12));
    double best_sum = 0.0;
    for (const auto& [k, v] : m["best_val_acc_by_N"].items()) best_sum += v.get<double>();
    CHECK(m["best_val_acc_sum"].get<double>() == doctest::Approx(best_sum).epsilon(1e-12));
    // the echoed config reproduces the run
    ExperimentConfig echo;
    echo.apply_text(slurp(a / "config.txt"));
    const fs::path c = scratch("train_c");
    cmd_train(echo, c.string());
    CHECK(slurp(a / "checkpoint_final.bin") == slurp(c / "checkpoint_final.bin"));
    for (const auto& p : {a, b, c}) fs::remove_all(p);
  }
  SUBCASE("invalid config is refused") {
    ExperimentConfig cfg = small_config();
    cfg.cardinality_pool = {3, 12};
    CHECK_THROWS_AS(cmd_train(cfg, scratch("bad").string()), ConfigError);
  }
}

TEST_CASE("evaluation reports") {
  ExperimentConfig cfg = small_config();
  const DataSplits data = build_data(cfg);
  const Checkpoint init = initial_checkpoint(cfg, data);
  const std::string golden = slurp(fs::path(GOLDEN_DIR) / "report_header.csv");
  SUBCASE("untrained model sits at chance") {
    ExperimentConfig flat = cfg;
    flat.mean_scale = 0.0;
    flat.eval_ns = {3, 5, 10};
    flat.eval_episodes = 100;
    const DataSplits fd = build_data(flat);
    const auto rows = evaluate_checkpoint(initial_checkpoint(flat, fd), fd.test, "test", eval_plan_from(flat));
    REQUIRE(rows.size() == 3);
    for (const auto& r : rows) {
      const double band = oracle::binomial_band(1.0 / r.N, r.episodes * r.N * flat.queries);
      CAPTURE(r.N);
      CHECK(std::abs(r.acc_mean - 1.0 / r.N) <= band);
    }
  }
  SUBCASE("schema, J_repeats rows and confidence interval") {
    cfg.j_repeats = {1, 6};
    const fs::path dir = scratch("eval");
    const auto rows = cmd_eval(init, cfg, dir.string());
    CHECK(rows.size() == 4);
    const std::string csv = slurp(dir / "report.csv");
    CHECK(first_line(csv) == golden);
    CHECK(csv.find("test,3,5,original,1,30,") != std::string::npos);
    CHECK(csv.find("test,3,5,original,6,30,") != std::string::npos);
    CHECK(csv.find("test,5,5,original,6,30,") != std::string::npos);
    for (const auto& r : rows) CHECK(r.acc_ci95 == doctest::Approx(1.96 * r.acc_std / std::sqrt(30.0)));
    const fs::path again = scratch("eval2");
    cmd_eval(init, cfg, again.string());
    CHECK(slurp(again / "report.csv") == csv);
    fs::remove_all(dir);
    fs::remove_all(again);
  }
  SUBCASE("N above the head width") {
    cfg.eval_ns = {11};
    CHECK_THROWS_AS(evaluate_checkpoint(init, data.test, "test", eval_plan_from(cfg)), ConfigError);
  }
  SUBCASE("protonet rows") {
    cfg.backend = Backend::protonet;
    const auto rows = evaluate_checkpoint(initial_checkpoint(cfg, data), data.test, "test", eval_plan_from(cfg));
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].method == "prototype");
  }
  SUBCASE("sweep has one row per size and method, and one member makes methods agree") {
    const fs::path dir = scratch("sweep");
    const std::vector<std::size_t> sets{1, 2, 3, 6, 12, 18};
    const std::vector<EnsembleMethod> methods{EnsembleMethod::original, EnsembleMethod::softmax, EnsembleMethod::max};
    const auto rows = cmd_sweep_ensemble(init, cfg, 3, sets, methods, dir.string());
    CHECK(rows.size() == 18);
    CHECK(line_count(slurp(dir / "report.csv")) == 19);
    std::vector<double> single;
    for (const auto& r : rows)
      if (r.j_repeats == 1) single.push_back(r.acc_mean);
    REQUIRE(single.size() == 3);
    CHECK(single[0] == single[1]);
    CHECK(single[0] == single[2]);
    fs::remove_all(dir);
  }
}

TEST_CASE("ablate-o with a single width") {
  ExperimentConfig cfg = small_config();
  cfg.episodes = 10;
  const fs::path dir = scratch("ablate");
  const auto rows = cmd_ablate_o(cfg, {10}, {0}, dir.string());
  CHECK(rows.size() == 2);
  for (const auto& r : rows) CHECK(r.O == 10);
  const std::string csv = slurp(dir / "report.csv");
  CHECK(first_line(csv) == slurp(fs::path(GOLDEN_DIR) / "ablation_header.csv"));
  const auto m = nlohmann::json::parse(slurp(dir / "manifest.json"));
  REQUIRE(m["training"].size() == 1);
  CHECK(m["training"][0]["O"] == 10);
  CHECK(m["training"][0]["train_seconds"].get<double>() >= 0.0);
  fs::remove_all(dir);
  cfg.mode = TrainMode::fixed;
  cfg.fixed_n = 5;
  CHECK_THROWS_AS(cmd_ablate_o(cfg, {10}, {0}, dir.string()), ConfigError);
}

TEST_CASE("gradcheck") {
  GradcheckOptions opt;
  opt.trials = 5;
  const fs::path dir = scratch("gradcheck");
  const auto ok = cmd_gradcheck(opt, dir.string());
  CHECK(ok.passed());
  CHECK(ok.blocks.size() >= 4);
  const std::string csv = slurp(dir / "report.csv");
  CHECK(first_line(csv) == slurp(fs::path(GOLDEN_DIR) / "gradcheck_header.csv"));
  CHECK(line_count(csv) == ok.blocks.size() + 1);

  const std::string victim = ok.blocks.front().name;
  opt.corrupt = [&](const std::string& name, GradientSet& g) {
    if (name == victim) g.blocks.front().data().front() += 1.0;
  };
  const auto bad = run_gradcheck(opt);
  CHECK_FALSE(bad.passed());
  for (const auto& b : bad.blocks) {
    CAPTURE(b.name);
    CHECK(b.passed == (b.name != victim));
    if (b.name == victim) CHECK(b.max_rel_error > 1e-4);
  }
  CHECK(bad.to_csv().find(victim) != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("compare with identical configs gives zero deltas") {
  ExperimentConfig cfg = small_config();
  cfg.episodes = 10;
  const fs::path dir = scratch("compare");
  const auto out = cmd_compare(cfg, cfg, {3, 5}, {0, 1}, dir.string());
  REQUIRE(out.rows.size() == 4);
  for (const auto& r : out.rows) CHECK(r.delta() == 0.0);
  for (const auto& s : out.summary) {
    CHECK(s.mean_delta == 0.0);
    CHECK(s.std_delta == 0.0);
  }
  CHECK(first_line(slurp(dir / "report.csv")) == slurp(fs::path(GOLDEN_DIR) / "compare_header.csv"));
  ExperimentConfig other = cfg;
  other.data_seed = 9;
  CHECK_THROWS_AS(cmd_compare(cfg, other, {3}, {0}, dir.string()), ConfigError);
  fs::remove_all(dir);
}

TEST_CASE("command line") {
  const fs::path dir = scratch("cli");
  fs::create_directories(dir);
  const fs::path log = dir / "log.txt";
  const std::string small =
      "--set output_width=10 --set cardinality_pool=3,5 --set queries=5 --set episodes=20 --set meta_batch=2 "
      "--set eval_interval=10 --set val_episodes=5 --set inner_steps=2 --set per_class=25 --set eval_ns=3,5 "
      "--set eval_episodes=20";
  SUBCASE("train then eval, twice, byte-identical") {
    for (const char* run : {"r1", "r2"}) {
      REQUIRE(run_cli("train " + small + " --out " + (dir / run / "train").string(), log) == 0);
      REQUIRE(run_cli("eval " + small + " --set j_repeats=1,6 --checkpoint " +
                          (dir / run / "train" / "checkpoint_best.bin").string() + " --out " +
                          (dir / run / "eval").string(),
                      log) == 0);
    }
    CHECK(slurp(dir / "r1/train/checkpoint_final.bin") == slurp(dir / "r2/train/checkpoint_final.bin"));
    CHECK(slurp(dir / "r1/eval/report.csv") == slurp(dir / "r2/eval/report.csv"));
    const std::string csv = slurp(dir / "r1/eval/report.csv");
    CHECK(first_line(csv) == slurp(fs::path(GOLDEN_DIR) / "report_header.csv"));
    CHECK(line_count(csv) == 5);
  }
  SUBCASE("config file plus overrides") {
    std::ofstream(dir / "exp.cfg") << "# desk run\nepisodes=5\nseed=3\n";
    REQUIRE(run_cli("train --config " + (dir / "exp.cfg").string() + " " + small + " --set episodes=0 --out " +
                        (dir / "cfgrun").string(),
                    log) == 0);
    ExperimentConfig echo;
    echo.apply_text(slurp(dir / "cfgrun/config.txt"));
    CHECK(echo.episodes == 0);
    CHECK(echo.seed == 3);
  }
  SUBCASE("field-level error and exit code") {
    CHECK(run_cli("train --set outer_lr=-1 --out " + (dir / "bad").string(), log) == 2);
    CHECK(slurp(log).find("outer_lr") != std::string::npos);
    CHECK(run_cli("train --set bogus=1", log) == 2);
    CHECK(slurp(log).find("bogus") != std::string::npos);
  }
  SUBCASE("output directory from the environment") {
    const std::string env = "ANYWAY_OUT_DIR=" + (dir / "envout").string() + " ";
    const int status = std::system((env + ANYWAY_CLI + " gen-data --set per_class=20 > " + log.string() + " 2>&1").c_str());
    CHECK(status == 0);
    CHECK(fs::exists(dir / "envout/gen-data/train.awf"));
  }
  SUBCASE("gradcheck exit status") {
    CHECK(run_cli("gradcheck --trials 3 --out " + (dir / "gc").string(), log) == 0);
    CHECK(run_cli("gradcheck --trials 3 --tolerance 1e-30", log) == 1);
  }
  fs::remove_all(dir);
}
