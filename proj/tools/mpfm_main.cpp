// SPDX-License-Identifier: Apache-2.0
// mpfm command-line tool: data generation, training, scoring, evaluation,
// reverse sampling, and the invariant self-check.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mpfm/config.hpp"
#include "mpfm/data.hpp"
#include "mpfm/error.hpp"
#include "mpfm/eval.hpp"
#include "mpfm/invariants.hpp"
#include "mpfm/model_io.hpp"
#include "mpfm/prototype.hpp"
#include "mpfm/reverse.hpp"
#include "mpfm/rng.hpp"

namespace fs = std::filesystem;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kConfigError = 2, kNumericFault = 3 };

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> repeat;
  std::string out;
  std::vector<std::string> modes;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "JSON run configuration");
  cmd->add_option("--seed", f.seed, "Training seed (overrides the config)");
  cmd->add_option("--repeat", f.repeat, "Number of seeded repeats");
  cmd->add_option("--out", f.out, "Output directory");
  cmd->add_option("--mode", f.modes,
                  "Mode override: literal-mimr, batch-marginal, per-sample-t, one-step-psi, endpoint=<source>");
}

mpfm::RunConfig resolve(const CommonFlags& f) {
  mpfm::RunConfig cfg = f.config.empty() ? mpfm::parse_run_config("{}") : mpfm::load_run_config(f.config);
  if (f.seed) {
    cfg.seed = *f.seed;
    cfg.train.seed = *f.seed;
  }
  if (f.repeat) {
    if (*f.repeat == 0) throw mpfm::ConfigError("--repeat must be positive");
    cfg.repeat = *f.repeat;
  }
  if (!f.out.empty()) cfg.out = f.out;
  for (const auto& m : f.modes) mpfm::apply_mode(cfg, m);
  return cfg;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw mpfm::InvalidInput("cannot write " + path.string());
  out << text << '\n';
}

int cmd_gen_data(const mpfm::RunConfig& cfg) {
  const auto data = mpfm::experiment_data(cfg, 0);
  const fs::path dir = cfg.out / "data";
  fs::create_directories(dir);
  mpfm::save_dataset(data.train_normal, dir / "train_normal.csv");
  mpfm::save_dataset(data.train_anomaly, dir / "train_anomaly.csv");
  mpfm::save_dataset(data.test, dir / "test.csv");
  std::cout << "wrote " << data.train_normal.samples.size() << " normal, " << data.train_anomaly.samples.size()
            << " anomalous, " << data.test.samples.size() << " test samples to " << dir.string() << '\n';
  return kOk;
}

int cmd_train(const mpfm::RunConfig& cfg) {
  fs::create_directories(cfg.out);
  write_file(cfg.out / "config.json", mpfm::to_json(cfg));
  const auto art = mpfm::run_once(cfg, 0, cfg.out);
  std::cout << "trained " << art.history.size() << " steps; test AUC " << art.report.auc;
  if (art.report.untrained_auc >= 0.0) std::cout << " (untrained " << art.report.untrained_auc << ")";
  std::cout << "\nmodel: " << (cfg.out / "model.mpfm").string() << '\n';
  return kOk;
}

int cmd_score(const mpfm::RunConfig& cfg, const std::string& model_path, const std::string& data_path) {
  const mpfm::ModelBundle model = mpfm::load_model(model_path);
  const mpfm::Dataset data = mpfm::load_dataset(data_path);
  const auto scores = mpfm::score_batch(model.flow, model.heads, data.samples, model.scoring);
  fs::create_directories(cfg.out);
  std::ofstream out(cfg.out / "scores.csv");
  mpfm::write_scores(scores, out);
  std::cout << "scored " << scores.size() << " samples -> " << (cfg.out / "scores.csv").string() << '\n';
  try {
    const auto rep = mpfm::evaluate_scores(scores);
    std::cout << "AUC " << rep.auc << '\n';
    write_file(cfg.out / "report.json", mpfm::report_json(rep));
  } catch (const mpfm::UndefinedMetric&) {
    std::cout << "AUC undefined (single class)\n";
  }
  return kOk;
}

int cmd_eval(const mpfm::RunConfig& cfg) {
  const auto result = mpfm::run_experiment(cfg);
  const auto& m = result.main;
  std::printf("AUC %.6f +- %.6f over %zu run(s)", m.mean_auc, m.std_auc, m.runs.size());
  if (m.mean_untrained_auc >= 0.0) std::printf("; untrained %.6f", m.mean_untrained_auc);
  std::printf("\n");
  for (const auto& [lambda, rep] : result.sweep) {
    std::printf("lambda %-8g AUC %.6f +- %.6f\n", lambda, rep.mean_auc, rep.std_auc);
  }
  std::cout << "reports under " << cfg.out.string() << '\n';
  return kOk;
}

int cmd_sample(const mpfm::RunConfig& cfg, const std::string& model_path) {
  const mpfm::ModelBundle model = mpfm::load_model(model_path);
  fs::create_directories(cfg.out);
  std::ofstream out(cfg.out / "samples.csv");
  out << "sample_index";
  for (std::size_t j = 0; j < model.flow.dim(); ++j) out << ",f" << j;
  out << '\n';
  const mpfm::Rng root(cfg.seed, 0x5a4d);
  for (std::size_t i = 0; i < cfg.sample_count; ++i) {
    mpfm::Rng rng = root.split(i);
    const auto start = mpfm::sample_prior(model.flow.prototype, rng);
    const auto z = mpfm::sample_reverse_trajectory(model.flow, start, cfg.sample_steps, rng);
    out << i;
    for (double v : z) out << ',' << mpfm::format_double(v);
    out << '\n';
  }
  std::cout << "wrote " << cfg.sample_count << " samples to " << (cfg.out / "samples.csv").string() << '\n';
  return kOk;
}

int cmd_check(const mpfm::RunConfig& cfg) {
  bool all = true;
  for (const auto& r : mpfm::run_invariant_suite(cfg.seed)) {
    std::cout << (r.passed ? "PASS " : "FAIL ") << r.name;
    if (!r.detail.empty()) std::cout << " (" << r.detail << ")";
    std::cout << '\n';
    all = all && r.passed;
  }
  return all ? kOk : kFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mixture prototype flow matching for open-set anomaly detection"};
  app.require_subcommand(1);

  CommonFlags flags;
  std::string model_path, data_path;

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic train/test splits");
  auto* trn = app.add_subcommand("train", "Train one model and score the test split");
  auto* scr = app.add_subcommand("score", "Score a dataset file with a saved model");
  auto* evl = app.add_subcommand("eval", "Run the (repeated) experiment and report AUC");
  auto* smp = app.add_subcommand("sample", "Draw reverse-time samples from a saved model");
  auto* chk = app.add_subcommand("check", "Run the invariant self-check suite");
  for (auto* cmd : {gen, trn, scr, evl, smp, chk}) add_common(cmd, flags);
  scr->add_option("--model", model_path, "Model snapshot")->required();
  scr->add_option("--data", data_path, "Dataset file")->required();
  smp->add_option("--model", model_path, "Model snapshot")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    const mpfm::RunConfig cfg = resolve(flags);
    if (gen->parsed()) return cmd_gen_data(cfg);
    if (trn->parsed()) return cmd_train(cfg);
    if (scr->parsed()) return cmd_score(cfg, model_path, data_path);
    if (evl->parsed()) return cmd_eval(cfg);
    if (smp->parsed()) return cmd_sample(cfg, model_path);
    if (chk->parsed()) return cmd_check(cfg);
  } catch (const mpfm::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const mpfm::NumericFault& e) {
    std::cerr << "numeric fault: " << e.what() << '\n';
    return kNumericFault;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kFailure;
}
