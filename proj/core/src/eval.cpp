// SPDX-License-Identifier: Apache-2.0
#include "mpfm/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>

#include "json.hpp"
#include "mpfm/error.hpp"

namespace mpfm {
namespace {

using nlohmann::json;

template <class F>
auto in_stage(const std::string& stage, F&& fn) -> decltype(fn()) {
  const auto tag = [&](const std::exception& e) { return stage + ": " + e.what(); };
  try {
    return fn();
  } catch (const ConfigError& e) {
    throw ConfigError(tag(e));
  } catch (const NumericFault& e) {
    throw NumericFault(tag(e));
  } catch (const InsufficientData& e) {
    throw InsufficientData(tag(e));
  } catch (const FormatVersionError& e) {
    throw FormatVersionError(tag(e));
  } catch (const ParseError& e) {
    throw ParseError(e.line(), tag(e));
  } catch (const InvalidInput& e) {
    throw InvalidInput(tag(e));
  } catch (const UndefinedMetric& e) {
    throw UndefinedMetric(tag(e));
  } catch (const Error& e) {
    throw Error(tag(e));
  }
}

std::vector<int> labels_of(std::span<const ScoreBreakdown> scores) {
  std::vector<int> out;
  for (const auto& s : scores) out.push_back(s.label);
  return out;
}

template <class F>
double head_auc(std::span<const ScoreBreakdown> scores, std::span<const int> labels, F pick) {
  std::vector<double> v;
  for (const auto& s : scores) v.push_back(pick(s));
  return roc_auc(v, labels);
}

json eval_json(const EvalReport& r) {
  json j = {{"auc", r.auc},
            {"count", r.count},
            {"positives", r.positives},
            {"head_auc",
             {{"S_g", r.heads.global}, {"S_a", r.heads.local}, {"neg_S_n", r.heads.normal}, {"S_r", r.heads.residual}}},
            {"config_digest", r.config_digest},
            {"seed", r.seed}};
  if (r.untrained_auc >= 0.0) j["untrained_auc"] = r.untrained_auc;
  return j;
}

json experiment_json(const ExperimentReport& r) {
  json runs = json::array();
  for (const auto& run : r.runs) runs.push_back(eval_json(run));
  json j = {{"runs", runs}, {"mean_auc", r.mean_auc}, {"std_auc", r.std_auc}, {"repeat", r.runs.size()}};
  if (r.mean_untrained_auc >= 0.0) j["mean_untrained_auc"] = r.mean_untrained_auc;
  return j;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw InvalidInput("cannot write " + path.string());
  out << text << '\n';
}

}  // namespace

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw InvalidInput("roc_auc: one label per score required");
  std::uint64_t pos = 0, neg = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (std::isnan(scores[i])) throw InvalidInput("roc_auc: NaN score");
    if (labels[i] == 1) {
      ++pos;
    } else if (labels[i] == 0) {
      ++neg;
    } else {
      throw InvalidInput("roc_auc: labels must be 0 or 1");
    }
  }
  if (pos == 0 || neg == 0) throw UndefinedMetric("roc_auc: need both positive and negative samples");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Twice the positive rank sum, with a tie group at 0-based offset i of size
  // g contributing average rank (2i + g + 1) / 2 per member; kept in integers.
  std::uint64_t twice_rank_sum = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    std::uint64_t group_pos = 0;
    for (std::size_t k = i; k < j; ++k) group_pos += labels[order[k]] == 1 ? 1 : 0;
    twice_rank_sum += group_pos * (2 * i + (j - i) + 1);
    i = j;
  }
  const std::uint64_t twice_u = twice_rank_sum - pos * (pos + 1);
  return static_cast<double>(twice_u) / static_cast<double>(2 * pos * neg);
}

EvalReport evaluate_scores(std::span<const ScoreBreakdown> scores) {
  const auto labels = labels_of(scores);
  EvalReport r;
  r.count = scores.size();
  r.positives = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  r.auc = head_auc(scores, labels, [](const ScoreBreakdown& s) { return s.s; });
  r.heads.global = head_auc(scores, labels, [](const ScoreBreakdown& s) { return s.s_g; });
  r.heads.local = head_auc(scores, labels, [](const ScoreBreakdown& s) { return s.s_a; });
  r.heads.normal = head_auc(scores, labels, [](const ScoreBreakdown& s) { return -s.s_n; });
  r.heads.residual = head_auc(scores, labels, [](const ScoreBreakdown& s) { return s.s_r; });
  return r;
}

void write_scores(std::span<const ScoreBreakdown> scores, std::ostream& out) {
  out << "sample_id,S_g,S_a,S_n,S_r,S,label\n";
  for (const auto& s : scores) {
    out << s.id << ',' << format_double(s.s_g) << ',' << format_double(s.s_a) << ',' << format_double(s.s_n) << ','
        << format_double(s.s_r) << ',' << format_double(s.s) << ',' << s.label << '\n';
  }
}

ExperimentReport summarize(std::vector<EvalReport> runs) {
  ExperimentReport r;
  r.runs = std::move(runs);
  if (r.runs.empty()) return r;
  const double n = static_cast<double>(r.runs.size());
  double sum = 0.0, untrained = 0.0;
  bool have_untrained = true;
  for (const auto& run : r.runs) {
    sum += run.auc;
    untrained += run.untrained_auc;
    have_untrained = have_untrained && run.untrained_auc >= 0.0;
  }
  r.mean_auc = sum / n;
  if (have_untrained) r.mean_untrained_auc = untrained / n;
  if (r.runs.size() > 1) {
    double ss = 0.0;
    for (const auto& run : r.runs) ss += (run.auc - r.mean_auc) * (run.auc - r.mean_auc);
    r.std_auc = std::sqrt(ss / (n - 1.0));
  }
  return r;
}

SyntheticData experiment_data(const RunConfig& config, std::size_t repeat_index) {
  if (config.paths) {
    SyntheticData d =
        in_stage("load data", [&] {
          return SyntheticData{load_dataset(config.paths->train_normal), load_dataset(config.paths->train_anomaly),
                               load_dataset(config.paths->test)};
        });
    if (d.train_normal.split != Split::TrainNormal || d.train_anomaly.split != Split::TrainAnomaly ||
        d.test.split != Split::Test) {
      throw InvalidInput("load data: dataset files carry the wrong split tags");
    }
    return d;
  }
  SyntheticSpec spec = config.data;
  spec.seed += repeat_index;
  return in_stage("generate data", [&] { return generate(spec); });
}

RunArtifacts run_once(const RunConfig& config, std::size_t repeat_index, const std::filesystem::path& run_dir) {
  const SyntheticData data = experiment_data(config, repeat_index);
  TrainConfig tc = config.train;
  tc.seed = config.seed + repeat_index;
  if (!run_dir.empty()) {
    std::filesystem::create_directories(run_dir);
    tc.checkpoint_dir = run_dir / "checkpoints";
  }

  std::ofstream metrics;
  if (!run_dir.empty()) metrics.open(run_dir / "metrics.jsonl");
  MetricsSink sink;
  if (metrics) sink = [&](const IterationMetrics& m) { metrics << metrics_json(m) << '\n'; };

  RunArtifacts art;
  TrainResult trained = in_stage("train", [&] { return train(tc, data.train_normal.samples, data.train_anomaly.samples, sink); });
  art.model = std::move(trained.model);
  art.history = std::move(trained.history);
  art.scores = in_stage("score", [&] { return score_batch(art.model.flow, art.model.heads, data.test.samples, art.model.scoring); });
  art.report = in_stage("evaluate", [&] { return evaluate_scores(art.scores); });
  art.report.config_digest = config_digest(config);
  art.report.seed = tc.seed;

  if (config.compare_untrained) {
    const ModelBundle untrained = in_stage("untrained baseline", [&] { return initialize_model(tc, data.train_normal.samples); });
    const auto base = score_batch(untrained.flow, untrained.heads, data.test.samples, untrained.scoring);
    art.report.untrained_auc = evaluate_scores(base).auc;
  }

  if (!run_dir.empty()) {
    save_model(art.model, run_dir / "model.mpfm");
    std::ofstream scores(run_dir / "scores.csv");
    write_scores(art.scores, scores);
    write_text(run_dir / "report.json", report_json(art.report));
  }
  return art;
}

ExperimentResult run_experiment(const RunConfig& config, bool write_artifacts) {
  auto run_all = [&](const RunConfig& cfg, const std::filesystem::path& dir) {
    std::vector<EvalReport> reports;
    for (std::size_t r = 0; r < cfg.repeat; ++r) {
      const auto run_dir = write_artifacts ? dir / ("run_" + std::to_string(r)) : std::filesystem::path{};
      reports.push_back(run_once(cfg, r, run_dir).report);
    }
    ExperimentReport rep = summarize(std::move(reports));
    if (write_artifacts) write_text(dir / "summary.json", report_json(rep));
    return rep;
  };

  if (write_artifacts) {
    std::filesystem::create_directories(config.out);
    write_text(config.out / "config.json", to_json(config));
  }
  ExperimentResult result;
  result.main = run_all(config, config.out);
  for (double lambda : config.lambda_sweep) {
    RunConfig cfg = config;
    cfg.train.lambda = lambda;
    cfg.lambda_sweep.clear();
    result.sweep.emplace_back(lambda, run_all(cfg, config.out / ("lambda_" + format_double(lambda))));
  }
  return result;
}

std::string report_json(const EvalReport& r) { return eval_json(r).dump(2); }

std::string report_json(const ExperimentReport& r) { return experiment_json(r).dump(2); }

}  // namespace mpfm
