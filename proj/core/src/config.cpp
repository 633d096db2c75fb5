// SPDX-License-Identifier: Apache-2.0
#include "mpfm/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace mpfm {
namespace {

using nlohmann::json;

/// Reads keys out of one JSON object and rejects whatever is left over.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be an object");
  }

  bool has(const char* key) const { return j_.contains(key); }

  void get(const char* key, std::size_t& out) { read(key, out, [&](const json& v) { return as_count(v, key); }); }
  void get(const char* key, std::uint64_t& out, int) {
    read(key, out, [&](const json& v) { return static_cast<std::uint64_t>(as_count(v, key)); });
  }
  void get(const char* key, double& out) {
    read(key, out, [&](const json& v) {
      if (!v.is_number()) fail(key, "must be a number");
      return v.get<double>();
    });
  }
  void get(const char* key, bool& out) {
    read(key, out, [&](const json& v) {
      if (!v.is_boolean()) fail(key, "must be true or false");
      return v.get<bool>();
    });
  }
  void get(const char* key, std::string& out) {
    read(key, out, [&](const json& v) {
      if (!v.is_string()) fail(key, "must be a string");
      return v.get<std::string>();
    });
  }
  void get(const char* key, std::vector<double>& out) {
    read(key, out, [&](const json& v) { return as_doubles(v, key); });
  }
  void get(const char* key, std::vector<std::size_t>& out) {
    read(key, out, [&](const json& v) {
      if (!v.is_array()) fail(key, "must be an array");
      std::vector<std::size_t> r;
      for (const auto& e : v) r.push_back(as_count(e, key));
      return r;
    });
  }
  void get(const char* key, std::vector<std::vector<double>>& out) {
    read(key, out, [&](const json& v) {
      if (!v.is_array()) fail(key, "must be an array of arrays");
      std::vector<std::vector<double>> r;
      for (const auto& e : v) r.push_back(as_doubles(e, key));
      return r;
    });
  }
  template <class Enum, class Parse>
  void get_enum(const char* key, Enum& out, Parse parse) {
    if (!has(key)) return;
    std::string name;
    get(key, name);
    try {
      out = parse(name);
    } catch (const InvalidInput& e) {
      fail(key, e.what());
    }
  }

  Section child(const char* key) {
    used_.insert(key);
    return Section(j_.at(key), path_ + "." + key);
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!used_.count(k)) throw ConfigError("unknown key '" + path_ + "." + k + "'");
    }
  }

  [[noreturn]] void fail(const char* key, const std::string& what) const {
    throw ConfigError("'" + path_ + "." + key + "' " + what);
  }

 private:
  std::string where() const { return "'" + path_ + "'"; }

  template <class T, class F>
  void read(const char* key, T& out, F convert) {
    if (!has(key)) return;
    used_.insert(key);
    out = convert(j_.at(key));
  }

  std::size_t as_count(const json& v, const char* key) const {
    if (!v.is_number_integer() || v.get<std::int64_t>() < 0) fail(key, "must be a non-negative integer");
    return v.get<std::size_t>();
  }

  std::vector<double> as_doubles(const json& v, const char* key) const {
    if (!v.is_array()) fail(key, "must be an array of numbers");
    std::vector<double> r;
    for (const auto& e : v) {
      if (!e.is_number()) fail(key, "must be an array of numbers");
      r.push_back(e.get<double>());
    }
    return r;
  }

  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

void read_defects(Section s, DefectGenerator& d) {
  s.get("direction", d.direction);
  s.get("magnitude", d.magnitude);
  s.get("defect_patches", d.defect_patches);
  s.get("balanced", d.balanced);
  s.finish();
}

json defects_json(const DefectGenerator& d) {
  return {{"direction", d.direction}, {"magnitude", d.magnitude}, {"defect_patches", d.defect_patches},
          {"balanced", d.balanced}};
}

void read_train(Section s, TrainConfig& t) {
  s.get("components", t.components);
  s.get("lambda", t.lambda);
  s.get("top_fraction", t.top_fraction);
  s.get("learning_rate", t.learning_rate);
  s.get("weight_decay", t.weight_decay);
  s.get("epochs", t.epochs);
  s.get("iterations", t.iterations);
  s.get("normal_batch", t.normal_batch);
  s.get("anomaly_batch", t.anomaly_batch);
  s.get("psi_steps", t.psi_steps);
  s.get("one_step_psi", t.one_step_psi);
  s.get("repulsion_clip", t.repulsion_clip);
  s.get("t_min", t.t_min);
  s.get("per_sample_t", t.per_sample_t);
  s.get_enum("endpoint", t.endpoint, endpoint_source_from_string);
  s.get("flow_hidden", t.flow_hidden);
  s.get("local_head_hidden", t.local_head_hidden);
  s.get("head_hidden", t.head_hidden);
  s.get_enum("activation", t.activation, activation_from_string);
  s.get_enum("head_activation", t.head_activation, activation_from_string);
  s.get("mimr_literal_sign", t.mimr.literal_sign);
  s.get("mimr_batch_marginal", t.mimr.batch_marginal);
  s.get_enum("binary_loss", t.binary_loss, binary_loss_from_string);
  s.get_enum("normal_target", t.normal_target, normal_target_from_string);
  s.get_enum("pooling", t.pooling, pooling_from_string);
  s.get("precision", t.precision);
  s.get("kmeans_restarts", t.kmeans_restarts);
  s.get("checkpoint_every", t.checkpoint_every);
  s.finish();
}

void read_data(Section s, SyntheticSpec& d) {
  s.get("channels", d.channels);
  s.get("patches", d.patches);
  s.get("modes", d.modes);
  s.get("mode_distance", d.mode_distance);
  s.get("mode_spread", d.mode_spread);
  s.get("centers", d.centers);
  if (s.has("seen")) read_defects(s.child("seen"), d.seen);
  if (s.has("unseen")) {
    Section u = s.child("unseen");
    u.get("held_out_fraction", d.unseen.held_out_fraction);
    u.get("held_out_center", d.unseen.held_out_center);
    if (u.has("defects")) read_defects(u.child("defects"), d.unseen.defects);
    u.finish();
  }
  s.get("train_normal", d.train_normal);
  s.get("train_anomaly", d.train_anomaly);
  s.get("test_normal", d.test_normal);
  s.get("test_anomaly", d.test_anomaly);
  s.get("seed", d.seed, 0);
  s.finish();
}

}  // namespace

RunConfig parse_run_config(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  RunConfig cfg;
  Section root(doc, "config");
  if (root.has("train")) read_train(root.child("train"), cfg.train);
  if (root.has("data")) read_data(root.child("data"), cfg.data);
  if (root.has("paths")) {
    Section p = root.child("paths");
    DataPaths dp;
    std::string a, b, c;
    p.get("train_normal", a);
    p.get("train_anomaly", b);
    p.get("test", c);
    p.finish();
    if (a.empty() || b.empty() || c.empty()) throw ConfigError("'config.paths' needs train_normal, train_anomaly and test");
    cfg.paths = DataPaths{a, b, c};
  }
  root.get("seed", cfg.seed, 0);
  root.get("repeat", cfg.repeat);
  std::string out = cfg.out.string();
  root.get("out", out);
  cfg.out = out;
  root.get("lambda_sweep", cfg.lambda_sweep);
  root.get("compare_untrained", cfg.compare_untrained);
  root.get("sample_steps", cfg.sample_steps);
  root.get("sample_count", cfg.sample_count);
  root.finish();

  cfg.train.seed = cfg.seed;
  if (cfg.repeat == 0) throw ConfigError("'config.repeat' must be positive");
  if (cfg.sample_steps == 0) throw ConfigError("'config.sample_steps' must be positive");
  for (double l : cfg.lambda_sweep) {
    if (!(l >= 0.0)) throw ConfigError("'config.lambda_sweep' entries must be >= 0");
  }
  try {
    cfg.train.validate();
    if (!cfg.paths) cfg.data.validate();
  } catch (const InvalidInput& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string to_json(const RunConfig& c) {
  const TrainConfig& t = c.train;
  json train = {{"components", t.components},
                {"lambda", t.lambda},
                {"top_fraction", t.top_fraction},
                {"learning_rate", t.learning_rate},
                {"weight_decay", t.weight_decay},
                {"epochs", t.epochs},
                {"iterations", t.iterations},
                {"normal_batch", t.normal_batch},
                {"anomaly_batch", t.anomaly_batch},
                {"psi_steps", t.psi_steps},
                {"one_step_psi", t.one_step_psi},
                {"repulsion_clip", t.repulsion_clip},
                {"t_min", t.t_min},
                {"per_sample_t", t.per_sample_t},
                {"endpoint", to_string(t.endpoint)},
                {"flow_hidden", t.flow_hidden},
                {"local_head_hidden", t.local_head_hidden},
                {"head_hidden", t.head_hidden},
                {"activation", to_string(t.activation)},
                {"head_activation", to_string(t.head_activation)},
                {"mimr_literal_sign", t.mimr.literal_sign},
                {"mimr_batch_marginal", t.mimr.batch_marginal},
                {"binary_loss", to_string(t.binary_loss)},
                {"normal_target", to_string(t.normal_target)},
                {"pooling", to_string(t.pooling)},
                {"precision", t.precision},
                {"kmeans_restarts", t.kmeans_restarts},
                {"checkpoint_every", t.checkpoint_every}};
  const SyntheticSpec& d = c.data;
  json data = {{"channels", d.channels},
               {"patches", d.patches},
               {"modes", d.modes},
               {"mode_distance", d.mode_distance},
               {"mode_spread", d.mode_spread},
               {"centers", d.centers},
               {"seen", defects_json(d.seen)},
               {"unseen",
                {{"held_out_fraction", d.unseen.held_out_fraction},
                 {"held_out_center", d.unseen.held_out_center},
                 {"defects", defects_json(d.unseen.defects)}}},
               {"train_normal", d.train_normal},
               {"train_anomaly", d.train_anomaly},
               {"test_normal", d.test_normal},
               {"test_anomaly", d.test_anomaly},
               {"seed", d.seed}};
  json doc = {{"train", train},
              {"data", data},
              {"seed", c.seed},
              {"repeat", c.repeat},
              {"out", c.out.string()},
              {"lambda_sweep", c.lambda_sweep},
              {"compare_untrained", c.compare_untrained},
              {"sample_steps", c.sample_steps},
              {"sample_count", c.sample_count}};
  if (c.paths) {
    doc["paths"] = {{"train_normal", c.paths->train_normal.string()},
                    {"train_anomaly", c.paths->train_anomaly.string()},
                    {"test", c.paths->test.string()}};
  }
  return doc.dump(2);
}

std::string config_digest(const RunConfig& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : to_json(config)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void apply_mode(RunConfig& config, const std::string& mode) {
  if (mode == "literal-mimr") {
    config.train.mimr.literal_sign = true;
  } else if (mode == "batch-marginal") {
    config.train.mimr.batch_marginal = true;
  } else if (mode == "per-sample-t") {
    config.train.per_sample_t = true;
  } else if (mode == "one-step-psi") {
    config.train.one_step_psi = true;
  } else if (mode.rfind("endpoint=", 0) == 0) {
    try {
      config.train.endpoint = endpoint_source_from_string(mode.substr(9));
    } catch (const InvalidInput& e) {
      throw ConfigError(std::string("--mode: ") + e.what());
    }
  } else {
    throw ConfigError("unknown --mode '" + mode + "'");
  }
}

std::string metrics_json(const IterationMetrics& m) {
  const LossReport& r = m.losses;
  json j = {{"step", m.step},
            {"epoch", m.epoch},
            {"loss_local", r.local},
            {"loss_normal", r.normal},
            {"loss_residual", r.residual},
            {"loss_global", r.global},
            {"loss_flow_normal", r.flow_normal},
            {"loss_flow_anomaly", r.flow_anomaly},
            {"loss_mimr", r.mimr},
            {"loss_total", r.total},
            {"conditional_entropy", r.mimr_report.conditional_entropy},
            {"marginal_entropy", r.mimr_report.marginal_entropy},
            {"mi_estimate", r.mimr_report.mi_estimate},
            {"usage", r.usage}};
  return j.dump();
}

}  // namespace mpfm
