// SPDX-License-Identifier: Apache-2.0
#include "mpfm/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>

#include "mpfm/error.hpp"
#include "mpfm/rng.hpp"

namespace mpfm {
namespace {

constexpr const char* kDatasetMagic = "# mpfm-dataset";
constexpr int kDatasetVersion = 1;

double distance(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) acc += (a[j] - b[j]) * (a[j] - b[j]);
  return std::sqrt(acc);
}

std::vector<double> unit(std::vector<double> v, const char* what) {
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  if (!(n > 0.0) || !std::isfinite(n)) throw InvalidInput(std::string(what) + ": direction must be nonzero");
  for (double& x : v) x /= n;
  return v;
}

Tensor mode_patches(std::span<const double> center, std::size_t patches, double spread, Rng& rng) {
  Tensor out = Tensor::matrix(patches, center.size());
  for (std::size_t p = 0; p < patches; ++p)
    for (std::size_t c = 0; c < center.size(); ++c) out(p, c) = center[c] + spread * rng.normal();
  return out;
}

void apply_defects(Tensor& patches, const DefectGenerator& gen, Rng& rng) {
  const auto dir = unit(gen.direction, "defect generator");
  const std::size_t p = patches.rows();
  std::vector<std::size_t> order(p);
  for (std::size_t i = 0; i < p; ++i) order[i] = i;
  // Partial Fisher-Yates: the first defect_patches entries are the defect sites.
  for (std::size_t i = 0; i < gen.defect_patches; ++i) std::swap(order[i], order[i + rng.below(p - i)]);
  for (std::size_t k = 0; k < gen.defect_patches; ++k) {
    const double m = gen.balanced && k % 2 == 1 ? -gen.magnitude : gen.magnitude;
    for (std::size_t c = 0; c < patches.cols(); ++c) patches(order[k], c) += m * dir[c];
  }
}

void check_defects(const DefectGenerator& gen, const SyntheticSpec& spec, const char* what) {
  if (gen.direction.size() != spec.channels) {
    throw InvalidInput(std::string(what) + ": direction needs one entry per channel");
  }
  unit(gen.direction, what);
  if (gen.defect_patches == 0 || gen.defect_patches > spec.patches) {
    throw InvalidInput(std::string(what) + ": need 1 <= defect_patches <= patches");
  }
  if (!(gen.magnitude > 0.0) || !std::isfinite(gen.magnitude)) {
    throw InvalidInput(std::string(what) + ": magnitude must be positive");
  }
}

std::vector<double> axis(std::size_t channels, std::initializer_list<std::size_t> on) {
  std::vector<double> v(channels, 0.0);
  for (std::size_t i : on) v.at(i) = 1.0;
  return v;
}

[[noreturn]] void parse_fail(std::size_t line, const std::string& source, const std::string& what) {
  throw ParseError(line, source + ": " + what);
}

template <class T>
T parse_number(std::string_view field, std::size_t line, const std::string& source, const char* name) {
  T value{};
  const char* end = field.data() + field.size();
  const auto [ptr, ec] = std::from_chars(field.data(), end, value);
  if (ec != std::errc() || ptr != end || field.empty()) {
    parse_fail(line, source, std::string("invalid ") + name + " '" + std::string(field) + "'");
  }
  return value;
}

std::vector<std::string_view> split_fields(std::string_view row) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = row.find(',', start);
    out.push_back(row.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace

std::string to_string(Split s) {
  switch (s) {
    case Split::TrainNormal: return "train-normal";
    case Split::TrainAnomaly: return "train-anomaly";
    case Split::Test: return "test";
  }
  return "test";
}

Split split_from_string(const std::string& name) {
  if (name == "train-normal") return Split::TrainNormal;
  if (name == "train-anomaly") return Split::TrainAnomaly;
  if (name == "test") return Split::Test;
  throw InvalidInput("unknown split '" + name + "'");
}

void Dataset::validate() const {
  std::set<std::int64_t> ids;
  std::size_t patches = 0;
  for (const auto& s : samples) {
    if (s.channels() != channels) throw InvalidInput("sample " + std::to_string(s.id) + " has the wrong channel count");
    if (patches == 0) patches = s.patch_count();
    if (s.patch_count() != patches) throw InvalidInput("samples must share the patch count");
    if (!ids.insert(s.id).second) throw InvalidInput("duplicate sample id " + std::to_string(s.id));
    if (split == Split::TrainNormal && s.label != 0) throw InvalidInput("train-normal split holds an anomaly");
    if (split == Split::TrainAnomaly && s.label != 1) throw InvalidInput("train-anomaly split holds a normal sample");
  }
}

bool operator==(const Dataset& a, const Dataset& b) {
  if (a.split != b.split || a.channels != b.channels || a.samples.size() != b.samples.size()) return false;
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    const auto& x = a.samples[i];
    const auto& y = b.samples[i];
    if (x.id != y.id || x.label != y.label || !(x.patches == y.patches) || x.pooled != y.pooled) return false;
  }
  return true;
}

SyntheticSpec SyntheticSpec::benchmark() {
  SyntheticSpec s;
  s.seen.direction = axis(s.channels, {4});
  s.seen.magnitude = 8.0;
  s.seen.defect_patches = 2;
  s.seen.balanced = true;
  s.unseen.defects.direction = axis(s.channels, {4, 5});
  s.unseen.defects.magnitude = 12.0;
  s.unseen.defects.defect_patches = 2;
  s.unseen.defects.balanced = true;
  return s;
}

std::vector<std::vector<double>> SyntheticSpec::mode_centers() const {
  if (!centers.empty()) return centers;
  if (modes > channels) throw InvalidInput("synthetic spec: default simplex needs modes <= channels");
  // Scaled basis vectors e_i * D / sqrt(2) are pairwise D apart.
  std::vector<std::vector<double>> out(modes, std::vector<double>(channels, 0.0));
  for (std::size_t k = 0; k < modes; ++k) out[k][k] = mode_distance / std::sqrt(2.0);
  if (modes == 1) out[0][0] = 0.0;
  return out;
}

void SyntheticSpec::validate() const {
  if (channels == 0 || patches == 0 || modes == 0) throw InvalidInput("synthetic spec: sizes must be positive");
  if (!(mode_spread >= 0.0) || !std::isfinite(mode_spread)) throw InvalidInput("synthetic spec: bad spread");
  const auto c = mode_centers();
  if (c.size() != modes) throw InvalidInput("synthetic spec: need one center per mode");
  for (const auto& v : c) {
    if (v.size() != channels) throw InvalidInput("synthetic spec: center has the wrong dimension");
  }
  for (std::size_t i = 0; i < modes; ++i)
    for (std::size_t j = i + 1; j < modes; ++j) {
      if (distance(c[i], c[j]) < 6.0 * mode_spread) {
        throw InvalidInput("synthetic spec: modes must be at least 6 spreads apart");
      }
    }
  if (train_anomaly > 0) check_defects(seen, *this, "seen generator");
  if (!(unseen.held_out_fraction >= 0.0 && unseen.held_out_fraction <= 1.0)) {
    throw InvalidInput("synthetic spec: held-out fraction must lie in [0, 1]");
  }
  if (unseen.held_out_fraction < 1.0 && test_anomaly > 0) {
    check_defects(unseen.defects, *this, "unseen generator");
    if (train_anomaly > 0 && unit(unseen.defects.direction, "") == unit(seen.direction, "") &&
        unseen.defects.magnitude == seen.magnitude && unseen.defects.defect_patches == seen.defect_patches &&
        unseen.defects.balanced == seen.balanced) {
      throw InvalidInput("synthetic spec: unseen generator must differ from the seen one");
    }
  }
  if (unseen.held_out_fraction > 0.0 && test_anomaly > 0) {
    std::vector<double> h = unseen.held_out_center;
    if (h.empty()) {
      h.assign(channels, 0.0);
      for (const auto& v : c)
        for (std::size_t j = 0; j < channels; ++j) h[j] += v[j] / static_cast<double>(modes);
    }
    if (h.size() != channels) throw InvalidInput("synthetic spec: held-out center has the wrong dimension");
    for (const auto& v : c) {
      if (distance(v, h) < 6.0 * mode_spread) {
        throw InvalidInput("synthetic spec: held-out mode must be at least 6 spreads from every normal mode");
      }
    }
  }
}

SyntheticData generate(const SyntheticSpec& spec) {
  spec.validate();
  const auto centers = spec.mode_centers();
  std::vector<double> held = spec.unseen.held_out_center;
  if (held.empty()) {
    held.assign(spec.channels, 0.0);
    for (const auto& v : centers)
      for (std::size_t j = 0; j < spec.channels; ++j) held[j] += v[j] / static_cast<double>(spec.modes);
  }

  const Rng root(spec.seed, 0x5eed'da7aULL);
  std::int64_t next_id = 0;
  auto normal_sample = [&](Rng& rng) {
    const std::size_t k = rng.below(spec.modes);
    return mode_patches(centers[k], spec.patches, spec.mode_spread, rng);
  };
  auto make = [&](Split split) {
    Dataset d;
    d.split = split;
    d.channels = spec.channels;
    d.provenance = "synthetic seed=" + std::to_string(spec.seed);
    return d;
  };

  SyntheticData out{make(Split::TrainNormal), make(Split::TrainAnomaly), make(Split::Test)};
  for (std::size_t i = 0; i < spec.train_normal; ++i) {
    Rng rng = root.split(static_cast<std::uint64_t>(next_id));
    out.train_normal.samples.push_back(FeatureSample::make(next_id++, normal_sample(rng), 0));
  }
  for (std::size_t i = 0; i < spec.train_anomaly; ++i) {
    Rng rng = root.split(static_cast<std::uint64_t>(next_id));
    Tensor patches = normal_sample(rng);
    apply_defects(patches, spec.seen, rng);
    out.train_anomaly.samples.push_back(FeatureSample::make(next_id++, std::move(patches), 1));
  }
  for (std::size_t i = 0; i < spec.test_normal; ++i) {
    Rng rng = root.split(static_cast<std::uint64_t>(next_id));
    out.test.samples.push_back(FeatureSample::make(next_id++, normal_sample(rng), 0));
  }
  const auto held_out_count = static_cast<std::size_t>(
      std::llround(spec.unseen.held_out_fraction * static_cast<double>(spec.test_anomaly)));
  for (std::size_t i = 0; i < spec.test_anomaly; ++i) {
    Rng rng = root.split(static_cast<std::uint64_t>(next_id));
    Tensor patches;
    if (i < held_out_count) {
      patches = mode_patches(held, spec.patches, spec.mode_spread, rng);
    } else {
      patches = normal_sample(rng);
      apply_defects(patches, spec.unseen.defects, rng);
    }
    out.test.samples.push_back(FeatureSample::make(next_id++, std::move(patches), 1));
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

void write_dataset(const Dataset& data, std::ostream& out) {
  data.validate();
  out << kDatasetMagic << " v" << kDatasetVersion << " split=" << to_string(data.split) << '\n';
  out << "sample_id,patch_id,label";
  for (std::size_t c = 0; c < data.channels; ++c) out << ",f" << c;
  out << '\n';
  std::vector<const FeatureSample*> sorted;
  for (const auto& s : data.samples) sorted.push_back(&s);
  std::stable_sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->id < b->id; });
  for (const FeatureSample* s : sorted) {
    for (std::size_t p = 0; p < s->patch_count(); ++p) {
      out << s->id << ',' << p << ',' << s->label;
      for (std::size_t c = 0; c < data.channels; ++c) out << ',' << format_double(s->patches(p, c));
      out << '\n';
    }
  }
}

Dataset read_dataset(std::istream& in, const std::string& source) {
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(in, line)) parse_fail(lineno, source, "missing version line");
  Dataset data;
  {
    std::istringstream head(line);
    std::string hash, tag, version, split;
    head >> hash >> tag >> version >> split;
    if (hash + " " + tag != kDatasetMagic) parse_fail(lineno, source, "not an mpfm dataset file");
    if (version != "v" + std::to_string(kDatasetVersion)) {
      throw FormatVersionError(source + ": unsupported dataset format version '" + version + "'");
    }
    if (split.rfind("split=", 0) != 0) parse_fail(lineno, source, "version line lacks split=");
    try {
      data.split = split_from_string(split.substr(6));
    } catch (const InvalidInput& e) {
      parse_fail(lineno, source, e.what());
    }
  }

  ++lineno;
  if (!std::getline(in, line)) parse_fail(lineno, source, "missing header");
  {
    const auto cols = split_fields(line);
    if (cols.size() < 3 || cols[0] != "sample_id" || cols[1] != "patch_id" || cols[2] != "label") {
      parse_fail(lineno, source, "header must start with sample_id,patch_id,label");
    }
    for (std::size_t c = 3; c < cols.size(); ++c) {
      if (cols[c] != "f" + std::to_string(c - 3)) parse_fail(lineno, source, "unexpected column '" + std::string(cols[c]) + "'");
    }
    data.channels = cols.size() - 3;
  }

  struct Pending {
    std::int64_t id = 0;
    int label = 0;
    std::vector<double> values;
    std::size_t patches = 0;
    std::size_t first_line = 0;
  };
  std::optional<Pending> cur;
  std::size_t patch_count = 0;
  auto flush = [&]() {
    if (!cur) return;
    if (patch_count != 0 && cur->patches != patch_count) {
      parse_fail(cur->first_line, source, "sample " + std::to_string(cur->id) + " has a different patch count");
    }
    patch_count = cur->patches;
    Tensor patches({cur->patches, data.channels}, std::move(cur->values));
    data.samples.push_back(FeatureSample::make(cur->id, std::move(patches), cur->label));
    cur.reset();
  };

  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_fields(line);
    if (fields.size() != data.channels + 3) {
      parse_fail(lineno, source, "expected " + std::to_string(data.channels + 3) + " fields, found " +
                                      std::to_string(fields.size()));
    }
    const auto id = parse_number<std::int64_t>(fields[0], lineno, source, "sample_id");
    const auto patch = parse_number<std::size_t>(fields[1], lineno, source, "patch_id");
    const auto label = parse_number<int>(fields[2], lineno, source, "label");
    if (label != 0 && label != 1) parse_fail(lineno, source, "label must be 0 or 1");
    if (data.split == Split::TrainNormal && label != 0) parse_fail(lineno, source, "anomaly in the train-normal split");
    if (data.split == Split::TrainAnomaly && label != 1) parse_fail(lineno, source, "normal sample in the train-anomaly split");
    if (data.channels == 0) parse_fail(lineno, source, "rows require at least one feature column");

    if (!cur || cur->id != id) {
      if (cur && id < cur->id) parse_fail(lineno, source, "rows must be sorted by sample_id");
      flush();
      if (patch != 0) parse_fail(lineno, source, "first patch of a sample must have patch_id 0");
      cur = Pending{id, label, {}, 0, lineno};
    } else {
      if (patch != cur->patches) parse_fail(lineno, source, "patch_id out of sequence");
      if (label != cur->label) parse_fail(lineno, source, "label differs within a sample");
    }
    for (std::size_t c = 0; c < data.channels; ++c) {
      const double v = parse_number<double>(fields[3 + c], lineno, source, "feature value");
      if (!std::isfinite(v)) parse_fail(lineno, source, "non-finite feature value");
      cur->values.push_back(v);
    }
    ++cur->patches;
  }
  flush();
  data.provenance = source;
  return data;
}

void save_dataset(const Dataset& data, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInput("cannot open " + path.string() + " for writing");
  write_dataset(data, out);
  if (!out) throw InvalidInput("failed writing " + path.string());
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open " + path.string());
  return read_dataset(in, path.string());
}

}  // namespace mpfm
