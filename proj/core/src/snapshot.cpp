// SPDX-License-Identifier: Apache-2.0
#include "mpfm/snapshot.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "mpfm/error.hpp"

namespace mpfm {
namespace {

constexpr char kMagic[8] = {'M', 'P', 'F', 'M', 'S', 'N', 'A', 'P'};

}  // namespace

void ByteWriter::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::u64(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void ByteWriter::f64s(std::span<const double> values) {
  for (double v : values) f64(v);
}

void ByteWriter::str(const std::string& s) {
  u32(static_cast<std::uint32_t>(s.size()));
  buf_.insert(buf_.end(), s.begin(), s.end());
}

void ByteWriter::tensor(const Tensor& t) {
  u32(static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) u64(d);
  f64s(t.data());
}

void ByteWriter::raw(std::span<const std::uint8_t> bytes) { buf_.insert(buf_.end(), bytes.begin(), bytes.end()); }

void ByteReader::need(std::size_t n) const {
  if (bytes_.size() - pos_ < n) throw FormatVersionError(context_ + ": truncated data");
}

std::uint32_t ByteReader::u32() {
  need(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_++]) << (8 * i);
  return v;
}

std::uint64_t ByteReader::u64() {
  need(8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_++]) << (8 * i);
  return v;
}

double ByteReader::f64() { return std::bit_cast<double>(u64()); }

std::vector<double> ByteReader::f64s(std::size_t count) {
  need(count * 8);
  std::vector<double> out(count);
  for (double& v : out) v = f64();
  return out;
}

std::string ByteReader::str() {
  const std::uint32_t n = u32();
  need(n);
  std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
  pos_ += n;
  return s;
}

Tensor ByteReader::tensor() {
  const std::uint32_t rank = u32();
  if (rank == 0 || rank > 8) throw FormatVersionError(context_ + ": bad tensor rank");
  std::vector<std::size_t> shape(rank);
  std::size_t count = 1;
  for (auto& d : shape) {
    d = u64();
    if (d == 0) throw FormatVersionError(context_ + ": zero tensor dimension");
    count *= d;
  }
  return Tensor(std::move(shape), f64s(count));
}

void ByteReader::expect_done() const {
  if (!done()) throw FormatVersionError(context_ + ": trailing bytes");
}

void Snapshot::add(std::string tag, std::vector<std::uint8_t> payload) {
  if (tag.size() != 4) throw InvalidInput("snapshot section tag must have 4 characters");
  sections.push_back({std::move(tag), std::move(payload)});
}

const Snapshot::Section& Snapshot::get(const std::string& tag) const {
  for (const auto& s : sections)
    if (s.tag == tag) return s;
  throw FormatVersionError("snapshot is missing section '" + tag + "'");
}

bool Snapshot::has(const std::string& tag) const {
  for (const auto& s : sections)
    if (s.tag == tag) return true;
  return false;
}

std::vector<std::uint8_t> Snapshot::encode() const {
  ByteWriter w;
  w.raw({reinterpret_cast<const std::uint8_t*>(kMagic), 8});
  w.u32(version);
  w.u32(static_cast<std::uint32_t>(sections.size()));
  for (const auto& s : sections) {
    w.raw({reinterpret_cast<const std::uint8_t*>(s.tag.data()), 4});
    w.u64(s.payload.size());
    w.raw(s.payload);
  }
  return w.take();
}

Snapshot Snapshot::decode(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
    throw FormatVersionError("not an mpfm snapshot (bad magic)");
  }
  ByteReader r(bytes.subspan(8));
  Snapshot snap;
  snap.version = r.u32();
  if (snap.version != kFormatVersion) {
    throw FormatVersionError("unsupported snapshot version " + std::to_string(snap.version) + " (expected " +
                             std::to_string(kFormatVersion) + ")");
  }
  const std::uint32_t count = r.u32();
  std::size_t offset = 16;
  for (std::uint32_t i = 0; i < count; ++i) {
    if (bytes.size() < offset + 12) throw FormatVersionError("snapshot: truncated section header");
    std::string tag(reinterpret_cast<const char*>(bytes.data() + offset), 4);
    ByteReader len_reader(bytes.subspan(offset + 4, 8));
    const std::uint64_t len = len_reader.u64();
    offset += 12;
    if (bytes.size() - offset < len) throw FormatVersionError("snapshot: truncated section '" + tag + "'");
    snap.sections.push_back({tag, std::vector<std::uint8_t>(bytes.begin() + offset, bytes.begin() + offset + len)});
    offset += len;
  }
  if (offset != bytes.size()) throw FormatVersionError("snapshot: trailing bytes");
  return snap;
}

void Snapshot::save(const std::filesystem::path& path) const {
  const auto bytes = encode();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InvalidInput("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw InvalidInput("failed writing '" + path.string() + "'");
}

Snapshot Snapshot::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode(bytes);
}

std::vector<std::uint8_t> encode_mlp(const MLP& net) {
  ByteWriter w;
  w.str(to_string(net.activation()));
  const auto sizes = net.sizes();
  w.u32(static_cast<std::uint32_t>(sizes.size()));
  for (std::size_t s : sizes) w.u64(s);
  for (const auto& layer : net.layers()) {
    w.f64s(layer.weight.data());
    w.f64s(layer.bias.data());
  }
  return w.take();
}

MLP decode_mlp(std::span<const std::uint8_t> payload) {
  ByteReader r(payload, "mlp section");
  const Activation act = activation_from_string(r.str());
  const std::uint32_t n = r.u32();
  if (n < 2) throw FormatVersionError("mlp section: fewer than two layer sizes");
  std::vector<std::size_t> sizes(n);
  for (auto& s : sizes) {
    s = r.u64();
    if (s == 0) throw FormatVersionError("mlp section: zero layer size");
  }
  std::vector<DenseLayer> layers;
  for (std::uint32_t i = 0; i + 1 < n; ++i) {
    Tensor w({sizes[i], sizes[i + 1]}, r.f64s(sizes[i] * sizes[i + 1]));
    Tensor b({1, sizes[i + 1]}, r.f64s(sizes[i + 1]));
    layers.push_back({std::move(w), std::move(b)});
  }
  r.expect_done();
  return MLP(std::move(layers), act);
}

}  // namespace mpfm
