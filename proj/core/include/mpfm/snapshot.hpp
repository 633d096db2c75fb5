// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mpfm/mlp.hpp"
#include "mpfm/tensor.hpp"

namespace mpfm {

/// Little-endian byte encoder used for every binary artifact.
class ByteWriter {
 public:
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f64(double v);
  void f64s(std::span<const double> values);
  void str(const std::string& s);
  void tensor(const Tensor& t);
  void raw(std::span<const std::uint8_t> bytes);

  const std::vector<std::uint8_t>& bytes() const noexcept { return buf_; }
  std::vector<std::uint8_t> take() { return std::move(buf_); }

 private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes, std::string context = "snapshot")
      : bytes_(bytes), context_(std::move(context)) {}

  std::uint32_t u32();
  std::uint64_t u64();
  double f64();
  std::vector<double> f64s(std::size_t count);
  std::string str();
  Tensor tensor();

  bool done() const noexcept { return pos_ == bytes_.size(); }
  void expect_done() const;

 private:
  void need(std::size_t n) const;

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
  std::string context_;
};

/// Tagged-section container: magic "MPFMSNAP", format version, then
/// (4-byte tag, u64 length, payload) records.
struct Snapshot {
  static constexpr std::uint32_t kFormatVersion = 1;

  struct Section {
    std::string tag;  // exactly 4 characters
    std::vector<std::uint8_t> payload;
  };

  std::uint32_t version = kFormatVersion;
  std::vector<Section> sections;

  void add(std::string tag, std::vector<std::uint8_t> payload);
  /// Throws FormatVersionError naming the tag when absent.
  const Section& get(const std::string& tag) const;
  bool has(const std::string& tag) const;

  std::vector<std::uint8_t> encode() const;
  static Snapshot decode(std::span<const std::uint8_t> bytes);

  void save(const std::filesystem::path& path) const;
  static Snapshot load(const std::filesystem::path& path);
};

std::vector<std::uint8_t> encode_mlp(const MLP& net);
MLP decode_mlp(std::span<const std::uint8_t> payload);

}  // namespace mpfm
