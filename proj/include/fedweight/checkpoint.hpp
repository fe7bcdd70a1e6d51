#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fedweight/error.hpp"
#include "fedweight/model.hpp"

namespace fedweight {

class CheckpointError : public Error {
 public:
  enum class Kind { BadMagic, VersionMismatch, Truncated, Malformed };

  CheckpointError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Layout (all integers u32 little-endian, all reals f64 little-endian):
///   "FWCK" | version | layer_count |
///   per layer: name_len | name bytes | rows | cols | rows*cols weights |
///              bias_len | bias_len biases
std::vector<std::uint8_t> serialize_checkpoint(const ModelParams& params);

/// Throws CheckpointError; never returns partially decoded parameters.
ModelParams deserialize_checkpoint(std::span<const std::uint8_t> bytes);

/// Little-endian byte writer shared by the checkpoint and message codecs.
class ByteWriter {
 public:
  void u32(std::uint32_t v);
  void i64(std::int64_t v);
  void f64(double v);
  void bytes(std::span<const std::uint8_t> b);
  void str(const std::string& s);
  std::vector<std::uint8_t> take() { return std::move(buf_); }

 private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

  std::uint32_t u32();
  std::int64_t i64();
  double f64();
  std::span<const std::uint8_t> bytes(std::size_t n);
  std::string str();
  std::size_t remaining() const { return data_.size() - pos_; }
  /// Throws CheckpointError::Truncated unless n more bytes are available.
  void require(std::size_t n) const;

 private:
  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

void write_params(ByteWriter& w, const ModelParams& params);
ModelParams read_params(ByteReader& r);

}  // namespace fedweight
