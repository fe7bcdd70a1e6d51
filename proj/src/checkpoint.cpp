#include "fedweight/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>

namespace fedweight {

namespace {

constexpr std::uint8_t kMagic[4] = {'F', 'W', 'C', 'K'};

// Guards against absurd sizes in corrupted headers before allocating.
constexpr std::uint64_t kMaxElements = 1ull << 28;

template <typename U>
void put_le(std::vector<std::uint8_t>& buf, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

template <typename U>
U get_le(std::span<const std::uint8_t> b) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(b[i]) << (8 * i);
  return v;
}

}  // namespace

void ByteWriter::u32(std::uint32_t v) { put_le(buf_, v); }
void ByteWriter::i64(std::int64_t v) { put_le(buf_, static_cast<std::uint64_t>(v)); }
void ByteWriter::f64(double v) { put_le(buf_, std::bit_cast<std::uint64_t>(v)); }
void ByteWriter::bytes(std::span<const std::uint8_t> b) { buf_.insert(buf_.end(), b.begin(), b.end()); }
void ByteWriter::str(const std::string& s) {
  u32(static_cast<std::uint32_t>(s.size()));
  buf_.insert(buf_.end(), s.begin(), s.end());
}

void ByteReader::require(std::size_t n) const {
  if (remaining() < n) {
    throw CheckpointError(CheckpointError::Kind::Truncated,
                          "truncated payload: need " + std::to_string(n) + " bytes at offset " +
                              std::to_string(pos_) + ", have " + std::to_string(remaining()));
  }
}

std::uint32_t ByteReader::u32() {
  require(4);
  const auto v = get_le<std::uint32_t>(data_.subspan(pos_, 4));
  pos_ += 4;
  return v;
}

std::int64_t ByteReader::i64() {
  require(8);
  const auto v = get_le<std::uint64_t>(data_.subspan(pos_, 8));
  pos_ += 8;
  return static_cast<std::int64_t>(v);
}

double ByteReader::f64() {
  require(8);
  const auto v = get_le<std::uint64_t>(data_.subspan(pos_, 8));
  pos_ += 8;
  return std::bit_cast<double>(v);
}

std::span<const std::uint8_t> ByteReader::bytes(std::size_t n) {
  require(n);
  auto out = data_.subspan(pos_, n);
  pos_ += n;
  return out;
}

std::string ByteReader::str() {
  const std::uint32_t n = u32();
  const auto b = bytes(n);
  return {b.begin(), b.end()};
}

void write_params(ByteWriter& w, const ModelParams& params) {
  w.u32(static_cast<std::uint32_t>(params.layers.size()));
  for (const Layer& layer : params.layers) {
    w.str(layer.name);
    w.u32(static_cast<std::uint32_t>(layer.weight.rows));
    w.u32(static_cast<std::uint32_t>(layer.weight.cols));
    for (double v : layer.weight.data) w.f64(v);
    w.u32(static_cast<std::uint32_t>(layer.bias.size()));
    for (double v : layer.bias) w.f64(v);
  }
}

ModelParams read_params(ByteReader& r) {
  ModelParams out;
  const std::uint32_t n_layers = r.u32();
  for (std::uint32_t l = 0; l < n_layers; ++l) {
    Layer layer;
    layer.name = r.str();
    const std::uint32_t rows = r.u32();
    const std::uint32_t cols = r.u32();
    if (static_cast<std::uint64_t>(rows) * cols > kMaxElements) {
      throw CheckpointError(CheckpointError::Kind::Malformed,
                            "layer '" + layer.name + "' declares an implausible shape");
    }
    r.require(static_cast<std::size_t>(rows) * cols * 8);
    layer.weight = Matrix(static_cast<int>(rows), static_cast<int>(cols));
    for (double& v : layer.weight.data) v = r.f64();
    const std::uint32_t bias_len = r.u32();
    if (bias_len > kMaxElements) {
      throw CheckpointError(CheckpointError::Kind::Malformed,
                            "layer '" + layer.name + "' declares an implausible bias length");
    }
    r.require(static_cast<std::size_t>(bias_len) * 8);
    layer.bias.resize(bias_len);
    for (double& v : layer.bias) v = r.f64();
    out.layers.push_back(std::move(layer));
  }
  return out;
}

std::vector<std::uint8_t> serialize_checkpoint(const ModelParams& params) {
  ByteWriter w;
  w.bytes(kMagic);
  w.u32(kCheckpointVersion);
  write_params(w, params);
  return w.take();
}

ModelParams deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  const std::size_t head = std::min<std::size_t>(bytes.size(), 4);
  if (head > 0 && std::memcmp(bytes.data(), kMagic, head) != 0) {
    throw CheckpointError(CheckpointError::Kind::BadMagic, "bad magic: not a checkpoint");
  }
  r.bytes(4);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointError(CheckpointError::Kind::VersionMismatch,
                          "unsupported checkpoint version " + std::to_string(version));
  }
  ModelParams params = read_params(r);
  if (r.remaining() != 0) {
    throw CheckpointError(CheckpointError::Kind::Malformed,
                          std::to_string(r.remaining()) + " trailing bytes after checkpoint");
  }
  return params;
}

}  // namespace fedweight
