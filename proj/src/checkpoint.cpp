#include "psic/checkpoint.hpp"

#include <cstring>

#include "psic/errors.hpp"
#include "psic/io_util.hpp"

namespace psic {

namespace {

constexpr char kMagic[4] = {'P', 'S', 'C', 'K'};

void put_tensors(ByteWriter& w, const std::vector<NamedTensor>& ts) {
  w.u32(static_cast<std::uint32_t>(ts.size()));
  for (const auto& t : ts) {
    w.str(t.name);
    w.u32(static_cast<std::uint32_t>(t.value.rank()));
    for (auto d : t.value.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (float v : t.value.data()) w.f32(v);
  }
}

std::vector<NamedTensor> get_tensors(ByteReader& r) {
  const std::uint32_t count = r.u32();
  std::vector<NamedTensor> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = r.str();
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw LoadError(LoadErrorKind::kMalformed, "checkpoint tensor '" + t.name + "' has rank " + std::to_string(rank), r.position());
    Shape shape(rank);
    for (auto& d : shape) d = r.u32();
    const std::size_t n = shape_numel(shape);
    if (n * 4 > r.remaining()) {
      throw LoadError(LoadErrorKind::kTruncated, "checkpoint tensor '" + t.name + "' runs past the end", r.position());
    }
    std::vector<float> data(n);
    for (auto& v : data) v = r.f32();
    t.value = Tensor<float>(std::move(shape), std::move(data));
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const CheckpointData& c) {
  ByteWriter w;
  w.bytes(kMagic, 4);
  w.u32(kCheckpointVersion);
  w.str(c.config_text);
  put_tensors(w, c.params);
  put_tensors(w, c.optimizer);
  for (auto word : c.rng.words) w.u64(word);
  w.u32(c.rng.has_spare ? 1 : 0);
  w.f64(c.rng.spare);
  w.u64(c.step);
  w.u64(c.epoch);
  w.f64(c.best_val);
  const std::uint32_t crc = crc32_of(w.view());
  w.u32(crc);
  auto v = w.view();
  return {v.begin(), v.end()};
}

CheckpointData decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw LoadError(LoadErrorKind::kBadMagic, "not a checkpoint file (bad magic)", 0);
  }
  if (bytes.size() < 12) throw LoadError(LoadErrorKind::kTruncated, "checkpoint truncated", bytes.size());
  ByteReader head(bytes);
  head.skip(4);
  const std::uint32_t version = head.u32();
  if (version != kCheckpointVersion) {
    throw LoadError(LoadErrorKind::kBadVersion, "unsupported checkpoint version " + std::to_string(version), 4);
  }
  const auto body = bytes.first(bytes.size() - 4);
  ByteReader tail(bytes.subspan(bytes.size() - 4));
  // Checked before parsing so corruption is reported as such rather than as
  // whatever structural error it happens to cause.
  if (tail.u32() != crc32_of(body)) {
    throw LoadError(LoadErrorKind::kCrcMismatch, "checkpoint CRC mismatch (corrupt or truncated file)",
                    bytes.size() - 4);
  }
  CheckpointData c;
  ByteReader r(body);
  r.skip(8);
  c.config_text = r.str();
  c.params = get_tensors(r);
  c.optimizer = get_tensors(r);
  for (auto& word : c.rng.words) word = r.u64();
  c.rng.has_spare = r.u32() != 0;
  c.rng.spare = r.f64();
  c.step = r.u64();
  c.epoch = r.u64();
  c.best_val = r.f64();
  if (r.remaining() != 0) {
    throw LoadError(LoadErrorKind::kMalformed, "checkpoint has trailing bytes", r.position());
  }
  return c;
}

void write_checkpoint(const std::filesystem::path& path, const CheckpointData& c) {
  write_file(path, encode_checkpoint(c));
}

CheckpointData read_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path));
}

}  // namespace psic
