#include "hperl/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iterator>

#include "binio.hpp"

namespace hperl {

namespace {

constexpr char kMagic[8] = {'H', 'P', 'R', 'L', 'C', 'K', 'P', 'T'};

void put_doubles(binio::Writer& w, const std::vector<double>& v) {
  w.put<std::uint64_t>(v.size());
  w.put_bytes(v.data(), v.size() * sizeof(double));
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c) {
  binio::Writer w;
  w.put_string(c.config);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(c.tensors.size()));
  for (const auto& t : c.tensors) {
    w.put_string(t.name);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.shape.size()));
    for (int d : t.shape) w.put<std::int32_t>(d);
    put_doubles(w, t.values);
  }
  w.put<std::uint32_t>(static_cast<std::uint32_t>(c.first_moment.size()));
  for (std::size_t i = 0; i < c.first_moment.size(); ++i) {
    put_doubles(w, c.first_moment[i]);
    put_doubles(w, c.second_moment.at(i));
  }
  w.put(c.optimizer_steps);
  w.put(c.epochs_done);
  w.put(c.global_step);
  w.put(c.best_loss);
  w.put(c.best_epoch);
  w.put_string(c.loss_log);

  binio::Writer out;
  out.put_bytes(kMagic, sizeof kMagic);
  out.put<std::uint32_t>(kCheckpointVersion);
  out.put<std::uint64_t>(w.bytes.size());
  out.put_bytes(w.bytes.data(), w.bytes.size());
  out.put<std::uint32_t>(binio::crc32_of(w.bytes.data(), w.bytes.size()));
  return out.bytes;
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  auto truncated = [] { throw CheckpointError("checkpoint is truncated"); };
  binio::Reader hdr(bytes.data(), bytes.size(), truncated);
  char magic[8];
  hdr.get_bytes(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof magic) != 0) throw CheckpointError("not a checkpoint file");
  const auto version = hdr.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto len = hdr.get<std::uint64_t>();
  if (hdr.remaining() < len + sizeof(std::uint32_t)) truncated();
  const std::uint8_t* payload = bytes.data() + (bytes.size() - hdr.remaining());
  std::uint32_t stored;
  std::memcpy(&stored, payload + len, sizeof stored);
  if (binio::crc32_of(payload, len) != stored) throw CheckpointError("checkpoint checksum mismatch");

  binio::Reader r(payload, len, truncated);
  auto get_doubles = [&] {
    const auto n = r.get<std::uint64_t>();
    if (r.remaining() / sizeof(double) < n) truncated();
    std::vector<double> v(n);
    r.get_bytes(v.data(), n * sizeof(double));
    return v;
  };
  Checkpoint c;
  c.config = r.get_string();
  const auto nt = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < nt; ++i) {
    CheckpointTensor t;
    t.name = r.get_string();
    const auto rank = r.get<std::uint32_t>();
    if (rank > 8) throw CheckpointError("implausible tensor rank in checkpoint");
    for (std::uint32_t d = 0; d < rank; ++d) t.shape.push_back(r.get<std::int32_t>());
    t.values = get_doubles();
    if (t.values.size() != nn::numel(t.shape)) {
      throw CheckpointError("tensor '" + t.name + "' does not match its shape");
    }
    c.tensors.push_back(std::move(t));
  }
  const auto nm = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < nm; ++i) {
    c.first_moment.push_back(get_doubles());
    c.second_moment.push_back(get_doubles());
  }
  c.optimizer_steps = r.get<std::int64_t>();
  c.epochs_done = r.get<std::int32_t>();
  c.global_step = r.get<std::int64_t>();
  c.best_loss = r.get<double>();
  c.best_epoch = r.get<std::int32_t>();
  c.loss_log = r.get_string();
  if (r.remaining() != 0) throw CheckpointError("trailing bytes in checkpoint");
  return c;
}

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(c);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write checkpoint " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("cannot write checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  const std::vector<std::uint8_t> bytes(std::istreambuf_iterator<char>(in), {});
  return decode_checkpoint(bytes);
}

}  // namespace hperl
