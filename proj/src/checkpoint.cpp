#include "depthformer/checkpoint.hpp"

#include <cstdio>
#include <cstring>

#include "depthformer/error.hpp"

namespace df {

namespace {

constexpr char kMagic[4] = {'D', 'F', 'C', 'P'};
constexpr uint32_t kVersion = 1;

struct File {
  std::FILE* f = nullptr;
  ~File() {
    if (f) std::fclose(f);
  }
};

template <typename T>
void write_pod(std::FILE* f, const T& v) {
  if (std::fwrite(&v, sizeof(T), 1, f) != 1) throw DataError("checkpoint write failed");
}

template <typename T>
T read_pod(std::FILE* f) {
  T v;
  if (std::fread(&v, sizeof(T), 1, f) != 1) throw DataError("checkpoint truncated");
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const CheckpointEntries& entries) {
  File file;
  file.f = std::fopen(path.c_str(), "wb");
  if (!file.f) throw DataError("cannot open checkpoint for writing: " + path);
  std::FILE* f = file.f;

  if (std::fwrite(kMagic, 1, 4, f) != 4) throw DataError("checkpoint write failed");
  write_pod(f, kVersion);
  write_pod(f, static_cast<uint64_t>(entries.size()));
  for (const auto& [name, tensor] : entries) {
    write_pod(f, static_cast<uint32_t>(name.size()));
    if (!name.empty() && std::fwrite(name.data(), 1, name.size(), f) != name.size())
      throw DataError("checkpoint write failed");
    write_pod(f, static_cast<uint32_t>(tensor.shape.size()));
    for (int64_t d : tensor.shape) write_pod(f, static_cast<uint64_t>(d));
    const size_t n = tensor.data.size();
    if (n && std::fwrite(tensor.data.data(), sizeof(float), n, f) != n)
      throw DataError("checkpoint write failed");
  }
  if (std::fflush(f) != 0) throw DataError("checkpoint flush failed");
}

CheckpointEntries load_checkpoint(const std::string& path) {
  File file;
  file.f = std::fopen(path.c_str(), "rb");
  if (!file.f) throw DataError("cannot open checkpoint: " + path);
  std::FILE* f = file.f;

  char magic[4];
  if (std::fread(magic, 1, 4, f) != 4 || std::memcmp(magic, kMagic, 4) != 0)
    throw DataError("not a checkpoint file: " + path);
  const uint32_t version = read_pod<uint32_t>(f);
  if (version != kVersion)
    throw DataError("unsupported checkpoint version " + std::to_string(version));

  const uint64_t count = read_pod<uint64_t>(f);
  CheckpointEntries entries;
  entries.reserve(count);
  for (uint64_t i = 0; i < count; ++i) {
    const uint32_t name_len = read_pod<uint32_t>(f);
    std::string name(name_len, '\0');
    if (name_len && std::fread(name.data(), 1, name_len, f) != name_len)
      throw DataError("checkpoint truncated");
    const uint32_t ndim = read_pod<uint32_t>(f);
    std::vector<int64_t> shape(ndim);
    for (uint32_t d = 0; d < ndim; ++d) shape[d] = static_cast<int64_t>(read_pod<uint64_t>(f));
    Tensor<float> t(shape);
    const size_t n = t.data.size();
    if (n && std::fread(t.data.data(), sizeof(float), n, f) != n)
      throw DataError("checkpoint truncated");
    entries.emplace_back(std::move(name), std::move(t));
  }
  return entries;
}

Tensor<float> pack_u64(uint64_t v) {
  Tensor<float> t({4});
  for (int i = 0; i < 4; ++i)
    t.data[static_cast<size_t>(i)] = static_cast<float>((v >> (16 * i)) & 0xffffu);
  return t;
}

uint64_t unpack_u64(const Tensor<float>& t) {
  if (t.numel() != 4) throw DataError("u64 metadata entry must have 4 limbs");
  uint64_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<uint64_t>(static_cast<uint16_t>(t.data[static_cast<size_t>(i)])) << (16 * i);
  return v;
}

}  // namespace df
