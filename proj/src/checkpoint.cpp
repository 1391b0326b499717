#include "permflow/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <stdexcept>

namespace permflow::ckpt {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'P', 'F', 'C', 'K', 'P', 'T', '0', '1'};

void write_u64(std::ofstream& f, uint64_t v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

uint64_t read_u64(std::ifstream& f) {
  uint64_t v = 0;
  f.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

}  // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return &t;
  return nullptr;
}

void write_checkpoint(const std::string& path, const Checkpoint& c) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_checkpoint: cannot open " + path);
  f.write(kMagic, sizeof(kMagic));
  std::string meta = c.meta.dump();
  write_u64(f, meta.size());
  f.write(meta.data(), static_cast<std::streamsize>(meta.size()));
  write_u64(f, c.tensors.size());
  for (const auto& [name, t] : c.tensors) {
    write_u64(f, name.size());
    f.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u64(f, static_cast<uint64_t>(t.ndim()));
    for (int i = 0; i < t.ndim(); ++i) write_u64(f, static_cast<uint64_t>(t.dim(i)));
    f.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  if (!f) throw std::runtime_error("write_checkpoint: write failure for " + path);
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_checkpoint: cannot open " + path);
  char magic[8];
  f.read(magic, sizeof(magic));
  for (size_t i = 0; i < sizeof(magic); ++i)
    if (magic[i] != kMagic[i]) throw std::runtime_error("read_checkpoint: bad magic in " + path);
  Checkpoint c;
  uint64_t meta_len = read_u64(f);
  std::string meta(meta_len, '\0');
  f.read(meta.data(), static_cast<std::streamsize>(meta_len));
  c.meta = nlohmann::json::parse(meta);
  uint64_t n_tensors = read_u64(f);
  for (uint64_t i = 0; i < n_tensors; ++i) {
    uint64_t name_len = read_u64(f);
    std::string name(name_len, '\0');
    f.read(name.data(), static_cast<std::streamsize>(name_len));
    uint64_t nd = read_u64(f);
    std::vector<int64_t> shape(nd);
    for (auto& d : shape) d = static_cast<int64_t>(read_u64(f));
    Tensor t(shape);
    f.read(reinterpret_cast<char*>(t.data()),
           static_cast<std::streamsize>(t.size() * sizeof(double)));
    c.tensors.emplace_back(std::move(name), std::move(t));
  }
  if (!f) throw std::runtime_error("read_checkpoint: truncated file " + path);
  return c;
}

}  // namespace permflow::ckpt
