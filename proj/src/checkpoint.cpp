#include "m2t2/checkpoint.hpp"

#include <fstream>
#include <stdexcept>

#include "m2t2/io.hpp"

namespace m2t2 {

namespace {
constexpr char kMagic[8] = {'M', '2', 'T', '2', 'C', 'K', 'P', 'T'};
}

std::vector<unsigned char> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in),
                                    std::istreambuf_iterator<char>());
}

void save_checkpoint(const std::string& path, const TensorDict& tensors) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  write_bytes(out, kMagic, sizeof(kMagic));
  write_le<std::uint32_t>(out, kCheckpointVersion);
  for (const auto& [name, t] : tensors) {
    if (name.empty() || name.size() > 0xFFFF)
      throw std::invalid_argument("checkpoint: bad tensor name");
    if (t.dims.empty() || t.dims.size() > 0xFF)
      throw std::invalid_argument("checkpoint: bad rank for " + name);
    std::size_t count = 1;
    for (std::uint32_t d : t.dims) count *= d;
    if (count != t.data.size())
      throw std::invalid_argument("checkpoint: dims/payload mismatch for " + name);
    write_le<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    write_bytes(out, name.data(), name.size());
    write_le<std::uint8_t>(out, static_cast<std::uint8_t>(t.dims.size()));
    for (std::uint32_t d : t.dims) write_le<std::uint32_t>(out, d);
    for (double v : t.data) write_le<double>(out, v);
  }
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

TensorDict load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  const auto version = read_le<std::uint32_t>(in);
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint: unsupported version " +
                             std::to_string(version));
  TensorDict dict;
  while (true) {
    in.peek();
    if (in.eof()) break;
    const auto name_len = read_le<std::uint16_t>(in);
    std::string name(name_len, '\0');
    read_bytes(in, name.data(), name_len);
    const auto rank = read_le<std::uint8_t>(in);
    if (rank == 0) throw std::runtime_error("checkpoint: zero rank for " + name);
    NamedTensor t;
    std::size_t count = 1;
    for (int i = 0; i < rank; ++i) {
      t.dims.push_back(read_le<std::uint32_t>(in));
      count *= t.dims.back();
    }
    t.data.resize(count);
    for (std::size_t i = 0; i < count; ++i) t.data[i] = read_le<double>(in);
    if (!dict.emplace(std::move(name), std::move(t)).second)
      throw std::runtime_error("checkpoint: duplicate tensor name");
  }
  return dict;
}

TensorDict params_to_dict(const ModelParams& params) {
  TensorDict dict;
  for (const auto& [name, e] : params.entries)
    dict.emplace(name, NamedTensor{{static_cast<std::uint32_t>(e.rows),
                                    static_cast<std::uint32_t>(e.cols)},
                                   e.value});
  return dict;
}

void params_from_dict(ModelParams& params, const TensorDict& dict) {
  for (auto& [name, e] : params.entries) {
    auto it = dict.find(name);
    if (it == dict.end())
      throw std::runtime_error("checkpoint: missing parameter " + name);
    const NamedTensor& t = it->second;
    if (t.dims.size() != 2 || t.dims[0] != static_cast<std::uint32_t>(e.rows) ||
        t.dims[1] != static_cast<std::uint32_t>(e.cols))
      throw std::runtime_error("checkpoint: shape mismatch for " + name);
    e.value = t.data;
  }
}

}  // namespace m2t2
