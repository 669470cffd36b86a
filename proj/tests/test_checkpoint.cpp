#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <unistd.h>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "m2t2/checkpoint.hpp"
#include "m2t2/io.hpp"
#include "m2t2/rng.hpp"

using namespace m2t2;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("m2t2_ckpt_test_" + std::to_string(Pcg32(::getpid()).next_u32()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

template <typename T>
T parse_le(const std::vector<unsigned char>& bytes, std::size_t& off) {
  T v;
  std::memcpy(&v, bytes.data() + off, sizeof(T));
  off += sizeof(T);
  return v;
}

}  // namespace

TEST_CASE("record layout matches the documented format") {
  TempDir dir;
  TensorDict dict;
  dict["a.w"] = NamedTensor{{2, 3}, {1.0, -2.5, 3.25, 0.0, 1e-9, 7.0}};
  dict["step"] = NamedTensor{{1}, {42.0}};
  const std::string path = dir.file("layout.ckpt");
  save_checkpoint(path, dict);

  auto bytes = read_file_bytes(path);
  std::size_t off = 0;
  CHECK(std::memcmp(bytes.data(), "M2T2CKPT", 8) == 0);
  off = 8;
  CHECK(parse_le<std::uint32_t>(bytes, off) == 1);  // version

  // first record in key order: "a.w"
  CHECK(parse_le<std::uint16_t>(bytes, off) == 3);
  CHECK(std::memcmp(bytes.data() + off, "a.w", 3) == 0);
  off += 3;
  CHECK(parse_le<std::uint8_t>(bytes, off) == 2);  // rank
  CHECK(parse_le<std::uint32_t>(bytes, off) == 2);
  CHECK(parse_le<std::uint32_t>(bytes, off) == 3);
  for (double expect : dict["a.w"].data)
    CHECK(parse_le<double>(bytes, off) == expect);

  // second record: "step", rank 1
  CHECK(parse_le<std::uint16_t>(bytes, off) == 4);
  off += 4;
  CHECK(parse_le<std::uint8_t>(bytes, off) == 1);
  CHECK(parse_le<std::uint32_t>(bytes, off) == 1);
  CHECK(parse_le<double>(bytes, off) == 42.0);
  CHECK(off == bytes.size());
}

TEST_CASE("model parameters round-trip exactly and files are byte-stable") {
  TempDir dir;
  ModelConfig cfg = ModelConfig::tiny();
  ModelParams params = ModelParams::initialize(cfg, 3);

  const std::string p1 = dir.file("a.ckpt"), p2 = dir.file("b.ckpt");
  save_checkpoint(p1, params_to_dict(params));

  TensorDict loaded = load_checkpoint(p1);
  ModelParams restored = ModelParams::initialize(cfg, 99);  // different values
  params_from_dict(restored, loaded);
  for (const auto& [name, e] : params.entries)
    CHECK(restored.at(name).value == e.value);

  // save -> load -> save produces identical bytes
  save_checkpoint(p2, params_to_dict(restored));
  CHECK(read_file_bytes(p1) == read_file_bytes(p2));
}

TEST_CASE("optimizer-style extra records coexist with parameters") {
  TempDir dir;
  ModelConfig cfg = ModelConfig::tiny();
  ModelParams params = ModelParams::initialize(cfg, 4);
  TensorDict dict = params_to_dict(params);
  dict["opt.step"] = NamedTensor{{1}, {17.0}};
  for (const auto& [name, e] : params.entries)
    dict["opt.m." + name] =
        NamedTensor{{static_cast<std::uint32_t>(e.rows),
                     static_cast<std::uint32_t>(e.cols)},
                    std::vector<double>(e.value.size(), 0.125)};

  const std::string path = dir.file("opt.ckpt");
  save_checkpoint(path, dict);
  TensorDict loaded = load_checkpoint(path);
  CHECK(loaded == dict);

  ModelParams restored = ModelParams::initialize(cfg, 5);
  params_from_dict(restored, loaded);  // extra records ignored
  for (const auto& [name, e] : params.entries)
    CHECK(restored.at(name).value == e.value);
}

TEST_CASE("validation failures") {
  TempDir dir;
  TensorDict dict;
  dict["x"] = NamedTensor{{2, 2}, {1, 2, 3, 4}};
  const std::string path = dir.file("v.ckpt");
  save_checkpoint(path, dict);

  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_checkpoint(dir.file("nope.ckpt")), std::runtime_error);
  }
  SUBCASE("bad magic") {
    auto bytes = read_file_bytes(path);
    bytes[0] = 'X';
    std::ofstream(path, std::ios::binary)
        .write(reinterpret_cast<const char*>(bytes.data()),
               static_cast<std::streamsize>(bytes.size()));
    CHECK_THROWS_AS(load_checkpoint(path), std::runtime_error);
  }
  SUBCASE("unsupported version") {
    auto bytes = read_file_bytes(path);
    bytes[8] = 9;
    std::ofstream(path, std::ios::binary)
        .write(reinterpret_cast<const char*>(bytes.data()),
               static_cast<std::streamsize>(bytes.size()));
    CHECK_THROWS_AS(load_checkpoint(path), std::runtime_error);
  }
  SUBCASE("truncated payload") {
    auto bytes = read_file_bytes(path);
    bytes.resize(bytes.size() - 5);
    std::ofstream(path, std::ios::binary)
        .write(reinterpret_cast<const char*>(bytes.data()),
               static_cast<std::streamsize>(bytes.size()));
    CHECK_THROWS_AS(load_checkpoint(path), std::runtime_error);
  }
  SUBCASE("dims/payload mismatch rejected at save") {
    TensorDict bad;
    bad["y"] = NamedTensor{{2, 3}, {1.0}};
    CHECK_THROWS_AS(save_checkpoint(dir.file("bad.ckpt"), bad),
                    std::invalid_argument);
  }
  SUBCASE("shape mismatch on restore") {
    ModelConfig cfg = ModelConfig::tiny();
    ModelParams params = ModelParams::initialize(cfg, 6);
    TensorDict loaded = load_checkpoint(path);
    CHECK_THROWS_AS(params_from_dict(params, loaded), std::runtime_error);
  }
}

TEST_CASE("initialization statistics and determinism") {
  ModelConfig cfg;
  ModelParams a = ModelParams::initialize(cfg, 0);
  ModelParams b = ModelParams::initialize(cfg, 0);
  for (const auto& [name, e] : a.entries) CHECK(b.at(name).value == e.value);

  // Xavier-uniform: variance 2 / (3 (rows + cols)) for a large weight matrix
  const auto& w = a.at("dec.b0.ff1.w");
  REQUIRE(w.value.size() >= 4096);
  double mean = 0, var = 0;
  for (double v : w.value) mean += v;
  mean /= static_cast<double>(w.value.size());
  for (double v : w.value) var += (v - mean) * (v - mean);
  var /= static_cast<double>(w.value.size());
  const double target = 2.0 / (3.0 * (w.rows + w.cols));
  CHECK(var == doctest::Approx(target).epsilon(0.10));

  // query tokens are gaussian with sigma 0.02
  const auto& q = a.at("dec.query.grasp");
  for (double v : q.value) CHECK(std::abs(v) < 0.02 * 6);

  // pinned zero-seed fingerprint of the full serialized state (format +
  // initializer regression gate)
  TempDir dir;
  const std::string path = dir.file("zero.ckpt");
  save_checkpoint(path, params_to_dict(a));
  auto bytes = read_file_bytes(path);
  CHECK(crc32(bytes.data(), bytes.size()) == 0x464E5D48u);
}
