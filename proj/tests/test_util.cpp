#include <doctest.h>

#include <filesystem>

#include "mapfdt/manifest.hpp"
#include "mapfdt/util/binio.hpp"
#include "mapfdt/util/hash.hpp"
#include "mapfdt/util/rng.hpp"

using namespace mapfdt;

TEST_CASE("sha256 known vectors") {
  CHECK(Sha256::of_string("") ==
        "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(Sha256::of_string("abc") ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  // streaming across block boundaries
  Sha256 h;
  std::string chunk(37, 'x');
  for (int i = 0; i < 100; ++i) h.update(chunk);
  CHECK(h.hex_digest() == Sha256::of_string(std::string(3700, 'x')));
}

TEST_CASE("crc32 known vector") {
  const char* s = "123456789";
  CHECK(crc32(s, 9) == 0xcbf43926u);
}

TEST_CASE("rng: deterministic, serializable, forkable") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  std::string state = a.serialize();
  Rng restored = Rng::deserialize(state);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == restored.next_u64());

  // forks are stable functions of (seed, stream), not of generator state
  Rng c(42);
  c.next_u64();
  CHECK(Rng(42).fork(3).seed() == c.fork(3).seed());
  CHECK(Rng(42).fork(3).seed() != Rng(42).fork(4).seed());
  CHECK(Rng(42).fork(3).seed() != Rng(43).fork(3).seed());
}

TEST_CASE("rng: bounded draws stay in range and cover values") {
  Rng rng(7);
  std::vector<int> counts(10, 0);
  for (int i = 0; i < 10000; ++i) {
    uint64_t v = rng.uniform_below(10);
    REQUIRE(v < 10);
    ++counts[size_t(v)];
  }
  for (int c : counts) CHECK(c > 800);  // crude uniformity guard
  for (int i = 0; i < 1000; ++i) {
    double u = rng.uniform01();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
}

TEST_CASE("manifest: records config and content hashes") {
  namespace fs = std::filesystem;
  const std::string input = (fs::temp_directory_path() / "mapfdt_manifest_in.txt").string();
  const std::string output = (fs::temp_directory_path() / "mapfdt_manifest_out.txt").string();
  write_file_bytes(input, "input-bytes");
  write_file_bytes(output, "output-bytes");

  RunManifest manifest;
  manifest.command = "test";
  manifest.seed = 5;
  manifest.config_json = R"({"k": 1})";
  manifest.add_input(input);
  manifest.add_output(output);
  manifest.save_for(output);

  std::string text = read_file_bytes(output + ".manifest.json");
  CHECK(text.find("\"command\": \"test\"") != std::string::npos);
  CHECK(text.find(Sha256::of_string("input-bytes")) != std::string::npos);
  CHECK(text.find(Sha256::of_string("output-bytes")) != std::string::npos);
  fs::remove(input);
  fs::remove(output);
  fs::remove(output + ".manifest.json");
}
