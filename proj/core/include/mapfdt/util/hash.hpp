#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace mapfdt {

// Streaming SHA-256; used for run manifests and prompt/audit hashes.
class Sha256 {
 public:
  Sha256();
  void update(const void* data, size_t len);
  void update(std::string_view s) { update(s.data(), s.size()); }
  // Hex digest; finalizes a copy so the object stays usable.
  std::string hex_digest() const;

  static std::string of_string(std::string_view s);
  static std::string of_file(const std::string& path);

 private:
  void process_block(const uint8_t* block);
  uint32_t state_[8];
  uint64_t bit_len_ = 0;
  uint8_t buffer_[64];
  size_t buffer_len_ = 0;
};

uint32_t crc32(const void* data, size_t len, uint32_t seed = 0);

}  // namespace mapfdt
