#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>

namespace afa {

// Minimal SHA-256 (FIPS 180-4); used for tensor freeze digests and for
// fingerprinting collated evaluation inputs.
class Sha256 {
 public:
  Sha256();
  void update(const void* data, size_t len);
  std::array<uint8_t, 32> finish();

  static std::string hex(const void* data, size_t len);

 private:
  void process_block(const uint8_t* block);

  uint32_t state_[8];
  uint64_t total_ = 0;
  uint8_t buffer_[64];
  size_t buffered_ = 0;
};

std::string to_hex(const std::array<uint8_t, 32>& digest);

}  // namespace afa
