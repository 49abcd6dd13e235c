#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

namespace esi::hash {

// incremental SHA-256
class Sha256 {
 public:
  Sha256();
  void update(const void* data, std::size_t len);
  // finalizes and returns the lowercase hex digest; the object must not be reused
  std::string hex_digest();

 private:
  void process_block(const std::uint8_t* block);

  std::uint32_t state_[8];
  std::uint64_t total_len_ = 0;
  std::uint8_t buffer_[64];
  std::size_t buffer_len_ = 0;
};

std::string sha256_hex(const void* data, std::size_t len);
std::string sha256_hex(const std::string& s);

// hashes a file's raw bytes; throws IoError if unreadable
std::string sha256_file_hex(const std::string& path);

}  // namespace esi::hash
