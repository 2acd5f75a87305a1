#pragma once

#include <array>
#include <cstdint>
#include <cstddef>
#include <span>
#include <string>

namespace mrm {

using Digest = std::array<uint8_t, 32>;

// Incremental SHA-256 (FIPS 180-4). Used for the artifact blob trailer and
// for content addressing in the remote store.
class Sha256 {
 public:
  Sha256() { reset(); }

  void reset();
  void update(std::span<const uint8_t> data);
  void update(const void* data, size_t len) {
    update(std::span<const uint8_t>(static_cast<const uint8_t*>(data), len));
  }
  Digest finish();

  static Digest of(std::span<const uint8_t> data) {
    Sha256 h;
    h.update(data);
    return h.finish();
  }

 private:
  void compress(const uint8_t block[64]);

  uint32_t state_[8];
  uint64_t total_len_;
  uint8_t buf_[64];
  size_t buf_len_;
};

std::string hex_digest(const Digest& d);

}  // namespace mrm
