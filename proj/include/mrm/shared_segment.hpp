#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mrm/error.hpp"
#include "mrm/model_format.hpp"

namespace mrm::shm {

// Named, immutable-after-seal, process-shareable memory regions. Publishers
// write once, seal, then export the token; readers attach by (token,
// generation) and get a read-only view. Sealing removes all reader locking.
//
// Platform object name = "/" + token; tokens are "mrm.<pid>.<seq>[.hint]"
// so a restarted daemon can identify and clean up segments left by a dead
// predecessor.

inline constexpr char kTokenPrefix[] = "mrm.";
inline constexpr size_t kMaxTokenLen = 200;
inline constexpr uint64_t kDefaultBlockBytes = 2ull * 1024 * 1024;

struct SegmentHandle {
  std::string token;
  uint64_t length{0};      // payload bytes (excludes the segment header page)
  uint64_t generation{0};
  bool sealed{false};
};

enum class GranularityKind : uint8_t { Model = 0, Layer = 1, Block = 2 };

struct ShareGranularity {
  GranularityKind kind{GranularityKind::Model};
  uint64_t block_bytes{kDefaultBlockBytes};  // meaningful only for Block

  static ShareGranularity model() { return {GranularityKind::Model, kDefaultBlockBytes}; }
  static ShareGranularity layer() { return {GranularityKind::Layer, kDefaultBlockBytes}; }
  static ShareGranularity block(uint64_t bytes) { return {GranularityKind::Block, bytes}; }

  bool operator==(const ShareGranularity&) const = default;
};

// block_bytes > 0 and a multiple of 64.
bool valid_granularity(const ShareGranularity& g);
const char* granularity_name(GranularityKind k);

struct ObjectSpan {
  std::string name;
  uint32_t segment_index{0};
  uint64_t offset{0};
  uint64_t length{0};

  bool operator==(const ObjectSpan&) const = default;
};

struct ObjectLayout {
  std::vector<ObjectSpan> objects;

  bool operator==(const ObjectLayout&) const = default;
};

// Carves the manifest's blob into shareable objects. Objects tile the blob
// exactly: sum of lengths == blob_bytes and concatenation in order
// reproduces it. Layer objects absorb their trailing alignment padding.
// An empty blob yields a single zero-length object so that n >= 1 holds.
ObjectLayout layout_for(const model::ModelManifest& manifest, const ShareGranularity& g);

// Owner side. RAII: the segment is unlinked when the owner is destroyed;
// attached readers keep valid views until they unmap.
class Segment {
 public:
  Segment() = default;
  Segment(Segment&&) noexcept;
  Segment& operator=(Segment&&) noexcept;
  Segment(const Segment&) = delete;
  Segment& operator=(const Segment&) = delete;
  ~Segment();

  static Segment create(std::string_view token_hint, uint64_t length);

  // Writable until sealed; AlreadySealed afterwards.
  std::span<uint8_t> data();
  void seal();  // drops the write mapping and remaps read-only
  std::span<const uint8_t> view() const;

  const SegmentHandle& handle() const { return handle_; }
  bool valid() const { return base_ != nullptr; }

  // Unlinks the name; existing attachments stay valid until they detach.
  void destroy();

 private:
  SegmentHandle handle_;
  void* base_{nullptr};  // mapping of header + payload
  uint64_t map_len_{0};
  bool unlinked_{false};
};

// Reader side.
class Attachment {
 public:
  Attachment() = default;
  Attachment(Attachment&&) noexcept;
  Attachment& operator=(Attachment&&) noexcept;
  Attachment(const Attachment&) = delete;
  Attachment& operator=(const Attachment&) = delete;
  ~Attachment();

  // Throws NoSuchSegment, StaleGeneration, NotSealed.
  static Attachment attach(std::string_view token, uint64_t generation);

  std::span<const uint8_t> view() const;
  uint64_t length() const { return length_; }
  bool valid() const { return base_ != nullptr; }

 private:
  void* base_{nullptr};
  uint64_t map_len_{0};
  uint64_t length_{0};
};

// Removes "mrm.<pid>.*" objects whose owning pid is no longer alive, or all
// objects of `owner_pid` when given. Returns the number unlinked.
int cleanup_orphans(std::optional<int> owner_pid = std::nullopt);

}  // namespace mrm::shm
