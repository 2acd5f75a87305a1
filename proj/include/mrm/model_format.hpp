#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mrm/error.hpp"
#include "mrm/sha256.hpp"

namespace mrm::model {

// On-disk artifact layout (little-endian):
//   magic "TRMS" | u32 version=1 | u64 manifest_len | manifest JSON
//   | zero pad to 64-byte boundary | weights blob | 32-byte SHA-256 of blob
inline constexpr char kMagic[4] = {'T', 'R', 'M', 'S'};
inline constexpr uint32_t kFormatVersion = 1;
inline constexpr uint64_t kAlign = 64;
inline constexpr const char* kFileExtension = ".trms";

enum class DType : uint8_t { F64 = 0, F32 = 1, F16 = 2, I8 = 3 };

constexpr uint64_t element_size(DType t) {
  switch (t) {
    case DType::F64: return 8;
    case DType::F32: return 4;
    case DType::F16: return 2;
    case DType::I8: return 1;
  }
  return 0;
}

const char* dtype_name(DType t);
std::optional<DType> dtype_from_name(std::string_view s);

struct ModelKey {
  std::string ns;       // owning framework namespace, e.g. "mxnet"
  std::string name;
  std::string version;  // dotted numeric, e.g. "1.0.0"

  bool operator==(const ModelKey&) const = default;
  auto operator<=>(const ModelKey&) const = default;
};

bool valid_key(const ModelKey& key);
std::string to_string(const ModelKey& key);

// Bijective given the ModelKey character restrictions:
//   <namespace>__<name>__<version>.trms
std::string canonical_filename(const ModelKey& key);
std::optional<ModelKey> key_from_filename(std::string_view filename);

struct TensorSpec {
  std::string name;
  std::vector<uint64_t> dims;
  DType dtype{DType::F64};
  uint64_t offset{0};  // byte offset into the weights blob, 64-aligned
  uint64_t nbytes{0};  // product(dims) * element_size(dtype)

  bool operator==(const TensorSpec&) const = default;
};

struct ModelManifest {
  ModelKey key;
  std::vector<TensorSpec> tensors;  // sorted by offset, non-overlapping
  uint64_t workspace_bytes{0};      // intermediate memory the model needs at run time
  uint64_t blob_bytes{0};           // max(offset+nbytes) rounded up to 64
  Digest checksum{};                // SHA-256 over the blob

  bool operator==(const ModelManifest&) const = default;
};

struct FootprintEstimate {
  uint64_t weights_bytes{0};
  uint64_t workspace_bytes{0};
  uint64_t total_bytes{0};

  bool operator==(const FootprintEstimate&) const = default;
};

inline uint64_t align_up(uint64_t v, uint64_t a = kAlign) { return (v + a - 1) / a * a; }

// max over tensors of (offset + nbytes), rounded up to 64. Zero for an empty list.
uint64_t blob_span(const std::vector<TensorSpec>& tensors);

// Throws CorruptManifest on any type-invariant violation.
void validate_manifest(const ModelManifest& m);

FootprintEstimate estimate_footprint(const ModelManifest& m);

// Builds a manifest with sequential 64-aligned offsets in declaration order.
struct TensorDecl {
  std::string name;
  std::vector<uint64_t> dims;
  DType dtype{DType::F64};
};
ModelManifest make_manifest(ModelKey key, const std::vector<TensorDecl>& tensors,
                            uint64_t workspace_bytes);

// Streaming writer: feed each tensor's bytes in manifest order (chunked calls
// allowed), then finish(). The writer zero-fills inter-tensor padding and
// emits the checksum trailer. finish() returns the manifest with the checksum
// filled in.
class ModelFileWriter {
 public:
  ModelFileWriter(std::ostream& out, ModelManifest manifest);
  void append(std::span<const uint8_t> tensor_bytes);
  ModelManifest finish();

 private:
  void pad_to(uint64_t blob_pos);

  std::ostream& out_;
  ModelManifest manifest_;
  Sha256 hasher_;
  uint64_t blob_pos_{0};        // bytes of blob emitted so far
  size_t tensor_index_{0};
  uint64_t tensor_written_{0};  // bytes written of the current tensor
  bool finished_{false};
};

// One-shot serialization; tensor_data blocks must match the manifest's nbytes
// fields exactly (LengthMismatch otherwise).
std::vector<uint8_t> serialize_model(const ModelManifest& manifest,
                                     const std::vector<std::vector<uint8_t>>& tensor_data);

void write_model_file(const std::filesystem::path& path, const ModelManifest& manifest,
                      const std::vector<std::vector<uint8_t>>& tensor_data);

// Parses the header + manifest only; the blob body is not read. The checksum
// field is taken from the trailer. With full_verify the blob is streamed and
// checked against the trailer (ChecksumMismatch).
ModelManifest read_manifest(std::span<const uint8_t> bytes, bool full_verify = false);
ModelManifest read_manifest(const std::filesystem::path& path, bool full_verify = false);

struct LoadedModel {
  ModelManifest manifest;
  std::vector<uint8_t> blob;
};
LoadedModel read_model(const std::filesystem::path& path, bool verify = false);

// Byte offset of the weights blob within the artifact (header + manifest, padded).
uint64_t blob_file_offset(uint64_t manifest_len);

std::string manifest_to_json(const ModelManifest& m);
ModelManifest manifest_from_json(std::string_view json_text);

}  // namespace mrm::model
