#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mrm/model_format.hpp"

namespace mrm::bench {

// Synthetic model catalogs. `small37` carries the 37 classic image models
// with their layer counts, intermediate-workspace and weight footprints (in
// decimal megabytes); `large8` the 8 rescaled large variants; `tiny` is
// small37 divided by 64 so a full sweep runs in CI time.

struct CatalogModel {
  std::string name;
  uint32_t layers{1};
  double weights_mb{0};    // decimal MB (1e6 bytes)
  double workspace_mb{0};
};

struct CatalogSpec {
  std::string name;
  std::vector<CatalogModel> models;
  double scale_divisor{1.0};
};

CatalogSpec small37();
CatalogSpec large8();
CatalogSpec tiny();
CatalogSpec catalog_by_name(const std::string& name);  // throws InvalidArgument

inline constexpr const char* kCatalogNamespace = "zoo";
inline constexpr const char* kCatalogVersion = "1.0.0";

model::ModelKey catalog_key(const CatalogModel& m);

// Target weight bytes after scaling, floored to whole 8-byte elements.
uint64_t scaled_weights_bytes(const CatalogModel& m, double divisor);
uint64_t scaled_workspace_bytes(const CatalogModel& m, double divisor);

// Builds the manifest the generator emits: `layers` F64 tensors splitting
// the scaled weight bytes, 64-aligned offsets.
model::ModelManifest catalog_manifest(const CatalogModel& m, double divisor);

// Writes one .trms artifact per model, blob content drawn from a
// seed-deterministic generator: one seed, byte-identical files.
struct GeneratedFile {
  model::ModelKey key;
  std::filesystem::path path;
  uint64_t blob_bytes{0};
};
std::vector<GeneratedFile> gen_catalog(const CatalogSpec& spec,
                                       const std::filesystem::path& out_dir, uint64_t seed);

// Deterministic stream used for blob content.
class Splitmix64 {
 public:
  explicit Splitmix64(uint64_t seed) : state_(seed) {}
  uint64_t next() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

 private:
  uint64_t state_;
};

uint64_t fnv1a(std::string_view s);

}  // namespace mrm::bench
