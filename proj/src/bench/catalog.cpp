#include "mrm/bench/catalog.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <span>

namespace mrm::bench {

namespace {

// name, layers, workspace MB, weights MB
struct Row {
  const char* name;
  uint32_t layers;
  double workspace_mb;
  double weights_mb;
};

constexpr Row kSmall37[] = {
    {"alexnet", 16, 516, 238},
    {"googlenet", 116, 111, 27},
    {"caffenet", 16, 512, 233},
    {"rcnn-ilsvrc13", 16, 479, 221},
    {"dpn68", 361, 122, 49},
    {"dpn92", 481, 340, 145},
    {"inception-v3", 472, 257, 92},
    {"inception-v4", 747, 399, 164},
    {"inceptionbn-v2", 416, 313, 129},
    {"inceptionbn-v3", 416, 142, 44},
    {"inception-resnet-v2", 1102, 493, 214},
    {"locationnet", 514, 666, 285},
    {"nin", 24, 131, 29},
    {"resnet101", 526, 423, 170},
    {"resnet101-v2", 522, 428, 171},
    {"resnet152", 777, 548, 231},
    {"resnet152-11k", 769, 721, 311},
    {"resnet152-v2", 761, 340, 231},
    {"resnet18-v2", 99, 154, 45},
    {"resnet200-v2", 1009, 589, 248},
    {"resnet269-v2", 1346, 889, 391},
    {"resnet34-v2", 179, 222, 84},
    {"resnet50", 268, 270, 98},
    {"resnet50-v2", 259, 275, 98},
    {"resnext101", 526, 375, 170},
    {"resnext101-32x4d", 522, 378, 170},
    {"resnext26-32x4d", 147, 147, 59},
    {"resnext50", 271, 222, 96},
    {"resnext50-32x4d", 267, 224, 96},
    {"squeezenet-v1.0", 52, 34, 4.8},
    {"squeezenet-v1.1", 52, 28, 4.8},
    {"vgg16", 32, 1228, 528},
    {"vgg16-sod", 32, 1198, 514},
    {"vgg16-sos", 32, 1195, 513},
    {"vgg19", 38, 1270, 549},
    {"wrn50-v2", 267, 758, 264},
    {"xception", 236, 244, 88},
};

// Rescaled-input variants; the source table lists no workspace figures.
constexpr Row kLarge8[] = {
    {"alexnet-s1", 16, 0, 238},  {"alexnet-s2", 16, 0, 770},  {"alexnet-s3", 16, 0, 1694},
    {"alexnet-s4", 16, 0, 3010}, {"vgg16-s1", 32, 0, 528},    {"vgg16-s2", 32, 0, 1704},
    {"vgg16-s3", 32, 0, 3664},   {"vgg16-s4", 32, 0, 6408},
};

CatalogSpec from_rows(std::string name, std::span<const Row> rows, double divisor) {
  CatalogSpec spec;
  spec.name = std::move(name);
  spec.scale_divisor = divisor;
  for (const Row& r : rows)
    spec.models.push_back({r.name, r.layers, r.weights_mb, r.workspace_mb});
  return spec;
}

}  // namespace

uint64_t fnv1a(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (char c : s) {
    h ^= uint8_t(c);
    h *= 0x100000001b3ull;
  }
  return h;
}

CatalogSpec small37() { return from_rows("small37", kSmall37, 1.0); }
CatalogSpec large8() { return from_rows("large8", kLarge8, 1.0); }
CatalogSpec tiny() { return from_rows("tiny", kSmall37, 64.0); }

CatalogSpec catalog_by_name(const std::string& name) {
  if (name == "small37") return small37();
  if (name == "large8") return large8();
  if (name == "tiny") return tiny();
  raise(Errc::InvalidArgument, "unknown catalog " + name + " (small37|large8|tiny)");
}

model::ModelKey catalog_key(const CatalogModel& m) {
  return {kCatalogNamespace, m.name, kCatalogVersion};
}

uint64_t scaled_weights_bytes(const CatalogModel& m, double divisor) {
  return uint64_t(m.weights_mb * 1e6 / divisor) / 8 * 8;
}

uint64_t scaled_workspace_bytes(const CatalogModel& m, double divisor) {
  return uint64_t(m.workspace_mb * 1e6 / divisor);
}

model::ModelManifest catalog_manifest(const CatalogModel& m, double divisor) {
  uint64_t total_elems = scaled_weights_bytes(m, divisor) / 8;
  uint64_t layers = std::min<uint64_t>(m.layers, std::max<uint64_t>(total_elems, 1));
  std::vector<model::TensorDecl> decls;
  decls.reserve(layers);
  // Every tensor except the last gets a 64-byte-aligned element count so
  // offsets stay aligned without padding waste.
  uint64_t base = total_elems / layers / 8 * 8;
  uint64_t assigned = 0;
  for (uint64_t i = 0; i < layers; ++i) {
    uint64_t elems = (i + 1 == layers) ? total_elems - assigned : std::max<uint64_t>(base, 8);
    assigned += elems;
    char buf[16];
    std::snprintf(buf, sizeof(buf), "layer_%04llu", static_cast<unsigned long long>(i));
    decls.push_back({buf, {elems}, model::DType::F64});
  }
  return model::make_manifest(catalog_key(m), decls, scaled_workspace_bytes(m, divisor));
}

std::vector<GeneratedFile> gen_catalog(const CatalogSpec& spec,
                                       const std::filesystem::path& out_dir, uint64_t seed) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  std::vector<GeneratedFile> out;
  std::vector<uint8_t> chunk(1 << 20);
  for (const auto& cm : spec.models) {
    model::ModelManifest manifest = catalog_manifest(cm, spec.scale_divisor);
    fs::path path = out_dir / model::canonical_filename(manifest.key);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) raise(Errc::Internal, "cannot create " + path.string());
    model::ModelFileWriter w(f, manifest);
    Splitmix64 rng(seed ^ fnv1a(cm.name));
    for (const auto& t : manifest.tensors) {
      uint64_t left = t.nbytes;
      while (left > 0) {
        uint64_t take = std::min<uint64_t>(left, chunk.size());
        for (uint64_t i = 0; i < take; i += 8) {
          uint64_t v = rng.next();
          std::memcpy(chunk.data() + i, &v, 8);
        }
        w.append(std::span<const uint8_t>(chunk.data(), size_t(take)));
        left -= take;
      }
    }
    manifest = w.finish();
    out.push_back({manifest.key, path, manifest.blob_bytes});
  }
  return out;
}

}  // namespace mrm::bench
