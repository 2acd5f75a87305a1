#pragma once

#include <filesystem>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "mrm/bench/catalog.hpp"
#include "mrm/daemon.hpp"
#include "mrm/model_format.hpp"

namespace mrm::test {

namespace fs = std::filesystem;

class TempDir {
 public:
  explicit TempDir(const std::string& tag = "mrm-test") {
    path_ = fs::temp_directory_path() /
            (tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter_++));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  const fs::path& path() const { return path_; }

 private:
  static inline int counter_ = 0;
  fs::path path_;
};

inline std::vector<uint8_t> pattern_bytes(size_t n, uint64_t seed = 7) {
  std::vector<uint8_t> v(n);
  bench::Splitmix64 rng(seed);
  for (size_t i = 0; i < n; ++i) {
    if (i % 8 == 0) rng.next();
    v[i] = uint8_t(rng.next() >> (8 * (i % 8)));
  }
  return v;
}

// One-tensor manifest with the given element count.
inline model::ModelManifest one_tensor_manifest(const std::string& name, uint64_t elems,
                                                uint64_t workspace = 0) {
  return model::make_manifest({"test", name, "1.0"}, {{"t0", {elems}, model::DType::F64}},
                              workspace);
}

// Writes an artifact with `elems` deterministic f64 elements; returns its path.
inline fs::path write_test_model(const fs::path& dir, const std::string& name, uint64_t elems,
                                 uint64_t workspace = 0, uint64_t seed = 7) {
  model::ModelManifest m = one_tensor_manifest(name, elems, workspace);
  std::vector<uint8_t> data = pattern_bytes(size_t(elems * 8), seed);
  fs::path p = dir / model::canonical_filename(m.key);
  model::write_model_file(p, m, {data});
  return p;
}

struct InProcDaemon {
  explicit InProcDaemon(daemon::DaemonConfig cfg) {
    if (cfg.listen_path.empty() || cfg.listen_path == "/tmp/mrm.sock")
      cfg.listen_path = unique_socket();
    cfg.startup_calibration = false;
    d = std::make_unique<daemon::Daemon>(std::move(cfg));
    d->start();
  }
  ~InProcDaemon() {
    if (d) {
      d->request_stop();
      d->join();
    }
  }
  static std::string unique_socket() {
    static int n = 0;
    return "/tmp/mrm-test-" + std::to_string(::getpid()) + "-" + std::to_string(n++) + ".sock";
  }
  const std::string& endpoint() const { return d->config().listen_path; }

  std::unique_ptr<daemon::Daemon> d;
};

}  // namespace mrm::test
