#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "mrm/cache_core.hpp"
#include "mrm/wire_protocol.hpp"

namespace mrm::daemon {

struct DaemonConfig {
  std::string listen_path{"/tmp/mrm.sock"};
  std::optional<std::string> listen_tcp;  // "host:port", port 0 = ephemeral
  uint64_t fast_capacity_bytes{1ull << 30};
  uint64_t host_capacity_bytes{2ull << 30};
  std::string disk_cache_dir{"/tmp/mrm-cache"};
  uint64_t disk_capacity_bytes{16ull << 30};
  std::optional<std::string> remote_url;  // http://... or dir:<path>
  cache::Policy eviction_policy{cache::Policy::LRU};
  bool eager_reclaim{false};
  double workspace_headroom_fraction{0.25};
  shm::ShareGranularity default_granularity{};
  uint64_t shutdown_grace_ms{2000};
  bool full_verify{false};        // verify blob checksums on load
  bool startup_calibration{true};
};

// Throws InvalidArgument on violations (capacities > 0, headroom in [0,1]).
void validate_config(const DaemonConfig& cfg);
DaemonConfig config_from_json(const std::string& json_text);
std::string config_to_json(const DaemonConfig& cfg);
DaemonConfig load_config_file(const std::filesystem::path& path);

struct Calibration {
  double q{0};  // disk bytes/second
  double o{0};  // per-object export seconds
  double s{0};  // per-object attach seconds
};

// The physical tier implementation: shared-memory fast tier, host byte
// buffers, the disk cache directory and the optional remote store.
class ShmTierBackend : public cache::TierBackend {
 public:
  ShmTierBackend(std::string disk_cache_dir, std::optional<std::string> remote_url,
                 bool full_verify);

  cache::Located locate(const model::ModelKey& key) override;
  cache::FetchResult fetch_remote(const model::ModelKey& key) override;
  model::ModelManifest read_manifest(const model::ModelKey& key,
                                     const std::string& path) override;
  void stage_host(uint64_t model_id, const model::ModelManifest& m,
                  const std::string& path) override;
  cache::FastPublication publish_fast(uint64_t model_id, const model::ModelManifest& m,
                                      bool from_host, const std::string& path) override;
  void evict_fast(uint64_t model_id) override;
  void evict_host(uint64_t model_id) override;
  void evict_disk(const model::ModelKey& key, const std::string& path) override;

 private:
  std::string disk_cache_dir_;
  std::optional<std::string> remote_url_;
  bool full_verify_;

  std::mutex mu_;  // guards the two maps; payload copies run outside
  std::map<uint64_t, std::vector<uint8_t>> host_bufs_;
  std::map<uint64_t, shm::Segment> segments_;
};

class Daemon {
 public:
  // Binds listeners and scans the disk cache; throws on bind/config errors
  // (Errc::InvalidArgument for config, Errc::Internal for bind).
  explicit Daemon(DaemonConfig cfg);
  ~Daemon();

  void start();
  void request_stop();
  void join();

  const DaemonConfig& config() const { return cfg_; }
  uint16_t tcp_port() const { return tcp_port_; }
  cache::StatsSnapshot stats() const { return core_->stats(); }
  std::string stats_text() const;

 private:
  void accept_loop(int listen_fd);
  void serve_connection(int fd);
  wire::Message dispatch(const wire::Message& req, uint64_t conn_id);
  wire::Message handle_open(const wire::OpenRequest& req, uint64_t conn_id);
  wire::Message handle_close(const wire::CloseRequest& req, uint64_t conn_id);
  wire::StatsResponse build_stats() const;
  void close_connection_handles(uint64_t conn_id);
  void run_startup_calibration();

  DaemonConfig cfg_;
  std::unique_ptr<ShmTierBackend> backend_;
  std::unique_ptr<cache::CacheCore> core_;

  int unix_fd_{-1};
  int tcp_fd_{-1};
  uint16_t tcp_port_{0};

  std::atomic<bool> stopping_{false};
  std::atomic<uint64_t> logical_clock_{0};
  std::atomic<uint64_t> next_handle_id_{1};
  std::atomic<uint64_t> next_conn_id_{1};

  struct HandleInfo {
    model::ModelKey key;
    uint64_t model_id{0};
    uint64_t conn_id{0};
  };
  mutable std::mutex handles_mu_;
  std::map<uint64_t, HandleInfo> handles_;

  std::mutex conns_mu_;
  std::vector<int> conn_fds_;

  std::vector<std::thread> accept_threads_;
  std::mutex conn_threads_mu_;
  std::vector<std::thread> conn_threads_;
  std::optional<Calibration> calibration_;
};

}  // namespace mrm::daemon
