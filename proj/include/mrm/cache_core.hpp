#pragma once

#include <condition_variable>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "mrm/error.hpp"
#include "mrm/model_format.hpp"
#include "mrm/shared_segment.hpp"

namespace mrm::cache {

// Placement manager: model database, tiered residency state machine,
// reference counting, pluggable eviction. All mutations are serialized under
// one lock; the physical tier work (disk, shared memory, network) happens
// through a TierBackend outside the lock, guarded per-key so that concurrent
// opens of an absent model perform exactly one load.

enum class Tier : uint8_t { Fast = 0, Host = 1, LocalDisk = 2, Remote = 3 };
inline constexpr size_t kTierCount = 4;
const char* tier_name(Tier t);

enum class Policy : uint8_t { LRU = 0, LCU = 1 };
const char* policy_name(Policy p);
std::optional<Policy> policy_from_name(std::string_view s);

enum class Outcome : uint8_t { FastHit = 0, HostHit = 1, DiskLoad = 2, RemoteFetch = 3 };
const char* outcome_name(Outcome o);

struct PhaseTimings {
  uint64_t fetch_ns{0};
  uint64_t disk_read_ns{0};
  uint64_t host_to_fast_copy_ns{0};
  uint64_t handle_export_ns{0};
};

struct ExportedSegment {
  std::string token;
  uint64_t generation{0};
  uint64_t length{0};
};

struct PlacementResult {
  Outcome outcome{Outcome::FastHit};
  uint64_t model_id{0};
  model::ModelManifest manifest;
  model::FootprintEstimate footprint;
  std::vector<ExportedSegment> segments;
  shm::ObjectLayout layout;
  Digest manifest_digest{};
  PhaseTimings timings;
};

struct Located {
  enum class Kind { DiskCache, Remote, Absent };
  Kind kind{Kind::Absent};
  std::string path;      // DiskCache only
  uint64_t file_bytes{0};
};

struct FetchResult {
  std::string path;
  uint64_t file_bytes{0};
};

struct FastPublication {
  std::vector<ExportedSegment> segments;
  Digest manifest_digest{};
};

// Physical effects behind the placement manager. The daemon implements this
// with shared memory, the filesystem and the remote store; tests substitute
// an in-memory fake. Calls happen outside the core lock except the evict_*
// family, which runs under it.
class TierBackend {
 public:
  virtual ~TierBackend() = default;

  virtual Located locate(const model::ModelKey& key) = 0;
  virtual FetchResult fetch_remote(const model::ModelKey& key) = 0;
  virtual model::ModelManifest read_manifest(const model::ModelKey& key,
                                             const std::string& path) = 0;
  // Disk -> host-tier staging buffer for this model.
  virtual void stage_host(uint64_t model_id, const model::ModelManifest& m,
                          const std::string& path) = 0;
  // Build, fill and seal the fast-tier segment(s). from_host selects the
  // staged buffer; otherwise the blob is streamed from `path`.
  virtual FastPublication publish_fast(uint64_t model_id, const model::ModelManifest& m,
                                       bool from_host, const std::string& path) = 0;
  virtual void evict_fast(uint64_t model_id) = 0;
  virtual void evict_host(uint64_t model_id) = 0;
  virtual void evict_disk(const model::ModelKey& key, const std::string& path) = 0;
};

struct ModelEntry {
  model::ModelKey key;
  uint64_t model_id{0};
  uint64_t seq{0};  // insertion sequence number, eviction tie-break
  std::optional<model::ModelManifest> manifest;
  uint32_t refcount{0};
  uint64_t last_access{0};
  uint64_t use_count{0};
  bool fast{false};
  bool host{false};
  bool disk{false};
  bool loading{false};  // single-flight guard; excluded from eviction
  std::vector<ExportedSegment> fast_segments;
  Digest manifest_digest{};
  std::string disk_path;
  uint64_t disk_bytes{0};
  uint64_t weights_bytes{0};  // cached from the manifest
};

// Pure eviction-order computation: exactly the refcount==0 entries, LRU by
// ascending last_access or LCU by ascending use_count, ties by ascending
// insertion sequence.
struct Candidate {
  model::ModelKey key;
  uint32_t refcount{0};
  uint64_t last_access{0};
  uint64_t use_count{0};
  uint64_t seq{0};
};
std::vector<Candidate> evict_candidates(Policy policy, std::vector<Candidate> entries);

struct TierStats {
  uint64_t hits{0};
  uint64_t misses{0};
  uint64_t evictions{0};
  uint64_t used_bytes{0};
  uint64_t capacity_bytes{0};
};

struct ModelStats {
  model::ModelKey key;
  uint32_t refcount{0};
  uint64_t use_count{0};
  uint64_t last_access{0};
  uint8_t residency{0};  // bit per Tier
};

struct StatsSnapshot {
  TierStats tiers[kTierCount];
  std::vector<ModelStats> models;
  uint64_t open_requests{0};
  uint64_t open_errors{0};
  uint64_t disk_reads{0};
  uint64_t remote_fetches{0};
  PhaseTimings cumulative;
};

struct CoreConfig {
  uint64_t fast_capacity_bytes{0};
  uint64_t host_capacity_bytes{0};
  uint64_t disk_capacity_bytes{0};
  Policy policy{Policy::LRU};
  bool eager_reclaim{false};
};

class CacheCore {
 public:
  CacheCore(CoreConfig cfg, TierBackend& backend);

  // The caller supplies the logical timestamp; the daemon wires a monotonic
  // counter. Throws NotFound, TooLargeForFast, NoEvictableSpace, Corrupt*.
  PlacementResult open_model(const model::ModelKey& key, const shm::ShareGranularity& g,
                             uint64_t now);

  // Returns the new refcount. Throws UnknownModel, NotOpen.
  uint64_t close_model(const model::ModelKey& key);

  // Frees tier space until free >= bytes_needed, policy order, pinned and
  // in-flight entries excluded. No-op if already free. If the deficit cannot
  // be covered, nothing is evicted and NoEvictableSpace is thrown.
  std::vector<model::ModelKey> reclaim(Tier tier, uint64_t bytes_needed, Policy policy);

  StatsSnapshot stats() const;

  // Pre-seeds disk-tier residency (startup scan of the cache directory).
  // Throws InvalidArgument if the registered bytes would exceed capacity.
  void register_disk_file(const model::ModelKey& key, const std::string& path, uint64_t bytes);

  uint64_t used_bytes(Tier t) const;
  uint64_t capacity_bytes(Tier t) const;
  uint32_t refcount(const model::ModelKey& key) const;
  bool drained() const;

  // Shutdown: releases every fast segment and host buffer regardless of
  // refcounts (attached clients keep valid views until they detach).
  void drop_all();

 private:
  struct Inflight {
    bool done{false};
  };

  ModelEntry& ensure_entry_locked(const model::ModelKey& key);
  ModelEntry* find_locked(const model::ModelKey& key);
  const ModelEntry* find_locked(const model::ModelKey& key) const;
  // Shared reclamation body; mu_ must be held.
  std::vector<model::ModelKey> reclaim_locked(Tier tier, uint64_t bytes_needed, Policy policy);
  uint64_t tier_used(Tier t) const;
  void evict_one_locked(ModelEntry& e, Tier tier);
  PlacementResult export_result_locked(ModelEntry& e, Outcome outcome,
                                       const shm::ShareGranularity& g, PhaseTimings timings);

  CoreConfig cfg_;
  TierBackend& backend_;

  mutable std::mutex mu_;
  std::condition_variable load_cv_;
  std::map<model::ModelKey, ModelEntry> entries_;
  std::map<model::ModelKey, std::shared_ptr<Inflight>> inflight_;
  uint64_t next_seq_{1};
  uint64_t next_model_id_{1};
  uint64_t used_[kTierCount] = {0, 0, 0, 0};

  // stats
  uint64_t hits_[kTierCount] = {0, 0, 0, 0};
  uint64_t misses_[kTierCount] = {0, 0, 0, 0};
  uint64_t evictions_[kTierCount] = {0, 0, 0, 0};
  uint64_t open_requests_{0};
  uint64_t open_errors_{0};
  uint64_t disk_reads_{0};
  uint64_t remote_fetches_{0};
  PhaseTimings cumulative_;
};

}  // namespace mrm::cache
