#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mrm/cache_core.hpp"

namespace mrm::bench::sim {

// Reference placement simulator. Recomputes residency, eviction and
// reference-count bookkeeping from scratch at every step with plain scans —
// deliberately naive, structured nothing like the live placement manager so
// the two can check each other over randomized traces. Also attaches modeled
// latencies from bandwidth/overhead parameters for workload studies.

struct SimModel {
  std::string name;        // identifies the model in a trace
  uint64_t weights_bytes{0};
  uint64_t file_bytes{0};  // on-disk artifact size
  uint32_t object_count{1};
  bool on_disk{true};      // initially present in the local disk cache
  bool on_remote{false};
};

struct SimConfig {
  uint64_t fast_capacity{0};
  uint64_t host_capacity{0};
  uint64_t disk_capacity{0};
  cache::Policy policy{cache::Policy::LRU};
  bool eager_reclaim{false};
};

struct TraceOp {
  enum class Kind : uint8_t { Open, Close } kind{Kind::Open};
  uint32_t model{0};  // index into the model table
};

enum class SimOutcome : uint8_t {
  FastHit = 0,
  HostHit = 1,
  DiskLoad = 2,
  RemoteFetch = 3,
  ErrNotFound = 100,
  ErrTooLarge = 101,
  ErrNoEvictableSpace = 102,
  ErrNotOpen = 103,
};
const char* sim_outcome_name(SimOutcome o);

struct SimEvent {
  SimOutcome outcome{SimOutcome::FastHit};
  std::vector<uint32_t> evicted_fast;   // model indices, eviction order
  std::vector<uint32_t> evicted_host;
  std::vector<uint32_t> evicted_disk;
  uint64_t fast_used{0};
  uint64_t host_used{0};
  uint64_t refcount{0};  // of the touched model, after the op
  double modeled_latency_s{0};
};

struct LatencyModel {
  double disk_bw{200e6};    // q, bytes/second
  double remote_bw{50e6};
  double copy_bw{2e9};
  double export_overhead{0.0005};  // o, seconds per object
  double attach_overhead{0.0005};  // s, seconds per object
  double compute_s{0};             // fixed add-on per request
};

std::vector<SimEvent> simulate(const SimConfig& cfg, const std::vector<SimModel>& models,
                               const std::vector<TraceOp>& trace, const LatencyModel& lat = {});

}  // namespace mrm::bench::sim
