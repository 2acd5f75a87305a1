#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mrm/bench/catalog.hpp"
#include "mrm/cache_core.hpp"

namespace mrm::bench {

// Live-measurement harness: per-model phase breakdowns against a freshly
// provisioned daemon, and the oversubscription grid (Pareto-sampled request
// streams from separate worker processes against a fast tier sized at half
// the catalog's weight bytes).

enum class LatencyMode { Cold, Warm, NoDaemon };
std::optional<LatencyMode> latency_mode_from_name(std::string_view s);
const char* latency_mode_name(LatencyMode m);

struct LatencyRow {
  std::string model;
  std::string mode;
  double load_disk_s{0};
  double init_copy_s{0};
  double share_overhead_s{0};
  double compute_s{0};
  double end_to_end_s{0};
  double open_s{0};  // end-to-end minus the compute phase
};

struct LatencyParams {
  CatalogSpec catalog;
  std::filesystem::path catalog_dir;
  LatencyMode mode{LatencyMode::Warm};
  int reps{5};
  std::optional<std::string> only_model;
};

std::vector<LatencyRow> run_latency(const LatencyParams& params);
std::string latency_csv(const std::vector<LatencyRow>& rows);

struct GridParams {
  CatalogSpec catalog;
  std::filesystem::path catalog_dir;  // generated when missing
  std::vector<double> fractions{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  std::vector<uint32_t> concurrencies{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  uint32_t requests_per_cell{200};
  uint32_t warmup{10};
  uint64_t seed{42};
  cache::Policy policy{cache::Policy::LRU};
  double pareto_alpha{1.0};
  double pareto_xm{1.0};
  std::string worker_exe;  // defaults to /proc/self/exe
  bool verbose{false};
};

struct GridCell {
  double fraction{0};
  uint32_t concurrency{0};
  bool ok{false};
  std::string error;
  double geomean_p95_speedup{0};
  double mean_latency_penalty_vs_warm{0};
  double fast_hit_rate{0};
  uint64_t evictions{0};
  uint64_t requests{0};
  uint64_t open_errors{0};
};

struct GridResult {
  std::vector<GridCell> cells;
};

GridResult run_grid(const GridParams& params);
std::string grid_csv(const GridResult& result);
// gnuplot-style matrix of geomean speedups (rows = fractions, cols =
// concurrency levels).
std::string grid_matrix(const GridResult& result);

// Worker process entry ("<exe> worker ..."): issues Pareto-sampled
// open/touch/close requests through the client SDK and appends one JSON line
// per measured request to --out.
struct WorkerParams {
  std::string endpoint;
  std::string catalog_name;  // used when keys is empty
  std::string catalog_dir;
  std::vector<std::string> keys;  // "ns/name@version" sampling set override
  uint32_t active_models{1};
  uint32_t requests{1};
  uint32_t warmup{0};
  uint64_t seed{1};
  double pareto_alpha{1.0};
  double pareto_xm{1.0};
  uint64_t hold_ms{0};  // sleep between open and touch (overlap control)
  std::string out_path;
};

int run_worker(const WorkerParams& params);
WorkerParams parse_worker_args(int argc, char** argv);  // argv after "worker"
std::vector<std::string> worker_argv(const WorkerParams& params);

// Spawns `<exe> worker ...` processes and waits for all of them; returns
// each worker's exit code.
std::vector<int> spawn_workers(const std::string& exe,
                               const std::vector<WorkerParams>& workers);

struct WorkerSample {
  uint32_t model_index{0};
  uint64_t open_ns{0};
  uint64_t total_ns{0};
  bool shared{false};
};
std::vector<WorkerSample> read_worker_samples(const std::filesystem::path& path);

}  // namespace mrm::bench
