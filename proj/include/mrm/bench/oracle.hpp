#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mrm/bench/simulator.hpp"
#include "mrm/cache_core.hpp"

namespace mrm::bench {

// Cross-checks the live placement manager against the reference simulator on
// randomized open/close traces, and audits the safety invariants (no pinned
// eviction, budgets respected, refcount conservation) along the way.

// In-memory TierBackend driven by a SimModel table: no real segments, disk
// or network. Records every evict_* call so a harness can compare eviction
// sequences op by op.
class FakeBackend : public cache::TierBackend {
 public:
  explicit FakeBackend(std::vector<sim::SimModel> models);

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

  struct Evictions {
    std::vector<uint32_t> fast, host, disk;  // model indices in call order
  };
  Evictions take_evictions();

  static model::ModelKey key_of(uint32_t index);
  uint32_t index_of(const model::ModelKey& key) const;

 private:
  std::vector<sim::SimModel> models_;
  std::vector<bool> file_present_;
  std::vector<uint64_t> id_by_index_;
  Evictions pending_;
};

struct OracleParams {
  uint32_t traces{100};
  uint64_t seed{1};
  uint32_t max_models{64};
  uint32_t max_ops{10000};
  bool check_lru{true};
  bool check_lcu{true};
};

struct OracleReport {
  uint64_t traces_run{0};
  uint64_t ops_run{0};
  uint64_t divergences{0};
  uint64_t pinned_violations{0};
  uint64_t budget_violations{0};
  uint64_t refcount_violations{0};
  std::string first_divergence;

  bool clean() const {
    return divergences == 0 && pinned_violations == 0 && budget_violations == 0 &&
           refcount_violations == 0;
  }
};

OracleReport run_oracle(const OracleParams& params);

}  // namespace mrm::bench
