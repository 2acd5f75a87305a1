#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <atomic>
#include <random>
#include <thread>

#include "mrm/bench/oracle.hpp"
#include "mrm/cache_core.hpp"

using namespace mrm;
using namespace mrm::cache;
using bench::FakeBackend;
using bench::sim::SimModel;

namespace {

constexpr uint64_t MB = 1'000'000;

SimModel disk_model(const std::string& name, uint64_t weights) {
  SimModel m;
  m.name = name;
  m.weights_bytes = weights;
  m.file_bytes = weights + 64;
  m.on_disk = true;
  return m;
}

struct Rig {
  std::vector<SimModel> models;
  std::unique_ptr<FakeBackend> backend;
  std::unique_ptr<CacheCore> core;

  Rig(std::vector<SimModel> ms, CoreConfig cfg) : models(std::move(ms)) {
    backend = std::make_unique<FakeBackend>(models);
    core = std::make_unique<CacheCore>(cfg, *backend);
    for (uint32_t i = 0; i < models.size(); ++i)
      if (models[i].on_disk)
        core->register_disk_file(FakeBackend::key_of(i), "fake", models[i].file_bytes);
  }
  model::ModelKey key(uint32_t i) const { return FakeBackend::key_of(i); }
};

CoreConfig config_1gb() {
  CoreConfig cfg;
  cfg.fast_capacity_bytes = 1000 * MB;
  cfg.host_capacity_bytes = 2000 * MB;
  cfg.disk_capacity_bytes = 100'000 * MB;
  return cfg;
}

}  // namespace

TEST_CASE("state machine base case: cold open is a disk load") {
  Rig rig({disk_model("m0", 200 * MB)}, config_1gb());
  PlacementResult r = rig.core->open_model(rig.key(0), shm::ShareGranularity::model(), 1);
  CHECK(r.outcome == Outcome::DiskLoad);
  CHECK(rig.core->refcount(rig.key(0)) == 1);
  CHECK(rig.core->used_bytes(Tier::Fast) == 200 * MB);
  CHECK(r.footprint.weights_bytes == 200 * MB);
  REQUIRE(r.segments.size() == 1);
  REQUIRE(!r.layout.objects.empty());

  StatsSnapshot s = rig.core->stats();
  CHECK(s.disk_reads == 1);

  // Immediate reopen: hit, refcount 2, no further disk reads.
  PlacementResult r2 = rig.core->open_model(rig.key(0), shm::ShareGranularity::model(), 2);
  CHECK(r2.outcome == Outcome::FastHit);
  CHECK(rig.core->refcount(rig.key(0)) == 2);
  CHECK(rig.core->stats().disk_reads == 1);
  CHECK(rig.core->used_bytes(Tier::Fast) == 200 * MB);  // single copy

  // Skipped phases stay zero on a hit.
  CHECK(r2.timings.fetch_ns == 0);
  CHECK(r2.timings.disk_read_ns == 0);
  CHECK(r2.timings.host_to_fast_copy_ns == 0);
}

TEST_CASE("LRU eviction picks the stalest unpinned entry") {
  // Fast 1 GB holding A(600, t1) and B(300, t2), both closed; open C(500).
  Rig rig({disk_model("a", 600 * MB), disk_model("b", 300 * MB), disk_model("c", 500 * MB)},
          config_1gb());
  rig.core->open_model(rig.key(0), shm::ShareGranularity::model(), 1);
  rig.core->close_model(rig.key(0));
  rig.core->open_model(rig.key(1), shm::ShareGranularity::model(), 2);
  rig.core->close_model(rig.key(1));
  rig.backend->take_evictions();

  PlacementResult r = rig.core->open_model(rig.key(2), shm::ShareGranularity::model(), 3);
  CHECK(r.outcome == Outcome::DiskLoad);
  auto ev = rig.backend->take_evictions();
  REQUIRE(ev.fast.size() == 1);
  CHECK(ev.fast[0] == 0);  // A was least recently used
  CHECK(rig.core->used_bytes(Tier::Fast) == 800 * MB);
}

TEST_CASE("close semantics") {
  CoreConfig cfg = config_1gb();
  SUBCASE("default keeps residency at refcount zero") {
    Rig rig({disk_model("m", 100 * MB)}, cfg);
    rig.core->open_model(rig.key(0), shm::ShareGranularity::model(), 1);
    CHECK(rig.core->close_model(rig.key(0)) == 0);
    CHECK(rig.core->used_bytes(Tier::Fast) == 100 * MB);
    PlacementResult r = rig.core->open_model(rig.key(0), shm::ShareGranularity::model(), 2);
    CHECK(r.outcome == Outcome::FastHit);
  }
  SUBCASE("eager reclaim frees on the last close") {
    cfg.eager_reclaim = true;
    Rig rig({disk_model("m", 100 * MB)}, cfg);
    rig.core->open_model(rig.key(0), shm::ShareGranularity::model(), 1);
    CHECK(rig.core->used_bytes(Tier::Fast) == 100 * MB);
    rig.core->close_model(rig.key(0));
    CHECK(rig.core->used_bytes(Tier::Fast) == 0);
    CHECK(rig.core->used_bytes(Tier::Host) == 0);
  }
  SUBCASE("close below zero and unknown models are errors") {
    Rig rig({disk_model("m", 100 * MB)}, cfg);
    try {
      rig.core->close_model(rig.key(0));
      FAIL("expected NotOpen");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::NotOpen);
    }
    try {
      rig.core->close_model({"test", "absent", "1.0"});
      FAIL("expected UnknownModel");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::UnknownModel);
    }
  }
}

TEST_CASE("evict_candidates ordering") {
  std::vector<Candidate> entries = {
      {{"t", "a", "1"}, 0, 1, 5, 1},
      {{"t", "b", "1"}, 0, 2, 2, 2},
      {{"t", "c", "1"}, 1, 0, 0, 3},
  };
  SUBCASE("LRU ascending last_access, pinned excluded") {
    auto v = evict_candidates(Policy::LRU, entries);
    REQUIRE(v.size() == 2);
    CHECK(v[0].key.name == "a");
    CHECK(v[1].key.name == "b");
  }
  SUBCASE("LCU ascending use_count") {
    auto v = evict_candidates(Policy::LCU, entries);
    REQUIRE(v.size() == 2);
    CHECK(v[0].key.name == "b");
    CHECK(v[1].key.name == "a");
  }
  SUBCASE("all pinned yields empty") {
    for (auto& e : entries) e.refcount = 1;
    CHECK(evict_candidates(Policy::LRU, entries).empty());
  }
  SUBCASE("ties break by insertion sequence") {
    std::vector<Candidate> tied = {
        {{"t", "x", "1"}, 0, 7, 7, 9},
        {{"t", "y", "1"}, 0, 7, 7, 4},
    };
    auto v = evict_candidates(Policy::LRU, tied);
    CHECK(v[0].key.name == "y");
  }
}

TEST_CASE("reclaim is greedy until satisfied") {
  // free 100, need 300, evictables (150 at t1, 250 at t2) -> both evicted.
  CoreConfig cfg;
  cfg.fast_capacity_bytes = 500;
  cfg.host_capacity_bytes = 8;  // too small to stage anything
  cfg.disk_capacity_bytes = 10000;
  Rig rig({disk_model("a", 152), disk_model("b", 248)}, cfg);
  rig.core->open_model(rig.key(0), shm::ShareGranularity::model(), 1);
  rig.core->close_model(rig.key(0));
  rig.core->open_model(rig.key(1), shm::ShareGranularity::model(), 2);
  rig.core->close_model(rig.key(1));
  CHECK(rig.core->used_bytes(Tier::Fast) == 400);  // free == 100

  SUBCASE("covers the deficit in policy order") {
    auto evicted = rig.core->reclaim(Tier::Fast, 300, Policy::LRU);
    REQUIRE(evicted.size() == 2);
    CHECK(evicted[0].name == "m0");
    CHECK(evicted[1].name == "m1");
    CHECK(rig.core->used_bytes(Tier::Fast) == 0);
  }
  SUBCASE("no-op when already free") {
    CHECK(rig.core->reclaim(Tier::Fast, 100, Policy::LRU).empty());
    CHECK(rig.core->used_bytes(Tier::Fast) == 400);
  }
  SUBCASE("pinned-only cache cannot reclaim") {
    rig.core->open_model(rig.key(0), shm::ShareGranularity::model(), 3);
    rig.core->open_model(rig.key(1), shm::ShareGranularity::model(), 4);
    try {
      rig.core->reclaim(Tier::Fast, 300, Policy::LRU);
      FAIL("expected NoEvictableSpace");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::NoEvictableSpace);
    }
    // nothing was evicted on the failure path
    CHECK(rig.core->used_bytes(Tier::Fast) == 400);
  }
}

TEST_CASE("open errors") {
  CoreConfig cfg = config_1gb();
  SUBCASE("too large for the fast tier") {
    Rig rig({disk_model("big", 1001 * MB)}, cfg);
    try {
      rig.core->open_model(rig.key(0), shm::ShareGranularity::model(), 1);
      FAIL("expected TooLargeForFast");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::TooLargeForFast);
    }
  }
  SUBCASE("absent everywhere") {
    SimModel ghost;
    ghost.name = "ghost";
    ghost.weights_bytes = 8;
    ghost.file_bytes = 72;
    ghost.on_disk = false;
    ghost.on_remote = false;
    Rig rig({ghost}, cfg);
    try {
      rig.core->open_model(rig.key(0), shm::ShareGranularity::model(), 1);
      FAIL("expected NotFound");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::NotFound);
    }
  }
  SUBCASE("everything pinned") {
    Rig rig({disk_model("a", 600 * MB), disk_model("b", 600 * MB)}, cfg);
    rig.core->open_model(rig.key(0), shm::ShareGranularity::model(), 1);
    try {
      rig.core->open_model(rig.key(1), shm::ShareGranularity::model(), 2);
      FAIL("expected NoEvictableSpace");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::NoEvictableSpace);
    }
    // the failed open must not leak budget
    CHECK(rig.core->used_bytes(Tier::Fast) == 600 * MB);
  }
}

TEST_CASE("stats snapshot") {
  Rig rig({disk_model("m", 100 * MB)}, config_1gb());
  StatsSnapshot fresh = rig.core->stats();
  for (size_t t = 0; t < kTierCount; ++t) {
    CHECK(fresh.tiers[t].hits == 0);
    CHECK(fresh.tiers[t].misses == 0);
    CHECK(fresh.tiers[t].evictions == 0);
  }
  CHECK(fresh.open_requests == 0);

  rig.core->open_model(rig.key(0), shm::ShareGranularity::model(), 1);
  rig.core->open_model(rig.key(0), shm::ShareGranularity::model(), 2);
  StatsSnapshot s = rig.core->stats();
  CHECK(s.tiers[0].hits == 1);
  CHECK(s.tiers[0].misses == 1);
  CHECK(s.open_requests == 2);
  CHECK(s.tiers[0].hits + s.tiers[0].misses == s.open_requests);
  CHECK(s.tiers[0].used_bytes == 100 * MB);
  REQUIRE(s.models.size() == 1);
  CHECK(s.models[0].refcount == 2);
  CHECK(s.models[0].use_count == 2);
}

TEST_CASE("host tier serves the second cold open") {
  // Evict from fast but keep host residency: second open is a host hit.
  CoreConfig cfg;
  cfg.fast_capacity_bytes = 1000 * MB;
  cfg.host_capacity_bytes = 2000 * MB;
  cfg.disk_capacity_bytes = 100'000 * MB;
  Rig rig({disk_model("a", 800 * MB), disk_model("b", 800 * MB)}, cfg);

  rig.core->open_model(rig.key(0), shm::ShareGranularity::model(), 1);
  rig.core->close_model(rig.key(0));
  // b evicts a from fast; a's host copy survives (host fits both).
  rig.core->open_model(rig.key(1), shm::ShareGranularity::model(), 2);
  rig.core->close_model(rig.key(1));

  PlacementResult r = rig.core->open_model(rig.key(0), shm::ShareGranularity::model(), 3);
  CHECK(r.outcome == Outcome::HostHit);
  CHECK(rig.core->stats().disk_reads == 1 + 1);  // no third read
}

TEST_CASE("single-flight: concurrent cold opens load once") {
  Rig rig({disk_model("m", 100 * MB)}, config_1gb());
  constexpr int kThreads = 8;
  std::atomic<uint64_t> now{0};
  std::atomic<int> fast_hits{0}, loads{0};
  std::vector<std::thread> threads;
  for (int i = 0; i < kThreads; ++i) {
    threads.emplace_back([&] {
      PlacementResult r =
          rig.core->open_model(rig.key(0), shm::ShareGranularity::model(), now.fetch_add(1) + 1);
      if (r.outcome == Outcome::FastHit) ++fast_hits;
      else ++loads;
    });
  }
  for (auto& t : threads) t.join();
  CHECK(loads.load() == 1);
  CHECK(fast_hits.load() == kThreads - 1);
  CHECK(rig.core->stats().disk_reads == 1);
  CHECK(rig.core->used_bytes(Tier::Fast) == 100 * MB);  // exactly one copy
  CHECK(rig.core->refcount(rig.key(0)) == kThreads);
}

TEST_CASE("hit monotonicity: doubling fast capacity never loses hits") {
  std::mt19937_64 rng(4242);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<SimModel> models;
    int n = 6 + int(rng() % 6);
    for (int i = 0; i < n; ++i)
      models.push_back(disk_model("m" + std::to_string(i), (8 + rng() % 200) * 8));

    std::vector<uint32_t> trace;
    for (int i = 0; i < 300; ++i) trace.push_back(uint32_t(rng() % n));

    auto fast_hits = [&](uint64_t capacity) {
      CoreConfig cfg;
      cfg.fast_capacity_bytes = capacity;
      cfg.host_capacity_bytes = 8;       // host disabled: pure fast-tier dynamics
      cfg.disk_capacity_bytes = 1 << 30;
      Rig rig(models, cfg);
      uint64_t hits = 0;
      for (size_t step = 0; step < trace.size(); ++step) {
        try {
          PlacementResult r = rig.core->open_model(rig.key(trace[step]),
                                                   shm::ShareGranularity::model(), step + 1);
          if (r.outcome == Outcome::FastHit) ++hits;
          rig.core->close_model(rig.key(trace[step]));
        } catch (const Error&) {
        }
      }
      return hits;
    };

    uint64_t base_cap = (400 + rng() % 400) * 8;
    CHECK(fast_hits(base_cap * 2) >= fast_hits(base_cap));
  }
}

TEST_CASE("oracle equivalence (smoke; the acceptance suite runs the full load)") {
  bench::OracleParams params;
  params.traces = 60;
  params.seed = 2025;
  params.max_models = 24;
  params.max_ops = 800;
  bench::OracleReport report = bench::run_oracle(params);
  CHECK(report.traces_run == 60);
  CHECK(report.divergences == 0);
  CHECK(report.pinned_violations == 0);
  CHECK(report.budget_violations == 0);
  CHECK(report.refcount_violations == 0);
  if (!report.first_divergence.empty()) MESSAGE(report.first_divergence);
}
