#include "mrm/cache_core.hpp"

#include <algorithm>
#include <chrono>

namespace mrm::cache {

namespace {

class PhaseClock {
 public:
  PhaseClock() : start_(std::chrono::steady_clock::now()) {}
  uint64_t stop() const {
    auto end = std::chrono::steady_clock::now();
    return uint64_t(std::chrono::duration_cast<std::chrono::nanoseconds>(end - start_).count());
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

uint64_t policy_metric(Policy p, uint64_t last_access, uint64_t use_count) {
  return p == Policy::LRU ? last_access : use_count;
}

}  // namespace

const char* tier_name(Tier t) {
  switch (t) {
    case Tier::Fast: return "fast";
    case Tier::Host: return "host";
    case Tier::LocalDisk: return "disk";
    case Tier::Remote: return "remote";
  }
  return "?";
}

const char* policy_name(Policy p) { return p == Policy::LRU ? "lru" : "lcu"; }

std::optional<Policy> policy_from_name(std::string_view s) {
  if (s == "lru" || s == "LRU") return Policy::LRU;
  if (s == "lcu" || s == "LCU") return Policy::LCU;
  return std::nullopt;
}

const char* outcome_name(Outcome o) {
  switch (o) {
    case Outcome::FastHit: return "fast_hit";
    case Outcome::HostHit: return "host_hit";
    case Outcome::DiskLoad: return "disk_load";
    case Outcome::RemoteFetch: return "remote_fetch";
  }
  return "?";
}

std::vector<Candidate> evict_candidates(Policy policy, std::vector<Candidate> entries) {
  std::erase_if(entries, [](const Candidate& c) { return c.refcount != 0; });
  std::sort(entries.begin(), entries.end(), [policy](const Candidate& a, const Candidate& b) {
    uint64_t ma = policy_metric(policy, a.last_access, a.use_count);
    uint64_t mb = policy_metric(policy, b.last_access, b.use_count);
    if (ma != mb) return ma < mb;
    return a.seq < b.seq;
  });
  return entries;
}

CacheCore::CacheCore(CoreConfig cfg, TierBackend& backend) : cfg_(cfg), backend_(backend) {}

ModelEntry* CacheCore::find_locked(const model::ModelKey& key) {
  auto it = entries_.find(key);
  return it == entries_.end() ? nullptr : &it->second;
}

const ModelEntry* CacheCore::find_locked(const model::ModelKey& key) const {
  auto it = entries_.find(key);
  return it == entries_.end() ? nullptr : &it->second;
}

ModelEntry& CacheCore::ensure_entry_locked(const model::ModelKey& key) {
  auto it = entries_.find(key);
  if (it == entries_.end()) {
    ModelEntry e;
    e.key = key;
    e.model_id = next_model_id_++;
    e.seq = next_seq_++;
    it = entries_.emplace(key, std::move(e)).first;
  }
  return it->second;
}

uint64_t CacheCore::tier_used(Tier t) const { return used_[size_t(t)]; }

void CacheCore::evict_one_locked(ModelEntry& e, Tier tier) {
  switch (tier) {
    case Tier::Fast:
      // refcount == 0 was checked by the caller; never destroy a segment
      // under a live handle.
      backend_.evict_fast(e.model_id);
      e.fast = false;
      e.fast_segments.clear();
      used_[size_t(Tier::Fast)] -= e.weights_bytes;
      break;
    case Tier::Host:
      backend_.evict_host(e.model_id);
      e.host = false;
      used_[size_t(Tier::Host)] -= e.weights_bytes;
      break;
    case Tier::LocalDisk:
      backend_.evict_disk(e.key, e.disk_path);
      e.disk = false;
      used_[size_t(Tier::LocalDisk)] -= e.disk_bytes;
      e.disk_path.clear();
      e.disk_bytes = 0;
      break;
    case Tier::Remote:
      break;
  }
  ++evictions_[size_t(tier)];
}

std::vector<model::ModelKey> CacheCore::reclaim_locked(Tier tier, uint64_t bytes_needed,
                                                       Policy policy) {
  const uint64_t capacity =
      tier == Tier::Fast ? cfg_.fast_capacity_bytes
      : tier == Tier::Host ? cfg_.host_capacity_bytes
                           : cfg_.disk_capacity_bytes;
  uint64_t used = tier_used(tier);
  uint64_t free = capacity > used ? capacity - used : 0;
  if (bytes_needed <= free) return {};

  auto resident = [&](const ModelEntry& e) {
    switch (tier) {
      case Tier::Fast: return e.fast;
      case Tier::Host: return e.host;
      case Tier::LocalDisk: return e.disk;
      default: return false;
    }
  };
  auto entry_bytes = [&](const ModelEntry& e) {
    return tier == Tier::LocalDisk ? e.disk_bytes : e.weights_bytes;
  };

  std::vector<Candidate> cands;
  uint64_t evictable = 0;
  for (const auto& [k, e] : entries_) {
    if (!resident(e) || e.loading || e.refcount != 0) continue;
    cands.push_back({e.key, e.refcount, e.last_access, e.use_count, e.seq});
    evictable += entry_bytes(e);
  }
  if (free + evictable < bytes_needed)
    raise(Errc::NoEvictableSpace,
          std::string(tier_name(tier)) + " tier: need " + std::to_string(bytes_needed) +
              ", free " + std::to_string(free) + ", evictable " + std::to_string(evictable));

  cands = evict_candidates(policy, std::move(cands));
  std::vector<model::ModelKey> evicted;
  for (const auto& c : cands) {
    if (free >= bytes_needed) break;
    ModelEntry& e = *find_locked(c.key);
    uint64_t b = entry_bytes(e);
    evict_one_locked(e, tier);
    free += b;
    evicted.push_back(c.key);
  }
  return evicted;
}

std::vector<model::ModelKey> CacheCore::reclaim(Tier tier, uint64_t bytes_needed, Policy policy) {
  std::unique_lock lk(mu_);
  return reclaim_locked(tier, bytes_needed, policy);
}

PlacementResult CacheCore::export_result_locked(ModelEntry& e, Outcome outcome,
                                                const shm::ShareGranularity& g,
                                                PhaseTimings timings) {
  PhaseClock clock;
  PlacementResult r;
  r.outcome = outcome;
  r.model_id = e.model_id;
  r.manifest = *e.manifest;
  r.footprint = model::estimate_footprint(*e.manifest);
  r.segments = e.fast_segments;
  r.layout = shm::layout_for(*e.manifest, g);
  r.manifest_digest = e.manifest_digest;
  timings.handle_export_ns = clock.stop();
  r.timings = timings;
  cumulative_.fetch_ns += timings.fetch_ns;
  cumulative_.disk_read_ns += timings.disk_read_ns;
  cumulative_.host_to_fast_copy_ns += timings.host_to_fast_copy_ns;
  cumulative_.handle_export_ns += timings.handle_export_ns;
  return r;
}

PlacementResult CacheCore::open_model(const model::ModelKey& key, const shm::ShareGranularity& g,
                                      uint64_t now) {
  if (!model::valid_key(key)) raise(Errc::InvalidArgument, "malformed key " + model::to_string(key));
  if (!shm::valid_granularity(g)) raise(Errc::InvalidArgument, "invalid granularity");

  std::unique_lock lk(mu_);
  try {
    for (;;) {
      if (ModelEntry* e = find_locked(key); e && e->fast) {
        e->refcount += 1;
        e->last_access = now;
        e->use_count += 1;
        ++hits_[size_t(Tier::Fast)];
        ++open_requests_;
        return export_result_locked(*e, Outcome::FastHit, g, {});
      }
      auto inflight = inflight_.find(key);
      if (inflight == inflight_.end()) break;
      auto guard = inflight->second;
      load_cv_.wait(lk, [&] { return guard->done; });
    }

    // Single-flight loader for this key.
    auto flight = std::make_shared<Inflight>();
    inflight_.emplace(key, flight);
    if (ModelEntry* e = find_locked(key)) e->loading = true;
    auto settle = [&](bool rollback_entry_loading) {
      if (rollback_entry_loading) {
        if (ModelEntry* e = find_locked(key)) e->loading = false;
      }
      inflight_.erase(key);
      flight->done = true;
      load_cv_.notify_all();
    };

    PhaseTimings timings;
    Outcome outcome;
    model::ModelManifest manifest;
    std::string path;
    bool fetched = false;
    uint64_t fetched_bytes = 0;
    {
      ModelEntry* e = find_locked(key);
      bool host_hit = e && e->host;
      lk.unlock();
      try {
        if (host_hit) {
          outcome = Outcome::HostHit;
          manifest = *e->manifest;  // manifest immutable once set; safe outside the lock
          path = e->disk_path;
        } else {
          Located loc = backend_.locate(key);
          if (loc.kind == Located::Kind::Absent) raise(Errc::NotFound, model::to_string(key));
          if (loc.kind == Located::Kind::Remote) {
            PhaseClock c;
            FetchResult fr = backend_.fetch_remote(key);
            timings.fetch_ns = c.stop();
            path = fr.path;
            fetched_bytes = fr.file_bytes;
            fetched = true;
            outcome = Outcome::RemoteFetch;
          } else {
            path = loc.path;
            fetched_bytes = loc.file_bytes;
            outcome = Outcome::DiskLoad;
          }
          manifest = backend_.read_manifest(key, path);
        }
      } catch (...) {
        lk.lock();
        settle(true);
        throw;
      }
      lk.lock();
    }

    const uint64_t weights = model::estimate_footprint(manifest).weights_bytes;

    ModelEntry& e = ensure_entry_locked(key);
    e.loading = true;
    if (!e.manifest) e.manifest = manifest;
    e.weights_bytes = weights;

    // Disk-tier registration for freshly fetched files (reclaim first so the
    // budget never exceeds capacity; if the cache cannot hold the file we
    // still serve the load and delete the file afterwards).
    bool disk_unregistered = false;
    if (fetched) {
      ++remote_fetches_;
      if (fetched_bytes <= cfg_.disk_capacity_bytes) {
        try {
          reclaim_locked(Tier::LocalDisk, fetched_bytes, cfg_.policy);
          e.disk = true;
          e.disk_path = path;
          e.disk_bytes = fetched_bytes;
          used_[size_t(Tier::LocalDisk)] += fetched_bytes;
        } catch (const Error& err) {
          if (err.code() != Errc::NoEvictableSpace) {
            settle(true);
            throw;
          }
          disk_unregistered = true;
        }
      } else {
        disk_unregistered = true;
      }
    } else if (outcome == Outcome::DiskLoad && !e.disk) {
      // Present in the cache directory but not registered (file appeared
      // after the startup scan). Track it if the budget allows.
      if (used_[size_t(Tier::LocalDisk)] + fetched_bytes <= cfg_.disk_capacity_bytes) {
        e.disk = true;
        e.disk_path = path;
        e.disk_bytes = fetched_bytes;
        used_[size_t(Tier::LocalDisk)] += fetched_bytes;
      }
    }

    // A fetched file that could not join the disk budget is temporary: it
    // serves this load and is deleted on every exit path.
    auto drop_temp_file = [&] {
      if (disk_unregistered) backend_.evict_disk(key, path);
    };

    // Fast-tier admission.
    if (weights > cfg_.fast_capacity_bytes) {
      drop_temp_file();
      settle(true);
      raise(Errc::TooLargeForFast, model::to_string(key) + ": " + std::to_string(weights) +
                                       " bytes > fast capacity " +
                                       std::to_string(cfg_.fast_capacity_bytes));
    }
    try {
      reclaim_locked(Tier::Fast, weights, cfg_.policy);
    } catch (...) {
      drop_temp_file();
      settle(true);
      throw;
    }
    used_[size_t(Tier::Fast)] += weights;  // reservation

    // Host-tier admission; on pressure the host copy is skipped and the
    // segment is filled straight from disk.
    bool stage_to_host = false;
    if (outcome != Outcome::HostHit && weights <= cfg_.host_capacity_bytes) {
      try {
        reclaim_locked(Tier::Host, weights, cfg_.policy);
        stage_to_host = true;
        used_[size_t(Tier::Host)] += weights;
      } catch (const Error& err) {
        if (err.code() != Errc::NoEvictableSpace) {
          used_[size_t(Tier::Fast)] -= weights;
          drop_temp_file();
          settle(true);
          throw;
        }
      }
    }

    // Physical load outside the lock.
    lk.unlock();
    FastPublication pub;
    bool from_host = outcome == Outcome::HostHit;
    try {
      if (stage_to_host) {
        PhaseClock c;
        backend_.stage_host(e.model_id, manifest, path);
        timings.disk_read_ns = c.stop();
        from_host = true;
      }
      {
        PhaseClock c;
        pub = backend_.publish_fast(e.model_id, manifest, from_host, path);
        uint64_t ns = c.stop();
        // A host-backed publish is the memory copy phase; a direct publish
        // is the disk read itself.
        if (from_host)
          timings.host_to_fast_copy_ns = ns;
        else
          timings.disk_read_ns += ns;
      }
    } catch (...) {
      lk.lock();
      used_[size_t(Tier::Fast)] -= weights;
      if (stage_to_host) {
        used_[size_t(Tier::Host)] -= weights;
        backend_.evict_host(e.model_id);
      }
      drop_temp_file();
      settle(true);
      throw;
    }
    lk.lock();

    if (outcome != Outcome::HostHit) ++disk_reads_;
    if (stage_to_host) e.host = true;
    drop_temp_file();

    e.fast = true;
    e.fast_segments = pub.segments;
    e.manifest_digest = pub.manifest_digest;
    e.refcount += 1;
    e.last_access = now;
    e.use_count += 1;

    ++misses_[size_t(Tier::Fast)];
    switch (outcome) {
      case Outcome::HostHit:
        ++hits_[size_t(Tier::Host)];
        break;
      case Outcome::DiskLoad:
        ++misses_[size_t(Tier::Host)];
        ++hits_[size_t(Tier::LocalDisk)];
        break;
      case Outcome::RemoteFetch:
        ++misses_[size_t(Tier::Host)];
        ++misses_[size_t(Tier::LocalDisk)];
        ++hits_[size_t(Tier::Remote)];
        break;
      default:
        break;
    }
    ++open_requests_;

    settle(true);
    return export_result_locked(e, outcome, g, timings);
  } catch (...) {
    ++open_errors_;
    throw;
  }
}

uint64_t CacheCore::close_model(const model::ModelKey& key) {
  std::unique_lock lk(mu_);
  ModelEntry* e = find_locked(key);
  if (!e) raise(Errc::UnknownModel, model::to_string(key));
  if (e->refcount == 0) raise(Errc::NotOpen, model::to_string(key));
  e->refcount -= 1;
  if (cfg_.eager_reclaim && e->refcount == 0 && !e->loading) {
    if (e->fast) {
      backend_.evict_fast(e->model_id);
      e->fast = false;
      e->fast_segments.clear();
      used_[size_t(Tier::Fast)] -= e->weights_bytes;
    }
    if (e->host) {
      backend_.evict_host(e->model_id);
      e->host = false;
      used_[size_t(Tier::Host)] -= e->weights_bytes;
    }
  }
  return e->refcount;
}

StatsSnapshot CacheCore::stats() const {
  std::unique_lock lk(mu_);
  StatsSnapshot s;
  const uint64_t caps[kTierCount] = {cfg_.fast_capacity_bytes, cfg_.host_capacity_bytes,
                                     cfg_.disk_capacity_bytes, 0};
  for (size_t t = 0; t < kTierCount; ++t) {
    s.tiers[t] = {hits_[t], misses_[t], evictions_[t], used_[t], caps[t]};
  }
  for (const auto& [k, e] : entries_) {
    ModelStats ms;
    ms.key = e.key;
    ms.refcount = e.refcount;
    ms.use_count = e.use_count;
    ms.last_access = e.last_access;
    if (e.fast) ms.residency |= 1 << size_t(Tier::Fast);
    if (e.host) ms.residency |= 1 << size_t(Tier::Host);
    if (e.disk) ms.residency |= 1 << size_t(Tier::LocalDisk);
    s.models.push_back(std::move(ms));
  }
  s.open_requests = open_requests_;
  s.open_errors = open_errors_;
  s.disk_reads = disk_reads_;
  s.remote_fetches = remote_fetches_;
  s.cumulative = cumulative_;
  return s;
}

void CacheCore::register_disk_file(const model::ModelKey& key, const std::string& path,
                                   uint64_t bytes) {
  std::unique_lock lk(mu_);
  if (used_[size_t(Tier::LocalDisk)] + bytes > cfg_.disk_capacity_bytes)
    raise(Errc::InvalidArgument, "disk cache contents exceed disk_capacity_bytes at " + path);
  ModelEntry& e = ensure_entry_locked(key);
  if (e.disk) return;
  e.disk = true;
  e.disk_path = path;
  e.disk_bytes = bytes;
  used_[size_t(Tier::LocalDisk)] += bytes;
}

uint64_t CacheCore::used_bytes(Tier t) const {
  std::unique_lock lk(mu_);
  return used_[size_t(t)];
}

uint64_t CacheCore::capacity_bytes(Tier t) const {
  switch (t) {
    case Tier::Fast: return cfg_.fast_capacity_bytes;
    case Tier::Host: return cfg_.host_capacity_bytes;
    case Tier::LocalDisk: return cfg_.disk_capacity_bytes;
    default: return 0;
  }
}

uint32_t CacheCore::refcount(const model::ModelKey& key) const {
  std::unique_lock lk(mu_);
  const ModelEntry* e = find_locked(key);
  return e ? e->refcount : 0;
}

bool CacheCore::drained() const {
  std::unique_lock lk(mu_);
  for (const auto& [k, e] : entries_)
    if (e.refcount != 0) return false;
  return true;
}

void CacheCore::drop_all() {
  std::unique_lock lk(mu_);
  for (auto& [k, e] : entries_) {
    if (e.fast) {
      backend_.evict_fast(e.model_id);
      e.fast = false;
      e.fast_segments.clear();
      used_[size_t(Tier::Fast)] -= e.weights_bytes;
    }
    if (e.host) {
      backend_.evict_host(e.model_id);
      e.host = false;
      used_[size_t(Tier::Host)] -= e.weights_bytes;
    }
  }
}

}  // namespace mrm::cache
