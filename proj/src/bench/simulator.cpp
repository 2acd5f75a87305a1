#include "mrm/bench/simulator.hpp"

#include <limits>

namespace mrm::bench::sim {

namespace {

struct State {
  bool has_entry{false};
  uint64_t seq{0};
  uint64_t rc{0};
  uint64_t last_access{0};
  uint64_t use_count{0};
  bool fast{false};
  bool host{false};
  bool disk{false};
};

struct World {
  const SimConfig& cfg;
  const std::vector<SimModel>& models;
  std::vector<State> st;
  uint64_t next_seq{1};
  uint64_t fast_used{0};
  uint64_t host_used{0};
  uint64_t disk_used{0};

  explicit World(const SimConfig& c, const std::vector<SimModel>& m) : cfg(c), models(m) {
    st.resize(models.size());
    for (size_t i = 0; i < models.size(); ++i) {
      if (models[i].on_disk) {
        st[i].has_entry = true;
        st[i].seq = next_seq++;
        st[i].disk = true;
        disk_used += models[i].file_bytes;
      }
    }
  }

  void touch_entry(uint32_t idx) {
    if (!st[idx].has_entry) {
      st[idx].has_entry = true;
      st[idx].seq = next_seq++;
    }
  }

  uint64_t metric(uint32_t idx) const {
    return cfg.policy == cache::Policy::LRU ? st[idx].last_access : st[idx].use_count;
  }

  // Scans every entry fresh; returns the next victim for the tier, or -1.
  int pick_victim(int tier, uint32_t loading_idx) const {
    int best = -1;
    for (uint32_t i = 0; i < st.size(); ++i) {
      if (i == loading_idx) continue;
      if (!st[i].has_entry || st[i].rc != 0) continue;
      bool resident = tier == 0 ? st[i].fast : tier == 1 ? st[i].host : st[i].disk;
      if (!resident) continue;
      if (best < 0 || metric(i) < metric(uint32_t(best)) ||
          (metric(i) == metric(uint32_t(best)) && st[i].seq < st[uint32_t(best)].seq))
        best = int(i);
    }
    return best;
  }

  uint64_t tier_bytes(int tier, uint32_t idx) const {
    return tier == 2 ? models[idx].file_bytes : models[idx].weights_bytes;
  }

  uint64_t tier_capacity(int tier) const {
    return tier == 0 ? cfg.fast_capacity : tier == 1 ? cfg.host_capacity : cfg.disk_capacity;
  }

  uint64_t& tier_used(int tier) { return tier == 0 ? fast_used : tier == 1 ? host_used : disk_used; }

  uint64_t evictable_bytes(int tier, uint32_t loading_idx) const {
    uint64_t sum = 0;
    for (uint32_t i = 0; i < st.size(); ++i) {
      if (i == loading_idx) continue;
      if (!st[i].has_entry || st[i].rc != 0) continue;
      bool resident = tier == 0 ? st[i].fast : tier == 1 ? st[i].host : st[i].disk;
      if (resident) sum += tier_bytes(tier, i);
    }
    return sum;
  }

  void drop(int tier, uint32_t idx) {
    tier_used(tier) -= tier_bytes(tier, idx);
    if (tier == 0) st[idx].fast = false;
    else if (tier == 1) st[idx].host = false;
    else st[idx].disk = false;
  }

  // Greedy policy-order reclamation until free >= need. Feasibility is
  // checked before evicting anything. Returns false when infeasible.
  bool reclaim(int tier, uint64_t need, std::vector<uint32_t>& evicted, uint32_t loading_idx) {
    uint64_t cap = tier_capacity(tier);
    uint64_t used = tier == 0 ? fast_used : tier == 1 ? host_used : disk_used;
    uint64_t free = cap > used ? cap - used : 0;
    if (need <= free) return true;
    if (free + evictable_bytes(tier, loading_idx) < need) return false;
    while (free < need) {
      int v = pick_victim(tier, loading_idx);
      free += tier_bytes(tier, uint32_t(v));
      drop(tier, uint32_t(v));
      evicted.push_back(uint32_t(v));
    }
    return true;
  }
};

const uint32_t kNoLoading = std::numeric_limits<uint32_t>::max();

}  // namespace

const char* sim_outcome_name(SimOutcome o) {
  switch (o) {
    case SimOutcome::FastHit: return "fast_hit";
    case SimOutcome::HostHit: return "host_hit";
    case SimOutcome::DiskLoad: return "disk_load";
    case SimOutcome::RemoteFetch: return "remote_fetch";
    case SimOutcome::ErrNotFound: return "err_not_found";
    case SimOutcome::ErrTooLarge: return "err_too_large";
    case SimOutcome::ErrNoEvictableSpace: return "err_no_evictable";
    case SimOutcome::ErrNotOpen: return "err_not_open";
  }
  return "?";
}

std::vector<SimEvent> simulate(const SimConfig& cfg, const std::vector<SimModel>& models,
                               const std::vector<TraceOp>& trace, const LatencyModel& lat) {
  World w(cfg, models);
  std::vector<SimEvent> events;
  events.reserve(trace.size());

  for (size_t step = 0; step < trace.size(); ++step) {
    const TraceOp& op = trace[step];
    const uint64_t now = step + 1;
    const uint32_t i = op.model;
    const SimModel& m = models[i];
    SimEvent ev;

    auto finish = [&]() {
      ev.fast_used = w.fast_used;
      ev.host_used = w.host_used;
      ev.refcount = i < w.st.size() ? w.st[i].rc : 0;
      events.push_back(ev);
    };

    if (op.kind == TraceOp::Kind::Close) {
      if (!w.st[i].has_entry || w.st[i].rc == 0) {
        ev.outcome = SimOutcome::ErrNotOpen;
        finish();
        continue;
      }
      w.st[i].rc -= 1;
      if (cfg.eager_reclaim && w.st[i].rc == 0) {
        if (w.st[i].fast) {
          w.drop(0, i);
          ev.evicted_fast.push_back(i);
        }
        if (w.st[i].host) {
          w.drop(1, i);
          ev.evicted_host.push_back(i);
        }
      }
      ev.outcome = SimOutcome::FastHit;  // unused for closes
      finish();
      continue;
    }

    // Open.
    double latency = lat.compute_s;
    if (w.st[i].has_entry && w.st[i].fast) {
      w.st[i].rc += 1;
      w.st[i].last_access = now;
      w.st[i].use_count += 1;
      ev.outcome = SimOutcome::FastHit;
      latency += double(m.object_count) * (lat.export_overhead + lat.attach_overhead);
      ev.modeled_latency_s = latency;
      finish();
      continue;
    }

    bool host_hit = w.st[i].has_entry && w.st[i].host;
    bool fetched = false;
    if (!host_hit) {
      bool have_disk = w.st[i].has_entry && w.st[i].disk;
      if (!have_disk && !m.on_remote) {
        ev.outcome = SimOutcome::ErrNotFound;
        finish();
        continue;
      }
      fetched = !have_disk;
    }
    w.touch_entry(i);

    // Fetched files join the disk cache when the budget allows; otherwise
    // the download is temporary and is deleted once the load settles.
    bool temp_file = false;
    if (fetched) {
      if (m.file_bytes <= cfg.disk_capacity &&
          w.reclaim(2, m.file_bytes, ev.evicted_disk, i)) {
        w.st[i].disk = true;
        w.disk_used += m.file_bytes;
      } else {
        temp_file = true;
      }
      latency += double(m.file_bytes) / lat.remote_bw;
    }

    if (m.weights_bytes > cfg.fast_capacity) {
      if (temp_file) ev.evicted_disk.push_back(i);
      ev.outcome = SimOutcome::ErrTooLarge;
      finish();
      continue;
    }
    if (!w.reclaim(0, m.weights_bytes, ev.evicted_fast, i)) {
      if (temp_file) ev.evicted_disk.push_back(i);
      ev.outcome = SimOutcome::ErrNoEvictableSpace;
      finish();
      continue;
    }
    w.fast_used += m.weights_bytes;

    bool staged = false;
    if (!host_hit && m.weights_bytes <= cfg.host_capacity &&
        w.reclaim(1, m.weights_bytes, ev.evicted_host, i)) {
      w.host_used += m.weights_bytes;
      staged = true;
    }

    if (temp_file) ev.evicted_disk.push_back(i);

    w.st[i].fast = true;
    if (staged) w.st[i].host = true;
    w.st[i].rc += 1;
    w.st[i].last_access = now;
    w.st[i].use_count += 1;

    if (host_hit) {
      ev.outcome = SimOutcome::HostHit;
    } else {
      ev.outcome = fetched ? SimOutcome::RemoteFetch : SimOutcome::DiskLoad;
      latency += double(m.file_bytes) / lat.disk_bw;
    }
    latency += double(m.weights_bytes) / lat.copy_bw;
    latency += double(m.object_count) * (lat.export_overhead + lat.attach_overhead);
    ev.modeled_latency_s = latency;
    finish();
  }
  return events;
}

}  // namespace mrm::bench::sim
