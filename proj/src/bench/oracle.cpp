#include "mrm/bench/oracle.hpp"

#include <random>
#include <sstream>

namespace mrm::bench {

using sim::SimModel;
using sim::SimOutcome;
using sim::TraceOp;

// --- FakeBackend -----------------------------------------------------------

FakeBackend::FakeBackend(std::vector<SimModel> models) : models_(std::move(models)) {
  file_present_.resize(models_.size());
  id_by_index_.assign(models_.size(), 0);
  for (size_t i = 0; i < models_.size(); ++i) file_present_[i] = models_[i].on_disk;
}

model::ModelKey FakeBackend::key_of(uint32_t index) {
  return {"trace", "m" + std::to_string(index), "1"};
}

uint32_t FakeBackend::index_of(const model::ModelKey& key) const {
  return uint32_t(std::stoul(key.name.substr(1)));
}

cache::Located FakeBackend::locate(const model::ModelKey& key) {
  uint32_t i = index_of(key);
  if (file_present_[i])
    return {cache::Located::Kind::DiskCache, "fake://" + std::to_string(i),
            models_[i].file_bytes};
  if (models_[i].on_remote) return {cache::Located::Kind::Remote, "", 0};
  return {cache::Located::Kind::Absent, "", 0};
}

cache::FetchResult FakeBackend::fetch_remote(const model::ModelKey& key) {
  uint32_t i = index_of(key);
  if (!models_[i].on_remote) raise(Errc::RemoteNotFound, key.name);
  file_present_[i] = true;
  return {"fake://" + std::to_string(i), models_[i].file_bytes};
}

model::ModelManifest FakeBackend::read_manifest(const model::ModelKey& key,
                                                const std::string&) {
  uint32_t i = index_of(key);
  return model::make_manifest(key, {{"t0", {models_[i].weights_bytes / 8}, model::DType::F64}},
                              /*workspace=*/0);
}

void FakeBackend::stage_host(uint64_t model_id, const model::ModelManifest& m,
                             const std::string&) {
  id_by_index_[index_of(m.key)] = model_id;
}

cache::FastPublication FakeBackend::publish_fast(uint64_t model_id,
                                                 const model::ModelManifest& m, bool,
                                                 const std::string&) {
  id_by_index_[index_of(m.key)] = model_id;
  cache::FastPublication pub;
  pub.segments.push_back({"fake-seg-" + std::to_string(model_id), 1, m.blob_bytes});
  return pub;
}

void FakeBackend::evict_fast(uint64_t model_id) {
  for (uint32_t i = 0; i < id_by_index_.size(); ++i)
    if (id_by_index_[i] == model_id) {
      pending_.fast.push_back(i);
      return;
    }
}

void FakeBackend::evict_host(uint64_t model_id) {
  for (uint32_t i = 0; i < id_by_index_.size(); ++i)
    if (id_by_index_[i] == model_id) {
      pending_.host.push_back(i);
      return;
    }
}

void FakeBackend::evict_disk(const model::ModelKey& key, const std::string&) {
  uint32_t i = index_of(key);
  file_present_[i] = false;
  pending_.disk.push_back(i);
}

FakeBackend::Evictions FakeBackend::take_evictions() {
  Evictions out = std::move(pending_);
  pending_ = {};
  return out;
}

// --- randomized-trace oracle ------------------------------------------------

namespace {

SimOutcome error_to_outcome(Errc code) {
  switch (code) {
    case Errc::NotFound:
    case Errc::RemoteNotFound:
      return SimOutcome::ErrNotFound;
    case Errc::TooLargeForFast: return SimOutcome::ErrTooLarge;
    case Errc::NoEvictableSpace: return SimOutcome::ErrNoEvictableSpace;
    case Errc::NotOpen:
    case Errc::UnknownModel:
      return SimOutcome::ErrNotOpen;
    default: raise(code, "unexpected error in oracle trace");
  }
}

SimOutcome placement_to_outcome(cache::Outcome o) {
  switch (o) {
    case cache::Outcome::FastHit: return SimOutcome::FastHit;
    case cache::Outcome::HostHit: return SimOutcome::HostHit;
    case cache::Outcome::DiskLoad: return SimOutcome::DiskLoad;
    case cache::Outcome::RemoteFetch: return SimOutcome::RemoteFetch;
  }
  return SimOutcome::FastHit;
}

std::string describe(const std::vector<uint32_t>& v) {
  std::string s = "[";
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(v[i]);
  }
  return s + "]";
}

struct TraceSetup {
  sim::SimConfig cfg;
  std::vector<SimModel> models;
  std::vector<TraceOp> trace;
};

TraceSetup random_trace(std::mt19937_64& rng, const OracleParams& params,
                        cache::Policy policy) {
  TraceSetup setup;
  std::uniform_int_distribution<uint32_t> model_count(1, params.max_models);
  std::uniform_int_distribution<uint32_t> op_count(10, params.max_ops);
  std::uniform_int_distribution<uint64_t> cap(64, 4096);
  std::uniform_int_distribution<uint64_t> weight(1, 220);
  std::uniform_int_distribution<int> pct(0, 99);

  setup.cfg.fast_capacity = cap(rng) * 8;
  setup.cfg.host_capacity = (pct(rng) < 15 ? 0 : cap(rng) * 8);
  setup.cfg.policy = policy;
  setup.cfg.eager_reclaim = pct(rng) < 25;

  uint32_t n = model_count(rng);
  uint64_t disk_seed_bytes = 0;
  for (uint32_t i = 0; i < n; ++i) {
    SimModel m;
    m.name = "m" + std::to_string(i);
    m.weights_bytes = weight(rng) * 8;
    if (pct(rng) < 6) m.weights_bytes = setup.cfg.fast_capacity + 8;  // too large
    m.file_bytes = m.weights_bytes + 64;
    m.object_count = 1;
    int src = pct(rng);
    m.on_disk = src < 70;
    m.on_remote = src >= 55 && src < 95;  // overlap: some both, some neither
    if (m.on_disk) disk_seed_bytes += m.file_bytes;
    setup.models.push_back(m);
  }
  std::uniform_int_distribution<uint64_t> disk_extra(0, 4096 * 8);
  setup.cfg.disk_capacity = disk_seed_bytes + disk_extra(rng);

  uint32_t ops = op_count(rng);
  std::uniform_int_distribution<uint32_t> pick(0, n - 1);
  std::vector<uint32_t> open_rc(n, 0);
  std::vector<uint32_t> open_models;
  for (uint32_t i = 0; i < ops; ++i) {
    TraceOp op;
    int r = pct(rng);
    if (r < 62 || open_models.empty()) {
      op.kind = TraceOp::Kind::Open;
      op.model = pick(rng);
      if (r >= 60 && r < 62) {
        // occasional close of a never-opened or drained model
        op.kind = TraceOp::Kind::Close;
      } else {
        open_rc[op.model] += 1;
        open_models.push_back(op.model);
      }
    } else {
      op.kind = TraceOp::Kind::Close;
      std::uniform_int_distribution<size_t> which(0, open_models.size() - 1);
      size_t at = which(rng);
      op.model = open_models[at];
      open_models.erase(open_models.begin() + long(at));
      open_rc[op.model] -= 1;
    }
    setup.trace.push_back(op);
  }
  return setup;
}

}  // namespace

OracleReport run_oracle(const OracleParams& params) {
  OracleReport report;
  std::mt19937_64 rng(params.seed);

  std::vector<cache::Policy> policies;
  if (params.check_lru) policies.push_back(cache::Policy::LRU);
  if (params.check_lcu) policies.push_back(cache::Policy::LCU);
  if (policies.empty()) raise(Errc::InvalidArgument, "no policy selected");

  for (uint32_t t = 0; t < params.traces; ++t) {
    cache::Policy policy = policies[t % policies.size()];
    TraceSetup setup = random_trace(rng, params, policy);

    // Reference pass.
    std::vector<sim::SimEvent> expected = sim::simulate(setup.cfg, setup.models, setup.trace);

    // Live pass.
    FakeBackend backend(setup.models);
    cache::CoreConfig cc;
    cc.fast_capacity_bytes = setup.cfg.fast_capacity;
    cc.host_capacity_bytes = setup.cfg.host_capacity;
    cc.disk_capacity_bytes = setup.cfg.disk_capacity;
    cc.policy = setup.cfg.policy;
    cc.eager_reclaim = setup.cfg.eager_reclaim;
    cache::CacheCore core(cc, backend);
    for (uint32_t i = 0; i < setup.models.size(); ++i)
      if (setup.models[i].on_disk)
        core.register_disk_file(FakeBackend::key_of(i), "fake://" + std::to_string(i),
                                setup.models[i].file_bytes);

    std::vector<uint64_t> expected_rc(setup.models.size(), 0);

    for (size_t step = 0; step < setup.trace.size(); ++step) {
      const TraceOp& op = setup.trace[step];
      const model::ModelKey key = FakeBackend::key_of(op.model);
      const sim::SimEvent& want = expected[step];
      ++report.ops_run;

      SimOutcome got_outcome;
      bool got_success = false;
      uint64_t got_rc = 0;
      if (op.kind == TraceOp::Kind::Open) {
        try {
          cache::PlacementResult r = core.open_model(key, shm::ShareGranularity::model(),
                                                     uint64_t(step + 1));
          got_outcome = placement_to_outcome(r.outcome);
          got_success = true;
          expected_rc[op.model] += 1;
        } catch (const Error& e) {
          got_outcome = error_to_outcome(e.code());
        }
        got_rc = core.refcount(key);
      } else {
        try {
          got_rc = core.close_model(key);
          got_outcome = SimOutcome::FastHit;  // closes carry no outcome
          got_success = true;
          expected_rc[op.model] -= 1;
        } catch (const Error& e) {
          got_outcome = error_to_outcome(e.code());
        }
      }

      FakeBackend::Evictions got_ev = backend.take_evictions();

      bool diverged = false;
      std::ostringstream why;
      if (op.kind == TraceOp::Kind::Open && got_outcome != want.outcome) {
        diverged = true;
        why << "outcome " << sim::sim_outcome_name(got_outcome) << " != "
            << sim::sim_outcome_name(want.outcome);
      }
      if (op.kind == TraceOp::Kind::Close) {
        bool want_invalid = want.outcome == SimOutcome::ErrNotOpen;
        if (want_invalid != !got_success) {
          diverged = true;
          why << "close validity mismatch";
        } else if (got_success && got_rc != want.refcount) {
          diverged = true;
          why << "close refcount " << got_rc << "/" << want.refcount;
        }
      }
      if (got_ev.fast != want.evicted_fast || got_ev.host != want.evicted_host ||
          got_ev.disk != want.evicted_disk) {
        diverged = true;
        why << " evictions fast " << describe(got_ev.fast) << "/" << describe(want.evicted_fast)
            << " host " << describe(got_ev.host) << "/" << describe(want.evicted_host)
            << " disk " << describe(got_ev.disk) << "/" << describe(want.evicted_disk);
      }
      if (core.used_bytes(cache::Tier::Fast) != want.fast_used ||
          core.used_bytes(cache::Tier::Host) != want.host_used) {
        diverged = true;
        why << " used fast " << core.used_bytes(cache::Tier::Fast) << "/" << want.fast_used
            << " host " << core.used_bytes(cache::Tier::Host) << "/" << want.host_used;
      }
      if (op.kind == TraceOp::Kind::Open && got_rc != want.refcount) {
        diverged = true;
        why << " refcount " << got_rc << "/" << want.refcount;
      }

      // Safety invariants, independent of the simulator.
      if (core.used_bytes(cache::Tier::Fast) > cc.fast_capacity_bytes ||
          core.used_bytes(cache::Tier::Host) > cc.host_capacity_bytes ||
          core.used_bytes(cache::Tier::LocalDisk) > cc.disk_capacity_bytes)
        ++report.budget_violations;
      for (uint32_t v : got_ev.fast)
        if (expected_rc[v] != 0) ++report.pinned_violations;
      if (core.refcount(key) != expected_rc[op.model]) ++report.refcount_violations;

      if (diverged) {
        ++report.divergences;
        if (report.first_divergence.empty()) {
          std::ostringstream os;
          os << "trace " << t << " (" << cache::policy_name(policy) << ") step " << step << " "
             << (op.kind == TraceOp::Kind::Open ? "open" : "close") << " m" << op.model << ": "
             << why.str();
          report.first_divergence = os.str();
        }
      }
    }
    ++report.traces_run;
  }
  return report;
}

}  // namespace mrm::bench
