#include "mrm/bench/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <random>
#include <sstream>
#include <thread>

#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include "mrm/bench/stats_math.hpp"
#include "mrm/client.hpp"
#include "mrm/daemon.hpp"

extern char** environ;

namespace mrm::bench {

namespace fs = std::filesystem;
using clock_t_ = std::chrono::steady_clock;

namespace {

double secs(clock_t_::time_point a, clock_t_::time_point b) {
  return std::chrono::duration<double>(b - a).count();
}

std::string temp_socket_path(const char* tag) {
  return "/tmp/mrm-" + std::string(tag) + "-" + std::to_string(::getpid()) + "-" +
         std::to_string(clock_t_::now().time_since_epoch().count() % 100000) + ".sock";
}

uint64_t total_weight_bytes(const CatalogSpec& spec) {
  uint64_t sum = 0;
  for (const auto& m : spec.models) sum += scaled_weights_bytes(m, spec.scale_divisor);
  return sum;
}

void ensure_catalog(const CatalogSpec& spec, const fs::path& dir, uint64_t seed) {
  bool complete = fs::exists(dir);
  if (complete) {
    for (const auto& m : spec.models) {
      if (!fs::exists(dir / model::canonical_filename(catalog_key(m)))) {
        complete = false;
        break;
      }
    }
  }
  if (!complete) {
    gen_catalog(spec, dir, seed);
    // Flush the freshly written artifacts so background writeback does not
    // stall the measurements that follow.
    ::sync();
  }
}

daemon::DaemonConfig base_daemon_config(const fs::path& catalog_dir, const char* tag) {
  daemon::DaemonConfig cfg;
  cfg.listen_path = temp_socket_path(tag);
  cfg.disk_cache_dir = catalog_dir.string();
  cfg.startup_calibration = false;
  cfg.workspace_headroom_fraction = 1.0;
  return cfg;
}

struct PhaseCounters {
  uint64_t fetch_ns{0}, disk_ns{0}, copy_ns{0};
};

PhaseCounters phase_counters(const cache::StatsSnapshot& s) {
  return {s.cumulative.fetch_ns, s.cumulative.disk_read_ns, s.cumulative.host_to_fast_copy_ns};
}

}  // namespace

std::optional<LatencyMode> latency_mode_from_name(std::string_view s) {
  if (s == "cold") return LatencyMode::Cold;
  if (s == "warm") return LatencyMode::Warm;
  if (s == "nodaemon") return LatencyMode::NoDaemon;
  return std::nullopt;
}

const char* latency_mode_name(LatencyMode m) {
  switch (m) {
    case LatencyMode::Cold: return "cold";
    case LatencyMode::Warm: return "warm";
    case LatencyMode::NoDaemon: return "nodaemon";
  }
  return "?";
}

std::vector<LatencyRow> run_latency(const LatencyParams& params) {
  ensure_catalog(params.catalog, params.catalog_dir, /*seed=*/1);

  std::unique_ptr<daemon::Daemon> dmn;
  if (params.mode != LatencyMode::NoDaemon) {
    daemon::DaemonConfig cfg = base_daemon_config(params.catalog_dir, "lat");
    uint64_t max_weights = 0;
    for (const auto& m : params.catalog.models)
      max_weights = std::max(max_weights, scaled_weights_bytes(m, params.catalog.scale_divisor));
    cfg.fast_capacity_bytes = std::max<uint64_t>(max_weights * 2, 1 << 20);
    cfg.host_capacity_bytes = cfg.fast_capacity_bytes;
    cfg.disk_capacity_bytes = total_weight_bytes(params.catalog) * 4 + (64 << 20);
    // Cold mode: eager reclamation returns the model to the miss path after
    // every close, so each measured open is a fresh load.
    cfg.eager_reclaim = params.mode == LatencyMode::Cold;
    dmn = std::make_unique<daemon::Daemon>(cfg);
    dmn->start();
  }

  client::ClientConfig ccfg;
  if (dmn) ccfg.endpoint = dmn->config().listen_path;
  ccfg.model_dirs = {params.catalog_dir.string()};
  client::Client cli(ccfg);

  std::vector<LatencyRow> rows;
  for (const auto& cm : params.catalog.models) {
    if (params.only_model && cm.name != *params.only_model) continue;
    model::ModelKey key = catalog_key(cm);

    if (params.mode == LatencyMode::Warm) {
      // Prime the fast tier once; the measured opens are pure hits.
      client::OpenOptions prime;
      prime.force_shared = true;
      client::ModelView v = cli.open(key, prime);
      cli.close(v);
    }

    std::vector<LatencyRow> reps;
    for (int r = 0; r < params.reps; ++r) {
      LatencyRow row;
      row.model = cm.name;
      row.mode = latency_mode_name(params.mode);

      PhaseCounters before{};
      if (dmn) before = phase_counters(dmn->stats());

      client::OpenOptions opts;
      if (params.mode == LatencyMode::NoDaemon)
        opts.force_private = true;
      else
        opts.force_shared = true;

      auto t0 = clock_t_::now();
      client::ModelView v = cli.open(key, opts);
      auto t_open = clock_t_::now();
      cli.touch(v);
      auto t1 = clock_t_::now();

      double open_wall = secs(t0, t_open);
      if (dmn) {
        // Disk and copy phases come from the daemon's counters; the sharing
        // overhead is the client-measured RPC wall minus the daemon work it
        // encloses, plus attach/slice time. The 5% breakdown bound then
        // checks that nothing of consequence goes unattributed.
        PhaseCounters after = phase_counters(dmn->stats());
        row.load_disk_s = double(after.disk_ns - before.disk_ns + after.fetch_ns -
                                 before.fetch_ns) / 1e9;
        row.init_copy_s = double(after.copy_ns - before.copy_ns) / 1e9;
        row.share_overhead_s = std::max(0.0, v.timings().rpc_s - row.load_disk_s -
                                                 row.init_copy_s) + v.timings().attach_s;
      } else {
        row.load_disk_s = v.timings().private_load_s;
      }
      cli.close(v);
      row.compute_s = secs(t_open, t1);
      row.end_to_end_s = secs(t0, t1);
      row.open_s = open_wall;
      reps.push_back(row);
    }
    std::sort(reps.begin(), reps.end(),
              [](const LatencyRow& a, const LatencyRow& b) { return a.end_to_end_s < b.end_to_end_s; });
    rows.push_back(reps[reps.size() / 2]);
  }

  if (dmn) {
    dmn->request_stop();
    dmn->join();
  }
  return rows;
}

std::string latency_csv(const std::vector<LatencyRow>& rows) {
  std::ostringstream os;
  os << "model,mode,load_disk_s,init_copy_s,share_overhead_s,compute_s,end_to_end_s,open_s\n";
  for (const auto& r : rows) {
    os << r.model << ',' << r.mode << ',' << r.load_disk_s << ',' << r.init_copy_s << ','
       << r.share_overhead_s << ',' << r.compute_s << ',' << r.end_to_end_s << ',' << r.open_s
       << "\n";
  }
  return os.str();
}

// --- worker -----------------------------------------------------------------

std::vector<std::string> worker_argv(const WorkerParams& p) {
  std::vector<std::string> argv = {"worker",
                                   "--endpoint", p.endpoint,
                                   "--catalog", p.catalog_name,
                                   "--catalog-dir", p.catalog_dir,
                                   "--active", std::to_string(p.active_models),
                                   "--requests", std::to_string(p.requests),
                                   "--warmup", std::to_string(p.warmup),
                                   "--seed", std::to_string(p.seed),
                                   "--alpha", std::to_string(p.pareto_alpha),
                                   "--xm", std::to_string(p.pareto_xm),
                                   "--hold-ms", std::to_string(p.hold_ms),
                                   "--out", p.out_path};
  if (!p.keys.empty()) {
    std::string joined;
    for (size_t i = 0; i < p.keys.size(); ++i) {
      if (i) joined += ",";
      joined += p.keys[i];
    }
    argv.push_back("--keys");
    argv.push_back(joined);
  }
  return argv;
}

WorkerParams parse_worker_args(int argc, char** argv) {
  WorkerParams p;
  auto need = [&](int i) {
    if (i + 1 >= argc) raise(Errc::InvalidArgument, std::string("missing value for ") + argv[i]);
    return std::string(argv[i + 1]);
  };
  for (int i = 0; i < argc; ++i) {
    std::string a = argv[i];
    if (a == "--endpoint") p.endpoint = need(i++);
    else if (a == "--catalog") p.catalog_name = need(i++);
    else if (a == "--catalog-dir") p.catalog_dir = need(i++);
    else if (a == "--active") p.active_models = uint32_t(std::stoul(need(i++)));
    else if (a == "--requests") p.requests = uint32_t(std::stoul(need(i++)));
    else if (a == "--warmup") p.warmup = uint32_t(std::stoul(need(i++)));
    else if (a == "--seed") p.seed = std::stoull(need(i++));
    else if (a == "--alpha") p.pareto_alpha = std::stod(need(i++));
    else if (a == "--xm") p.pareto_xm = std::stod(need(i++));
    else if (a == "--hold-ms") p.hold_ms = std::stoull(need(i++));
    else if (a == "--out") p.out_path = need(i++);
    else if (a == "--keys") {
      std::string joined = need(i++);
      size_t pos = 0;
      while (pos <= joined.size()) {
        size_t comma = joined.find(',', pos);
        if (comma == std::string::npos) comma = joined.size();
        if (comma > pos) p.keys.push_back(joined.substr(pos, comma - pos));
        pos = comma + 1;
      }
    } else if (a != "worker") {
      raise(Errc::InvalidArgument, "unknown worker argument " + a);
    }
  }
  return p;
}

namespace {

model::ModelKey parse_key_spec(const std::string& s) {
  size_t slash = s.find('/');
  size_t at = s.rfind('@');
  if (slash == std::string::npos || at == std::string::npos || at < slash)
    raise(Errc::InvalidArgument, "key spec must be ns/name@version: " + s);
  return {s.substr(0, slash), s.substr(slash + 1, at - slash - 1), s.substr(at + 1)};
}

}  // namespace

int run_worker(const WorkerParams& p) {
  std::vector<model::ModelKey> keys;
  if (!p.keys.empty()) {
    for (const auto& spec : p.keys) keys.push_back(parse_key_spec(spec));
  } else {
    CatalogSpec cat = catalog_by_name(p.catalog_name);
    for (const auto& m : cat.models) keys.push_back(catalog_key(m));
  }
  uint32_t active = std::min<uint32_t>(p.active_models, uint32_t(keys.size()));
  if (active == 0) raise(Errc::InvalidArgument, "no active models");

  client::ClientConfig ccfg;
  ccfg.endpoint = p.endpoint;
  ccfg.model_dirs = {p.catalog_dir};
  client::Client cli(ccfg);

  std::ofstream out(p.out_path, std::ios::trunc);
  if (!out) raise(Errc::Internal, "cannot write " + p.out_path);

  std::mt19937_64 rng(p.seed);
  std::uniform_real_distribution<double> uni(std::nextafter(0.0, 1.0), 1.0);

  uint64_t failures = 0;
  for (uint32_t i = 0; i < p.warmup + p.requests; ++i) {
    uint64_t rank = pareto_rank(uni(rng), p.pareto_alpha, p.pareto_xm, active);
    const model::ModelKey& key = keys[rank - 1];
    try {
      client::OpenOptions opts;
      opts.force_shared = true;
      auto t0 = clock_t_::now();
      client::ModelView v = cli.open(key, opts);
      auto t_open = clock_t_::now();
      if (p.hold_ms > 0)
        std::this_thread::sleep_for(std::chrono::milliseconds(p.hold_ms));
      cli.touch(v);
      auto t1 = clock_t_::now();
      bool shared = v.origin() == client::Origin::Shared;
      cli.close(v);
      if (i >= p.warmup) {
        double total = std::max(0.0, secs(t0, t1) - double(p.hold_ms) / 1e3);
        out << "{\"m\":" << (rank - 1) << ",\"open_ns\":"
            << uint64_t(secs(t0, t_open) * 1e9) << ",\"total_ns\":" << uint64_t(total * 1e9)
            << ",\"shared\":" << (shared ? 1 : 0) << "}\n";
      }
    } catch (const Error&) {
      ++failures;
      if (failures > (p.warmup + p.requests) / 4 + 2) return 1;
    }
  }
  out.flush();
  return out ? 0 : 1;
}

std::vector<int> spawn_workers(const std::string& exe, const std::vector<WorkerParams>& workers) {
  std::vector<pid_t> pids;
  for (const auto& w : workers) {
    std::vector<std::string> args = worker_argv(w);
    std::vector<char*> argv;
    argv.push_back(const_cast<char*>(exe.c_str()));
    for (auto& a : args) argv.push_back(const_cast<char*>(a.c_str()));
    argv.push_back(nullptr);

    pid_t pid = 0;
    int rc = ::posix_spawn(&pid, exe.c_str(), nullptr, nullptr, argv.data(), environ);
    if (rc != 0) raise(Errc::Internal, "posix_spawn failed: " + std::string(strerror(rc)));
    pids.push_back(pid);
  }
  std::vector<int> codes;
  for (pid_t pid : pids) {
    int status = 0;
    ::waitpid(pid, &status, 0);
    codes.push_back(WIFEXITED(status) ? WEXITSTATUS(status) : 128);
  }
  return codes;
}

std::vector<WorkerSample> read_worker_samples(const fs::path& path) {
  std::vector<WorkerSample> samples;
  std::ifstream f(path);
  std::string line;
  while (std::getline(f, line)) {
    // Lines are written by run_worker with fixed field order.
    unsigned m = 0;
    unsigned long long open_ns = 0, total_ns = 0;
    int shared = 0;
    if (std::sscanf(line.c_str(), "{\"m\":%u,\"open_ns\":%llu,\"total_ns\":%llu,\"shared\":%d",
                    &m, &open_ns, &total_ns, &shared) >= 3) {
      samples.push_back({m, open_ns, total_ns, shared != 0});
    }
  }
  return samples;
}

// --- grid --------------------------------------------------------------------

GridResult run_grid(const GridParams& params) {
  ensure_catalog(params.catalog, params.catalog_dir, /*seed=*/1);

  const uint64_t total_weights = total_weight_bytes(params.catalog);
  const size_t n_models = params.catalog.models.size();

  // Baseline: private load + compute per model, no daemon involved.
  std::vector<double> baseline(n_models, 0);
  std::vector<double> warm_ref(n_models, 0);
  {
    client::ClientConfig ccfg;
    ccfg.endpoint = "/nonexistent-mrm.sock";
    ccfg.model_dirs = {params.catalog_dir.string()};
    client::Client cli(ccfg);
    for (size_t i = 0; i < n_models; ++i) {
      model::ModelKey key = catalog_key(params.catalog.models[i]);
      std::vector<double> times;
      for (int r = 0; r < 5; ++r) {
        client::OpenOptions opts;
        opts.force_private = true;
        auto t0 = clock_t_::now();
        client::ModelView v = cli.open(key, opts);
        cli.touch(v);
        auto t1 = clock_t_::now();
        cli.close(v);
        times.push_back(secs(t0, t1));
      }
      baseline[i] = percentile(times, 50);
    }
  }

  // Warm reference: all models resident (capacity = total), pure hits.
  {
    daemon::DaemonConfig cfg = base_daemon_config(params.catalog_dir, "gridwarm");
    cfg.fast_capacity_bytes = total_weights * 2 + (1 << 20);
    cfg.host_capacity_bytes = cfg.fast_capacity_bytes;
    cfg.disk_capacity_bytes = total_weights * 8 + (64 << 20);
    daemon::Daemon dmn(cfg);
    dmn.start();
    client::ClientConfig ccfg;
    ccfg.endpoint = cfg.listen_path;
    ccfg.model_dirs = {params.catalog_dir.string()};
    client::Client cli(ccfg);
    for (size_t i = 0; i < n_models; ++i) {
      model::ModelKey key = catalog_key(params.catalog.models[i]);
      client::OpenOptions opts;
      opts.force_shared = true;
      {
        client::ModelView v = cli.open(key, opts);
        cli.touch(v);
        cli.close(v);
      }
      std::vector<double> times;
      for (int r = 0; r < 3; ++r) {
        auto t0 = clock_t_::now();
        client::ModelView v = cli.open(key, opts);
        cli.touch(v);
        auto t1 = clock_t_::now();
        cli.close(v);
        times.push_back(secs(t0, t1));
      }
      warm_ref[i] = percentile(times, 50);
    }
    dmn.request_stop();
    dmn.join();
  }

  std::string worker_exe = params.worker_exe.empty() ? "/proc/self/exe" : params.worker_exe;

  GridResult result;
  for (double fraction : params.fractions) {
    for (uint32_t conc : params.concurrencies) {
      GridCell cell;
      cell.fraction = fraction;
      cell.concurrency = conc;

      uint32_t active = uint32_t(std::max<double>(1.0, std::ceil(fraction * double(n_models))));
      active = std::min<uint32_t>(active, uint32_t(n_models));

      // Oversubscription contract: the fast tier holds half the full
      // catalog's weights.
      daemon::DaemonConfig cfg = base_daemon_config(params.catalog_dir, "grid");
      cfg.fast_capacity_bytes = std::max<uint64_t>(total_weights / 2, 1 << 20);
      cfg.host_capacity_bytes = total_weights + (1 << 20);
      cfg.disk_capacity_bytes = total_weights * 8 + (64 << 20);
      cfg.eviction_policy = params.policy;

      try {
        daemon::Daemon dmn(cfg);
        dmn.start();

        std::vector<WorkerParams> workers;
        std::vector<fs::path> outs;
        uint32_t per_worker = std::max<uint32_t>(1, params.requests_per_cell / conc);
        for (uint32_t wi = 0; wi < conc; ++wi) {
          WorkerParams wp;
          wp.endpoint = cfg.listen_path;
          wp.catalog_name = params.catalog.name;
          wp.catalog_dir = params.catalog_dir.string();
          wp.active_models = active;
          wp.requests = per_worker;
          wp.warmup = params.warmup;
          wp.seed = params.seed * 1000003 + uint64_t(fraction * 1000) * 131 + wi + 1;
          wp.pareto_alpha = params.pareto_alpha;
          wp.pareto_xm = params.pareto_xm;
          wp.out_path = (fs::temp_directory_path() /
                         ("mrm-grid-" + std::to_string(::getpid()) + "-" +
                          std::to_string(uint64_t(fraction * 100)) + "-" + std::to_string(conc) +
                          "-" + std::to_string(wi) + ".jsonl"))
                            .string();
          outs.push_back(wp.out_path);
          workers.push_back(wp);
        }

        std::vector<int> codes = spawn_workers(worker_exe, workers);
        bool worker_failed = std::any_of(codes.begin(), codes.end(), [](int c) { return c != 0; });

        std::vector<std::vector<double>> latencies(n_models);
        uint64_t total_samples = 0;
        for (const auto& o : outs) {
          for (const auto& s : read_worker_samples(o)) {
            if (s.model_index < n_models) {
              latencies[s.model_index].push_back(double(s.total_ns) / 1e9);
              ++total_samples;
            }
          }
          std::error_code ec;
          fs::remove(o, ec);
        }

        cache::StatsSnapshot stats = dmn.stats();
        dmn.request_stop();
        dmn.join();

        if (worker_failed || total_samples == 0) {
          cell.ok = false;
          cell.error = worker_failed ? "worker_failed" : "no_samples";
        } else {
          std::vector<double> speedups;
          double penalty_sum = 0;
          size_t penalty_n = 0;
          for (size_t i = 0; i < n_models; ++i) {
            if (latencies[i].empty()) continue;
            double p95 = percentile(latencies[i], 95);
            speedups.push_back(baseline[i] / p95);
            for (double l : latencies[i]) {
              penalty_sum += l / warm_ref[i] - 1.0;
              ++penalty_n;
            }
          }
          cell.geomean_p95_speedup = geomean(speedups);
          cell.mean_latency_penalty_vs_warm = penalty_n ? penalty_sum / double(penalty_n) : 0;
          uint64_t accepted = stats.tiers[0].hits + stats.tiers[0].misses;
          cell.fast_hit_rate = accepted ? double(stats.tiers[0].hits) / double(accepted) : 0;
          cell.evictions = stats.tiers[0].evictions;
          cell.requests = total_samples;
          cell.open_errors = stats.open_errors;
          cell.ok = true;
        }
      } catch (const Error& e) {
        cell.ok = false;
        cell.error = e.what();
      }
      if (params.verbose) {
        std::ostringstream os;
        os << "cell f=" << cell.fraction << " c=" << cell.concurrency
           << (cell.ok ? " ok" : (" FAILED " + cell.error))
           << " geomean=" << cell.geomean_p95_speedup << " hit=" << cell.fast_hit_rate << "\n";
        std::fputs(os.str().c_str(), stderr);
      }
      result.cells.push_back(std::move(cell));
    }
  }
  return result;
}

std::string grid_csv(const GridResult& result) {
  std::ostringstream os;
  os << "fraction,concurrency,status,geomean_p95_speedup,mean_latency_penalty_vs_warm,"
        "fast_hit_rate,evictions,requests,open_errors\n";
  for (const auto& c : result.cells) {
    os << c.fraction << ',' << c.concurrency << ',' << (c.ok ? "ok" : "failed") << ','
       << c.geomean_p95_speedup << ',' << c.mean_latency_penalty_vs_warm << ',' << c.fast_hit_rate
       << ',' << c.evictions << ',' << c.requests << ',' << c.open_errors;
    if (!c.ok) os << ',' << c.error;
    os << "\n";
  }
  return os.str();
}

std::string grid_matrix(const GridResult& result) {
  std::vector<double> fractions;
  std::vector<uint32_t> concs;
  for (const auto& c : result.cells) {
    if (std::find(fractions.begin(), fractions.end(), c.fraction) == fractions.end())
      fractions.push_back(c.fraction);
    if (std::find(concs.begin(), concs.end(), c.concurrency) == concs.end())
      concs.push_back(c.concurrency);
  }
  std::ostringstream os;
  os << "# rows: fraction, cols: concurrency; geomean p95 speedup\n";
  for (double f : fractions) {
    for (uint32_t c : concs) {
      for (const auto& cell : result.cells)
        if (cell.fraction == f && cell.concurrency == c) os << cell.geomean_p95_speedup << ' ';
    }
    os << "\n";
  }
  return os.str();
}

}  // namespace mrm::bench
