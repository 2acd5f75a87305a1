#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <thread>

#include <CLI11.hpp>

#include "mrm/daemon.hpp"

namespace {

std::atomic<bool> g_stop{false};
std::atomic<bool> g_dump_stats{false};

void on_signal(int sig) {
  if (sig == SIGUSR1)
    g_dump_stats.store(true);
  else
    g_stop.store(true);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mrmd - model resource manager daemon"};

  std::string config_path;
  bool check_config = false;
  bool show_version = false;

  mrm::daemon::DaemonConfig cfg;
  std::string policy_str, granularity_str, remote_url, listen_tcp;

  app.add_option("--config", config_path, "JSON config file");
  app.add_flag("--check-config", check_config, "validate the config and exit");
  app.add_flag("--version", show_version, "print version and exit");

  app.add_option("--listen-path", cfg.listen_path, "unix socket path");
  app.add_option("--listen-tcp", listen_tcp, "host:port TCP listener (port 0 = ephemeral)");
  app.add_option("--fast-capacity-bytes", cfg.fast_capacity_bytes, "fast tier capacity");
  app.add_option("--host-capacity-bytes", cfg.host_capacity_bytes, "host tier capacity");
  app.add_option("--disk-cache-dir", cfg.disk_cache_dir, "local disk cache directory");
  app.add_option("--disk-capacity-bytes", cfg.disk_capacity_bytes, "disk cache capacity");
  app.add_option("--remote-url", remote_url, "remote store (http://... or dir:<path>)");
  app.add_option("--eviction-policy", policy_str, "lru | lcu");
  app.add_flag("--eager-reclaim", cfg.eager_reclaim, "free residency at refcount zero");
  app.add_option("--workspace-headroom", cfg.workspace_headroom_fraction,
                 "fraction of fast capacity reserved for client workspaces");
  app.add_option("--default-granularity", granularity_str, "model | layer | block:<bytes>");
  app.add_option("--shutdown-grace-ms", cfg.shutdown_grace_ms, "drain wait before exit");
  app.add_flag("--full-verify", cfg.full_verify, "verify blob checksums on load");
  bool no_calibration = false;
  app.add_flag("--no-startup-calibration", no_calibration, "skip the boot-time q/o/s measurement");

  CLI11_PARSE(app, argc, argv);

  if (show_version) {
    std::puts("mrmd 1.0.0 (protocol 1, artifact format 1)");
    return 0;
  }

  try {
    if (!config_path.empty()) {
      mrm::daemon::DaemonConfig file_cfg = mrm::daemon::load_config_file(config_path);
      // Explicit flags override the file.
      if (!app.count("--listen-path")) cfg.listen_path = file_cfg.listen_path;
      if (!app.count("--listen-tcp")) cfg.listen_tcp = file_cfg.listen_tcp;
      if (!app.count("--fast-capacity-bytes")) cfg.fast_capacity_bytes = file_cfg.fast_capacity_bytes;
      if (!app.count("--host-capacity-bytes")) cfg.host_capacity_bytes = file_cfg.host_capacity_bytes;
      if (!app.count("--disk-cache-dir")) cfg.disk_cache_dir = file_cfg.disk_cache_dir;
      if (!app.count("--disk-capacity-bytes")) cfg.disk_capacity_bytes = file_cfg.disk_capacity_bytes;
      if (!app.count("--remote-url")) cfg.remote_url = file_cfg.remote_url;
      if (!app.count("--eviction-policy")) cfg.eviction_policy = file_cfg.eviction_policy;
      if (!app.count("--eager-reclaim")) cfg.eager_reclaim = file_cfg.eager_reclaim;
      if (!app.count("--workspace-headroom"))
        cfg.workspace_headroom_fraction = file_cfg.workspace_headroom_fraction;
      if (!app.count("--default-granularity"))
        cfg.default_granularity = file_cfg.default_granularity;
      if (!app.count("--shutdown-grace-ms")) cfg.shutdown_grace_ms = file_cfg.shutdown_grace_ms;
      if (!app.count("--full-verify")) cfg.full_verify = file_cfg.full_verify;
      cfg.startup_calibration = file_cfg.startup_calibration;
    }
    if (!listen_tcp.empty()) cfg.listen_tcp = listen_tcp;
    if (!remote_url.empty()) cfg.remote_url = remote_url;
    if (!policy_str.empty()) {
      auto p = mrm::cache::policy_from_name(policy_str);
      if (!p) throw mrm::Error(mrm::Errc::InvalidArgument, "eviction-policy must be lru or lcu");
      cfg.eviction_policy = *p;
    }
    if (!granularity_str.empty()) {
      if (granularity_str == "model")
        cfg.default_granularity = mrm::shm::ShareGranularity::model();
      else if (granularity_str == "layer")
        cfg.default_granularity = mrm::shm::ShareGranularity::layer();
      else if (granularity_str.rfind("block:", 0) == 0)
        cfg.default_granularity =
            mrm::shm::ShareGranularity::block(std::stoull(granularity_str.substr(6)));
      else
        throw mrm::Error(mrm::Errc::InvalidArgument, "bad --default-granularity");
    }
    if (no_calibration) cfg.startup_calibration = false;
    mrm::daemon::validate_config(cfg);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "mrmd: config error: %s\n", e.what());
    return 2;
  }

  if (check_config) {
    std::printf("%s\n", mrm::daemon::config_to_json(cfg).c_str());
    return 0;
  }

  std::unique_ptr<mrm::daemon::Daemon> daemon;
  try {
    daemon = std::make_unique<mrm::daemon::Daemon>(std::move(cfg));
  } catch (const mrm::Error& e) {
    std::fprintf(stderr, "mrmd: %s\n", e.what());
    return e.code() == mrm::Errc::InvalidArgument ? 2 : 3;
  }

  std::signal(SIGTERM, on_signal);
  std::signal(SIGINT, on_signal);
  std::signal(SIGUSR1, on_signal);
  std::signal(SIGPIPE, SIG_IGN);

  daemon->start();
  std::fprintf(stderr, "mrmd: serving on %s%s\n", daemon->config().listen_path.c_str(),
               daemon->config().listen_tcp
                   ? (" and tcp:" + *daemon->config().listen_tcp).c_str()
                   : "");

  while (!g_stop.load()) {
    std::this_thread::sleep_for(std::chrono::milliseconds(100));
    if (g_dump_stats.exchange(false)) std::fputs(daemon->stats_text().c_str(), stderr);
  }

  daemon->request_stop();
  daemon->join();
  return 0;
}
