#include "mrm/daemon.hpp"

#include <algorithm>
#include <chrono>
#include <cstring>
#include <fstream>
#include <sstream>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <sys/stat.h>
#include <sys/un.h>
#include <unistd.h>

#include <json.hpp>

#include "mrm/remote_store.hpp"

namespace mrm::daemon {

namespace fs = std::filesystem;
using nlohmann::json;

void validate_config(const DaemonConfig& cfg) {
  if (cfg.listen_path.empty()) raise(Errc::InvalidArgument, "listen_path must be set");
  if (cfg.fast_capacity_bytes == 0) raise(Errc::InvalidArgument, "fast_capacity_bytes must be > 0");
  if (cfg.host_capacity_bytes == 0) raise(Errc::InvalidArgument, "host_capacity_bytes must be > 0");
  if (cfg.disk_capacity_bytes == 0) raise(Errc::InvalidArgument, "disk_capacity_bytes must be > 0");
  if (cfg.disk_cache_dir.empty()) raise(Errc::InvalidArgument, "disk_cache_dir must be set");
  if (cfg.workspace_headroom_fraction < 0.0 || cfg.workspace_headroom_fraction > 1.0)
    raise(Errc::InvalidArgument, "workspace_headroom_fraction must be in [0,1]");
  if (!shm::valid_granularity(cfg.default_granularity))
    raise(Errc::InvalidArgument, "default_granularity block_bytes must be a positive multiple of 64");
}

DaemonConfig config_from_json(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    raise(Errc::InvalidArgument, std::string("config parse: ") + e.what());
  }
  DaemonConfig cfg;
  try {
    if (j.contains("listen_path")) cfg.listen_path = j["listen_path"].get<std::string>();
    if (j.contains("listen_tcp")) cfg.listen_tcp = j["listen_tcp"].get<std::string>();
    if (j.contains("fast_capacity_bytes"))
      cfg.fast_capacity_bytes = j["fast_capacity_bytes"].get<uint64_t>();
    if (j.contains("host_capacity_bytes"))
      cfg.host_capacity_bytes = j["host_capacity_bytes"].get<uint64_t>();
    if (j.contains("disk_cache_dir")) cfg.disk_cache_dir = j["disk_cache_dir"].get<std::string>();
    if (j.contains("disk_capacity_bytes"))
      cfg.disk_capacity_bytes = j["disk_capacity_bytes"].get<uint64_t>();
    if (j.contains("remote_url")) cfg.remote_url = j["remote_url"].get<std::string>();
    if (j.contains("eviction_policy")) {
      auto p = cache::policy_from_name(j["eviction_policy"].get<std::string>());
      if (!p) raise(Errc::InvalidArgument, "eviction_policy must be lru or lcu");
      cfg.eviction_policy = *p;
    }
    if (j.contains("eager_reclaim")) cfg.eager_reclaim = j["eager_reclaim"].get<bool>();
    if (j.contains("workspace_headroom_fraction"))
      cfg.workspace_headroom_fraction = j["workspace_headroom_fraction"].get<double>();
    if (j.contains("default_granularity")) {
      std::string g = j["default_granularity"].get<std::string>();
      if (g == "model")
        cfg.default_granularity = shm::ShareGranularity::model();
      else if (g == "layer")
        cfg.default_granularity = shm::ShareGranularity::layer();
      else if (g.rfind("block:", 0) == 0)
        cfg.default_granularity = shm::ShareGranularity::block(std::stoull(g.substr(6)));
      else
        raise(Errc::InvalidArgument, "default_granularity: model | layer | block:<bytes>");
    }
    if (j.contains("shutdown_grace_ms")) cfg.shutdown_grace_ms = j["shutdown_grace_ms"].get<uint64_t>();
    if (j.contains("full_verify")) cfg.full_verify = j["full_verify"].get<bool>();
    if (j.contains("startup_calibration"))
      cfg.startup_calibration = j["startup_calibration"].get<bool>();
  } catch (const json::exception& e) {
    raise(Errc::InvalidArgument, std::string("config field: ") + e.what());
  }
  validate_config(cfg);
  return cfg;
}

std::string config_to_json(const DaemonConfig& cfg) {
  json j;
  j["listen_path"] = cfg.listen_path;
  if (cfg.listen_tcp) j["listen_tcp"] = *cfg.listen_tcp;
  j["fast_capacity_bytes"] = cfg.fast_capacity_bytes;
  j["host_capacity_bytes"] = cfg.host_capacity_bytes;
  j["disk_cache_dir"] = cfg.disk_cache_dir;
  j["disk_capacity_bytes"] = cfg.disk_capacity_bytes;
  if (cfg.remote_url) j["remote_url"] = *cfg.remote_url;
  j["eviction_policy"] = cache::policy_name(cfg.eviction_policy);
  j["eager_reclaim"] = cfg.eager_reclaim;
  j["workspace_headroom_fraction"] = cfg.workspace_headroom_fraction;
  switch (cfg.default_granularity.kind) {
    case shm::GranularityKind::Model: j["default_granularity"] = "model"; break;
    case shm::GranularityKind::Layer: j["default_granularity"] = "layer"; break;
    case shm::GranularityKind::Block:
      j["default_granularity"] = "block:" + std::to_string(cfg.default_granularity.block_bytes);
      break;
  }
  j["shutdown_grace_ms"] = cfg.shutdown_grace_ms;
  j["full_verify"] = cfg.full_verify;
  j["startup_calibration"] = cfg.startup_calibration;
  return j.dump(2);
}

DaemonConfig load_config_file(const fs::path& path) {
  std::ifstream f(path);
  if (!f) raise(Errc::InvalidArgument, "cannot read config " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return config_from_json(ss.str());
}

// --- ShmTierBackend -----------------------------------------------------

ShmTierBackend::ShmTierBackend(std::string disk_cache_dir, std::optional<std::string> remote_url,
                               bool full_verify)
    : disk_cache_dir_(std::move(disk_cache_dir)),
      remote_url_(std::move(remote_url)),
      full_verify_(full_verify) {}

cache::Located ShmTierBackend::locate(const model::ModelKey& key) {
  fs::path p = fs::path(disk_cache_dir_) / model::canonical_filename(key);
  std::error_code ec;
  if (fs::exists(p, ec)) {
    return {cache::Located::Kind::DiskCache, p.string(), fs::file_size(p, ec)};
  }
  if (remote_url_) return {cache::Located::Kind::Remote, "", 0};
  return {cache::Located::Kind::Absent, "", 0};
}

cache::FetchResult ShmTierBackend::fetch_remote(const model::ModelKey& key) {
  fs::path p = remote::fetch(remote::make_ref(*remote_url_, key), disk_cache_dir_);
  std::error_code ec;
  return {p.string(), fs::file_size(p, ec)};
}

model::ModelManifest ShmTierBackend::read_manifest(const model::ModelKey& key,
                                                   const std::string& path) {
  model::ModelManifest m = model::read_manifest(fs::path(path), full_verify_);
  if (m.key != key)
    raise(Errc::Corrupt, "artifact at " + path + " holds " + model::to_string(m.key) +
                             ", expected " + model::to_string(key));
  return m;
}

void ShmTierBackend::stage_host(uint64_t model_id, const model::ModelManifest&,
                                const std::string& path) {
  model::LoadedModel lm = model::read_model(path, full_verify_);
  std::lock_guard lk(mu_);
  host_bufs_[model_id] = std::move(lm.blob);
}

cache::FastPublication ShmTierBackend::publish_fast(uint64_t model_id,
                                                    const model::ModelManifest& m, bool from_host,
                                                    const std::string& path) {
  // Segment payload: blob | manifest JSON | u64 json length. blob_bytes is
  // 64-aligned by construction so the JSON starts on an aligned boundary.
  const std::string mjson = model::manifest_to_json(m);
  const uint64_t payload_len = m.blob_bytes + mjson.size() + 8;

  shm::Segment seg = shm::Segment::create(m.key.name, payload_len);
  std::span<uint8_t> dst = seg.data();

  if (from_host) {
    const std::vector<uint8_t>* src = nullptr;
    {
      std::lock_guard lk(mu_);
      auto it = host_bufs_.find(model_id);
      if (it == host_bufs_.end()) raise(Errc::Internal, "host buffer missing for publish");
      src = &it->second;
    }
    // Single-flight pins the entry while loading, so the buffer cannot be
    // evicted under us.
    if (src->size() != m.blob_bytes) raise(Errc::Internal, "host buffer size mismatch");
    std::memcpy(dst.data(), src->data(), size_t(m.blob_bytes));
  } else {
    std::ifstream f(path, std::ios::binary);
    if (!f) raise(Errc::NotFound, path);
    uint8_t hdr[16];
    f.read(reinterpret_cast<char*>(hdr), 16);
    if (f.gcount() != 16) raise(Errc::Corrupt, "short read on " + path);
    uint64_t mlen = 0;
    for (int i = 0; i < 8; ++i) mlen |= uint64_t(hdr[8 + i]) << (i * 8);
    f.seekg(std::streamoff(model::blob_file_offset(mlen)));
    f.read(reinterpret_cast<char*>(dst.data()), std::streamsize(m.blob_bytes));
    if (uint64_t(f.gcount()) != m.blob_bytes) raise(Errc::Corrupt, "blob truncated in " + path);
  }

  std::memcpy(dst.data() + m.blob_bytes, mjson.data(), mjson.size());
  uint64_t jlen = mjson.size();
  for (int i = 0; i < 8; ++i) dst[size_t(m.blob_bytes + mjson.size() + i)] = uint8_t(jlen >> (i * 8));

  seg.seal();
  cache::FastPublication pub;
  pub.segments.push_back(
      {seg.handle().token, seg.handle().generation, seg.handle().length});
  pub.manifest_digest =
      Sha256::of({reinterpret_cast<const uint8_t*>(mjson.data()), mjson.size()});
  std::lock_guard lk(mu_);
  segments_.emplace(model_id, std::move(seg));
  return pub;
}

void ShmTierBackend::evict_fast(uint64_t model_id) {
  std::lock_guard lk(mu_);
  segments_.erase(model_id);  // destructor unlinks; attached views stay valid
}

void ShmTierBackend::evict_host(uint64_t model_id) {
  std::lock_guard lk(mu_);
  host_bufs_.erase(model_id);
}

void ShmTierBackend::evict_disk(const model::ModelKey&, const std::string& path) {
  std::error_code ec;
  fs::remove(path, ec);
}

// --- Daemon ---------------------------------------------------------------

namespace {

int bind_unix(const std::string& path) {
  // A live daemon on the path is a bind failure; a stale socket file is
  // removed.
  int probe = ::socket(AF_UNIX, SOCK_STREAM, 0);
  if (probe >= 0) {
    sockaddr_un addr{};
    addr.sun_family = AF_UNIX;
    std::strncpy(addr.sun_path, path.c_str(), sizeof(addr.sun_path) - 1);
    if (::connect(probe, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) == 0) {
      ::close(probe);
      raise(Errc::Internal, "another daemon is listening on " + path);
    }
    ::close(probe);
  }
  ::unlink(path.c_str());

  int fd = ::socket(AF_UNIX, SOCK_STREAM, 0);
  if (fd < 0) raise(Errc::Internal, std::string("socket: ") + std::strerror(errno));
  sockaddr_un addr{};
  addr.sun_family = AF_UNIX;
  if (path.size() >= sizeof(addr.sun_path)) {
    ::close(fd);
    raise(Errc::Internal, "listen_path too long: " + path);
  }
  std::strncpy(addr.sun_path, path.c_str(), sizeof(addr.sun_path) - 1);
  if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    int e = errno;
    ::close(fd);
    raise(Errc::Internal, "bind " + path + ": " + std::strerror(e));
  }
  if (::listen(fd, 64) != 0) {
    int e = errno;
    ::close(fd);
    raise(Errc::Internal, std::string("listen: ") + std::strerror(e));
  }
  return fd;
}

std::pair<int, uint16_t> bind_tcp(const std::string& host_port) {
  size_t colon = host_port.rfind(':');
  if (colon == std::string::npos) raise(Errc::InvalidArgument, "listen_tcp needs host:port");
  std::string host = host_port.substr(0, colon);
  uint16_t port = uint16_t(std::stoi(host_port.substr(colon + 1)));

  int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) raise(Errc::Internal, std::string("socket: ") + std::strerror(errno));
  int one = 1;
  ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    ::close(fd);
    raise(Errc::InvalidArgument, "listen_tcp bad host " + host);
  }
  if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0 || ::listen(fd, 64) != 0) {
    int e = errno;
    ::close(fd);
    raise(Errc::Internal, "bind tcp " + host_port + ": " + std::strerror(e));
  }
  sockaddr_in actual{};
  socklen_t len = sizeof(actual);
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&actual), &len);
  return {fd, ntohs(actual.sin_port)};
}

}  // namespace

Daemon::Daemon(DaemonConfig cfg) : cfg_(std::move(cfg)) {
  validate_config(cfg_);
  fs::create_directories(cfg_.disk_cache_dir);

  shm::cleanup_orphans();

  backend_ = std::make_unique<ShmTierBackend>(cfg_.disk_cache_dir, cfg_.remote_url,
                                              cfg_.full_verify);
  cache::CoreConfig cc;
  cc.fast_capacity_bytes = cfg_.fast_capacity_bytes;
  cc.host_capacity_bytes = cfg_.host_capacity_bytes;
  cc.disk_capacity_bytes = cfg_.disk_capacity_bytes;
  cc.policy = cfg_.eviction_policy;
  cc.eager_reclaim = cfg_.eager_reclaim;
  core_ = std::make_unique<cache::CacheCore>(cc, *backend_);

  // Register pre-seeded artifacts, name-sorted for deterministic sequence
  // numbers.
  std::vector<fs::path> files;
  std::error_code ec;
  for (const auto& entry : fs::directory_iterator(cfg_.disk_cache_dir, ec))
    if (entry.is_regular_file()) files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  for (const auto& p : files) {
    auto key = model::key_from_filename(p.filename().string());
    if (!key) continue;
    core_->register_disk_file(*key, p.string(), fs::file_size(p, ec));
  }

  unix_fd_ = bind_unix(cfg_.listen_path);
  if (cfg_.listen_tcp) {
    auto [fd, port] = bind_tcp(*cfg_.listen_tcp);
    tcp_fd_ = fd;
    tcp_port_ = port;
  }

  if (cfg_.startup_calibration) run_startup_calibration();
}

Daemon::~Daemon() {
  request_stop();
  join();
}

void Daemon::run_startup_calibration() {
  using clock = std::chrono::steady_clock;
  Calibration cal;

  // q: time one full read of the largest pre-seeded artifact.
  fs::path biggest;
  uintmax_t biggest_size = 0;
  std::error_code ec;
  for (const auto& entry : fs::directory_iterator(cfg_.disk_cache_dir, ec)) {
    if (!entry.is_regular_file()) continue;
    uintmax_t sz = entry.file_size(ec);
    if (sz > biggest_size) {
      biggest_size = sz;
      biggest = entry.path();
    }
  }
  if (biggest_size < 1 << 20) return;  // nothing big enough to time

  std::ifstream f(biggest, std::ios::binary);
  std::vector<char> buf(1 << 20);
  auto t0 = clock::now();
  uint64_t total = 0;
  while (f.read(buf.data(), std::streamsize(buf.size())) || f.gcount() > 0) {
    total += uint64_t(f.gcount());
    if (f.eof()) break;
  }
  double secs = std::chrono::duration<double>(clock::now() - t0).count();
  if (secs <= 0 || total == 0) return;
  cal.q = double(total) / secs;

  // o and s: medians over 32 export/attach reps of a small segment.
  std::vector<double> exports, attaches;
  for (int i = 0; i < 32; ++i) {
    auto e0 = clock::now();
    shm::Segment seg = shm::Segment::create("calib", 64 * 1024);
    seg.seal();
    exports.push_back(std::chrono::duration<double>(clock::now() - e0).count());
    auto a0 = clock::now();
    shm::Attachment at =
        shm::Attachment::attach(seg.handle().token, seg.handle().generation);
    attaches.push_back(std::chrono::duration<double>(clock::now() - a0).count());
  }
  auto median = [](std::vector<double>& v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
  };
  cal.o = median(exports);
  cal.s = median(attaches);
  calibration_ = cal;
}

void Daemon::start() {
  accept_threads_.emplace_back([this] { accept_loop(unix_fd_); });
  if (tcp_fd_ >= 0) accept_threads_.emplace_back([this] { accept_loop(tcp_fd_); });
}

void Daemon::accept_loop(int listen_fd) {
  while (!stopping_.load()) {
    pollfd pfd{listen_fd, POLLIN, 0};
    int rc = ::poll(&pfd, 1, 200);
    if (rc <= 0) continue;
    int fd = ::accept(listen_fd, nullptr, nullptr);
    if (fd < 0) continue;
    if (stopping_.load()) {
      ::close(fd);
      break;
    }
    {
      std::lock_guard lk(conns_mu_);
      conn_fds_.push_back(fd);
    }
    std::lock_guard lk(conn_threads_mu_);
    conn_threads_.emplace_back([this, fd] { serve_connection(fd); });
  }
}

void Daemon::serve_connection(int fd) {
  const uint64_t conn_id = next_conn_id_.fetch_add(1);
  wire::FramedSocket sock(fd);
  try {
    for (;;) {
      auto frame = sock.recv_frame();
      if (!frame) break;  // clean EOF
      wire::Message reply;
      try {
        wire::Message req = wire::decode(*frame);
        reply = dispatch(req, conn_id);
      } catch (const Error& e) {
        reply = wire::ErrorMsg{uint16_t(wire_code(e.code())), e.what()};
      } catch (const std::exception& e) {
        reply = wire::ErrorMsg{uint16_t(Errc::Internal), e.what()};
      }
      sock.send(reply);
    }
  } catch (const Error&) {
    // connection torn down mid-frame; fall through to handle cleanup
  }
  close_connection_handles(conn_id);
  std::lock_guard lk(conns_mu_);
  std::erase(conn_fds_, fd);
}

wire::Message Daemon::dispatch(const wire::Message& req, uint64_t conn_id) {
  if (const auto* open = std::get_if<wire::OpenRequest>(&req)) return handle_open(*open, conn_id);
  if (const auto* close = std::get_if<wire::CloseRequest>(&req))
    return handle_close(*close, conn_id);
  if (std::holds_alternative<wire::StatsRequest>(req)) return build_stats();
  raise(Errc::ProtocolError, "unexpected message type in request position");
}

wire::Message Daemon::handle_open(const wire::OpenRequest& req, uint64_t conn_id) {
  if (stopping_.load()) raise(Errc::Internal, "daemon is shutting down");
  model::ModelKey key{req.ns, req.name, req.version};
  if (!model::valid_key(key)) raise(Errc::ProtocolError, "malformed model key");

  uint64_t now = logical_clock_.fetch_add(1) + 1;
  cache::PlacementResult placed = core_->open_model(key, req.granularity, now);

  uint64_t handle_id = next_handle_id_.fetch_add(1);
  {
    std::lock_guard lk(handles_mu_);
    handles_[handle_id] = {key, placed.model_id, conn_id};
  }

  wire::OpenResponse resp;
  resp.model_id = placed.model_id;
  resp.handle_id = handle_id;
  resp.footprint = placed.footprint;
  resp.manifest_digest = placed.manifest_digest;
  for (const auto& obj : placed.layout.objects) {
    const auto& seg = placed.segments.at(obj.segment_index);
    resp.objects.push_back({obj.name, seg.token, seg.generation, obj.offset, obj.length});
  }
  return resp;
}

wire::Message Daemon::handle_close(const wire::CloseRequest& req, uint64_t conn_id) {
  (void)conn_id;  // any connection may close a handle it learned of
  model::ModelKey key;
  {
    std::lock_guard lk(handles_mu_);
    auto it = handles_.find(req.handle_id);
    if (it == handles_.end()) raise(Errc::NotOpen, "handle " + std::to_string(req.handle_id));
    if (it->second.model_id != req.model_id)
      raise(Errc::NotOpen, "handle/model mismatch on close");
    key = it->second.key;
    handles_.erase(it);
  }
  uint64_t rc = core_->close_model(key);
  return wire::CloseResponse{req.model_id, rc};
}

void Daemon::close_connection_handles(uint64_t conn_id) {
  std::vector<model::ModelKey> keys;
  {
    std::lock_guard lk(handles_mu_);
    for (auto it = handles_.begin(); it != handles_.end();) {
      if (it->second.conn_id == conn_id) {
        keys.push_back(it->second.key);
        it = handles_.erase(it);
      } else {
        ++it;
      }
    }
  }
  for (const auto& k : keys) {
    try {
      core_->close_model(k);
    } catch (const Error&) {
    }
  }
}

wire::StatsResponse Daemon::build_stats() const {
  cache::StatsSnapshot snap = core_->stats();
  wire::StatsResponse resp;
  for (size_t t = 0; t < cache::kTierCount; ++t) {
    resp.tiers[t] = {snap.tiers[t].hits, snap.tiers[t].misses, snap.tiers[t].evictions,
                     snap.tiers[t].used_bytes, snap.tiers[t].capacity_bytes};
  }
  for (const auto& m : snap.models) {
    resp.models.push_back(
        {m.key.ns, m.key.name, m.key.version, m.refcount, m.use_count, m.residency});
  }
  resp.open_requests = snap.open_requests;
  resp.open_errors = snap.open_errors;
  resp.disk_reads = snap.disk_reads;
  resp.remote_fetches = snap.remote_fetches;
  resp.fetch_ns = snap.cumulative.fetch_ns;
  resp.disk_read_ns = snap.cumulative.disk_read_ns;
  resp.copy_ns = snap.cumulative.host_to_fast_copy_ns;
  resp.export_ns = snap.cumulative.handle_export_ns;
  resp.workspace_headroom = cfg_.workspace_headroom_fraction;
  if (calibration_) {
    resp.has_calibration = true;
    resp.calib_q = calibration_->q;
    resp.calib_o = calibration_->o;
    resp.calib_s = calibration_->s;
  }
  return resp;
}

std::string Daemon::stats_text() const {
  cache::StatsSnapshot snap = core_->stats();
  std::ostringstream os;
  for (size_t t = 0; t < cache::kTierCount; ++t) {
    os << cache::tier_name(cache::Tier(t)) << " hits=" << snap.tiers[t].hits
       << " misses=" << snap.tiers[t].misses << " evictions=" << snap.tiers[t].evictions
       << " used=" << snap.tiers[t].used_bytes << " capacity=" << snap.tiers[t].capacity_bytes
       << "\n";
  }
  os << "opens=" << snap.open_requests << " errors=" << snap.open_errors
     << " disk_reads=" << snap.disk_reads << " remote_fetches=" << snap.remote_fetches << "\n";
  for (const auto& m : snap.models) {
    os << model::to_string(m.key) << " rc=" << m.refcount << " uses=" << m.use_count
       << " residency=" << int(m.residency) << "\n";
  }
  return os.str();
}

void Daemon::request_stop() {
  if (stopping_.exchange(true)) return;

  // Grace period: let clients drain their open handles.
  auto deadline =
      std::chrono::steady_clock::now() + std::chrono::milliseconds(cfg_.shutdown_grace_ms);
  while (!core_->drained() && std::chrono::steady_clock::now() < deadline)
    std::this_thread::sleep_for(std::chrono::milliseconds(10));

  {
    std::lock_guard lk(conns_mu_);
    for (int fd : conn_fds_) ::shutdown(fd, SHUT_RDWR);
  }
}

void Daemon::join() {
  // Accept threads first; once they exit no new connection threads appear.
  for (auto& t : accept_threads_)
    if (t.joinable()) t.join();
  accept_threads_.clear();
  std::vector<std::thread> conns;
  {
    std::lock_guard lk(conn_threads_mu_);
    conns.swap(conn_threads_);
  }
  for (auto& t : conns)
    if (t.joinable()) t.join();

  if (unix_fd_ >= 0) {
    ::close(unix_fd_);
    ::unlink(cfg_.listen_path.c_str());
    unix_fd_ = -1;
  }
  if (tcp_fd_ >= 0) {
    ::close(tcp_fd_);
    tcp_fd_ = -1;
  }
  if (core_) core_->drop_all();
  shm::cleanup_orphans(int(::getpid()));
}

}  // namespace mrm::daemon
