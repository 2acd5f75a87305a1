#include "mrm/client.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <unistd.h>

namespace mrm::client {

namespace fs = std::filesystem;

double share_benefit(double bytes, double object_count, const CostModelParams& p) {
  return bytes / p.q - object_count * (p.o + p.s);
}

const char* fallback_reason_name(FallbackReason r) {
  switch (r) {
    case FallbackReason::None: return "none";
    case FallbackReason::Forced: return "forced";
    case FallbackReason::Disabled: return "disabled";
    case FallbackReason::DaemonUnreachable: return "daemon_unreachable";
    case FallbackReason::BenefitNonPositive: return "benefit_non_positive";
    case FallbackReason::WorkspaceReservation: return "workspace_reservation";
    case FallbackReason::DaemonError: return "daemon_error";
  }
  return "?";
}

struct ModelView::Impl {
  model::ModelKey key;
  model::ModelManifest manifest;
  Origin origin{Origin::Private};
  FallbackReason reason{FallbackReason::None};
  uint64_t model_id{0};
  uint64_t handle_id{0};
  std::vector<wire::ObjectRef> objects;
  std::vector<shm::Attachment> attachments;
  std::vector<uint8_t> own_blob;
  std::vector<TensorView> tensors;
  OpenTimings timings;
  bool open{true};
};

const model::ModelKey& ModelView::key() const { return impl_->key; }
Origin ModelView::origin() const { return impl_->origin; }
FallbackReason ModelView::fallback_reason() const { return impl_->reason; }
const std::vector<TensorView>& ModelView::tensors() const { return impl_->tensors; }
const model::ModelManifest& ModelView::manifest() const { return impl_->manifest; }
uint64_t ModelView::model_id() const { return impl_->model_id; }
uint64_t ModelView::handle_id() const { return impl_->handle_id; }
bool ModelView::open() const { return impl_ && impl_->open; }
const OpenTimings& ModelView::timings() const { return impl_->timings; }

namespace {

void slice_tensors(ModelView::Impl& impl, const uint8_t* blob_base) {
  impl.tensors.clear();
  for (const auto& t : impl.manifest.tensors)
    impl.tensors.push_back(
        {t.name, t.dims, t.dtype, std::span<const uint8_t>(blob_base + t.offset, size_t(t.nbytes))});
}

// Fallback used when rho and calibration are unavailable: buffered-disk
// bandwidth of the smallest measured system and a conservative half
// millisecond per object end to end.
constexpr CostModelParams kDefaultParams{200e6, 0.00025, 0.00025};

}  // namespace

Client::Client(ClientConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.endpoint.empty()) {
    if (const char* ep = std::getenv("MRM_ENDPOINT")) cfg_.endpoint = ep;
    if (cfg_.endpoint.empty()) cfg_.endpoint = "/tmp/mrm.sock";
  }
  if (const char* dis = std::getenv("MRM_DISABLE"))
    if (std::strcmp(dis, "1") == 0) cfg_.disabled = true;
  if (const char* dirs = std::getenv("MRM_MODEL_DIR")) {
    std::string s(dirs);
    size_t pos = 0;
    while (pos <= s.size()) {
      size_t colon = s.find(':', pos);
      if (colon == std::string::npos) colon = s.size();
      if (colon > pos) cfg_.model_dirs.push_back(s.substr(pos, colon - pos));
      pos = colon + 1;
    }
  }
  if (cfg_.client_id == 0) cfg_.client_id = uint64_t(::getpid());
}

std::optional<std::string> Client::resolve_local(const model::ModelKey& key,
                                                 const OpenOptions& options) const {
  if (options.local_path) {
    if (fs::exists(*options.local_path)) return options.local_path;
    return std::nullopt;
  }
  std::string fname = model::canonical_filename(key);
  for (const auto& dir : cfg_.model_dirs) {
    fs::path p = fs::path(dir) / fname;
    if (fs::exists(p)) return p.string();
  }
  return std::nullopt;
}

wire::Message Client::roundtrip(const wire::Message& req) {
  if (!conn_.valid()) conn_ = wire::FramedSocket::connect(wire::parse_endpoint(cfg_.endpoint));
  try {
    return conn_.request(req);
  } catch (const Error& e) {
    conn_.close();
    throw;
  }
}

bool Client::daemon_reachable() {
  std::lock_guard lk(mu_);
  try {
    roundtrip(wire::StatsRequest{});
    return true;
  } catch (const Error&) {
    return false;
  }
}

wire::StatsResponse Client::stats() {
  std::lock_guard lk(mu_);
  wire::Message reply = roundtrip(wire::StatsRequest{});
  if (auto* resp = std::get_if<wire::StatsResponse>(&reply)) {
    cached_stats_ = *resp;
    return *resp;
  }
  if (auto* err = std::get_if<wire::ErrorMsg>(&reply))
    raise(Errc(err->code), err->detail);
  raise(Errc::ProtocolError, "unexpected reply to stats request");
}

CostModelParams Client::effective_params(const OpenOptions& options) {
  if (options.params) return *options.params;
  if (cfg_.params) return *cfg_.params;
  if (cached_stats_ && cached_stats_->has_calibration)
    return {cached_stats_->calib_q, cached_stats_->calib_o, cached_stats_->calib_s};
  return kDefaultParams;
}

ModelView Client::open(const model::ModelKey& key, const OpenOptions& options) {
  if (!model::valid_key(key)) raise(Errc::InvalidArgument, "malformed key " + model::to_string(key));
  std::optional<std::string> local = resolve_local(key, options);

  auto private_or_throw = [&](FallbackReason reason) {
    if (!local) raise(Errc::NotFound, model::to_string(key) + " (no daemon, no local artifact)");
    return open_private(key, *local, reason);
  };

  if (options.force_private) return private_or_throw(FallbackReason::Forced);
  if (cfg_.disabled) return private_or_throw(FallbackReason::Disabled);

  shm::ShareGranularity g = options.granularity.value_or(cfg_.default_granularity);

  if (local && !options.force_shared) {
    // Benefit decision needs the artifact's size and the object count, both
    // derivable from the local manifest without touching the blob.
    model::ModelManifest manifest = model::read_manifest(fs::path(*local));
    std::error_code ec;
    double b = double(fs::file_size(*local, ec));

    // Published daemon calibration is used when the caller supplied none.
    if (!options.params && !cfg_.params && !cached_stats_) {
      try {
        stats();
      } catch (const Error&) {
        return open_private(key, *local, FallbackReason::DaemonUnreachable);
      }
    }
    CostModelParams params = effective_params(options);

    double n = double(shm::layout_for(manifest, g).objects.size());
    if (share_benefit(b, n, params) <= 0) {
      // Layer sharing that does not pay off may still pay off per model.
      if (g.kind == shm::GranularityKind::Layer &&
          share_benefit(b, 1, params) > 0) {
        g = shm::ShareGranularity::model();
      } else {
        return open_private(key, *local, FallbackReason::BenefitNonPositive);
      }
    }

    // Workspace reservation: intermediates stay client-private; check the
    // daemon's advertised headroom before asking it to place the weights.
    if (manifest.workspace_bytes > 0 && !cached_stats_) {
      try {
        stats();
      } catch (const Error&) {
        return open_private(key, *local, FallbackReason::DaemonUnreachable);
      }
    }
    if (cached_stats_) {
      double headroom_bytes = cached_stats_->workspace_headroom *
                              double(cached_stats_->tiers[0].capacity_bytes);
      if (double(manifest.workspace_bytes) > headroom_bytes)
        return open_private(key, *local, FallbackReason::WorkspaceReservation);
    }
  }

  try {
    return open_shared(key, g);
  } catch (const Error& e) {
    if (e.code() == Errc::DaemonUnreachable || e.code() == Errc::ConnectionLost) {
      if (local) return open_private(key, *local, FallbackReason::DaemonUnreachable);
      raise(Errc::NotFound, model::to_string(key) + " (daemon unreachable, no local artifact)");
    }
    if (e.code() == Errc::NotFound && local)
      return open_private(key, *local, FallbackReason::DaemonError);
    if ((e.code() == Errc::NoEvictableSpace || e.code() == Errc::TooLargeForFast ||
         e.code() == Errc::Internal) &&
        local)
      return open_private(key, *local, FallbackReason::DaemonError);
    throw;
  }
}

ModelView Client::open_private(const model::ModelKey& key, const std::string& path,
                               FallbackReason reason) {
  auto t0 = std::chrono::steady_clock::now();
  model::LoadedModel lm = model::read_model(path);
  double load_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (lm.manifest.key != key)
    raise(Errc::Corrupt, "artifact at " + path + " holds " + model::to_string(lm.manifest.key));
  ModelView v;
  v.impl_ = std::make_shared<ModelView::Impl>();
  v.impl_->key = key;
  v.impl_->manifest = std::move(lm.manifest);
  v.impl_->origin = Origin::Private;
  v.impl_->reason = reason;
  v.impl_->own_blob = std::move(lm.blob);
  v.impl_->timings.private_load_s = load_s;
  slice_tensors(*v.impl_, v.impl_->own_blob.data());
  return v;
}

ModelView Client::open_shared(const model::ModelKey& key, const shm::ShareGranularity& g) {
  wire::OpenRequest req;
  req.ns = key.ns;
  req.name = key.name;
  req.version = key.version;
  req.granularity = g;
  req.client_id = cfg_.client_id;

  auto rpc_t0 = std::chrono::steady_clock::now();
  wire::Message reply;
  {
    std::lock_guard lk(mu_);
    reply = roundtrip(req);
  }
  double rpc_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - rpc_t0).count();
  if (auto* err = std::get_if<wire::ErrorMsg>(&reply)) raise(Errc(err->code), err->detail);
  auto* resp = std::get_if<wire::OpenResponse>(&reply);
  if (!resp) raise(Errc::ProtocolError, "unexpected reply to open request");
  if (resp->objects.empty()) raise(Errc::ProtocolError, "open response carries no objects");

  ModelView v;
  v.impl_ = std::make_shared<ModelView::Impl>();
  auto& impl = *v.impl_;
  impl.key = key;
  impl.origin = Origin::Shared;
  impl.model_id = resp->model_id;
  impl.handle_id = resp->handle_id;
  impl.objects = resp->objects;

  impl.timings.rpc_s = rpc_s;
  auto attach_t0 = std::chrono::steady_clock::now();

  // One attachment per distinct segment token. The daemon publishes the
  // manifest JSON after the blob, so a handle is self-describing.
  std::vector<std::string> tokens;
  for (const auto& o : resp->objects) {
    if (std::find(tokens.begin(), tokens.end(), o.segment_token) == tokens.end()) {
      tokens.push_back(o.segment_token);
      impl.attachments.push_back(shm::Attachment::attach(o.segment_token, o.generation));
    }
  }
  const auto payload = impl.attachments.front().view();
  if (payload.size() < 8) raise(Errc::Corrupt, "shared segment too small");
  uint64_t jlen = 0;
  for (int i = 0; i < 8; ++i) jlen |= uint64_t(payload[payload.size() - 8 + i]) << (i * 8);
  if (jlen + 8 > payload.size()) raise(Errc::Corrupt, "shared segment manifest length invalid");
  const uint8_t* jstart = payload.data() + payload.size() - 8 - jlen;
  if (Sha256::of({jstart, size_t(jlen)}) != resp->manifest_digest)
    raise(Errc::Corrupt, "manifest digest mismatch on attach");

  bool cached = false;
  {
    std::lock_guard ck(manifests_mu_);
    auto it = manifests_by_digest_.find(resp->manifest_digest);
    if (it != manifests_by_digest_.end()) {
      impl.manifest = it->second;
      cached = true;
    }
  }
  if (!cached) {
    impl.manifest = model::manifest_from_json(
        std::string_view(reinterpret_cast<const char*>(jstart), size_t(jlen)));
    std::lock_guard ck(manifests_mu_);
    manifests_by_digest_.emplace(resp->manifest_digest, impl.manifest);
  }

  if (impl.manifest.blob_bytes + jlen + 8 > payload.size())
    raise(Errc::Corrupt, "shared segment shorter than blob");
  slice_tensors(impl, payload.data());
  impl.timings.attach_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - attach_t0).count();
  return v;
}

void Client::close(ModelView& view) {
  if (!view.impl_ || !view.impl_->open) return;  // double-close is a no-op
  auto& impl = *view.impl_;
  impl.open = false;
  if (impl.origin == Origin::Shared) {
    try {
      wire::CloseRequest req;
      req.model_id = impl.model_id;
      req.handle_id = impl.handle_id;
      std::lock_guard lk(mu_);
      wire::Message reply = roundtrip(req);
      (void)reply;  // NotOpen after a connection drop means already released
    } catch (const Error&) {
    }
    impl.attachments.clear();
  }
  impl.own_blob.clear();
  impl.own_blob.shrink_to_fit();
  impl.tensors.clear();
}

uint64_t Client::touch(const ModelView& view) const {
  // FNV-1a over 8-byte lanes: a deterministic full pass over the weights
  // that streams near memory bandwidth, so the stand-in cost scales with
  // model size the way a real consumer's first sweep would.
  uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& t : view.tensors()) {
    const uint8_t* p = t.bytes.data();
    size_t n = t.bytes.size();
    size_t words = n / 8;
    for (size_t i = 0; i < words; ++i) {
      uint64_t w;
      std::memcpy(&w, p + i * 8, 8);
      h ^= w;
      h *= 0x100000001b3ull;
    }
    for (size_t i = words * 8; i < n; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ull;
    }
  }
  return h;
}

CostModelParams Client::calibrate(const model::ModelKey& sample) {
  OpenOptions opts;
  std::optional<std::string> local = resolve_local(sample, opts);
  if (!local) raise(Errc::NotFound, "calibration sample not found locally");

  using clock = std::chrono::steady_clock;
  CostModelParams p;

  // q: full sequential read of the sample artifact.
  {
    std::ifstream f(*local, std::ios::binary);
    if (!f) raise(Errc::NotFound, *local);
    std::vector<char> buf(1 << 20);
    auto t0 = clock::now();
    uint64_t total = 0;
    while (f.read(buf.data(), std::streamsize(buf.size())) || f.gcount() > 0) {
      total += uint64_t(f.gcount());
      if (f.eof()) break;
    }
    double secs = std::chrono::duration<double>(clock::now() - t0).count();
    if (secs <= 0.0 || total == 0) raise(Errc::Internal, "calibration read failed");
    p.q = double(total) / secs;
  }

  // o and s over >= 32 warm repetitions: o from the daemon's export phase
  // counter, s from local attach timing.
  constexpr int kReps = 32;
  std::vector<double> export_s, attach_s;
  wire::StatsResponse before = stats();
  uint64_t prev_export = before.export_ns;
  uint64_t prev_opens = before.open_requests;
  for (int i = 0; i < kReps; ++i) {
    OpenOptions shared_opts;
    shared_opts.force_shared = true;
    ModelView v = open(sample, shared_opts);
    if (v.origin() != Origin::Shared) raise(Errc::DaemonUnreachable, "calibration needs the daemon");

    const wire::ObjectRef& obj = v.impl_->objects.front();
    auto t0 = clock::now();
    {
      shm::Attachment probe = shm::Attachment::attach(obj.segment_token, obj.generation);
      (void)probe;
    }
    attach_s.push_back(std::chrono::duration<double>(clock::now() - t0).count());
    close(v);

    wire::StatsResponse after = stats();
    if (after.open_requests > prev_opens) {
      export_s.push_back(double(after.export_ns - prev_export) / 1e9 /
                         double(after.open_requests - prev_opens));
    }
    prev_export = after.export_ns;
    prev_opens = after.open_requests;
  }
  auto median = [](std::vector<double>& v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
  };
  p.o = median(export_s);
  p.s = median(attach_s);
  return p;
}

}  // namespace mrm::client
