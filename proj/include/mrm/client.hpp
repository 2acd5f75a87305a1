#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mrm/model_format.hpp"
#include "mrm/shared_segment.hpp"
#include "mrm/wire_protocol.hpp"

namespace mrm::client {

// Framework-client analog: open/close with transparent shared-vs-private
// loading. The same call yields tensor views backed either by daemon-owned
// shared memory or by a private buffer, byte-identical either way.

struct CostModelParams {
  double q{0};  // disk bandwidth, bytes/second
  double o{0};  // per-object export overhead, seconds
  double s{0};  // per-object attach overhead, seconds
};

// rho = b/q - n*(o+s): seconds saved by sharing versus reading b bytes from
// disk. Share when positive; the magnitude tracks the expected speedup.
double share_benefit(double bytes, double object_count, const CostModelParams& p);

enum class Origin : uint8_t { Shared, Private };

enum class FallbackReason : uint8_t {
  None = 0,
  Forced,
  Disabled,
  DaemonUnreachable,
  BenefitNonPositive,
  WorkspaceReservation,
  DaemonError,
};
const char* fallback_reason_name(FallbackReason r);

struct TensorView {
  std::string name;
  std::vector<uint64_t> dims;
  model::DType dtype{model::DType::F64};
  std::span<const uint8_t> bytes;
};

// Client-side wall-clock segments of the open call, for breakdown reporting.
struct OpenTimings {
  double rpc_s{0};           // request/reply round trip (includes daemon work)
  double attach_s{0};        // segment attach + manifest parse + slicing
  double private_load_s{0};  // artifact read for private views
};

class ModelView {
 public:
  ModelView() = default;

  const model::ModelKey& key() const;
  Origin origin() const;
  FallbackReason fallback_reason() const;
  const std::vector<TensorView>& tensors() const;
  const model::ModelManifest& manifest() const;
  uint64_t model_id() const;
  uint64_t handle_id() const;
  bool open() const;
  const OpenTimings& timings() const;

  struct Impl;  // defined in client.cpp

 private:
  friend class Client;
  std::shared_ptr<Impl> impl_;
};

struct OpenOptions {
  std::optional<shm::ShareGranularity> granularity;
  bool force_private{false};
  bool force_shared{false};
  std::optional<CostModelParams> params;
  std::optional<std::string> local_path;  // explicit artifact location
};

struct ClientConfig {
  std::string endpoint;                  // empty: $MRM_ENDPOINT or /tmp/mrm.sock
  std::vector<std::string> model_dirs;   // searched for canonical filenames
  shm::ShareGranularity default_granularity{};
  std::optional<CostModelParams> params;
  bool disabled{false};                  // also via MRM_DISABLE=1
  uint64_t client_id{0};
};

class Client {
 public:
  explicit Client(ClientConfig cfg = {});

  // Shared when the daemon is reachable, the benefit model says so (or
  // force_shared), and the open succeeds; private otherwise. Throws NotFound
  // when neither path can resolve the model, Corrupt on a bad artifact.
  ModelView open(const model::ModelKey& key, const OpenOptions& options = {});

  // Idempotent. Shared views send a Close request and detach.
  void close(ModelView& view);

  // Compute stand-in: streams every tensor byte, returns a checksum.
  uint64_t touch(const ModelView& view) const;

  // Measures q from a full read of the sample artifact and o/s from >= 32
  // warm export/attach repetitions against the daemon (medians). Throws
  // DaemonUnreachable.
  CostModelParams calibrate(const model::ModelKey& sample);

  wire::StatsResponse stats();

  bool daemon_reachable();

 private:
  std::optional<std::string> resolve_local(const model::ModelKey& key,
                                           const OpenOptions& options) const;
  ModelView open_private(const model::ModelKey& key, const std::string& path,
                         FallbackReason reason);
  ModelView open_shared(const model::ModelKey& key, const shm::ShareGranularity& g);
  wire::Message roundtrip(const wire::Message& req);  // connects lazily
  CostModelParams effective_params(const OpenOptions& options);

  ClientConfig cfg_;
  std::mutex mu_;  // serializes the connection (lockstep request/reply)
  wire::FramedSocket conn_;
  std::optional<wire::StatsResponse> cached_stats_;
  // Manifests keyed by their digest: reopening a model skips the JSON parse.
  std::mutex manifests_mu_;
  std::map<Digest, model::ModelManifest> manifests_by_digest_;
};

}  // namespace mrm::client
