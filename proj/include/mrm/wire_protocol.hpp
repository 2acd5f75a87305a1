#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "mrm/error.hpp"
#include "mrm/model_format.hpp"
#include "mrm/shared_segment.hpp"

namespace mrm::wire {

// Frame = u32 payload_length | u8 message_type | payload. Little-endian
// throughout. Strings are u16 length + UTF-8 bytes; lists are u32 count +
// elements; granularity is u8 tag (0 model, 1 layer, 2 block) + u64
// block_bytes when tag == 2. The numeric values below are frozen.
inline constexpr uint16_t kProtocolVersion = 1;
inline constexpr uint32_t kMaxFrameBytes = 16u << 20;

enum class MsgType : uint8_t {
  OpenRequest = 0x01,
  OpenResponse = 0x02,
  CloseRequest = 0x03,
  CloseResponse = 0x04,
  StatsRequest = 0x05,
  StatsResponse = 0x06,
  Error = 0x7F,
};

struct OpenRequest {
  uint16_t protocol_version{kProtocolVersion};
  std::string ns;
  std::string name;
  std::string version;  // model version, not protocol
  shm::ShareGranularity granularity{};
  uint64_t client_id{0};

  bool operator==(const OpenRequest&) const = default;
};

struct ObjectRef {
  std::string name;
  std::string segment_token;
  uint64_t generation{0};
  uint64_t offset{0};
  uint64_t length{0};

  bool operator==(const ObjectRef&) const = default;
};

struct OpenResponse {
  uint64_t model_id{0};
  uint64_t handle_id{0};
  model::FootprintEstimate footprint{};
  std::vector<ObjectRef> objects;
  Digest manifest_digest{};

  bool operator==(const OpenResponse&) const = default;
};

struct CloseRequest {
  uint16_t protocol_version{kProtocolVersion};
  uint64_t model_id{0};
  uint64_t handle_id{0};

  bool operator==(const CloseRequest&) const = default;
};

struct CloseResponse {
  uint64_t model_id{0};
  uint64_t refcount{0};  // after the close

  bool operator==(const CloseResponse&) const = default;
};

struct StatsRequest {
  uint16_t protocol_version{kProtocolVersion};

  bool operator==(const StatsRequest&) const = default;
};

struct TierStatsMsg {
  uint64_t hits{0};
  uint64_t misses{0};
  uint64_t evictions{0};
  uint64_t used_bytes{0};
  uint64_t capacity_bytes{0};

  bool operator==(const TierStatsMsg&) const = default;
};

struct ModelStatsMsg {
  std::string ns, name, version;
  uint64_t refcount{0};
  uint64_t use_count{0};
  uint8_t residency{0};  // bit i set = tier i resident (0 fast, 1 host, 2 disk)

  bool operator==(const ModelStatsMsg&) const = default;
};

struct StatsResponse {
  std::array<TierStatsMsg, 4> tiers{};  // fast, host, local disk, remote
  std::vector<ModelStatsMsg> models;
  uint64_t open_requests{0};  // accepted (successful) opens
  uint64_t open_errors{0};
  uint64_t disk_reads{0};
  uint64_t remote_fetches{0};
  // Cumulative load-phase nanoseconds, for breakdown reporting.
  uint64_t fetch_ns{0};
  uint64_t disk_read_ns{0};
  uint64_t copy_ns{0};
  uint64_t export_ns{0};
  double workspace_headroom{0.25};
  bool has_calibration{false};
  double calib_q{0}, calib_o{0}, calib_s{0};

  bool operator==(const StatsResponse&) const = default;
};

struct ErrorMsg {
  uint16_t code{0};  // frozen wire values of Errc (coarse set)
  std::string detail;

  bool operator==(const ErrorMsg&) const = default;
};

using Message = std::variant<OpenRequest, OpenResponse, CloseRequest, CloseResponse, StatsRequest,
                             StatsResponse, ErrorMsg>;

MsgType type_of(const Message& m);

// Full frame including the length prefix.
std::vector<uint8_t> encode(const Message& m);

// Decodes one full frame. Never crashes on arbitrary bytes; throws
// TruncatedFrame / FrameTooLarge / UnknownMessageType / BadVersion /
// ProtocolError.
Message decode(std::span<const uint8_t> frame);

// --- transport ---------------------------------------------------------

// Endpoint strings: "unix:<path>" or a bare path; "tcp:<host>:<port>".
struct Endpoint {
  bool tcp{false};
  std::string path_or_host;
  uint16_t port{0};
};
Endpoint parse_endpoint(const std::string& s);

// Blocking framed stream over a connected socket fd. Owns the fd.
class FramedSocket {
 public:
  FramedSocket() = default;
  explicit FramedSocket(int fd) : fd_(fd) {}
  FramedSocket(FramedSocket&&) noexcept;
  FramedSocket& operator=(FramedSocket&&) noexcept;
  FramedSocket(const FramedSocket&) = delete;
  FramedSocket& operator=(const FramedSocket&) = delete;
  ~FramedSocket();

  static FramedSocket connect(const Endpoint& ep);  // throws DaemonUnreachable

  void send(const Message& m);                        // throws ConnectionLost
  Message recv();                                     // throws ConnectionLost
  std::optional<std::vector<uint8_t>> recv_frame();   // nullopt on clean EOF

  // One in-flight request per connection: lockstep request/reply.
  Message request(const Message& m);

  bool valid() const { return fd_ >= 0; }
  int fd() const { return fd_; }
  void close();

 private:
  int fd_{-1};
};

}  // namespace mrm::wire
