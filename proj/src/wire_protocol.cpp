#include "mrm/wire_protocol.hpp"

#include <bit>
#include <cstring>

#include <arpa/inet.h>
#include <netdb.h>
#include <sys/socket.h>
#include <sys/un.h>
#include <unistd.h>

namespace mrm::wire {

namespace {

class Writer {
 public:
  void u8(uint8_t v) { buf_.push_back(v); }
  void u16(uint16_t v) {
    for (int i = 0; i < 2; ++i) buf_.push_back(uint8_t(v >> (i * 8)));
  }
  void u32(uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(uint8_t(v >> (i * 8)));
  }
  void u64(uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(uint8_t(v >> (i * 8)));
  }
  void f64(double v) { u64(std::bit_cast<uint64_t>(v)); }
  void str(const std::string& s) {
    if (s.size() > UINT16_MAX) raise(Errc::ProtocolError, "string too long to encode");
    u16(uint16_t(s.size()));
    buf_.insert(buf_.end(), s.begin(), s.end());
  }
  void bytes(std::span<const uint8_t> b) { buf_.insert(buf_.end(), b.begin(), b.end()); }
  void granularity(const shm::ShareGranularity& g) {
    u8(uint8_t(g.kind));
    if (g.kind == shm::GranularityKind::Block) u64(g.block_bytes);
  }

  std::vector<uint8_t> take() { return std::move(buf_); }

 private:
  std::vector<uint8_t> buf_;
};

class Reader {
 public:
  explicit Reader(std::span<const uint8_t> data) : data_(data) {}

  uint8_t u8() {
    need(1);
    return data_[pos_++];
  }
  uint16_t u16() {
    need(2);
    uint16_t v = uint16_t(data_[pos_]) | uint16_t(data_[pos_ + 1]) << 8;
    pos_ += 2;
    return v;
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(data_[pos_ + i]) << (i * 8);
    pos_ += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t(data_[pos_ + i]) << (i * 8);
    pos_ += 8;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    uint16_t n = u16();
    need(n);
    std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  Digest digest() {
    need(32);
    Digest d;
    std::memcpy(d.data(), data_.data() + pos_, 32);
    pos_ += 32;
    return d;
  }
  shm::ShareGranularity granularity() {
    uint8_t tag = u8();
    if (tag > 2) raise(Errc::ProtocolError, "bad granularity tag");
    shm::ShareGranularity g;
    g.kind = shm::GranularityKind(tag);
    if (g.kind == shm::GranularityKind::Block) {
      g.block_bytes = u64();
      if (!shm::valid_granularity(g)) raise(Errc::ProtocolError, "bad block_bytes");
    }
    return g;
  }
  uint32_t count(size_t min_elem_bytes) {
    uint32_t n = u32();
    if (min_elem_bytes > 0 && uint64_t(n) * min_elem_bytes > remaining())
      raise(Errc::TruncatedFrame, "list count exceeds payload");
    return n;
  }
  size_t remaining() const { return data_.size() - pos_; }
  void expect_end() const {
    if (pos_ != data_.size()) raise(Errc::ProtocolError, "trailing bytes in frame");
  }

 private:
  void need(size_t n) const {
    if (pos_ + n > data_.size()) raise(Errc::TruncatedFrame, "payload ends mid-field");
  }
  std::span<const uint8_t> data_;
  size_t pos_{0};
};

void check_version(uint16_t v) {
  if (v != kProtocolVersion)
    raise(Errc::BadVersion, "protocol_version " + std::to_string(v));
}

void encode_payload(Writer& w, const OpenRequest& m) {
  w.u16(m.protocol_version);
  w.str(m.ns);
  w.str(m.name);
  w.str(m.version);
  w.granularity(m.granularity);
  w.u64(m.client_id);
}

void encode_payload(Writer& w, const OpenResponse& m) {
  w.u64(m.model_id);
  w.u64(m.handle_id);
  w.u64(m.footprint.weights_bytes);
  w.u64(m.footprint.workspace_bytes);
  w.u64(m.footprint.total_bytes);
  w.u32(uint32_t(m.objects.size()));
  for (const auto& o : m.objects) {
    w.str(o.name);
    w.str(o.segment_token);
    w.u64(o.generation);
    w.u64(o.offset);
    w.u64(o.length);
  }
  w.bytes(m.manifest_digest);
}

void encode_payload(Writer& w, const CloseRequest& m) {
  w.u16(m.protocol_version);
  w.u64(m.model_id);
  w.u64(m.handle_id);
}

void encode_payload(Writer& w, const CloseResponse& m) {
  w.u64(m.model_id);
  w.u64(m.refcount);
}

void encode_payload(Writer& w, const StatsRequest& m) { w.u16(m.protocol_version); }

void encode_payload(Writer& w, const StatsResponse& m) {
  for (const auto& t : m.tiers) {
    w.u64(t.hits);
    w.u64(t.misses);
    w.u64(t.evictions);
    w.u64(t.used_bytes);
    w.u64(t.capacity_bytes);
  }
  w.u32(uint32_t(m.models.size()));
  for (const auto& s : m.models) {
    w.str(s.ns);
    w.str(s.name);
    w.str(s.version);
    w.u64(s.refcount);
    w.u64(s.use_count);
    w.u8(s.residency);
  }
  w.u64(m.open_requests);
  w.u64(m.open_errors);
  w.u64(m.disk_reads);
  w.u64(m.remote_fetches);
  w.u64(m.fetch_ns);
  w.u64(m.disk_read_ns);
  w.u64(m.copy_ns);
  w.u64(m.export_ns);
  w.f64(m.workspace_headroom);
  w.u8(m.has_calibration ? 1 : 0);
  if (m.has_calibration) {
    w.f64(m.calib_q);
    w.f64(m.calib_o);
    w.f64(m.calib_s);
  }
}

void encode_payload(Writer& w, const ErrorMsg& m) {
  w.u16(m.code);
  w.str(m.detail);
}

OpenRequest decode_open_request(Reader& r) {
  OpenRequest m;
  m.protocol_version = r.u16();
  check_version(m.protocol_version);
  m.ns = r.str();
  m.name = r.str();
  m.version = r.str();
  m.granularity = r.granularity();
  m.client_id = r.u64();
  return m;
}

OpenResponse decode_open_response(Reader& r) {
  OpenResponse m;
  m.model_id = r.u64();
  m.handle_id = r.u64();
  m.footprint.weights_bytes = r.u64();
  m.footprint.workspace_bytes = r.u64();
  m.footprint.total_bytes = r.u64();
  uint32_t n = r.count(2 + 2 + 8 + 8 + 8);
  m.objects.reserve(n);
  for (uint32_t i = 0; i < n; ++i) {
    ObjectRef o;
    o.name = r.str();
    o.segment_token = r.str();
    o.generation = r.u64();
    o.offset = r.u64();
    o.length = r.u64();
    m.objects.push_back(std::move(o));
  }
  m.manifest_digest = r.digest();
  return m;
}

CloseRequest decode_close_request(Reader& r) {
  CloseRequest m;
  m.protocol_version = r.u16();
  check_version(m.protocol_version);
  m.model_id = r.u64();
  m.handle_id = r.u64();
  return m;
}

CloseResponse decode_close_response(Reader& r) {
  CloseResponse m;
  m.model_id = r.u64();
  m.refcount = r.u64();
  return m;
}

StatsRequest decode_stats_request(Reader& r) {
  StatsRequest m;
  m.protocol_version = r.u16();
  check_version(m.protocol_version);
  return m;
}

StatsResponse decode_stats_response(Reader& r) {
  StatsResponse m;
  for (auto& t : m.tiers) {
    t.hits = r.u64();
    t.misses = r.u64();
    t.evictions = r.u64();
    t.used_bytes = r.u64();
    t.capacity_bytes = r.u64();
  }
  uint32_t n = r.count(2 + 2 + 2 + 8 + 8 + 1);
  m.models.reserve(n);
  for (uint32_t i = 0; i < n; ++i) {
    ModelStatsMsg s;
    s.ns = r.str();
    s.name = r.str();
    s.version = r.str();
    s.refcount = r.u64();
    s.use_count = r.u64();
    s.residency = r.u8();
    m.models.push_back(std::move(s));
  }
  m.open_requests = r.u64();
  m.open_errors = r.u64();
  m.disk_reads = r.u64();
  m.remote_fetches = r.u64();
  m.fetch_ns = r.u64();
  m.disk_read_ns = r.u64();
  m.copy_ns = r.u64();
  m.export_ns = r.u64();
  m.workspace_headroom = r.f64();
  m.has_calibration = r.u8() != 0;
  if (m.has_calibration) {
    m.calib_q = r.f64();
    m.calib_o = r.f64();
    m.calib_s = r.f64();
  }
  return m;
}

ErrorMsg decode_error(Reader& r) {
  ErrorMsg m;
  m.code = r.u16();
  m.detail = r.str();
  return m;
}

}  // namespace

MsgType type_of(const Message& m) {
  switch (m.index()) {
    case 0: return MsgType::OpenRequest;
    case 1: return MsgType::OpenResponse;
    case 2: return MsgType::CloseRequest;
    case 3: return MsgType::CloseResponse;
    case 4: return MsgType::StatsRequest;
    case 5: return MsgType::StatsResponse;
    default: return MsgType::Error;
  }
}

std::vector<uint8_t> encode(const Message& m) {
  Writer w;
  std::visit([&](const auto& msg) { encode_payload(w, msg); }, m);
  std::vector<uint8_t> payload = w.take();
  if (payload.size() + 1 > kMaxFrameBytes) raise(Errc::FrameTooLarge, "encoded frame too large");

  std::vector<uint8_t> frame;
  frame.reserve(5 + payload.size());
  uint32_t len = uint32_t(payload.size());
  for (int i = 0; i < 4; ++i) frame.push_back(uint8_t(len >> (i * 8)));
  frame.push_back(uint8_t(type_of(m)));
  frame.insert(frame.end(), payload.begin(), payload.end());
  return frame;
}

Message decode(std::span<const uint8_t> frame) {
  if (frame.size() < 5) raise(Errc::TruncatedFrame, "frame shorter than header");
  uint32_t len = 0;
  for (int i = 0; i < 4; ++i) len |= uint32_t(frame[i]) << (i * 8);
  if (len > kMaxFrameBytes) raise(Errc::FrameTooLarge, std::to_string(len));
  if (uint64_t(len) + 5 != frame.size())
    raise(Errc::TruncatedFrame, "declared length " + std::to_string(len) + " != payload size " +
                                    std::to_string(frame.size() - 5));
  uint8_t type = frame[4];
  Reader r(frame.subspan(5));
  Message m;
  switch (MsgType(type)) {
    case MsgType::OpenRequest: m = decode_open_request(r); break;
    case MsgType::OpenResponse: m = decode_open_response(r); break;
    case MsgType::CloseRequest: m = decode_close_request(r); break;
    case MsgType::CloseResponse: m = decode_close_response(r); break;
    case MsgType::StatsRequest: m = decode_stats_request(r); break;
    case MsgType::StatsResponse: m = decode_stats_response(r); break;
    case MsgType::Error: m = decode_error(r); break;
    default: raise(Errc::UnknownMessageType, std::to_string(type));
  }
  r.expect_end();
  return m;
}

Endpoint parse_endpoint(const std::string& s) {
  Endpoint ep;
  if (s.rfind("tcp:", 0) == 0) {
    std::string rest = s.substr(4);
    size_t colon = rest.rfind(':');
    if (colon == std::string::npos) raise(Errc::InvalidArgument, "tcp endpoint needs host:port");
    ep.tcp = true;
    ep.path_or_host = rest.substr(0, colon);
    ep.port = uint16_t(std::stoi(rest.substr(colon + 1)));
  } else {
    ep.tcp = false;
    ep.path_or_host = s.rfind("unix:", 0) == 0 ? s.substr(5) : s;
  }
  return ep;
}

FramedSocket::FramedSocket(FramedSocket&& other) noexcept : fd_(other.fd_) { other.fd_ = -1; }

FramedSocket& FramedSocket::operator=(FramedSocket&& other) noexcept {
  if (this != &other) {
    close();
    fd_ = other.fd_;
    other.fd_ = -1;
  }
  return *this;
}

FramedSocket::~FramedSocket() { close(); }

void FramedSocket::close() {
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
}

FramedSocket FramedSocket::connect(const Endpoint& ep) {
  int fd = -1;
  if (ep.tcp) {
    fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) raise(Errc::DaemonUnreachable, std::strerror(errno));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(ep.port);
    if (::inet_pton(AF_INET, ep.path_or_host.c_str(), &addr.sin_addr) != 1) {
      ::close(fd);
      raise(Errc::DaemonUnreachable, "bad host " + ep.path_or_host);
    }
    if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
      int e = errno;
      ::close(fd);
      raise(Errc::DaemonUnreachable, std::string("connect: ") + std::strerror(e));
    }
  } else {
    fd = ::socket(AF_UNIX, SOCK_STREAM, 0);
    if (fd < 0) raise(Errc::DaemonUnreachable, std::strerror(errno));
    sockaddr_un addr{};
    addr.sun_family = AF_UNIX;
    if (ep.path_or_host.size() >= sizeof(addr.sun_path)) {
      ::close(fd);
      raise(Errc::DaemonUnreachable, "socket path too long");
    }
    std::strncpy(addr.sun_path, ep.path_or_host.c_str(), sizeof(addr.sun_path) - 1);
    if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
      int e = errno;
      ::close(fd);
      raise(Errc::DaemonUnreachable, std::string("connect ") + ep.path_or_host + ": " +
                                         std::strerror(e));
    }
  }
  return FramedSocket(fd);
}

namespace {

void send_all(int fd, const uint8_t* data, size_t len) {
  size_t sent = 0;
  while (sent < len) {
    ssize_t n = ::send(fd, data + sent, len - sent, MSG_NOSIGNAL);
    if (n <= 0) {
      if (n < 0 && errno == EINTR) continue;
      raise(Errc::ConnectionLost, "send failed");
    }
    sent += size_t(n);
  }
}

// Returns false on clean EOF at a frame boundary.
bool recv_all(int fd, uint8_t* data, size_t len, bool eof_ok) {
  size_t got = 0;
  while (got < len) {
    ssize_t n = ::recv(fd, data + got, len - got, 0);
    if (n == 0) {
      if (got == 0 && eof_ok) return false;
      raise(Errc::ConnectionLost, "peer closed mid-frame");
    }
    if (n < 0) {
      if (errno == EINTR) continue;
      raise(Errc::ConnectionLost, std::string("recv: ") + std::strerror(errno));
    }
    got += size_t(n);
  }
  return true;
}

}  // namespace

void FramedSocket::send(const Message& m) {
  std::vector<uint8_t> frame = encode(m);
  send_all(fd_, frame.data(), frame.size());
}

std::optional<std::vector<uint8_t>> FramedSocket::recv_frame() {
  uint8_t head[5];
  if (!recv_all(fd_, head, 5, /*eof_ok=*/true)) return std::nullopt;
  uint32_t len = 0;
  for (int i = 0; i < 4; ++i) len |= uint32_t(head[i]) << (i * 8);
  if (len > kMaxFrameBytes) raise(Errc::FrameTooLarge, std::to_string(len));
  std::vector<uint8_t> frame(5 + len);
  std::memcpy(frame.data(), head, 5);
  if (len > 0) recv_all(fd_, frame.data() + 5, len, /*eof_ok=*/false);
  return frame;
}

Message FramedSocket::recv() {
  auto frame = recv_frame();
  if (!frame) raise(Errc::ConnectionLost, "connection closed");
  return decode(*frame);
}

Message FramedSocket::request(const Message& m) {
  send(m);
  return recv();
}

}  // namespace mrm::wire
