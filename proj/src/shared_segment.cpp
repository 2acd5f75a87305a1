#include "mrm/shared_segment.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cerrno>
#include <cstring>
#include <filesystem>

#include <fcntl.h>
#include <signal.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <unistd.h>

namespace mrm::shm {

namespace {

// Lives at offset 0 of every segment object; the payload follows.
struct SegHeader {
  uint64_t magic;
  uint64_t generation;
  uint64_t length;
  uint32_t sealed;
  uint32_t reserved;
};
constexpr uint64_t kSegMagic = 0x314745534d524dull;  // "MRMSEG1"
constexpr uint64_t kHeaderLen = 64;
static_assert(sizeof(SegHeader) <= kHeaderLen);

std::atomic<uint64_t> g_next_seq{1};

std::string sanitize_hint(std::string_view hint) {
  std::string s;
  for (char c : hint) {
    if (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.')
      s.push_back(c);
    else
      s.push_back('_');
  }
  return s;
}

std::string platform_name(std::string_view token) { return "/" + std::string(token); }

}  // namespace

bool valid_granularity(const ShareGranularity& g) {
  if (g.kind != GranularityKind::Block) return true;
  return g.block_bytes > 0 && g.block_bytes % 64 == 0;
}

const char* granularity_name(GranularityKind k) {
  switch (k) {
    case GranularityKind::Model: return "model";
    case GranularityKind::Layer: return "layer";
    case GranularityKind::Block: return "block";
  }
  return "?";
}

ObjectLayout layout_for(const model::ModelManifest& manifest, const ShareGranularity& g) {
  if (!valid_granularity(g))
    raise(Errc::InvalidArgument, "block_bytes must be a positive multiple of 64");
  ObjectLayout layout;
  const uint64_t blob = manifest.blob_bytes;
  if (blob == 0) {
    layout.objects.push_back({"blob", 0, 0, 0});
    return layout;
  }
  switch (g.kind) {
    case GranularityKind::Model:
      layout.objects.push_back({"blob", 0, 0, blob});
      break;
    case GranularityKind::Layer:
      for (size_t i = 0; i < manifest.tensors.size(); ++i) {
        const auto& t = manifest.tensors[i];
        uint64_t end = (i + 1 < manifest.tensors.size()) ? manifest.tensors[i + 1].offset : blob;
        layout.objects.push_back({t.name, 0, t.offset, end - t.offset});
      }
      break;
    case GranularityKind::Block: {
      uint64_t off = 0;
      uint32_t idx = 0;
      while (off < blob) {
        uint64_t len = std::min(g.block_bytes, blob - off);
        layout.objects.push_back({"block_" + std::to_string(idx++), 0, off, len});
        off += len;
      }
      break;
    }
  }
  return layout;
}

Segment::Segment(Segment&& other) noexcept { *this = std::move(other); }

Segment& Segment::operator=(Segment&& other) noexcept {
  if (this != &other) {
    destroy();
    handle_ = std::move(other.handle_);
    base_ = other.base_;
    map_len_ = other.map_len_;
    unlinked_ = other.unlinked_;
    other.base_ = nullptr;
    other.map_len_ = 0;
    other.unlinked_ = true;
  }
  return *this;
}

Segment::~Segment() { destroy(); }

Segment Segment::create(std::string_view token_hint, uint64_t length) {
  if (length == 0) raise(Errc::InvalidArgument, "segment length must be > 0");
  std::string hint = sanitize_hint(token_hint);

  for (int attempt = 0; attempt < 64; ++attempt) {
    uint64_t seq = g_next_seq.fetch_add(1);
    std::string token = kTokenPrefix + std::to_string(getpid()) + "." + std::to_string(seq);
    if (!hint.empty()) token += "." + hint;
    if (token.size() > kMaxTokenLen) token.resize(kMaxTokenLen);

    int fd = ::shm_open(platform_name(token).c_str(), O_CREAT | O_EXCL | O_RDWR, 0600);
    if (fd < 0) {
      if (errno == EEXIST) continue;  // stale name, pick the next sequence number
      raise(Errc::OutOfSharedMemory, std::string("shm_open: ") + std::strerror(errno));
    }

    uint64_t map_len = kHeaderLen + length;
    if (::ftruncate(fd, off_t(map_len)) != 0) {
      int e = errno;
      ::close(fd);
      ::shm_unlink(platform_name(token).c_str());
      raise(Errc::OutOfSharedMemory, std::string("ftruncate: ") + std::strerror(e));
    }
    void* base = ::mmap(nullptr, size_t(map_len), PROT_READ | PROT_WRITE, MAP_SHARED, fd, 0);
    ::close(fd);
    if (base == MAP_FAILED) {
      ::shm_unlink(platform_name(token).c_str());
      raise(Errc::OutOfSharedMemory, std::string("mmap: ") + std::strerror(errno));
    }

    auto* hdr = static_cast<SegHeader*>(base);
    hdr->magic = kSegMagic;
    hdr->generation = seq;
    hdr->length = length;
    hdr->sealed = 0;

    Segment s;
    s.handle_ = SegmentHandle{token, length, seq, false};
    s.base_ = base;
    s.map_len_ = map_len;
    s.unlinked_ = false;
    return s;
  }
  raise(Errc::NameCollision, "could not find a free segment name");
}

std::span<uint8_t> Segment::data() {
  if (!base_) raise(Errc::NoSuchSegment, "segment not open");
  if (handle_.sealed) raise(Errc::AlreadySealed, handle_.token);
  return {static_cast<uint8_t*>(base_) + kHeaderLen, size_t(handle_.length)};
}

void Segment::seal() {
  if (!base_) raise(Errc::NoSuchSegment, "segment not open");
  if (handle_.sealed) raise(Errc::AlreadySealed, handle_.token);
  auto* hdr = static_cast<SegHeader*>(base_);
  hdr->sealed = 1;
  // Drop write access; later writes through this mapping fault.
  ::mprotect(base_, size_t(map_len_), PROT_READ);
  handle_.sealed = true;
}

std::span<const uint8_t> Segment::view() const {
  if (!base_) raise(Errc::NoSuchSegment, "segment not open");
  return {static_cast<const uint8_t*>(base_) + kHeaderLen, size_t(handle_.length)};
}

void Segment::destroy() {
  if (base_) {
    ::munmap(base_, size_t(map_len_));
    base_ = nullptr;
  }
  if (!unlinked_ && !handle_.token.empty()) {
    ::shm_unlink(platform_name(handle_.token).c_str());
    unlinked_ = true;
  }
}

Attachment::Attachment(Attachment&& other) noexcept { *this = std::move(other); }

Attachment& Attachment::operator=(Attachment&& other) noexcept {
  if (this != &other) {
    if (base_) ::munmap(base_, size_t(map_len_));
    base_ = other.base_;
    map_len_ = other.map_len_;
    length_ = other.length_;
    other.base_ = nullptr;
    other.map_len_ = 0;
    other.length_ = 0;
  }
  return *this;
}

Attachment::~Attachment() {
  if (base_) ::munmap(base_, size_t(map_len_));
}

Attachment Attachment::attach(std::string_view token, uint64_t generation) {
  int fd = ::shm_open(platform_name(token).c_str(), O_RDONLY, 0);
  if (fd < 0) raise(Errc::NoSuchSegment, std::string(token));

  struct stat st {};
  if (::fstat(fd, &st) != 0 || uint64_t(st.st_size) < kHeaderLen) {
    ::close(fd);
    raise(Errc::NoSuchSegment, std::string(token) + ": not a segment");
  }
  uint64_t map_len = uint64_t(st.st_size);
  void* base = ::mmap(nullptr, size_t(map_len), PROT_READ, MAP_SHARED, fd, 0);
  ::close(fd);
  if (base == MAP_FAILED)
    raise(Errc::OutOfSharedMemory, std::string("mmap: ") + std::strerror(errno));

  const auto* hdr = static_cast<const SegHeader*>(base);
  auto fail = [&](Errc c, const std::string& msg) {
    ::munmap(base, size_t(map_len));
    raise(c, msg);
  };
  if (hdr->magic != kSegMagic) fail(Errc::NoSuchSegment, std::string(token) + ": bad header");
  if (hdr->generation != generation)
    fail(Errc::StaleGeneration, std::string(token) + ": generation " +
                                    std::to_string(hdr->generation) + " != requested " +
                                    std::to_string(generation));
  if (!hdr->sealed) fail(Errc::NotSealed, std::string(token));
  if (kHeaderLen + hdr->length > map_len) fail(Errc::NoSuchSegment, "segment shorter than header claims");

  Attachment a;
  a.base_ = base;
  a.map_len_ = map_len;
  a.length_ = hdr->length;
  return a;
}

std::span<const uint8_t> Attachment::view() const {
  if (!base_) raise(Errc::NoSuchSegment, "attachment not open");
  return {static_cast<const uint8_t*>(base_) + kHeaderLen, size_t(length_)};
}

int cleanup_orphans(std::optional<int> owner_pid) {
  namespace fs = std::filesystem;
  int removed = 0;
  std::error_code ec;
  for (const auto& entry : fs::directory_iterator("/dev/shm", ec)) {
    std::string name = entry.path().filename().string();
    if (name.rfind(kTokenPrefix, 0) != 0) continue;
    size_t dot = name.find('.', sizeof(kTokenPrefix) - 1);
    if (dot == std::string::npos) continue;
    int pid = 0;
    try {
      pid = std::stoi(name.substr(sizeof(kTokenPrefix) - 1, dot - (sizeof(kTokenPrefix) - 1)));
    } catch (...) {
      continue;
    }
    bool match = owner_pid ? (pid == *owner_pid) : (::kill(pid, 0) != 0 && errno == ESRCH);
    if (match && ::shm_unlink(("/" + name).c_str()) == 0) ++removed;
  }
  return removed;
}

}  // namespace mrm::shm
