#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace mrm {

// Application error codes. The wire protocol carries only the coarse codes
// (see wire_code below); everything else is daemon/client internal detail.
enum class Errc : uint16_t {
  // Coarse codes, frozen on the wire.
  NotFound = 1,
  TooLargeForFast = 2,
  NoEvictableSpace = 3,
  NotOpen = 4,
  Corrupt = 5,
  ProtocolError = 6,
  Internal = 7,

  // model-format
  LengthMismatch = 100,
  BadMagic = 101,
  UnsupportedVersion = 102,
  CorruptManifest = 103,
  ChecksumMismatch = 104,

  // shared-segment
  NameCollision = 110,
  OutOfSharedMemory = 111,
  NoSuchSegment = 112,
  StaleGeneration = 113,
  AlreadySealed = 114,
  NotSealed = 115,

  // cache-core
  UnknownModel = 120,

  // wire-protocol framing
  FrameTooLarge = 130,
  UnknownMessageType = 131,
  TruncatedFrame = 132,
  BadVersion = 133,

  // remote-store
  RemoteNotFound = 140,
  TransportError = 141,

  // client / bench
  DaemonUnreachable = 150,
  ConnectionLost = 151,
  EmptySamples = 152,
  NonPositiveInput = 153,

  InvalidArgument = 160,
};

const char* errc_name(Errc c);

// Collapse a fine-grained code onto the frozen wire enumeration.
Errc wire_code(Errc c);

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& msg)
      : std::runtime_error(std::string(errc_name(code)) + ": " + msg), code_(code) {}

  Errc code() const { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void raise(Errc code, const std::string& msg) { throw Error(code, msg); }

}  // namespace mrm
