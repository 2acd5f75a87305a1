#include "mrm/error.hpp"

namespace mrm {

const char* errc_name(Errc c) {
  switch (c) {
    case Errc::NotFound: return "NotFound";
    case Errc::TooLargeForFast: return "TooLargeForFast";
    case Errc::NoEvictableSpace: return "NoEvictableSpace";
    case Errc::NotOpen: return "NotOpen";
    case Errc::Corrupt: return "Corrupt";
    case Errc::ProtocolError: return "ProtocolError";
    case Errc::Internal: return "Internal";
    case Errc::LengthMismatch: return "LengthMismatch";
    case Errc::BadMagic: return "BadMagic";
    case Errc::UnsupportedVersion: return "UnsupportedVersion";
    case Errc::CorruptManifest: return "CorruptManifest";
    case Errc::ChecksumMismatch: return "ChecksumMismatch";
    case Errc::NameCollision: return "NameCollision";
    case Errc::OutOfSharedMemory: return "OutOfSharedMemory";
    case Errc::NoSuchSegment: return "NoSuchSegment";
    case Errc::StaleGeneration: return "StaleGeneration";
    case Errc::AlreadySealed: return "AlreadySealed";
    case Errc::NotSealed: return "NotSealed";
    case Errc::UnknownModel: return "UnknownModel";
    case Errc::FrameTooLarge: return "FrameTooLarge";
    case Errc::UnknownMessageType: return "UnknownMessageType";
    case Errc::TruncatedFrame: return "TruncatedFrame";
    case Errc::BadVersion: return "BadVersion";
    case Errc::RemoteNotFound: return "RemoteNotFound";
    case Errc::TransportError: return "TransportError";
    case Errc::DaemonUnreachable: return "DaemonUnreachable";
    case Errc::ConnectionLost: return "ConnectionLost";
    case Errc::EmptySamples: return "EmptySamples";
    case Errc::NonPositiveInput: return "NonPositiveInput";
    case Errc::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

Errc wire_code(Errc c) {
  switch (c) {
    case Errc::NotFound:
    case Errc::RemoteNotFound:
      return Errc::NotFound;
    case Errc::TooLargeForFast:
      return Errc::TooLargeForFast;
    case Errc::NoEvictableSpace:
      return Errc::NoEvictableSpace;
    case Errc::NotOpen:
    case Errc::UnknownModel:
      return Errc::NotOpen;
    case Errc::Corrupt:
    case Errc::LengthMismatch:
    case Errc::BadMagic:
    case Errc::UnsupportedVersion:
    case Errc::CorruptManifest:
    case Errc::ChecksumMismatch:
      return Errc::Corrupt;
    case Errc::ProtocolError:
    case Errc::FrameTooLarge:
    case Errc::UnknownMessageType:
    case Errc::TruncatedFrame:
    case Errc::BadVersion:
      return Errc::ProtocolError;
    default:
      return Errc::Internal;
  }
}

}  // namespace mrm
