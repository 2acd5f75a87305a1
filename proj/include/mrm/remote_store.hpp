#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "mrm/model_format.hpp"

namespace mrm::remote {

// The cloud-storage tier: fetches model artifacts by key into the local disk
// cache. Two backends: a plain directory and HTTP GET. Downloads land under a
// temporary name, the checksum trailer is verified against the blob, then the
// file is atomically renamed to its canonical name.

struct RemoteRef {
  enum class Backend { Dir, Http };
  Backend backend{Backend::Dir};
  std::string base;  // directory path or http://host[:port][/prefix]
  model::ModelKey key;
};

// "http://..." selects the HTTP backend; "dir:<path>" or a bare path the
// directory backend.
RemoteRef make_ref(const std::string& url, const model::ModelKey& key);

// Throws RemoteNotFound, ChecksumMismatch (temp file removed), TransportError.
// Idempotent: an already-present valid file short-circuits with no transfer.
std::filesystem::path fetch(const RemoteRef& ref, const std::filesystem::path& dest_dir);

}  // namespace mrm::remote
