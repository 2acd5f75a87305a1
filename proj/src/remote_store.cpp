#include "mrm/remote_store.hpp"

#include <fstream>

#include <unistd.h>

#include <httplib.h>

namespace mrm::remote {

namespace fs = std::filesystem;

namespace {

// Full-verify succeeding is what promotes a download to its canonical name.
bool file_valid(const fs::path& p) {
  try {
    model::read_manifest(p, /*full_verify=*/true);
    return true;
  } catch (...) {
    return false;
  }
}

void verify_or_remove(const fs::path& tmp) {
  try {
    model::read_manifest(tmp, /*full_verify=*/true);
  } catch (const Error& e) {
    std::error_code ec;
    fs::remove(tmp, ec);
    if (e.code() == Errc::ChecksumMismatch) throw;
    raise(Errc::ChecksumMismatch, std::string("fetched artifact invalid: ") + e.what());
  }
}

struct HttpTarget {
  std::string host_port;  // scheme://host[:port]
  std::string path_prefix;
};

HttpTarget split_http(const std::string& base) {
  const std::string scheme = "http://";
  if (base.rfind(scheme, 0) != 0) raise(Errc::InvalidArgument, "expected http:// url");
  size_t slash = base.find('/', scheme.size());
  HttpTarget t;
  if (slash == std::string::npos) {
    t.host_port = base;
  } else {
    t.host_port = base.substr(0, slash);
    t.path_prefix = base.substr(slash);
    while (!t.path_prefix.empty() && t.path_prefix.back() == '/') t.path_prefix.pop_back();
  }
  return t;
}

}  // namespace

RemoteRef make_ref(const std::string& url, const model::ModelKey& key) {
  RemoteRef ref;
  ref.key = key;
  if (url.rfind("http://", 0) == 0) {
    ref.backend = RemoteRef::Backend::Http;
    ref.base = url;
  } else if (url.rfind("dir:", 0) == 0) {
    ref.backend = RemoteRef::Backend::Dir;
    ref.base = url.substr(4);
  } else {
    ref.backend = RemoteRef::Backend::Dir;
    ref.base = url;
  }
  return ref;
}

fs::path fetch(const RemoteRef& ref, const fs::path& dest_dir) {
  const std::string filename = model::canonical_filename(ref.key);
  const fs::path dest = dest_dir / filename;

  if (fs::exists(dest) && file_valid(dest)) return dest;

  fs::create_directories(dest_dir);
  const fs::path tmp = dest_dir / (filename + ".part." + std::to_string(::getpid()));

  if (ref.backend == RemoteRef::Backend::Dir) {
    const fs::path src = fs::path(ref.base) / filename;
    if (!fs::exists(src)) raise(Errc::RemoteNotFound, src.string());
    std::error_code ec;
    fs::copy_file(src, tmp, fs::copy_options::overwrite_existing, ec);
    if (ec) raise(Errc::TransportError, "copy " + src.string() + ": " + ec.message());
  } else {
    HttpTarget target = split_http(ref.base);
    httplib::Client client(target.host_port);
    client.set_read_timeout(60, 0);

    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) raise(Errc::TransportError, "cannot write " + tmp.string());
    auto res = client.Get(target.path_prefix + "/" + filename,
                          [&](const char* data, size_t len) {
                            out.write(data, std::streamsize(len));
                            return bool(out);
                          });
    out.close();
    if (!res || res->status != 200) {
      std::error_code ec;
      fs::remove(tmp, ec);
      if (res && res->status == 404) raise(Errc::RemoteNotFound, filename);
      raise(Errc::TransportError,
            "GET " + filename + ": " + (res ? "http " + std::to_string(res->status)
                                            : httplib::to_string(res.error())));
    }
  }

  verify_or_remove(tmp);
  std::error_code ec;
  fs::rename(tmp, dest, ec);
  if (ec) {
    fs::remove(tmp, ec);
    raise(Errc::TransportError, "rename to " + dest.string() + ": " + ec.message());
  }
  return dest;
}

}  // namespace mrm::remote
