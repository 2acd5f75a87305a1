#include "mrm/model_format.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace mrm::model {

namespace {

using nlohmann::json;

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char(uint8_t(v >> (i * 8))));
}
void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(char(uint8_t(v >> (i * 8))));
}

uint32_t get_u32(const uint8_t* p) {
  return uint32_t(p[0]) | uint32_t(p[1]) << 8 | uint32_t(p[2]) << 16 | uint32_t(p[3]) << 24;
}
uint64_t get_u64(const uint8_t* p) {
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= uint64_t(p[i]) << (i * 8);
  return v;
}

bool version_matches(std::string_view v) {
  // \d+(\.\d+)*
  if (v.empty()) return false;
  bool expect_digit = true;
  bool saw_digit_in_group = false;
  for (char c : v) {
    if (c >= '0' && c <= '9') {
      expect_digit = false;
      saw_digit_in_group = true;
    } else if (c == '.') {
      if (!saw_digit_in_group) return false;
      saw_digit_in_group = false;
      expect_digit = true;
    } else {
      return false;
    }
  }
  return saw_digit_in_group && !expect_digit;
}

uint64_t checked_product(const std::vector<uint64_t>& dims) {
  uint64_t p = 1;
  for (uint64_t d : dims) {
    if (d == 0) raise(Errc::CorruptManifest, "tensor dim must be positive");
    if (d != 0 && p > UINT64_MAX / d) raise(Errc::CorruptManifest, "dims overflow");
    p *= d;
  }
  return p;
}

}  // namespace

const char* dtype_name(DType t) {
  switch (t) {
    case DType::F64: return "f64";
    case DType::F32: return "f32";
    case DType::F16: return "f16";
    case DType::I8: return "i8";
  }
  return "?";
}

std::optional<DType> dtype_from_name(std::string_view s) {
  if (s == "f64") return DType::F64;
  if (s == "f32") return DType::F32;
  if (s == "f16") return DType::F16;
  if (s == "i8") return DType::I8;
  return std::nullopt;
}

bool valid_key(const ModelKey& key) {
  if (key.ns.empty() || key.name.empty() || key.version.empty()) return false;
  auto clean = [](const std::string& s) {
    return s.find('/') == std::string::npos && s.find('\0') == std::string::npos;
  };
  if (!clean(key.ns) || !clean(key.name)) return false;
  // '__' is the canonical-filename field separator, so keys may not contain it.
  if (key.ns.find("__") != std::string::npos || key.name.find("__") != std::string::npos)
    return false;
  return version_matches(key.version);
}

std::string to_string(const ModelKey& key) {
  return key.ns + "/" + key.name + "@" + key.version;
}

std::string canonical_filename(const ModelKey& key) {
  return key.ns + "__" + key.name + "__" + key.version + kFileExtension;
}

std::optional<ModelKey> key_from_filename(std::string_view filename) {
  std::string_view ext(kFileExtension);
  if (filename.size() <= ext.size() || filename.substr(filename.size() - ext.size()) != ext)
    return std::nullopt;
  std::string_view stem = filename.substr(0, filename.size() - ext.size());
  size_t a = stem.find("__");
  if (a == std::string_view::npos) return std::nullopt;
  size_t b = stem.find("__", a + 2);
  if (b == std::string_view::npos) return std::nullopt;
  ModelKey key{std::string(stem.substr(0, a)), std::string(stem.substr(a + 2, b - a - 2)),
               std::string(stem.substr(b + 2))};
  if (!valid_key(key)) return std::nullopt;
  return key;
}

uint64_t blob_span(const std::vector<TensorSpec>& tensors) {
  uint64_t end = 0;
  for (const auto& t : tensors) end = std::max(end, t.offset + t.nbytes);
  return align_up(end);
}

void validate_manifest(const ModelManifest& m) {
  if (!valid_key(m.key)) raise(Errc::CorruptManifest, "invalid model key " + to_string(m.key));
  uint64_t prev_end = 0;
  for (size_t i = 0; i < m.tensors.size(); ++i) {
    const auto& t = m.tensors[i];
    if (t.name.empty()) raise(Errc::CorruptManifest, "tensor name empty");
    if (t.dims.empty()) raise(Errc::CorruptManifest, "tensor dims empty: " + t.name);
    uint64_t expect = checked_product(t.dims) * element_size(t.dtype);
    if (t.nbytes != expect)
      raise(Errc::CorruptManifest,
            "tensor " + t.name + " nbytes " + std::to_string(t.nbytes) + " != dims product " +
                std::to_string(expect));
    if (t.offset % kAlign != 0)
      raise(Errc::CorruptManifest, "tensor " + t.name + " offset not 64-aligned");
    if (t.offset < prev_end)
      raise(Errc::CorruptManifest, "tensors overlap or are not sorted by offset at " + t.name);
    prev_end = t.offset + t.nbytes;
    for (size_t j = 0; j < i; ++j) {
      if (m.tensors[j].name == t.name)
        raise(Errc::CorruptManifest, "duplicate tensor name " + t.name);
    }
  }
  if (m.blob_bytes != blob_span(m.tensors))
    raise(Errc::CorruptManifest, "blob_bytes " + std::to_string(m.blob_bytes) +
                                     " != span " + std::to_string(blob_span(m.tensors)));
}

FootprintEstimate estimate_footprint(const ModelManifest& m) {
  FootprintEstimate est;
  for (const auto& t : m.tensors) est.weights_bytes += checked_product(t.dims) * element_size(t.dtype);
  est.workspace_bytes = m.workspace_bytes;
  est.total_bytes = est.weights_bytes + est.workspace_bytes;
  return est;
}

ModelManifest make_manifest(ModelKey key, const std::vector<TensorDecl>& tensors,
                            uint64_t workspace_bytes) {
  ModelManifest m;
  m.key = std::move(key);
  m.workspace_bytes = workspace_bytes;
  uint64_t offset = 0;
  for (const auto& d : tensors) {
    TensorSpec t;
    t.name = d.name;
    t.dims = d.dims;
    t.dtype = d.dtype;
    t.nbytes = checked_product(d.dims) * element_size(d.dtype);
    t.offset = offset;
    offset = align_up(offset + t.nbytes);
    m.tensors.push_back(std::move(t));
  }
  m.blob_bytes = blob_span(m.tensors);
  validate_manifest(m);
  return m;
}

std::string manifest_to_json(const ModelManifest& m) {
  json j;
  j["namespace"] = m.key.ns;
  j["name"] = m.key.name;
  j["version"] = m.key.version;
  j["workspace_bytes"] = m.workspace_bytes;
  json arr = json::array();
  for (const auto& t : m.tensors) {
    json tj;
    tj["name"] = t.name;
    tj["dims"] = t.dims;
    tj["dtype"] = dtype_name(t.dtype);
    tj["offset"] = t.offset;
    tj["nbytes"] = t.nbytes;
    arr.push_back(std::move(tj));
  }
  j["tensors"] = std::move(arr);
  return j.dump();
}

ModelManifest manifest_from_json(std::string_view json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    raise(Errc::CorruptManifest, std::string("manifest JSON parse failed: ") + e.what());
  }
  ModelManifest m;
  try {
    m.key.ns = j.at("namespace").get<std::string>();
    m.key.name = j.at("name").get<std::string>();
    m.key.version = j.at("version").get<std::string>();
    m.workspace_bytes = j.at("workspace_bytes").get<uint64_t>();
    for (const auto& tj : j.at("tensors")) {
      TensorSpec t;
      t.name = tj.at("name").get<std::string>();
      t.dims = tj.at("dims").get<std::vector<uint64_t>>();
      auto dt = dtype_from_name(tj.at("dtype").get<std::string>());
      if (!dt) raise(Errc::CorruptManifest, "unknown dtype in manifest");
      t.dtype = *dt;
      t.offset = tj.at("offset").get<uint64_t>();
      t.nbytes = tj.at("nbytes").get<uint64_t>();
      m.tensors.push_back(std::move(t));
    }
  } catch (const json::exception& e) {
    raise(Errc::CorruptManifest, std::string("manifest field error: ") + e.what());
  }
  m.blob_bytes = blob_span(m.tensors);
  validate_manifest(m);
  return m;
}

uint64_t blob_file_offset(uint64_t manifest_len) {
  return align_up(4 + 4 + 8 + manifest_len);
}

ModelFileWriter::ModelFileWriter(std::ostream& out, ModelManifest manifest)
    : out_(out), manifest_(std::move(manifest)) {
  validate_manifest(manifest_);
  std::string header;
  header.append(kMagic, 4);
  put_u32(header, kFormatVersion);
  std::string mjson = manifest_to_json(manifest_);
  put_u64(header, mjson.size());
  header += mjson;
  header.resize(blob_file_offset(mjson.size()), '\0');
  out_.write(header.data(), std::streamsize(header.size()));
}

void ModelFileWriter::pad_to(uint64_t blob_pos) {
  static const char zeros[4096] = {};
  while (blob_pos_ < blob_pos) {
    uint64_t n = std::min<uint64_t>(blob_pos - blob_pos_, sizeof(zeros));
    out_.write(zeros, std::streamsize(n));
    hasher_.update(zeros, size_t(n));
    blob_pos_ += n;
  }
}

void ModelFileWriter::append(std::span<const uint8_t> tensor_bytes) {
  if (finished_) raise(Errc::LengthMismatch, "writer already finished");
  size_t pos = 0;
  while (pos < tensor_bytes.size()) {
    if (tensor_index_ >= manifest_.tensors.size())
      raise(Errc::LengthMismatch, "data past the last tensor");
    const auto& t = manifest_.tensors[tensor_index_];
    if (tensor_written_ == 0) pad_to(t.offset);
    uint64_t remain = t.nbytes - tensor_written_;
    uint64_t take = std::min<uint64_t>(remain, tensor_bytes.size() - pos);
    out_.write(reinterpret_cast<const char*>(tensor_bytes.data() + pos), std::streamsize(take));
    hasher_.update(tensor_bytes.data() + pos, size_t(take));
    blob_pos_ += take;
    tensor_written_ += take;
    pos += take;
    if (tensor_written_ == t.nbytes) {
      ++tensor_index_;
      tensor_written_ = 0;
    }
  }
}

ModelManifest ModelFileWriter::finish() {
  if (finished_) raise(Errc::LengthMismatch, "writer already finished");
  if (tensor_index_ != manifest_.tensors.size() || tensor_written_ != 0)
    raise(Errc::LengthMismatch, "tensor data incomplete at finish");
  pad_to(manifest_.blob_bytes);
  manifest_.checksum = hasher_.finish();
  out_.write(reinterpret_cast<const char*>(manifest_.checksum.data()), 32);
  out_.flush();
  if (!out_) raise(Errc::Internal, "artifact write failed");
  finished_ = true;
  return manifest_;
}

std::vector<uint8_t> serialize_model(const ModelManifest& manifest,
                                     const std::vector<std::vector<uint8_t>>& tensor_data) {
  if (tensor_data.size() != manifest.tensors.size())
    raise(Errc::LengthMismatch, "tensor block count mismatch");
  for (size_t i = 0; i < tensor_data.size(); ++i) {
    if (tensor_data[i].size() != manifest.tensors[i].nbytes)
      raise(Errc::LengthMismatch, "block " + std::to_string(i) + " length " +
                                      std::to_string(tensor_data[i].size()) + " != nbytes " +
                                      std::to_string(manifest.tensors[i].nbytes));
  }
  std::ostringstream os(std::ios::binary);
  ModelFileWriter w(os, manifest);
  for (const auto& block : tensor_data) w.append(block);
  w.finish();
  std::string s = os.str();
  return std::vector<uint8_t>(s.begin(), s.end());
}

void write_model_file(const std::filesystem::path& path, const ModelManifest& manifest,
                      const std::vector<std::vector<uint8_t>>& tensor_data) {
  if (tensor_data.size() != manifest.tensors.size())
    raise(Errc::LengthMismatch, "tensor block count mismatch");
  for (size_t i = 0; i < tensor_data.size(); ++i) {
    if (tensor_data[i].size() != manifest.tensors[i].nbytes)
      raise(Errc::LengthMismatch, "block length mismatch at " + std::to_string(i));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) raise(Errc::Internal, "cannot open " + path.string() + " for writing");
  ModelFileWriter w(f, manifest);
  for (const auto& block : tensor_data) w.append(block);
  w.finish();
}

namespace {

struct ParsedHeader {
  ModelManifest manifest;
  uint64_t manifest_len{0};
};

// Validates the fixed header and manifest section. `total_size` is the full
// stream length when known (files and in-memory buffers), used to catch
// truncation without reading the blob.
ParsedHeader parse_header(std::span<const uint8_t> head, uint64_t total_size) {
  if (head.size() < 16) raise(Errc::BadMagic, "stream shorter than header");
  if (std::memcmp(head.data(), kMagic, 4) != 0) raise(Errc::BadMagic, "bad magic");
  uint32_t version = get_u32(head.data() + 4);
  if (version != kFormatVersion)
    raise(Errc::UnsupportedVersion, "format version " + std::to_string(version));
  uint64_t mlen = get_u64(head.data() + 8);
  if (mlen > 64ull << 20) raise(Errc::CorruptManifest, "manifest_len implausibly large");
  if (16 + mlen > head.size())
    raise(Errc::CorruptManifest, "stream truncated inside the manifest section");
  ParsedHeader ph;
  ph.manifest_len = mlen;
  std::string_view mjson(reinterpret_cast<const char*>(head.data() + 16), size_t(mlen));
  ph.manifest = manifest_from_json(mjson);
  uint64_t need = blob_file_offset(mlen) + ph.manifest.blob_bytes + 32;
  if (total_size < need)
    raise(Errc::CorruptManifest, "stream truncated: need " + std::to_string(need) +
                                     " bytes, have " + std::to_string(total_size));
  return ph;
}

}  // namespace

ModelManifest read_manifest(std::span<const uint8_t> bytes, bool full_verify) {
  ParsedHeader ph = parse_header(bytes, bytes.size());
  uint64_t blob_off = blob_file_offset(ph.manifest_len);
  std::memcpy(ph.manifest.checksum.data(), bytes.data() + blob_off + ph.manifest.blob_bytes, 32);
  if (full_verify) {
    Digest actual = Sha256::of(bytes.subspan(size_t(blob_off), size_t(ph.manifest.blob_bytes)));
    if (actual != ph.manifest.checksum) raise(Errc::ChecksumMismatch, to_string(ph.manifest.key));
  }
  return ph.manifest;
}

ModelManifest read_manifest(const std::filesystem::path& path, bool full_verify) {
  std::ifstream f(path, std::ios::binary);
  if (!f) raise(Errc::NotFound, path.string());
  f.seekg(0, std::ios::end);
  uint64_t total = uint64_t(f.tellg());
  f.seekg(0);

  std::vector<uint8_t> head(16);
  f.read(reinterpret_cast<char*>(head.data()), 16);
  if (f.gcount() < 16) raise(Errc::BadMagic, "file shorter than header");
  uint64_t mlen = get_u64(head.data() + 8);
  if (mlen > 64ull << 20) raise(Errc::CorruptManifest, "manifest_len implausibly large");
  uint64_t head_len = std::min<uint64_t>(total, 16 + mlen);
  head.resize(size_t(head_len));
  f.read(reinterpret_cast<char*>(head.data() + 16), std::streamsize(head_len - 16));
  if (uint64_t(f.gcount()) < head_len - 16)
    raise(Errc::CorruptManifest, "stream truncated inside the manifest section");

  ParsedHeader ph = parse_header(head, total);
  uint64_t blob_off = blob_file_offset(ph.manifest_len);
  f.seekg(std::streamoff(blob_off + ph.manifest.blob_bytes));
  f.read(reinterpret_cast<char*>(ph.manifest.checksum.data()), 32);
  if (f.gcount() < 32) raise(Errc::CorruptManifest, "missing checksum trailer");

  if (full_verify) {
    f.seekg(std::streamoff(blob_off));
    Sha256 h;
    std::vector<uint8_t> buf(1 << 20);
    uint64_t left = ph.manifest.blob_bytes;
    while (left > 0) {
      uint64_t take = std::min<uint64_t>(left, buf.size());
      f.read(reinterpret_cast<char*>(buf.data()), std::streamsize(take));
      if (uint64_t(f.gcount()) != take) raise(Errc::CorruptManifest, "blob truncated");
      h.update(buf.data(), size_t(take));
      left -= take;
    }
    if (h.finish() != ph.manifest.checksum) raise(Errc::ChecksumMismatch, path.string());
  }
  return ph.manifest;
}

LoadedModel read_model(const std::filesystem::path& path, bool verify) {
  LoadedModel lm;
  lm.manifest = read_manifest(path, false);
  std::ifstream f(path, std::ios::binary);
  if (!f) raise(Errc::NotFound, path.string());
  // Re-read manifest_len from the header; the blob offset depends on the
  // byte length as written, not on our re-serialization.
  uint8_t hdr[16];
  f.read(reinterpret_cast<char*>(hdr), 16);
  uint64_t blob_off = blob_file_offset(get_u64(hdr + 8));
  f.seekg(std::streamoff(blob_off));
  lm.blob.resize(size_t(lm.manifest.blob_bytes));
  f.read(reinterpret_cast<char*>(lm.blob.data()), std::streamsize(lm.blob.size()));
  if (uint64_t(f.gcount()) != lm.manifest.blob_bytes)
    raise(Errc::CorruptManifest, "blob truncated in " + path.string());
  if (verify && Sha256::of(lm.blob) != lm.manifest.checksum)
    raise(Errc::ChecksumMismatch, path.string());
  return lm;
}

}  // namespace mrm::model
