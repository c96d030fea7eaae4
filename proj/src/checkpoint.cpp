#include "esbnn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <vector>

#include <zlib.h>

#include "esbnn/error.hpp"

namespace esbnn {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'E', 'S', 'B', 'N'};

class Writer {
 public:
  template <typename T>
  void put(T v) {
    const auto* p = reinterpret_cast<const unsigned char*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    buf_.insert(buf_.end(), p, p + n);
  }
  void str(const std::string& s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  std::vector<unsigned char>& buffer() { return buf_; }

 private:
  std::vector<unsigned char> buf_;
};

class Reader {
 public:
  Reader(const unsigned char* data, std::size_t size) : p_(data), end_(data + size) {}
  template <typename T>
  T get() {
    T v;
    std::memcpy(&v, take(sizeof(T)), sizeof(T));
    return v;
  }
  const unsigned char* take(std::size_t n) {
    if (static_cast<std::size_t>(end_ - p_) < n) throw Error(ErrorCode::ChecksumMismatch, "checkpoint body truncated");
    const unsigned char* at = p_;
    p_ += n;
    return at;
  }
  std::string str() {
    const auto n = get<std::uint32_t>();
    const unsigned char* s = take(n);
    return std::string(reinterpret_cast<const char*>(s), n);
  }
  bool done() const { return p_ == end_; }

 private:
  const unsigned char* p_;
  const unsigned char* end_;
};

std::uint32_t crc32_of(const unsigned char* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, data, chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

struct Header {
  std::uint64_t fingerprint = 0;
  std::string arch_text;
};

std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
  return std::vector<unsigned char>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

Model decode(const std::vector<unsigned char>& file, const std::string& path, const ArchSpec* expected) {
  constexpr std::size_t kFixed = sizeof(kMagic) + sizeof(std::uint32_t);
  if (file.size() >= sizeof(kMagic) && std::memcmp(file.data(), kMagic, sizeof(kMagic)) != 0) {
    throw Error(ErrorCode::IoError, path + ": not a checkpoint");
  }
  if (file.size() < kFixed) throw Error(ErrorCode::ChecksumMismatch, path + ": truncated");
  std::uint32_t version;
  std::memcpy(&version, file.data() + sizeof(kMagic), sizeof(version));
  if (version != kCheckpointVersion) {
    throw Error(ErrorCode::VersionMismatch,
                path + ": version " + std::to_string(version) + ", expected " + std::to_string(kCheckpointVersion));
  }
  if (file.size() < kFixed + sizeof(std::uint32_t)) throw Error(ErrorCode::ChecksumMismatch, path + ": truncated");
  const std::size_t body = file.size() - sizeof(std::uint32_t);
  std::uint32_t stored;
  std::memcpy(&stored, file.data() + body, sizeof(stored));
  if (crc32_of(file.data(), body) != stored) throw Error(ErrorCode::ChecksumMismatch, path + ": CRC-32 mismatch");

  Reader r(file.data() + kFixed, body - kFixed);
  Header h;
  h.fingerprint = r.get<std::uint64_t>();
  const auto text_len = r.get<std::uint64_t>();
  const unsigned char* text = r.take(text_len);
  h.arch_text.assign(reinterpret_cast<const char*>(text), text_len);

  if (expected && fingerprint(*expected) != h.fingerprint) {
    throw Error(ErrorCode::ArchFingerprintMismatch, path + " was written for a different architecture");
  }
  ArchSpec arch = arch_from_text(h.arch_text);
  if (fingerprint(arch) != h.fingerprint) {
    throw Error(ErrorCode::ChecksumMismatch, path + ": embedded architecture does not match its fingerprint");
  }
  if (expected) arch.name = expected->name;

  Model model(std::move(arch), 0);
  auto params = model.parameters();
  const auto count = r.get<std::uint32_t>();
  if (count != params.size()) {
    throw Error(ErrorCode::ArchFingerprintMismatch, path + ": parameter count differs from the architecture");
  }
  for (auto& p : params) {
    const std::string name = r.str();
    const auto n = r.get<std::uint64_t>();
    if (name != p.name || n != p.data.size()) {
      throw Error(ErrorCode::ArchFingerprintMismatch, path + ": unexpected tensor " + name);
    }
    std::memcpy(p.data.data(), r.take(n * sizeof(float)), n * sizeof(float));
  }
  if (!r.done()) throw Error(ErrorCode::ChecksumMismatch, path + ": trailing bytes");
  return model;
}

}  // namespace

void save_checkpoint(const Model& model, const std::string& path) {
  Writer w;
  w.bytes(kMagic, sizeof(kMagic));
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint64_t>(fingerprint(model.arch()));
  const std::string text = to_text(model.arch());
  w.put<std::uint64_t>(text.size());
  w.bytes(text.data(), text.size());
  const auto params = model.parameters();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    w.str(p.name);
    w.put<std::uint64_t>(p.data.size());
    w.bytes(p.data.data(), p.data.size() * sizeof(float));
  }
  auto& buf = w.buffer();
  w.put<std::uint32_t>(crc32_of(buf.data(), buf.size()));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path);
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw Error(ErrorCode::IoError, "write failed: " + path);
}

Model load_checkpoint(const std::string& path) { return decode(read_file(path), path, nullptr); }

Model load_checkpoint(const std::string& path, const ArchSpec& expected) {
  return decode(read_file(path), path, &expected);
}

}  // namespace esbnn
