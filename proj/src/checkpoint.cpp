#include "lafs/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <limits>
#include <set>

namespace lafs {

namespace {

constexpr char kMagic[4] = {'L', 'A', 'F', 'S'};
const std::string kMetaPrefix = "__meta/";

void put_u16(std::string& out, uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

// reader over an in-memory buffer; every take checks the remaining length
struct Cursor {
  const unsigned char* p;
  size_t left;
  const std::string& path;

  void take(void* dst, size_t n, const char* what) {
    if (n > left)
      throw TruncatedError("checkpoint: " + path + ": file ends inside " + std::string(what));
    std::memcpy(dst, p, n);
    p += n;
    left -= n;
  }
  uint16_t u16(const char* what) {
    unsigned char b[2];
    take(b, 2, what);
    return static_cast<uint16_t>(b[0] | (b[1] << 8));
  }
  uint32_t u32(const char* what) {
    unsigned char b[4];
    take(b, 4, what);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
  }
};

void append_entry(std::string& out, const std::string& name, const std::vector<int>& dims,
                  const float* payload, size_t count) {
  if (name.size() > std::numeric_limits<uint16_t>::max())
    throw std::invalid_argument("save_checkpoint: name too long: " + name.substr(0, 64));
  if (dims.size() > 255)
    throw std::invalid_argument("save_checkpoint: too many dimensions for " + name);
  put_u16(out, static_cast<uint16_t>(name.size()));
  out.append(name);
  out.push_back(static_cast<char>(dims.size()));
  for (int d : dims) put_u32(out, static_cast<uint32_t>(d));
  // float32 payloads are stored little-endian; this build is little-endian
  out.append(reinterpret_cast<const char*>(payload), count * sizeof(float));
}

}  // namespace

void CheckpointMeta::set(const std::string& key, const std::string& value) {
  for (auto& kv : items)
    if (kv.first == key) {
      kv.second = value;
      return;
    }
  items.emplace_back(key, value);
}

std::string CheckpointMeta::get(const std::string& key, const std::string& fallback) const {
  for (const auto& kv : items)
    if (kv.first == key) return kv.second;
  return fallback;
}

bool CheckpointMeta::has(const std::string& key) const {
  for (const auto& kv : items)
    if (kv.first == key) return true;
  return false;
}

void save_checkpoint(const std::vector<NamedTensor>& params, const CheckpointMeta& meta,
                     const std::string& path) {
  std::set<std::string> seen;
  for (const auto& nt : params) {
    if (nt.name.rfind(kMetaPrefix, 0) == 0)
      throw std::invalid_argument("save_checkpoint: parameter name uses reserved prefix: " +
                                  nt.name);
    if (!seen.insert(nt.name).second)
      throw std::invalid_argument("save_checkpoint: duplicate parameter name: " + nt.name);
  }

  const size_t total = params.size() + meta.items.size();
  if (total > std::numeric_limits<uint32_t>::max())
    throw std::invalid_argument("save_checkpoint: too many entries");

  std::string out;
  out.append(kMagic, 4);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<uint32_t>(total));
  for (const auto& kv : meta.items)
    append_entry(out, kMetaPrefix + kv.first + "=" + kv.second, {0}, nullptr, 0);
  for (const auto& nt : params)
    append_entry(out, nt.name, nt.tensor.shape(), nt.tensor.data(),
                 static_cast<size_t>(nt.tensor.numel()));

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw CheckpointError("checkpoint: " + path + ": cannot open for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw CheckpointError("checkpoint: " + path + ": write failed");
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("checkpoint: " + path + ": cannot open");
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(f)),
                                 std::istreambuf_iterator<char>());

  Cursor c{buf.data(), buf.size(), path};
  char magic[4];
  c.take(magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw BadMagicError("checkpoint: " + path + ": bad magic bytes");
  const uint32_t version = c.u32("version");
  if (version != kCheckpointVersion)
    throw BadVersionError("checkpoint: " + path + ": version " + std::to_string(version) +
                          ", expected " + std::to_string(kCheckpointVersion));
  const uint32_t count = c.u32("entry count");

  LoadedCheckpoint ck;
  std::set<std::string> seen;
  for (uint32_t i = 0; i < count; ++i) {
    const uint16_t name_len = c.u16("name length");
    std::string name(name_len, '\0');
    c.take(name.data(), name_len, "name");
    if (!seen.insert(name).second)
      throw CorruptError("checkpoint: " + path + ": duplicate entry name: " + name);

    unsigned char ndim;
    c.take(&ndim, 1, "ndim");
    std::vector<int> dims(ndim);
    size_t numel = 1;
    for (int d = 0; d < ndim; ++d) {
      const uint32_t v = c.u32("dims");
      if (v > static_cast<uint32_t>(std::numeric_limits<int>::max()))
        throw CorruptError("checkpoint: " + path + ": dimension overflow in " + name);
      if (v != 0 && numel > (1ull << 33) / v)
        throw CorruptError("checkpoint: " + path + ": payload size overflow in " + name);
      dims[d] = static_cast<int>(v);
      numel *= v;
    }
    if (numel * sizeof(float) > c.left)
      throw TruncatedError("checkpoint: " + path + ": file ends inside payload of " + name);

    if (name.rfind(kMetaPrefix, 0) == 0) {
      if (ndim != 1 || dims[0] != 0)
        throw CorruptError("checkpoint: " + path + ": metadata entry with payload: " + name);
      const std::string body = name.substr(kMetaPrefix.size());
      const size_t eq = body.find('=');
      if (eq == std::string::npos)
        throw CorruptError("checkpoint: " + path + ": metadata entry without '=': " + name);
      ck.meta.items.emplace_back(body.substr(0, eq), body.substr(eq + 1));
      continue;
    }

    Tensor t(dims);
    c.take(t.data(), numel * sizeof(float), "payload");
    ck.params.push_back({std::move(name), std::move(t)});
  }
  if (c.left != 0)
    throw CorruptError("checkpoint: " + path + ": " + std::to_string(c.left) +
                       " trailing bytes after declared entries");
  return ck;
}

void restore_params(std::vector<NamedTensor> dest, const std::vector<NamedTensor>& loaded) {
  for (auto& d : dest) {
    const NamedTensor* src = nullptr;
    for (const auto& l : loaded)
      if (l.name == d.name) {
        src = &l;
        break;
      }
    if (!src) throw std::invalid_argument("restore_params: missing entry " + d.name);
    if (src->tensor.shape() != d.tensor.shape())
      throw std::invalid_argument("restore_params: shape mismatch for " + d.name + ": " +
                                  shape_str(src->tensor.shape()) + " vs " +
                                  shape_str(d.tensor.shape()));
    std::memcpy(d.tensor.data(), src->tensor.data(),
                static_cast<size_t>(d.tensor.numel()) * sizeof(float));
  }
}

}  // namespace lafs
