#include "lafs/png_io.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace lafs {

namespace {

constexpr unsigned char kSignature[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};

void put_u32be(std::vector<unsigned char>& out, uint32_t v) {
  out.push_back(static_cast<unsigned char>(v >> 24));
  out.push_back(static_cast<unsigned char>(v >> 16));
  out.push_back(static_cast<unsigned char>(v >> 8));
  out.push_back(static_cast<unsigned char>(v));
}

uint32_t get_u32be(const unsigned char* p) {
  return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
         (static_cast<uint32_t>(p[2]) << 8) | static_cast<uint32_t>(p[3]);
}

// type is exactly 4 bytes; the CRC covers type + payload.
void append_chunk(std::vector<unsigned char>& out, const char* type,
                  const std::vector<unsigned char>& payload) {
  put_u32be(out, static_cast<uint32_t>(payload.size()));
  const size_t crc_start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), payload.begin(), payload.end());
  const uint32_t crc = static_cast<uint32_t>(
      crc32(0L, out.data() + crc_start, static_cast<uInt>(out.size() - crc_start)));
  put_u32be(out, crc);
}

int paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

[[noreturn]] void fail(const std::string& path, const std::string& why) {
  throw std::runtime_error("png: " + path + ": " + why);
}

}  // namespace

void write_png(const std::string& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3)
    throw std::invalid_argument("write_png: expected 1 or 3 channels, got " +
                                std::to_string(img.channels));
  if (img.height <= 0 || img.width <= 0)
    throw std::invalid_argument("write_png: empty image " + std::to_string(img.height) + "x" +
                                std::to_string(img.width));

  const int c = img.channels, h = img.height, w = img.width;
  const float* px = img.data.data();

  // scanlines with a leading filter byte of zero
  std::vector<unsigned char> raw(static_cast<size_t>(h) * (1 + static_cast<size_t>(w) * c));
  size_t at = 0;
  for (int y = 0; y < h; ++y) {
    raw[at++] = 0;
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch) {
        const float v = px[(static_cast<size_t>(ch) * h + y) * w + x];
        const float clamped = std::min(1.0f, std::max(0.0f, v));
        raw[at++] = static_cast<unsigned char>(std::lround(clamped * 255.0f));
      }
  }

  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<unsigned char> deflated(bound);
  if (compress2(deflated.data(), &bound, raw.data(), static_cast<uLong>(raw.size()),
                Z_BEST_COMPRESSION) != Z_OK)
    fail(path, "deflate failed");
  deflated.resize(bound);

  std::vector<unsigned char> ihdr;
  put_u32be(ihdr, static_cast<uint32_t>(w));
  put_u32be(ihdr, static_cast<uint32_t>(h));
  ihdr.push_back(8);                       // bit depth
  ihdr.push_back(c == 1 ? 0 : 2);          // color type: gray / truecolor
  ihdr.push_back(0);                       // compression
  ihdr.push_back(0);                       // filter method
  ihdr.push_back(0);                       // no interlace

  std::vector<unsigned char> out(kSignature, kSignature + 8);
  append_chunk(out, "IHDR", ihdr);
  append_chunk(out, "IDAT", deflated);
  append_chunk(out, "IEND", {});

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) fail(path, "cannot open for writing");
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) fail(path, "write failed");
}

Image read_png(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(path, "cannot open");
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(f)),
                                 std::istreambuf_iterator<char>());

  if (buf.size() < 8 || std::memcmp(buf.data(), kSignature, 8) != 0)
    fail(path, "not a png file");

  int w = 0, h = 0, channels = 0;
  bool saw_ihdr = false, saw_iend = false;
  std::vector<unsigned char> idat;

  size_t pos = 8;
  while (pos + 12 <= buf.size() && !saw_iend) {
    const uint32_t len = get_u32be(&buf[pos]);
    if (pos + 12 + static_cast<size_t>(len) > buf.size()) fail(path, "truncated chunk");
    const unsigned char* type = &buf[pos + 4];
    const unsigned char* payload = &buf[pos + 8];
    const uint32_t stored_crc = get_u32be(&buf[pos + 8 + len]);
    const uint32_t crc = static_cast<uint32_t>(crc32(0L, type, static_cast<uInt>(4 + len)));
    if (crc != stored_crc) fail(path, "chunk crc mismatch");

    if (std::memcmp(type, "IHDR", 4) == 0) {
      if (len != 13) fail(path, "bad IHDR length");
      w = static_cast<int>(get_u32be(payload));
      h = static_cast<int>(get_u32be(payload + 4));
      const int depth = payload[8], color = payload[9], interlace = payload[12];
      if (depth != 8) fail(path, "unsupported bit depth " + std::to_string(depth));
      if (color != 0 && color != 2) fail(path, "unsupported color type " + std::to_string(color));
      if (interlace != 0) fail(path, "interlaced images unsupported");
      channels = color == 0 ? 1 : 3;
      saw_ihdr = true;
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      if (!saw_ihdr) fail(path, "IDAT before IHDR");
      idat.insert(idat.end(), payload, payload + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      saw_iend = true;
    }
    // ancillary chunks fall through unread
    pos += 12 + len;
  }
  if (!saw_ihdr || !saw_iend) fail(path, "missing IHDR or IEND");
  if (w <= 0 || h <= 0) fail(path, "bad dimensions");

  const size_t stride = 1 + static_cast<size_t>(w) * channels;
  std::vector<unsigned char> raw(static_cast<size_t>(h) * stride);
  z_stream zs{};
  if (inflateInit(&zs) != Z_OK) fail(path, "inflate init failed");
  zs.next_in = idat.data();
  zs.avail_in = static_cast<uInt>(idat.size());
  zs.next_out = raw.data();
  zs.avail_out = static_cast<uInt>(raw.size());
  const int zr = inflate(&zs, Z_FINISH);
  inflateEnd(&zs);
  if (zr != Z_STREAM_END || zs.avail_out != 0) fail(path, "pixel data does not match dimensions");

  // undo per-scanline filters in place; bpp is the byte distance to the left neighbor
  const int bpp = channels;
  for (int y = 0; y < h; ++y) {
    unsigned char* row = &raw[static_cast<size_t>(y) * stride];
    const unsigned char* prior = y > 0 ? &raw[static_cast<size_t>(y - 1) * stride] : nullptr;
    const int filter = row[0];
    unsigned char* cur = row + 1;
    const unsigned char* up = prior ? prior + 1 : nullptr;
    const int n = w * channels;
    switch (filter) {
      case 0:
        break;
      case 1:
        for (int i = bpp; i < n; ++i) cur[i] = static_cast<unsigned char>(cur[i] + cur[i - bpp]);
        break;
      case 2:
        if (up)
          for (int i = 0; i < n; ++i) cur[i] = static_cast<unsigned char>(cur[i] + up[i]);
        break;
      case 3:
        for (int i = 0; i < n; ++i) {
          const int left = i >= bpp ? cur[i - bpp] : 0;
          const int above = up ? up[i] : 0;
          cur[i] = static_cast<unsigned char>(cur[i] + (left + above) / 2);
        }
        break;
      case 4:
        for (int i = 0; i < n; ++i) {
          const int left = i >= bpp ? cur[i - bpp] : 0;
          const int above = up ? up[i] : 0;
          const int corner = (up && i >= bpp) ? up[i - bpp] : 0;
          cur[i] = static_cast<unsigned char>(cur[i] + paeth(left, above, corner));
        }
        break;
      default:
        fail(path, "unknown scanline filter " + std::to_string(filter));
    }
  }

  Tensor data({channels, h, w});
  float* px = data.data();
  for (int y = 0; y < h; ++y) {
    const unsigned char* cur = &raw[static_cast<size_t>(y) * stride] + 1;
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < channels; ++ch)
        px[(static_cast<size_t>(ch) * h + y) * w + x] =
            static_cast<float>(cur[static_cast<size_t>(x) * channels + ch]) / 255.0f;
  }
  return make_image(std::move(data));
}

}  // namespace lafs
