#include "circus/pipeline/zip.hpp"

#include <zlib.h>

#include <cstdint>
#include <cstring>

#include "circus/error.hpp"

namespace circus::pipeline {

namespace {

constexpr std::uint32_t kLocalSig = 0x04034b50;
constexpr std::uint32_t kCentralSig = 0x02014b50;
constexpr std::uint32_t kEndSig = 0x06054b50;

std::uint16_t u16(std::string_view b, std::size_t at) {
  if (at + 2 > b.size()) fail(Errc::malformed_document, "zip truncated");
  return static_cast<std::uint16_t>(static_cast<unsigned char>(b[at]) | static_cast<unsigned char>(b[at + 1]) << 8);
}

std::uint32_t u32(std::string_view b, std::size_t at) {
  return static_cast<std::uint32_t>(u16(b, at)) | static_cast<std::uint32_t>(u16(b, at + 2)) << 16;
}

void put16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}

void put32(std::string& out, std::uint32_t v) {
  put16(out, static_cast<std::uint16_t>(v & 0xffff));
  put16(out, static_cast<std::uint16_t>(v >> 16));
}

std::string inflate_raw(std::string_view in, std::size_t expected) {
  std::string out(expected, '\0');
  z_stream zs{};
  if (inflateInit2(&zs, -MAX_WBITS) != Z_OK) fail(Errc::malformed_document, "inflateInit failed");
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(in.data()));
  zs.avail_in = static_cast<uInt>(in.size());
  zs.next_out = reinterpret_cast<Bytef*>(out.data());
  zs.avail_out = static_cast<uInt>(out.size());
  const int rc = inflate(&zs, Z_FINISH);
  const auto produced = zs.total_out;
  inflateEnd(&zs);
  if (rc != Z_STREAM_END || produced != expected) fail(Errc::malformed_document, "corrupt deflate stream");
  return out;
}

std::string deflate_raw(std::string_view in) {
  z_stream zs{};
  if (deflateInit2(&zs, Z_DEFAULT_COMPRESSION, Z_DEFLATED, -MAX_WBITS, 8, Z_DEFAULT_STRATEGY) != Z_OK) {
    fail(Errc::io_error, "deflateInit failed");
  }
  std::string out(deflateBound(&zs, static_cast<uLong>(in.size())), '\0');
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(in.data()));
  zs.avail_in = static_cast<uInt>(in.size());
  zs.next_out = reinterpret_cast<Bytef*>(out.data());
  zs.avail_out = static_cast<uInt>(out.size());
  deflate(&zs, Z_FINISH);
  out.resize(zs.total_out);
  deflateEnd(&zs);
  return out;
}

std::uint32_t crc(std::string_view bytes) {
  return static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

}  // namespace

bool looks_like_zip(std::string_view bytes) noexcept {
  return bytes.size() >= 4 && bytes.substr(0, 4) == std::string_view("PK\x03\x04", 4);
}

std::vector<ZipMember> read_zip(std::string_view b) {
  if (b.size() < 22) fail(Errc::malformed_document, "not a zip archive");
  std::size_t eocd = std::string_view::npos;
  for (std::size_t i = b.size() - 22 + 1; i-- > 0;) {
    if (u32(b, i) == kEndSig) {
      eocd = i;
      break;
    }
    if (b.size() - i > 22 + 65535) break;
  }
  if (eocd == std::string_view::npos) fail(Errc::malformed_document, "zip end record missing");
  const auto count = u16(b, eocd + 10);
  std::size_t at = u32(b, eocd + 16);

  std::vector<ZipMember> members;
  for (std::uint16_t k = 0; k < count; ++k) {
    if (u32(b, at) != kCentralSig) fail(Errc::malformed_document, "bad central directory entry");
    const auto method = u16(b, at + 10);
    const auto expected_crc = u32(b, at + 16);
    const auto csize = u32(b, at + 20);
    const auto usize = u32(b, at + 24);
    const auto name_len = u16(b, at + 28);
    const auto extra_len = u16(b, at + 30);
    const auto comment_len = u16(b, at + 32);
    const auto local = u32(b, at + 42);
    if (at + 46 + name_len > b.size()) fail(Errc::malformed_document, "zip truncated");
    std::string name(b.substr(at + 46, name_len));
    at += 46 + name_len + extra_len + comment_len;

    if (u32(b, local) != kLocalSig) fail(Errc::malformed_document, "bad local header");
    const auto data_at = local + 30 + u16(b, local + 26) + u16(b, local + 28);
    if (data_at + csize > b.size()) fail(Errc::malformed_document, "zip member truncated");
    if (!name.empty() && name.back() == '/') continue;
    const auto raw = b.substr(data_at, csize);
    std::string bytes;
    if (method == 0) bytes.assign(raw);
    else if (method == 8) bytes = inflate_raw(raw, usize);
    else fail(Errc::malformed_document, "unsupported zip method " + std::to_string(method));
    if (crc(bytes) != expected_crc) fail(Errc::malformed_document, "crc mismatch in " + name);
    members.push_back({std::move(name), std::move(bytes)});
  }
  return members;
}

std::string write_zip(const std::vector<ZipMember>& members) {
  std::string out, central;
  for (const auto& m : members) {
    const auto packed = deflate_raw(m.bytes);
    const bool deflated = packed.size() < m.bytes.size();
    const std::string_view data = deflated ? std::string_view(packed) : std::string_view(m.bytes);
    const auto c = crc(m.bytes);
    const auto offset = static_cast<std::uint32_t>(out.size());

    put32(out, kLocalSig);
    put16(out, 20);
    put16(out, 0);
    put16(out, deflated ? 8 : 0);
    put16(out, 0);
    put16(out, 0x21);
    put32(out, c);
    put32(out, static_cast<std::uint32_t>(data.size()));
    put32(out, static_cast<std::uint32_t>(m.bytes.size()));
    put16(out, static_cast<std::uint16_t>(m.name.size()));
    put16(out, 0);
    out += m.name;
    out += data;

    put32(central, kCentralSig);
    put16(central, 20);
    put16(central, 20);
    put16(central, 0);
    put16(central, deflated ? 8 : 0);
    put16(central, 0);
    put16(central, 0x21);
    put32(central, c);
    put32(central, static_cast<std::uint32_t>(data.size()));
    put32(central, static_cast<std::uint32_t>(m.bytes.size()));
    put16(central, static_cast<std::uint16_t>(m.name.size()));
    put16(central, 0);
    put16(central, 0);
    put16(central, 0);
    put16(central, 0);
    put32(central, 0);
    put32(central, offset);
    central += m.name;
  }
  const auto cd_offset = static_cast<std::uint32_t>(out.size());
  out += central;
  put32(out, kEndSig);
  put16(out, 0);
  put16(out, 0);
  put16(out, static_cast<std::uint16_t>(members.size()));
  put16(out, static_cast<std::uint16_t>(members.size()));
  put32(out, static_cast<std::uint32_t>(central.size()));
  put32(out, cd_offset);
  put16(out, 0);
  return out;
}

}  // namespace circus::pipeline
