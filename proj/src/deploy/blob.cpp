#include <algorithm>
#include <array>
#include <bit>
#include <string>
#include <cstring>

#include "cnnbp/deploy.hpp"
#include "cnnbp/error.hpp"

namespace cnnbp::deploy {

namespace {

constexpr std::array<std::uint8_t, 4> kMagic{'C', 'N', 'N', 'H'};
constexpr std::uint8_t kVersion = 1;

std::size_t plane_bytes(std::size_t bits) { return (bits + 7) / 8; }

void put_le(std::vector<std::uint8_t>& out, std::uint64_t v, int n) {
  for (int i = 0; i < n; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_le(std::span<const std::uint8_t> b, std::size_t at, int n) {
  std::uint64_t v = 0;
  for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(b[at + i]) << (8 * i);
  return v;
}

void check_shape(std::uint32_t p, std::uint32_t m, std::uint32_t len) {
  if (p == 0 || m == 0 || len == 0) throw ConfigError("deploy: p, m and history_len must be positive");
  if (p > 16 || m > 65535 || len > 65535) throw ConfigError("deploy: dimensions out of range");
}

// Position of the first sign-without-value bit, or npos.
std::size_t find_illegal(const BitPlane& sign, const BitPlane& value) {
  const auto s = sign.words(), v = value.words();
  for (std::size_t w = 0; w < s.size(); ++w) {
    const std::uint64_t bad = s[w] & ~v[w];
    if (bad != 0) return w * 64 + static_cast<std::size_t>(std::countr_zero(bad));
  }
  return std::string::npos;
}

}  // namespace

std::uint64_t storage_bytes(std::uint32_t p, std::uint32_t m, std::uint32_t history_len) {
  check_shape(p, m, history_len);
  const std::uint64_t table_bits = (std::uint64_t{1} << p) * m * 2;
  const std::uint64_t fifo_bits = static_cast<std::uint64_t>(history_len) * m * 2;
  return (table_bits + 7) / 8 + 2 * ((fifo_bits + 7) / 8) + 8;
}

std::size_t blob_size(std::uint32_t p, std::uint32_t m, std::uint32_t history_len) {
  check_shape(p, m, history_len);
  const std::size_t table = static_cast<std::size_t>(1) << p;
  return kBlobHeaderBytes + 8 + 2 * plane_bytes(table * m) +
         2 * plane_bytes(static_cast<std::size_t>(history_len) * m);
}

std::vector<std::uint8_t> serialize_helper(const DeployedHelper& h) {
  std::vector<std::uint8_t> out;
  out.reserve(blob_size(h.p, h.m, h.history_len));
  out.insert(out.end(), kMagic.begin(), kMagic.end());
  out.push_back(kVersion);
  out.push_back(static_cast<std::uint8_t>(h.p));
  put_le(out, h.m, 2);
  put_le(out, h.history_len, 2);
  out.resize(kBlobHeaderBytes, 0);
  put_le(out, static_cast<std::uint64_t>(h.threshold), 8);
  for (const BitPlane* plane : {&h.table.sign, &h.table.value, &h.l2_sign, &h.l2_value}) {
    const auto bytes = plane->to_bytes();
    out.insert(out.end(), bytes.begin(), bytes.end());
  }
  return out;
}

DeployedHelper deserialize_helper(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kBlobHeaderBytes + 8) throw FormatError("helper blob: truncated header", bytes.size());
  if (!std::equal(kMagic.begin(), kMagic.end(), bytes.begin())) throw FormatError("helper blob: bad magic", 0);
  if (bytes[4] != kVersion) throw FormatError("helper blob: unsupported version", 4);
  DeployedHelper h;
  h.p = bytes[5];
  h.m = static_cast<std::uint32_t>(get_le(bytes, 6, 2));
  h.history_len = static_cast<std::uint32_t>(get_le(bytes, 8, 2));
  if (h.p < 2 || h.p > 16 || h.m == 0 || h.history_len == 0) {
    throw FormatError("helper blob: impossible dimensions", 5);
  }
  for (std::size_t i = 10; i < kBlobHeaderBytes; ++i) {
    if (bytes[i] != 0) throw FormatError("helper blob: nonzero reserved byte", i);
  }
  const std::size_t want = blob_size(h.p, h.m, h.history_len);
  if (bytes.size() != want) {
    throw FormatError("helper blob: expected " + std::to_string(want) + " bytes, got " +
                          std::to_string(bytes.size()),
                      bytes.size() < want ? bytes.size() : want);
  }
  h.threshold = static_cast<std::int64_t>(get_le(bytes, kBlobHeaderBytes, 8));
  const std::int64_t bound = static_cast<std::int64_t>(h.history_len) * h.m;
  if (h.threshold < -bound - 1 || h.threshold > bound) {
    throw FormatError("helper blob: threshold out of range", kBlobHeaderBytes);
  }

  std::size_t at = kBlobHeaderBytes + 8;
  auto read_plane = [&](std::size_t bits) {
    const std::size_t n = plane_bytes(bits);
    const std::size_t start = at;
    BitPlane plane = BitPlane::from_bytes(bytes.subspan(at, n), bits);
    if (bits % 8 != 0 && (bytes[at + n - 1] >> (bits % 8)) != 0) {
      throw FormatError("helper blob: nonzero padding bits", at + n - 1);
    }
    at += n;
    return std::pair{std::move(plane), start};
  };
  const std::size_t table_bits = (static_cast<std::size_t>(1) << h.p) * h.m;
  const std::size_t l2_bits = static_cast<std::size_t>(h.history_len) * h.m;
  h.table.p = h.p;
  h.table.m = h.m;
  auto [ts, ts_at] = read_plane(table_bits);
  auto [tv, tv_at] = read_plane(table_bits);
  auto [ls, ls_at] = read_plane(l2_bits);
  auto [lv, lv_at] = read_plane(l2_bits);
  (void)tv_at;
  (void)lv_at;
  if (const std::size_t k = find_illegal(ts, tv); k != std::string::npos) {
    throw FormatError("helper blob: illegal ternary code in table", ts_at + k / 8);
  }
  if (const std::size_t k = find_illegal(ls, lv); k != std::string::npos) {
    throw FormatError("helper blob: illegal ternary code in layer-2 weights", ls_at + k / 8);
  }
  h.table.sign = std::move(ts);
  h.table.value = std::move(tv);
  h.l2_sign = std::move(ls);
  h.l2_value = std::move(lv);
  return h;
}

}  // namespace cnnbp::deploy
