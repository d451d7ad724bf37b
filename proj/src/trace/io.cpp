#include <charconv>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cnnbp/error.hpp"
#include "cnnbp/trace.hpp"

namespace cnnbp::trace {

namespace {

constexpr char kMagic[4] = {'B', 'R', 'T', '1'};
constexpr char kMetaMagic[4] = {'M', 'E', 'T', 'A'};
constexpr std::size_t kRecordBytes = 9;

bool meta_is_default(const TraceMeta& m) {
  return m.workload_id.empty() && !m.generator_seed && !m.instruction_count;
}

std::string meta_to_text(const TraceMeta& m) {
  nlohmann::json j;
  j["workload_id"] = m.workload_id;
  if (m.generator_seed) j["generator_seed"] = *m.generator_seed;
  if (m.instruction_count) j["instruction_count"] = *m.instruction_count;
  return j.dump();
}

TraceMeta meta_from_text(const std::string& text, std::uint64_t offset) {
  TraceMeta m;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
    m.workload_id = j.at("workload_id").get<std::string>();
    if (j.contains("generator_seed")) m.generator_seed = j["generator_seed"].get<std::uint64_t>();
    if (j.contains("instruction_count")) {
      m.instruction_count = j["instruction_count"].get<std::uint64_t>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad trace metadata: ") + e.what(), offset);
  }
  return m;
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_le(const std::uint8_t* p, int n) {
  std::uint64_t v = 0;
  for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

}  // namespace

TraceFormat format_for_path(const std::filesystem::path& path) {
  return path.extension() == ".txt" ? TraceFormat::text : TraceFormat::binary;
}

std::vector<std::uint8_t> encode_binary(const Trace& trace) {
  if (trace.records.size() > UINT32_MAX) {
    throw ConfigError("binary trace format holds at most 2^32-1 records");
  }
  std::vector<std::uint8_t> out;
  out.reserve(8 + kRecordBytes * trace.records.size() + 64);
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  put_u32(out, static_cast<std::uint32_t>(trace.records.size()));
  for (const auto& r : trace.records) {
    put_u64(out, r.ip);
    out.push_back(r.taken ? 1 : 0);
  }
  if (!meta_is_default(trace.meta)) {
    const std::string text = meta_to_text(trace.meta);
    out.insert(out.end(), std::begin(kMetaMagic), std::end(kMetaMagic));
    put_u32(out, static_cast<std::uint32_t>(text.size()));
    out.insert(out.end(), text.begin(), text.end());
  }
  return out;
}

Trace decode_binary(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8 || !std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin())) {
    throw FormatError("missing BRT1 magic", 0);
  }
  const std::uint64_t count = get_le(bytes.data() + 4, 4);
  Trace trace;
  trace.records.reserve(count);
  std::size_t pos = 8;
  for (std::uint64_t i = 0; i < count; ++i) {
    if (pos + kRecordBytes > bytes.size()) {
      throw FormatError("truncated record " + std::to_string(i), pos);
    }
    const std::uint8_t dir = bytes[pos + 8];
    if (dir > 1) throw FormatError("direction byte must be 0 or 1", pos + 8);
    trace.records.push_back({get_le(bytes.data() + pos, 8), dir == 1});
    pos += kRecordBytes;
  }
  if (pos == bytes.size()) return trace;

  if (pos + 8 > bytes.size() ||
      !std::equal(std::begin(kMetaMagic), std::end(kMetaMagic), bytes.begin() + pos)) {
    throw FormatError("unexpected trailing bytes after records", pos);
  }
  const std::uint64_t len = get_le(bytes.data() + pos + 4, 4);
  if (pos + 8 + len != bytes.size()) throw FormatError("metadata length mismatch", pos + 4);
  trace.meta = meta_from_text(
      std::string(bytes.begin() + static_cast<std::ptrdiff_t>(pos + 8), bytes.end()), pos + 8);
  return trace;
}

std::string encode_text(const Trace& trace) {
  std::string out;
  out.reserve(trace.records.size() * 12 + 64);
  if (!meta_is_default(trace.meta)) out += "#meta " + meta_to_text(trace.meta) + "\n";
  char buf[32];
  for (const auto& r : trace.records) {
    const int n = std::snprintf(buf, sizeof buf, "0x%llx,%d\n",
                                static_cast<unsigned long long>(r.ip), r.taken ? 1 : 0);
    out.append(buf, static_cast<std::size_t>(n));
  }
  return out;
}

Trace decode_text(const std::string& text) {
  Trace trace;
  std::istringstream in(text);
  std::string line;
  std::uint64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.rfind("#meta ", 0) == 0) {
      trace.meta = meta_from_text(line.substr(6), lineno);
      continue;
    }
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;

    const auto comma = line.find(',', first);
    if (comma == std::string::npos) throw FormatError("expected '<ip>,<dir>'", lineno);
    std::string_view ip_text(line.data() + first, comma - first);
    while (!ip_text.empty() && (ip_text.back() == ' ' || ip_text.back() == '\t')) {
      ip_text.remove_suffix(1);
    }
    if (ip_text.size() < 3 || ip_text[0] != '0' || (ip_text[1] != 'x' && ip_text[1] != 'X')) {
      throw FormatError("instruction pointer must start with 0x", lineno);
    }
    ip_text.remove_prefix(2);
    std::uint64_t ip = 0;
    auto [ptr, ec] = std::from_chars(ip_text.data(), ip_text.data() + ip_text.size(), ip, 16);
    if (ec != std::errc() || ptr != ip_text.data() + ip_text.size()) {
      throw FormatError("non-hex instruction pointer", lineno);
    }
    std::string_view dir_text(line.data() + comma + 1, line.size() - comma - 1);
    while (!dir_text.empty() && (dir_text.front() == ' ' || dir_text.front() == '\t')) {
      dir_text.remove_prefix(1);
    }
    while (!dir_text.empty() && (dir_text.back() == ' ' || dir_text.back() == '\t')) {
      dir_text.remove_suffix(1);
    }
    if (dir_text != "0" && dir_text != "1") throw FormatError("direction must be 0 or 1", lineno);
    trace.records.push_back({ip, dir_text == "1"});
  }
  return trace;
}

Trace read_trace(const std::filesystem::path& path) { return read_trace(path, format_for_path(path)); }

Trace read_trace(const std::filesystem::path& path, TraceFormat format) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open trace " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (format == TraceFormat::binary) return decode_binary(bytes);
  return decode_text(std::string(bytes.begin(), bytes.end()));
}

void write_trace(const Trace& trace, const std::filesystem::path& path) {
  write_trace(trace, path, format_for_path(path));
}

void write_trace(const Trace& trace, const std::filesystem::path& path, TraceFormat format) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write trace " + path.string());
  if (format == TraceFormat::binary) {
    const auto bytes = encode_binary(trace);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
  } else {
    out << encode_text(trace);
  }
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace cnnbp::trace
