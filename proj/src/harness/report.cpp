#include <charconv>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cnnbp/error.hpp"
#include "cnnbp/harness.hpp"

namespace cnnbp::harness {

using nlohmann::json;

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

namespace {

std::string hex_ip(std::uint64_t ip) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "0x%llx", static_cast<unsigned long long>(ip));
  return buf;
}

std::uint64_t parse_ip(const std::string& s) {
  std::size_t used = 0;
  std::uint64_t v = 0;
  try {
    v = std::stoull(s, &used, 0);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size()) throw FormatError("bad instruction pointer '" + s + "'", 0);
  return v;
}

std::string shortest(double x) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, r.ptr);
}

double parse_double(const std::string& s, std::uint64_t line) {
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw FormatError("bad number '" + s + "'", line);
  return v;
}

std::uint64_t parse_u64(const std::string& s, std::uint64_t line) {
  std::uint64_t v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw FormatError("bad integer '" + s + "'", line);
  return v;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> split_csv_line(const std::string& line, std::uint64_t lineno) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (quoted) throw FormatError("unterminated quoted field", lineno);
  out.push_back(std::move(cur));
  return out;
}

constexpr const char* kRowsHeader =
    "fold,train_workload,h2p,mode,heldout,occurrences,baseline_mispredictions,helper_mispredictions,reduction";

json row_json(const EvalRow& r) {
  return {{"fold", r.fold},
          {"train_workload", r.train_workload},
          {"h2p", hex_ip(r.h2p)},
          {"mode", cnn::to_string(r.mode)},
          {"heldout", r.heldout},
          {"occurrences", r.occurrences},
          {"baseline_mispredictions", r.baseline_mispredictions},
          {"helper_mispredictions", r.helper_mispredictions},
          {"reduction", r.reduction}};
}

}  // namespace

std::string report_to_json(const EvalReport& report) {
  json j;
  j["format"] = "cnnbp-report";
  j["version"] = 1;
  j["generated_at"] = report.generated_at;
  j["config"] = json::parse(report.config_json.empty() ? "{}" : report.config_json);
  j["workloads"] = report.workloads;
  json el = json::array();
  for (auto ip : report.eligible_h2ps) el.push_back(hex_ip(ip));
  j["eligible_h2ps"] = el;
  j["num_folds"] = report.num_folds;
  json rows = json::array();
  for (const auto& r : report.rows) rows.push_back(row_json(r));
  j["rows"] = rows;
  json skips = json::array();
  for (const auto& s : report.skipped) {
    skips.push_back({{"fold", s.fold},
                     {"train_workload", s.train_workload},
                     {"h2p", hex_ip(s.h2p)},
                     {"mode", cnn::to_string(s.mode)},
                     {"heldout", s.heldout},
                     {"reason", s.reason}});
  }
  j["skipped"] = skips;
  json mpki = json::array();
  for (const auto& m : report.mpki) {
    mpki.push_back({{"fold", m.fold},
                    {"mode", cnn::to_string(m.mode)},
                    {"heldout", m.heldout},
                    {"instructions", m.instructions},
                    {"baseline_mispredictions", m.baseline_mispredictions},
                    {"combined_mispredictions", m.combined_mispredictions},
                    {"mpki_before", m.mpki_before},
                    {"mpki_after", m.mpki_after}});
  }
  j["mpki"] = mpki;
  json hs = json::array();
  for (const auto& h : report.h2p_summaries) {
    hs.push_back({{"h2p", hex_ip(h.h2p)},
                  {"mode", cnn::to_string(h.mode)},
                  {"folds", h.folds},
                  {"mean_reduction", h.mean_reduction},
                  {"winner", h.winner}});
  }
  j["h2p_summaries"] = hs;
  json ms = json::array();
  for (const auto& m : report.mode_summaries) {
    ms.push_back({{"mode", cnn::to_string(m.mode)},
                  {"h2ps", m.h2ps},
                  {"winners", m.winners},
                  {"pct_winners", m.pct_winners},
                  {"mean_reduction_winners", m.mean_reduction_winners},
                  {"mean_reduction_all", m.mean_reduction_all},
                  {"mpki_before", m.mpki_before},
                  {"mpki_after", m.mpki_after},
                  {"storage_bytes_per_helper", m.storage_bytes_per_helper}});
  }
  j["mode_summaries"] = ms;
  json lat = json::array();
  for (const auto& l : report.latency) lat.push_back({{"name", l.name}, {"value", l.value}, {"source", l.source}});
  j["latency_metadata"] = lat;
  j["warnings"] = report.warnings;
  return j.dump(2) + "\n";
}

EvalReport report_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("report: invalid JSON: ") + e.what(), e.byte);
  }
  try {
    if (j.at("format") != "cnnbp-report" || j.at("version") != 1) {
      throw FormatError("report: unsupported format or version", 0);
    }
    EvalReport r;
    r.generated_at = j.at("generated_at").get<std::string>();
    r.config_json = j.at("config").dump(2);
    r.workloads = j.at("workloads").get<std::vector<std::string>>();
    for (const auto& e : j.at("eligible_h2ps")) r.eligible_h2ps.push_back(parse_ip(e.get<std::string>()));
    r.num_folds = j.at("num_folds").get<std::uint32_t>();
    for (const auto& e : j.at("rows")) {
      EvalRow row;
      row.fold = e.at("fold").get<std::uint32_t>();
      row.train_workload = e.at("train_workload").get<std::string>();
      row.h2p = parse_ip(e.at("h2p").get<std::string>());
      row.mode = cnn::mode_from_string(e.at("mode").get<std::string>());
      row.heldout = e.at("heldout").get<std::string>();
      row.occurrences = e.at("occurrences").get<std::uint64_t>();
      row.baseline_mispredictions = e.at("baseline_mispredictions").get<std::uint64_t>();
      row.helper_mispredictions = e.at("helper_mispredictions").get<std::uint64_t>();
      row.reduction = e.at("reduction").get<double>();
      r.rows.push_back(std::move(row));
    }
    for (const auto& e : j.at("skipped")) {
      r.skipped.push_back({e.at("fold").get<std::uint32_t>(), e.at("train_workload").get<std::string>(),
                           parse_ip(e.at("h2p").get<std::string>()),
                           cnn::mode_from_string(e.at("mode").get<std::string>()),
                           e.at("heldout").get<std::string>(), e.at("reason").get<std::string>()});
    }
    for (const auto& e : j.at("mpki")) {
      MpkiRow m;
      m.fold = e.at("fold").get<std::uint32_t>();
      m.mode = cnn::mode_from_string(e.at("mode").get<std::string>());
      m.heldout = e.at("heldout").get<std::string>();
      m.instructions = e.at("instructions").get<std::uint64_t>();
      m.baseline_mispredictions = e.at("baseline_mispredictions").get<std::uint64_t>();
      m.combined_mispredictions = e.at("combined_mispredictions").get<std::uint64_t>();
      m.mpki_before = e.at("mpki_before").get<double>();
      m.mpki_after = e.at("mpki_after").get<double>();
      r.mpki.push_back(std::move(m));
    }
    for (const auto& e : j.at("h2p_summaries")) {
      r.h2p_summaries.push_back({parse_ip(e.at("h2p").get<std::string>()),
                                 cnn::mode_from_string(e.at("mode").get<std::string>()),
                                 e.at("folds").get<std::uint32_t>(), e.at("mean_reduction").get<double>(),
                                 e.at("winner").get<bool>()});
    }
    for (const auto& e : j.at("mode_summaries")) {
      ModeSummary m;
      m.mode = cnn::mode_from_string(e.at("mode").get<std::string>());
      m.h2ps = e.at("h2ps").get<std::uint32_t>();
      m.winners = e.at("winners").get<std::uint32_t>();
      m.pct_winners = e.at("pct_winners").get<double>();
      m.mean_reduction_winners = e.at("mean_reduction_winners").get<double>();
      m.mean_reduction_all = e.at("mean_reduction_all").get<double>();
      m.mpki_before = e.at("mpki_before").get<double>();
      m.mpki_after = e.at("mpki_after").get<double>();
      m.storage_bytes_per_helper = e.at("storage_bytes_per_helper").get<std::uint64_t>();
      r.mode_summaries.push_back(m);
    }
    for (const auto& e : j.at("latency_metadata")) {
      r.latency.push_back(
          {e.at("name").get<std::string>(), e.at("value").get<std::string>(), e.at("source").get<std::string>()});
    }
    r.warnings = j.at("warnings").get<std::vector<std::string>>();
    return r;
  } catch (const json::exception& e) {
    throw FormatError(std::string("report: ") + e.what(), 0);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("report: ") + e.what(), 0);
  }
}

void write_rows_csv(const std::vector<EvalRow>& rows, std::ostream& out) {
  out << kRowsHeader << '\n';
  for (const auto& r : rows) {
    out << r.fold << ',' << csv_field(r.train_workload) << ',' << hex_ip(r.h2p) << ',' << cnn::to_string(r.mode)
        << ',' << csv_field(r.heldout) << ',' << r.occurrences << ',' << r.baseline_mispredictions << ','
        << r.helper_mispredictions << ',' << shortest(r.reduction) << '\n';
  }
}

std::vector<EvalRow> read_rows_csv(std::istream& in) {
  std::string line;
  std::uint64_t lineno = 1;
  if (!std::getline(in, line) || line != kRowsHeader) throw FormatError("rows csv: missing or wrong header", 1);
  std::vector<EvalRow> rows;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split_csv_line(line, lineno);
    if (f.size() != 9) throw FormatError("rows csv: expected 9 fields", lineno);
    EvalRow r;
    r.fold = static_cast<std::uint32_t>(parse_u64(f[0], lineno));
    r.train_workload = f[1];
    r.h2p = parse_ip(f[2]);
    r.mode = cnn::mode_from_string(f[3]);
    r.heldout = f[4];
    r.occurrences = parse_u64(f[5], lineno);
    r.baseline_mispredictions = parse_u64(f[6], lineno);
    r.helper_mispredictions = parse_u64(f[7], lineno);
    r.reduction = parse_double(f[8], lineno);
    rows.push_back(std::move(r));
  }
  return rows;
}

void write_skips_csv(const std::vector<SkipRow>& rows, std::ostream& out) {
  out << "fold,train_workload,h2p,mode,heldout,reason\n";
  for (const auto& s : rows) {
    out << s.fold << ',' << csv_field(s.train_workload) << ',' << hex_ip(s.h2p) << ',' << cnn::to_string(s.mode)
        << ',' << csv_field(s.heldout) << ',' << csv_field(s.reason) << '\n';
  }
}

std::string summary_table(const EvalReport& report) {
  std::ostringstream os;
  os << "Workloads: " << report.workloads.size() << "   Folds: " << report.num_folds
     << "   Eligible H2Ps: " << report.eligible_h2ps.size() << "   Evaluated rows: " << report.rows.size()
     << "   Skipped: " << report.skipped.size() << "\n\n";
  os << std::left << std::setw(6) << "Mode" << std::right << std::setw(7) << "H2Ps" << std::setw(11) << "% Winners"
     << std::setw(16) << "Red. (winners)" << std::setw(12) << "Red. (all)" << std::setw(13) << "MPKI before"
     << std::setw(12) << "MPKI after" << std::setw(15) << "Bytes/helper" << '\n';
  os << std::fixed;
  for (const auto& m : report.mode_summaries) {
    os << std::left << std::setw(6) << cnn::to_string(m.mode) << std::right << std::setw(7) << m.h2ps
       << std::setw(10) << std::setprecision(1) << m.pct_winners << '%' << std::setw(15) << std::setprecision(1)
       << 100.0 * m.mean_reduction_winners << '%' << std::setw(11) << 100.0 * m.mean_reduction_all << '%'
       << std::setw(13) << std::setprecision(3) << m.mpki_before << std::setw(12) << m.mpki_after
       << std::setw(15) << m.storage_bytes_per_helper << '\n';
  }
  if (!report.h2p_summaries.empty()) {
    os << "\nPer-H2P mean reduction over folds:\n";
    for (const auto& h : report.h2p_summaries) {
      os << "  " << hex_ip(h.h2p) << "  " << cnn::to_string(h.mode) << "  folds=" << h.folds
         << "  reduction=" << std::setprecision(2) << 100.0 * h.mean_reduction << '%'
         << (h.winner ? "  winner" : "") << '\n';
    }
  }
  if (!report.latency.empty()) {
    os << "\nLatency constants (" << report.latency.front().source << "):\n";
    for (const auto& l : report.latency) os << "  " << l.name << " = " << l.value << '\n';
  }
  for (const auto& w : report.warnings) os << "\nwarning: " << w;
  if (!report.warnings.empty()) os << '\n';
  return os.str();
}

ReportFiles emit_report(const EvalReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  ReportFiles files{dir / "report.json", dir / "folds.csv", dir / "skipped.csv", dir / "summary.txt"};
  auto write = [](const std::filesystem::path& p, const std::string& content) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + p.string() + " for writing");
    out << content;
    if (!out) throw std::runtime_error("write failed for " + p.string());
  };
  write(files.json, report_to_json(report));
  std::ostringstream rows, skips;
  write_rows_csv(report.rows, rows);
  write_skips_csv(report.skipped, skips);
  write(files.rows_csv, rows.str());
  write(files.skips_csv, skips.str());
  write(files.summary, summary_table(report));
  return files;
}

}  // namespace cnnbp::harness
