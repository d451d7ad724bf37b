#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace cnnbp::trace {

/// One dynamic conditional branch.
struct BranchRecord {
  std::uint64_t ip = 0;
  bool taken = false;

  friend bool operator==(const BranchRecord&, const BranchRecord&) = default;
};

struct TraceMeta {
  std::string workload_id;
  std::optional<std::uint64_t> generator_seed;
  /// Total dynamic instructions, used for MPKI. Must be >= record count.
  std::optional<std::uint64_t> instruction_count;

  friend bool operator==(const TraceMeta&, const TraceMeta&) = default;
};

/// Branch records in dynamic execution order.
struct Trace {
  std::vector<BranchRecord> records;
  TraceMeta meta;

  std::size_t size() const noexcept { return records.size(); }
  bool empty() const noexcept { return records.empty(); }

  /// Throws ConfigError if instruction_count < size().
  void validate() const;

  friend bool operator==(const Trace&, const Trace&) = default;
};

// Fixed synthetic instruction pointers used by the generators. Low 7 bits are
// pairwise distinct so no two branches alias under p = 8 encoding.
inline constexpr std::uint64_t kIpDataDependent = 0x400587;  // correlated branch
inline constexpr std::uint64_t kIpLoop = 0x4005a3;           // loop condition
inline constexpr std::uint64_t kIpH2p = 0x4005c1;            // hard-to-predict branch
inline constexpr std::uint64_t kIpNoiseBase = 0x400610;      // loop-body branches
inline constexpr std::uint64_t kIpNoiseStride = 0x24;
inline constexpr std::uint32_t kMaxNoiseBranches = 3;

/// iterations = (value % modulus) + offset.
struct LoopCountRule {
  std::uint32_t modulus = 8;
  std::uint32_t offset = 1;

  std::uint32_t operator()(std::int64_t value) const {
    return static_cast<std::uint32_t>(static_cast<std::uint64_t>(value) % modulus) + offset;
  }
  static LoopCountRule constant(std::uint32_t n) { return {1, n}; }
};

struct SynthConfig {
  std::uint64_t num_calls = 100000;
  std::int64_t value_lo = 0;
  std::int64_t value_hi = 1000;
  /// Data-dependent branch (and the H2P) are taken iff value < taken_threshold.
  std::int64_t taken_threshold = 333;
  LoopCountRule loop_count_rule{};
  /// Uncorrelated random-direction branches executed in each loop iteration.
  std::uint32_t noise_per_iteration = 3;
  /// Largest history window the correlated branch must stay inside.
  std::uint32_t history_window = 200;
  std::uint64_t seed = 1;
  std::string workload_id = "listing1";

  void validate() const;
};

/// Per-call bookkeeping kept by the generators.
struct GeneratorTally {
  /// Records strictly between the data-dependent branch and the H2P, per call.
  std::vector<std::uint32_t> intervening;
};

std::uint64_t noise_ip(std::uint32_t k);

/// Per call: data-dependent branch, loop (condition taken once per iteration
/// followed by the body's noise branches, then one not-taken exit), then the
/// H2P whose direction copies the data-dependent branch.
Trace generate_listing1_trace(const SynthConfig& config, GeneratorTally* tally = nullptr);

/// Same motif with iterations = (value % position_spread) + 1, so the
/// correlated branch lands at position_spread distinct history offsets.
/// Throws ConfigError when the farthest offset does not fit in
/// config.history_window.
Trace generate_varposition_trace(const SynthConfig& config, std::uint32_t position_spread,
                                 GeneratorTally* tally = nullptr);

enum class TraceFormat { binary, text };

/// Picks text for ".txt"/".trace.txt" suffixes, binary otherwise.
TraceFormat format_for_path(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_binary(const Trace& trace);
Trace decode_binary(const std::vector<std::uint8_t>& bytes);
std::string encode_text(const Trace& trace);
Trace decode_text(const std::string& text);

Trace read_trace(const std::filesystem::path& path);
Trace read_trace(const std::filesystem::path& path, TraceFormat format);
void write_trace(const Trace& trace, const std::filesystem::path& path);
void write_trace(const Trace& trace, const std::filesystem::path& path, TraceFormat format);

/// Histogram of correlated_ip positions in the window preceding each h2p_ip
/// occurrence. Index window-1 is the most recent record. With nearest_only,
/// only the most recent correlated occurrence per H2P is counted.
std::vector<std::uint64_t> position_histogram(const Trace& trace, std::uint64_t h2p_ip,
                                              std::uint64_t correlated_ip, std::uint32_t window,
                                              bool nearest_only = false);

}  // namespace cnnbp::trace
