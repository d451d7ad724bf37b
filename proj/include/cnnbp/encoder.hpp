#pragma once

#include <cstdint>
#include <vector>

#include "cnnbp/trace.hpp"

namespace cnnbp::encoder {

struct EncoderConfig {
  std::uint32_t p = 8;  // index space is 2^p
  std::uint32_t history_len = 200;

  void validate() const;
  std::uint32_t index_space() const { return 1u << p; }
};

/// Slot value for history before program start.
inline constexpr std::int32_t kPad = -1;

/// ((ip << 1) + direction) & (2^p - 1)
constexpr std::uint32_t encode_index(std::uint64_t ip, bool taken, std::uint32_t p) {
  return static_cast<std::uint32_t>(((ip << 1) + (taken ? 1u : 0u)) & ((std::uint64_t{1} << p) - 1));
}

/// Rolling window of the most recent encoded branches. Position
/// history_len-1 is the most recent; unfilled positions hold kPad.
class HistoryWindow {
 public:
  explicit HistoryWindow(std::uint32_t history_len);

  void push(std::int32_t index);
  std::int32_t at(std::uint32_t position) const;
  std::uint32_t size() const { return static_cast<std::uint32_t>(ring_.size()); }

  /// Oldest-to-newest copy.
  std::vector<std::int32_t> linear() const;
  void copy_to(std::int32_t* out) const;

  friend bool operator==(const HistoryWindow& a, const HistoryWindow& b) {
    return a.linear() == b.linear();
  }

 private:
  std::vector<std::int32_t> ring_;
  std::size_t oldest_ = 0;
};

/// Dense 2^p x history_len {0,1} matrix, row-major (row = index).
struct HistoryMatrix {
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<std::uint8_t> cells;

  std::uint8_t operator()(std::uint32_t r, std::uint32_t c) const { return cells[r * cols + c]; }
};

/// Column c is one-hot at the index held by position c; pad columns are zero.
HistoryMatrix build_history_matrix(const HistoryWindow& window, std::uint32_t p);

/// A window stored oldest-to-newest plus the H2P outcome that followed it.
struct Sample {
  std::vector<std::int32_t> window;
  bool taken = false;

  friend bool operator==(const Sample&, const Sample&) = default;
};

/// Windows preceding every occurrence of h2p_ip, in trace order.
std::vector<Sample> collect_all_samples(const trace::Trace& trace, std::uint64_t h2p_ip,
                                        const EncoderConfig& config);

/// Uniform sample of sample_budget windows without replacement (all of them
/// if fewer exist), returned in trace order. Throws ConfigError when h2p_ip
/// does not occur.
std::vector<Sample> collect_training_set(const trace::Trace& trace, std::uint64_t h2p_ip,
                                         const EncoderConfig& config, std::size_t sample_budget,
                                         std::uint64_t seed);

}  // namespace cnnbp::encoder
