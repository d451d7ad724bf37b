#pragma once

#include <cstdint>
#include <cstddef>
#include <deque>
#include <span>
#include <vector>

#include "cnnbp/cnn.hpp"

namespace cnnbp::deploy {

/// 2-bit ternary code: sign bit s (1 = positive) and value bit v (1 = nonzero),
/// packed as (s << 1) | v. 00 = 0, 01 = -1, 11 = +1; 10 is illegal.
struct TernaryCode {
  bool sign = false;
  bool value = false;

  static constexpr TernaryCode from_value(int v) { return {v > 0, v != 0}; }
  /// Throws FormatError for the illegal pattern 10.
  static TernaryCode from_packed(std::uint8_t bits);
  constexpr int to_value() const { return value ? (sign ? 1 : -1) : 0; }
  constexpr std::uint8_t packed() const {
    return static_cast<std::uint8_t>((sign ? 2u : 0u) | (value ? 1u : 0u));
  }
  friend bool operator==(const TernaryCode&, const TernaryCode&) = default;
};

/// Fixed-length bit vector over 64-bit words, bit k in word k / 64 at k % 64.
/// Bits beyond size() are always zero.
class BitPlane {
 public:
  BitPlane() = default;
  explicit BitPlane(std::size_t bits) : bits_(bits), words_((bits + 63) / 64, 0) {}

  std::size_t size() const { return bits_; }
  std::span<const std::uint64_t> words() const { return words_; }

  bool get(std::size_t k) const { return (words_[k >> 6] >> (k & 63)) & 1u; }
  void set(std::size_t k, bool v) {
    const std::uint64_t mask = std::uint64_t{1} << (k & 63);
    if (v) {
      words_[k >> 6] |= mask;
    } else {
      words_[k >> 6] &= ~mask;
    }
  }

  /// Moves every bit up by n positions; bits shifted past size() are lost.
  void shift_up(std::size_t n);
  /// Moves every bit down by n positions; the top n bits become zero.
  void shift_down(std::size_t n);
  /// Copies `count` bits starting at `from` in src to position `to`.
  void copy_bits(const BitPlane& src, std::size_t from, std::size_t to, std::size_t count);

  std::vector<std::uint8_t> to_bytes() const;
  static BitPlane from_bytes(std::span<const std::uint8_t> bytes, std::size_t bits);

  friend bool operator==(const BitPlane&, const BitPlane&) = default;

 private:
  void clear_tail();

  std::size_t bits_ = 0;
  std::vector<std::uint64_t> words_;
};

/// 2^p x m folded Layer-1 codes as sign and value planes, bit i*m + j.
struct LookupTable {
  std::uint32_t p = 0;
  std::uint32_t m = 0;
  BitPlane sign, value;

  std::uint32_t rows() const { return 1u << p; }
  std::size_t size_bits() const { return 2 * static_cast<std::size_t>(rows()) * m; }
  TernaryCode at(std::uint32_t index, std::uint32_t filter) const {
    const std::size_t k = static_cast<std::size_t>(index) * m + filter;
    return {sign.get(k), value.get(k)};
  }
  friend bool operator==(const LookupTable&, const LookupTable&) = default;
};

/// T[i, j] = quantize(normalize1_j(w1[i, j] + b1[j]), q), evaluated for
/// every entry. Throws ConfigError on non-finite parameters.
LookupTable build_table(const cnn::FpCnnParams& params);

/// Layer-1 responses of the most recent history_len branches. Slot
/// age * m + j holds filter j of the branch `age` steps back (0 = newest).
/// Keeps the codes it evicts so recent updates can be undone.
class FifoBuffer {
 public:
  static constexpr std::size_t kDefaultRecovery = SIZE_MAX;

  /// recovery_depth defaults to history_len; 0 disables the undo log.
  FifoBuffer(std::uint32_t history_len, std::uint32_t m, std::size_t recovery_depth = kDefaultRecovery);

  std::uint32_t history_len() const { return history_len_; }
  std::uint32_t m() const { return m_; }
  std::size_t recovery_depth() const { return depth_; }
  /// Updates that rollback() can currently undo.
  std::size_t recoverable() const { return log_.size(); }

  const BitPlane& sign() const { return sign_; }
  const BitPlane& value() const { return value_; }
  TernaryCode at(std::uint32_t age, std::uint32_t filter) const {
    const std::size_t k = static_cast<std::size_t>(age) * m_ + filter;
    return {sign_.get(k), value_.get(k)};
  }

  /// L1 <- (L1 << m) | T[index]
  void push_row(const LookupTable& table, std::uint32_t index);
  /// Restores the state before the last n pushes. Throws ContractError when
  /// n exceeds recoverable().
  void rollback(std::size_t n);

  /// Same contents, ignoring the recovery log.
  bool same_contents(const FifoBuffer& other) const {
    return history_len_ == other.history_len_ && m_ == other.m_ && sign_ == other.sign_ &&
           value_ == other.value_;
  }

 private:
  struct Evicted {
    BitPlane sign, value;
  };

  std::uint32_t history_len_;
  std::uint32_t m_;
  std::size_t depth_;
  BitPlane sign_, value_;
  std::deque<Evicted> log_;
};

/// Encodes (ip, direction) and pushes the matching table row.
void fifo_update(FifoBuffer& fifo, const LookupTable& table, std::uint64_t ip, bool taken);
void rollback(FifoBuffer& fifo, std::size_t n);

/// Integer threshold t with normalize2(P) > 0 <=> P' > t, where P' = P, or
/// P' = -P when `negate` is set (gamma2 < 0).
struct Threshold {
  std::int64_t t = 0;
  bool negate = false;
};

/// Inverts the Layer-2 normalization. Throws ConfigError if gamma2 == 0.
/// With bound = history_len * m, t lies in [-bound - 1, bound]: the ends
/// mean "always taken" and "never taken".
Threshold derive_threshold(const cnn::FpCnnParams& params);

/// On-BPU helper: folded table, Layer-2 code planes (same age-major layout
/// as the FIFO, sign plane already negated when gamma2 < 0) and threshold.
struct DeployedHelper {
  std::uint32_t p = 0;
  std::uint32_t m = 0;
  std::uint32_t history_len = 0;
  LookupTable table;
  BitPlane l2_sign, l2_value;
  std::int64_t threshold = 0;

  FifoBuffer make_fifo(std::size_t recovery_depth = FifoBuffer::kDefaultRecovery) const {
    return FifoBuffer(history_len, m, recovery_depth);
  }
  friend bool operator==(const DeployedHelper&, const DeployedHelper&) = default;
};

DeployedHelper build_helper(const cnn::FpCnnParams& params);

struct Prediction {
  bool taken = false;
  std::int64_t P = 0;
};

/// Ternary dot product of two equally sized code vectors held as planes:
/// s = S_a ^ S_b; active = V_a & V_b;
/// result = popcount(~s & active) - popcount(s & active).
std::int64_t popcount_dot(const BitPlane& sign_a, const BitPlane& value_a, const BitPlane& sign_b,
                          const BitPlane& value_b);

/// P = popcount_dot(FIFO, Layer-2 planes); taken iff P > t. P is the
/// negated product when the helper was built with gamma2 < 0.
Prediction predict(const DeployedHelper& helper, const FifoBuffer& fifo);

/// Table + FIFO + Layer-2 planes + 8-byte threshold, each rounded up to
/// whole bytes. Throws ConfigError when any argument is zero.
std::uint64_t storage_bytes(std::uint32_t p, std::uint32_t m, std::uint32_t history_len);

inline constexpr std::size_t kBlobHeaderBytes = 16;

/// "CNNH", 0x01, p:u8, m:u16 LE, history_len:u16 LE, zero padding to 16
/// bytes, t:i64 LE, then table S, table V, L2 S, L2 V planes, each padded
/// to whole bytes, bit k of a plane at byte k / 8, bit k % 8.
std::vector<std::uint8_t> serialize_helper(const DeployedHelper& helper);
/// Throws FormatError on bad magic or version, illegal code 10, impossible
/// dimensions, wrong length or an out-of-range threshold.
DeployedHelper deserialize_helper(std::span<const std::uint8_t> bytes);
std::size_t blob_size(std::uint32_t p, std::uint32_t m, std::uint32_t history_len);

}  // namespace cnnbp::deploy
