#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <vector>

#include "cnnbp/trace.hpp"

namespace cnnbp::baseline {

struct TageLiteConfig {
  std::uint32_t num_tagged_tables = 7;
  std::uint32_t table_entries = 1024;  // power of two
  std::uint32_t tag_bits = 10;
  std::uint32_t max_history = 200;
  std::uint32_t min_history = 4;
  std::uint32_t counter_bits = 3;
  std::uint32_t useful_bits = 2;
  std::uint32_t bimodal_entries = 4096;  // power of two, 2-bit counters

  void validate() const;
  /// Geometric series from min_history to max_history, strictly increasing.
  std::vector<std::uint32_t> history_lengths() const;
};

struct TageEntry {
  std::uint32_t tag = 0;
  std::uint8_t counter = 0;
  std::uint8_t useful = 0;
  bool valid = false;

  friend bool operator==(const TageEntry&, const TageEntry&) = default;
};

/// Which component produced a prediction. provider < 0 means the bimodal base.
struct TagePrediction {
  bool taken = false;
  int provider = -1;
  bool alt_taken = false;
  std::uint64_t ip = 0;
  std::uint32_t bimodal_index = 0;
  std::vector<std::uint32_t> indices;
  std::vector<std::uint32_t> tags;
};

/// Folded history register: XOR of width-bit chunks of the most recent
/// `length` history bits, bit of age a landing at position a % width.
/// Maintained incrementally.
class FoldedHistory {
 public:
  FoldedHistory() = default;
  FoldedHistory(std::uint32_t length, std::uint32_t width) : length_(length), width_(width) {}

  /// newest enters at age 0; oldest is the bit that reaches age `length`.
  void update(bool newest, bool oldest) {
    value_ = (value_ << 1) | (newest ? 1u : 0u);
    value_ ^= static_cast<std::uint32_t>(oldest ? 1u : 0u) << (length_ % width_);
    value_ ^= value_ >> width_;
    value_ &= (1u << width_) - 1;
  }
  std::uint32_t value() const { return value_; }

 private:
  std::uint32_t value_ = 0;
  std::uint32_t length_ = 1;
  std::uint32_t width_ = 1;
};

/// Tagged geometric-history predictor without loop predictor or statistical
/// corrector. Predicts from the longest matching tagged table, else bimodal.
class TageLite {
 public:
  explicit TageLite(const TageLiteConfig& config = {});

  /// Does not change predictor state apart from remembering the lookup for
  /// the following update(); repeated calls return the same prediction.
  TagePrediction predict(std::uint64_t ip);
  /// Throws ContractError unless preceded by predict() for the same ip.
  void update(std::uint64_t ip, bool taken);

  const TageLiteConfig& config() const { return config_; }
  const std::vector<std::uint32_t>& history_lengths() const { return lengths_; }

  std::uint32_t index_for(std::uint32_t table, std::uint64_t ip) const;
  std::uint32_t tag_for(std::uint32_t table, std::uint64_t ip) const;
  std::uint32_t bimodal_index(std::uint64_t ip) const;

  const TageEntry& entry(std::uint32_t table, std::uint32_t index) const {
    return tables_[table][index];
  }
  TageEntry& entry(std::uint32_t table, std::uint32_t index) { return tables_[table][index]; }
  std::uint8_t bimodal(std::uint32_t index) const { return bimodal_[index]; }
  /// Direction bit of the given age (0 = most recent); false beyond recorded history.
  bool history_bit(std::uint32_t age) const;

  std::uint8_t counter_max() const { return static_cast<std::uint8_t>((1u << config_.counter_bits) - 1); }
  std::uint8_t useful_max() const { return static_cast<std::uint8_t>((1u << config_.useful_bits) - 1); }

 private:
  TagePrediction lookup(std::uint64_t ip) const;
  void push_history(bool taken);

  TageLiteConfig config_;
  std::vector<std::uint32_t> lengths_;
  std::uint32_t index_bits_ = 0;
  std::vector<std::vector<TageEntry>> tables_;
  std::vector<std::uint8_t> bimodal_;
  std::vector<std::uint8_t> ghist_;  // ring buffer, max_history + 1 slots
  std::size_t ghist_head_ = 0;       // slot of the most recent bit
  std::vector<FoldedHistory> fold_index_, fold_tag_a_, fold_tag_b_;
  std::optional<TagePrediction> pending_;
};

struct PerceptronConfig {
  std::uint32_t history_length = 200;
  std::uint32_t weight_bits = 8;
  std::uint32_t num_perceptrons = 1024;

  void validate() const;
  /// floor(1.93 h + 14)
  std::int32_t theta() const;
  std::int32_t weight_max() const { return (1 << (weight_bits - 1)) - 1; }
};

/// Global-history perceptron predictor: one weight per history position plus
/// a bias, selected by ip. History entries are +1 (taken) / -1 (not taken);
/// positions before program start read as not taken.
class Perceptron {
 public:
  explicit Perceptron(const PerceptronConfig& config = {});

  struct Output {
    bool taken = false;
    std::int32_t sum = 0;
  };

  Output predict(std::uint64_t ip) const;
  /// Trains on misprediction or |sum| <= theta, then shifts history.
  void update(std::uint64_t ip, bool taken);

  const PerceptronConfig& config() const { return config_; }
  std::size_t row(std::uint64_t ip) const { return ip % config_.num_perceptrons; }
  /// Weight i of a row: 0 is the bias, 1..h the history positions (1 = most recent).
  std::int16_t weight(std::size_t row, std::size_t i) const {
    return weights_[row * (config_.history_length + 1) + i];
  }
  /// +1/-1 of the given age (0 = most recent).
  std::int8_t history(std::uint32_t age) const;

 private:
  PerceptronConfig config_;
  std::int32_t theta_;
  std::vector<std::int16_t> weights_;
  std::vector<std::int8_t> hist_;  // ring, length history_length
  std::size_t head_ = 0;           // slot of the most recent
};

enum class BaselineKind { tage, perceptron };

/// Type-erased baseline so harness code can drive either predictor.
class Baseline {
 public:
  Baseline(BaselineKind kind, const TageLiteConfig& tage, const PerceptronConfig& perceptron);
  explicit Baseline(const TageLiteConfig& tage) : Baseline(BaselineKind::tage, tage, {}) {}
  explicit Baseline(const PerceptronConfig& p) : Baseline(BaselineKind::perceptron, {}, p) {}

  bool predict(std::uint64_t ip);
  void update(std::uint64_t ip, bool taken);
  BaselineKind kind() const { return kind_; }

 private:
  BaselineKind kind_;
  std::optional<TageLite> tage_;
  std::optional<Perceptron> perceptron_;
};

struct BranchStats {
  std::uint64_t predictions = 0;
  std::uint64_t mispredictions = 0;

  double accuracy() const {
    return predictions == 0 ? 0.0
                            : 1.0 - static_cast<double>(mispredictions) / static_cast<double>(predictions);
  }
  friend bool operator==(const BranchStats&, const BranchStats&) = default;
};

using StatsMap = std::map<std::uint64_t, BranchStats>;

/// One predict + update per record, in order.
StatsMap simulate_baseline(const trace::Trace& trace, Baseline& predictor);

std::uint64_t total_mispredictions(const StatsMap& stats);
std::uint64_t total_predictions(const StatsMap& stats);

/// CSV with header ip,predictions,mispredictions,accuracy.
void write_stats_csv(const StatsMap& stats, std::ostream& out);

struct H2pScreenConfig {
  double accuracy_threshold = 0.99;
  std::uint64_t min_mispredictions = 1000;
  /// Instructions per min_mispredictions; 0 disables rate scaling.
  std::uint64_t window_instructions = 30'000'000;
  /// Lower bound on the scaled misprediction requirement.
  std::uint64_t min_mispredictions_floor = 100;

  void validate() const;
};

/// Misprediction count a branch needs to qualify in a trace of the given length.
std::uint64_t required_mispredictions(const H2pScreenConfig& config,
                                      std::optional<std::uint64_t> instruction_count);

/// Branches with accuracy < threshold and enough mispredictions, sorted by ip.
std::vector<std::uint64_t> screen_h2ps(const StatsMap& stats, const H2pScreenConfig& config,
                                       std::optional<std::uint64_t> instruction_count);

}  // namespace cnnbp::baseline
