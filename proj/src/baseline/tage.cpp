#include <bit>
#include <cmath>

#include "cnnbp/baseline.hpp"
#include "cnnbp/error.hpp"

namespace cnnbp::baseline {

void TageLiteConfig::validate() const {
  if (num_tagged_tables == 0) throw ConfigError("tage: need at least one tagged table");
  if (!std::has_single_bit(table_entries) || table_entries < 2 || table_entries > (1u << 16)) {
    throw ConfigError("tage: table_entries must be a power of two in [2, 65536]");
  }
  if (!std::has_single_bit(bimodal_entries) || bimodal_entries > (1u << 24)) {
    throw ConfigError("tage: bimodal_entries must be a power of two");
  }
  if (tag_bits < 2 || tag_bits > 16) throw ConfigError("tage: tag_bits must be in [2, 16]");
  if (counter_bits < 2 || counter_bits > 7) throw ConfigError("tage: counter_bits must be in [2, 7]");
  if (useful_bits < 1 || useful_bits > 7) throw ConfigError("tage: useful_bits must be in [1, 7]");
  if (min_history < 1 || max_history < min_history) {
    throw ConfigError("tage: need 1 <= min_history <= max_history");
  }
  if (max_history - min_history + 1 < num_tagged_tables) {
    throw ConfigError("tage: history range too small for distinct table lengths");
  }
}

std::vector<std::uint32_t> TageLiteConfig::history_lengths() const {
  std::vector<std::uint32_t> out;
  const std::uint32_t n = num_tagged_tables;
  for (std::uint32_t i = 0; i < n; ++i) {
    double len = min_history;
    if (n > 1) {
      const double ratio = static_cast<double>(max_history) / min_history;
      len = min_history * std::pow(ratio, static_cast<double>(i) / (n - 1));
    }
    auto l = static_cast<std::uint32_t>(std::lround(len));
    if (!out.empty() && l <= out.back()) l = out.back() + 1;
    out.push_back(l);
  }
  // Rounding bumps can only push the tail up; pin the endpoints.
  out.back() = std::max(out.back(), max_history);
  return out;
}

TageLite::TageLite(const TageLiteConfig& config) : config_(config) {
  config_.validate();
  lengths_ = config_.history_lengths();
  index_bits_ = static_cast<std::uint32_t>(std::countr_zero(config_.table_entries));
  tables_.assign(config_.num_tagged_tables, std::vector<TageEntry>(config_.table_entries));
  bimodal_.assign(config_.bimodal_entries, 1);  // weak not-taken
  ghist_.assign(lengths_.back() + 1, 0);
  for (std::uint32_t len : lengths_) {
    fold_index_.emplace_back(len, index_bits_);
    fold_tag_a_.emplace_back(len, config_.tag_bits);
    fold_tag_b_.emplace_back(len, config_.tag_bits - 1);
  }
}

bool TageLite::history_bit(std::uint32_t age) const {
  if (age >= ghist_.size()) return false;
  const std::size_t n = ghist_.size();
  return ghist_[(ghist_head_ + n - age) % n] != 0;
}

std::uint32_t TageLite::index_for(std::uint32_t table, std::uint64_t ip) const {
  const std::uint32_t mask = config_.table_entries - 1;
  return (fold_index_[table].value() ^ static_cast<std::uint32_t>(ip)) & mask;
}

std::uint32_t TageLite::tag_for(std::uint32_t table, std::uint64_t ip) const {
  const std::uint32_t mask = (1u << config_.tag_bits) - 1;
  const auto pc = static_cast<std::uint32_t>(ip ^ (ip >> index_bits_));
  return (pc ^ fold_tag_a_[table].value() ^ (fold_tag_b_[table].value() << 1)) & mask;
}

std::uint32_t TageLite::bimodal_index(std::uint64_t ip) const {
  return static_cast<std::uint32_t>(ip) & (config_.bimodal_entries - 1);
}

TagePrediction TageLite::lookup(std::uint64_t ip) const {
  TagePrediction p;
  p.ip = ip;
  p.bimodal_index = bimodal_index(ip);
  const std::uint32_t n = config_.num_tagged_tables;
  p.indices.resize(n);
  p.tags.resize(n);
  for (std::uint32_t t = 0; t < n; ++t) {
    p.indices[t] = index_for(t, ip);
    p.tags[t] = tag_for(t, ip);
  }
  const bool base = bimodal_[p.bimodal_index] >= 2;
  const std::uint8_t mid = static_cast<std::uint8_t>(1u << (config_.counter_bits - 1));
  int provider = -1, alt = -1;
  for (int t = static_cast<int>(n) - 1; t >= 0; --t) {
    const TageEntry& e = tables_[t][p.indices[t]];
    if (e.valid && e.tag == p.tags[t]) {
      if (provider < 0) {
        provider = t;
      } else {
        alt = t;
        break;
      }
    }
  }
  p.provider = provider;
  p.alt_taken = alt >= 0 ? tables_[alt][p.indices[alt]].counter >= mid : base;
  p.taken = provider >= 0 ? tables_[provider][p.indices[provider]].counter >= mid : base;
  return p;
}

TagePrediction TageLite::predict(std::uint64_t ip) {
  pending_ = lookup(ip);
  return *pending_;
}

void TageLite::update(std::uint64_t ip, bool taken) {
  if (!pending_ || pending_->ip != ip) {
    throw ContractError("TageLite::update called without a matching predict");
  }
  const TagePrediction p = std::move(*pending_);
  pending_.reset();
  const std::uint8_t cmax = counter_max();
  const std::uint8_t umax = useful_max();

  auto step = [](std::uint8_t& c, bool up, std::uint8_t hi) {
    if (up) {
      if (c < hi) ++c;
    } else if (c > 0) {
      --c;
    }
  };

  if (p.provider >= 0) {
    TageEntry& e = tables_[p.provider][p.indices[p.provider]];
    step(e.counter, taken, cmax);
    if (p.taken != p.alt_taken) step(e.useful, p.taken == taken, umax);
  } else {
    step(bimodal_[p.bimodal_index], taken, 3);
  }

  if (p.taken != taken) {
    const auto first = static_cast<std::uint32_t>(p.provider + 1);
    bool allocated = false;
    for (std::uint32_t t = first; t < config_.num_tagged_tables; ++t) {
      TageEntry& victim = tables_[t][p.indices[t]];
      if (victim.useful == 0) {
        const std::uint8_t mid = static_cast<std::uint8_t>(1u << (config_.counter_bits - 1));
        victim = TageEntry{p.tags[t], static_cast<std::uint8_t>(taken ? mid : mid - 1), 0, true};
        allocated = true;
        break;
      }
    }
    if (!allocated) {
      for (std::uint32_t t = first; t < config_.num_tagged_tables; ++t) {
        TageEntry& victim = tables_[t][p.indices[t]];
        if (victim.useful > 0) --victim.useful;
      }
    }
  }
  push_history(taken);
}

void TageLite::push_history(bool taken) {
  for (std::size_t t = 0; t < lengths_.size(); ++t) {
    const bool oldest = history_bit(lengths_[t] - 1);
    fold_index_[t].update(taken, oldest);
    fold_tag_a_[t].update(taken, oldest);
    fold_tag_b_[t].update(taken, oldest);
  }
  ghist_head_ = (ghist_head_ + 1) % ghist_.size();
  ghist_[ghist_head_] = taken ? 1 : 0;
}

}  // namespace cnnbp::baseline
