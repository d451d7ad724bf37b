#include "cnnbp/encoder.hpp"

#include <algorithm>

#include "cnnbp/error.hpp"
#include "cnnbp/rng.hpp"

namespace cnnbp::encoder {

void EncoderConfig::validate() const {
  if (p < 2 || p > 16) throw ConfigError("encoder: p must be in [2, 16]");
  if (history_len == 0) throw ConfigError("encoder: history_len must be >= 1");
}

HistoryWindow::HistoryWindow(std::uint32_t history_len) : ring_(history_len, kPad) {
  if (history_len == 0) throw ConfigError("HistoryWindow: length must be >= 1");
}

void HistoryWindow::push(std::int32_t index) {
  ring_[oldest_] = index;
  oldest_ = (oldest_ + 1) % ring_.size();
}

std::int32_t HistoryWindow::at(std::uint32_t position) const {
  return ring_[(oldest_ + position) % ring_.size()];
}

std::vector<std::int32_t> HistoryWindow::linear() const {
  std::vector<std::int32_t> out(ring_.size());
  copy_to(out.data());
  return out;
}

void HistoryWindow::copy_to(std::int32_t* out) const {
  const auto split = ring_.begin() + static_cast<std::ptrdiff_t>(oldest_);
  out = std::copy(split, ring_.end(), out);
  std::copy(ring_.begin(), split, out);
}

HistoryMatrix build_history_matrix(const HistoryWindow& window, std::uint32_t p) {
  HistoryMatrix m;
  m.rows = 1u << p;
  m.cols = window.size();
  m.cells.assign(static_cast<std::size_t>(m.rows) * m.cols, 0);
  for (std::uint32_t c = 0; c < m.cols; ++c) {
    const std::int32_t idx = window.at(c);
    if (idx == kPad) continue;
    m.cells[static_cast<std::size_t>(idx) * m.cols + c] = 1;
  }
  return m;
}

std::vector<Sample> collect_all_samples(const trace::Trace& trace, std::uint64_t h2p_ip,
                                        const EncoderConfig& config) {
  config.validate();
  std::vector<Sample> out;
  HistoryWindow window(config.history_len);
  for (const auto& r : trace.records) {
    if (r.ip == h2p_ip) out.push_back({window.linear(), r.taken});
    window.push(static_cast<std::int32_t>(encode_index(r.ip, r.taken, config.p)));
  }
  return out;
}

std::vector<Sample> collect_training_set(const trace::Trace& trace, std::uint64_t h2p_ip,
                                         const EncoderConfig& config, std::size_t sample_budget,
                                         std::uint64_t seed) {
  config.validate();
  std::vector<std::size_t> occurrences;
  for (std::size_t i = 0; i < trace.records.size(); ++i) {
    if (trace.records[i].ip == h2p_ip) occurrences.push_back(i);
  }
  if (occurrences.empty()) throw ConfigError("collect_training_set: ip does not occur in trace");

  // Partial Fisher-Yates picks which occurrences to keep.
  std::vector<std::size_t> chosen = occurrences;
  const std::size_t k = std::min(sample_budget, chosen.size());
  Rng rng(seed);
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + rng.below(chosen.size() - i);
    std::swap(chosen[i], chosen[j]);
  }
  chosen.resize(k);
  std::sort(chosen.begin(), chosen.end());

  std::vector<Sample> out;
  out.reserve(k);
  const std::uint32_t len = config.history_len;
  for (std::size_t r : chosen) {
    Sample s;
    s.window.assign(len, kPad);
    for (std::uint32_t d = 1; d <= len && d <= r; ++d) {
      const auto& rec = trace.records[r - d];
      s.window[len - d] = static_cast<std::int32_t>(encode_index(rec.ip, rec.taken, config.p));
    }
    s.taken = trace.records[r].taken;
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace cnnbp::encoder
