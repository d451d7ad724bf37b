#include "cnnbp/trace.hpp"

#include "cnnbp/error.hpp"

namespace cnnbp::trace {

void Trace::validate() const {
  if (meta.instruction_count && *meta.instruction_count < records.size()) {
    throw ConfigError("instruction_count " + std::to_string(*meta.instruction_count) +
                      " is smaller than the record count " + std::to_string(records.size()));
  }
}

std::vector<std::uint64_t> position_histogram(const Trace& trace, std::uint64_t h2p_ip,
                                              std::uint64_t correlated_ip, std::uint32_t window,
                                              bool nearest_only) {
  if (window == 0) throw ConfigError("position_histogram: window must be >= 1");
  std::vector<std::uint64_t> hist(window, 0);
  const auto& recs = trace.records;
  for (std::size_t r = 0; r < recs.size(); ++r) {
    if (recs[r].ip != h2p_ip) continue;
    // distance d = 1 is the record immediately before the H2P.
    const std::size_t max_d = std::min<std::size_t>(window, r);
    for (std::size_t d = 1; d <= max_d; ++d) {
      if (recs[r - d].ip != correlated_ip) continue;
      ++hist[window - d];
      if (nearest_only) break;
    }
  }
  return hist;
}

}  // namespace cnnbp::trace
