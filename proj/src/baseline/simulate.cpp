#include <charconv>
#include <cmath>
#include <iomanip>
#include <string_view>

#include "cnnbp/baseline.hpp"
#include "cnnbp/error.hpp"

namespace cnnbp::baseline {

Baseline::Baseline(BaselineKind kind, const TageLiteConfig& tage, const PerceptronConfig& perceptron)
    : kind_(kind) {
  if (kind == BaselineKind::tage) {
    tage_.emplace(tage);
  } else {
    perceptron_.emplace(perceptron);
  }
}

bool Baseline::predict(std::uint64_t ip) {
  return tage_ ? tage_->predict(ip).taken : perceptron_->predict(ip).taken;
}

void Baseline::update(std::uint64_t ip, bool taken) {
  if (tage_) {
    tage_->update(ip, taken);
  } else {
    perceptron_->update(ip, taken);
  }
}

StatsMap simulate_baseline(const trace::Trace& trace, Baseline& predictor) {
  StatsMap stats;
  for (const auto& r : trace.records) {
    const bool pred = predictor.predict(r.ip);
    auto& s = stats[r.ip];
    ++s.predictions;
    if (pred != r.taken) ++s.mispredictions;
    predictor.update(r.ip, r.taken);
  }
  return stats;
}

std::uint64_t total_mispredictions(const StatsMap& stats) {
  std::uint64_t n = 0;
  for (const auto& [ip, s] : stats) n += s.mispredictions;
  return n;
}

std::uint64_t total_predictions(const StatsMap& stats) {
  std::uint64_t n = 0;
  for (const auto& [ip, s] : stats) n += s.predictions;
  return n;
}

void write_stats_csv(const StatsMap& stats, std::ostream& out) {
  out << "ip,predictions,mispredictions,accuracy\n";
  for (const auto& [ip, s] : stats) {
    char acc[32];
    const auto end = std::to_chars(acc, acc + sizeof acc, s.accuracy()).ptr;
    out << "0x" << std::hex << ip << std::dec << ',' << s.predictions << ',' << s.mispredictions << ','
        << std::string_view(acc, static_cast<std::size_t>(end - acc)) << '\n';
  }
}

void H2pScreenConfig::validate() const {
  if (!(accuracy_threshold > 0.0 && accuracy_threshold < 1.0)) {
    throw ConfigError("screen: accuracy_threshold must be in (0, 1)");
  }
}

std::uint64_t required_mispredictions(const H2pScreenConfig& config,
                                      std::optional<std::uint64_t> instruction_count) {
  if (config.window_instructions == 0) return config.min_mispredictions;
  if (!instruction_count) {
    throw ConfigError("screen: rate scaling needs the trace's instruction_count");
  }
  // min_mispredictions per window_instructions, scaled to this trace.
  const double scaled = static_cast<double>(config.min_mispredictions) *
                        static_cast<double>(*instruction_count) /
                        static_cast<double>(config.window_instructions);
  return std::max(config.min_mispredictions_floor, static_cast<std::uint64_t>(std::ceil(scaled)));
}

std::vector<std::uint64_t> screen_h2ps(const StatsMap& stats, const H2pScreenConfig& config,
                                       std::optional<std::uint64_t> instruction_count) {
  config.validate();
  const std::uint64_t need = required_mispredictions(config, instruction_count);
  std::vector<std::uint64_t> out;
  for (const auto& [ip, s] : stats) {
    if (s.predictions > 0 && s.accuracy() < config.accuracy_threshold && s.mispredictions >= need) {
      out.push_back(ip);
    }
  }
  return out;
}

}  // namespace cnnbp::baseline
