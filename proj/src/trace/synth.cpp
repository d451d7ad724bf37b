#include "cnnbp/error.hpp"
#include "cnnbp/rng.hpp"
#include "cnnbp/trace.hpp"

namespace cnnbp::trace {

void SynthConfig::validate() const {
  if (value_lo >= value_hi) throw ConfigError("SynthConfig: empty value range");
  if (!(taken_threshold > value_lo && taken_threshold < value_hi)) {
    throw ConfigError("SynthConfig: taken_threshold must lie strictly inside the value range");
  }
  if (loop_count_rule.modulus == 0) throw ConfigError("SynthConfig: loop modulus must be >= 1");
  if (noise_per_iteration > kMaxNoiseBranches) {
    throw ConfigError("SynthConfig: at most " + std::to_string(kMaxNoiseBranches) +
                      " noise branches per iteration");
  }
  if (history_window == 0) throw ConfigError("SynthConfig: history_window must be >= 1");
}

std::uint64_t noise_ip(std::uint32_t k) { return kIpNoiseBase + kIpNoiseStride * k; }

namespace {

template <typename IterationsFn>
Trace generate(const SynthConfig& config, IterationsFn iterations, GeneratorTally* tally) {
  Trace trace;
  trace.meta.workload_id = config.workload_id;
  trace.meta.generator_seed = config.seed;
  Rng rng(config.seed);
  auto& out = trace.records;
  if (tally) tally->intervening.clear();

  for (std::uint64_t call = 0; call < config.num_calls; ++call) {
    const std::int64_t value = rng.range(config.value_lo, config.value_hi);
    const bool taken = value < config.taken_threshold;
    out.push_back({kIpDataDependent, taken});
    const std::uint32_t n = iterations(value);
    for (std::uint32_t it = 0; it < n; ++it) {
      out.push_back({kIpLoop, true});
      for (std::uint32_t k = 0; k < config.noise_per_iteration; ++k) {
        out.push_back({noise_ip(k), rng.coin()});
      }
    }
    out.push_back({kIpLoop, false});
    out.push_back({kIpH2p, taken});
    if (tally) tally->intervening.push_back(n * (1 + config.noise_per_iteration) + 1);
  }
  // Arbitrary stand-in for non-branch instructions so MPKI is defined.
  trace.meta.instruction_count = 4 * static_cast<std::uint64_t>(out.size());
  return trace;
}

}  // namespace

Trace generate_listing1_trace(const SynthConfig& config, GeneratorTally* tally) {
  config.validate();
  return generate(config, config.loop_count_rule, tally);
}

Trace generate_varposition_trace(const SynthConfig& config, std::uint32_t position_spread,
                                 GeneratorTally* tally) {
  config.validate();
  if (position_spread == 0) throw ConfigError("position_spread must be >= 1");
  // Farthest distance from the H2P back to the correlated branch.
  const std::uint64_t farthest =
      static_cast<std::uint64_t>(position_spread) * (1 + config.noise_per_iteration) + 2;
  if (farthest > config.history_window) {
    throw ConfigError("position_spread " + std::to_string(position_spread) +
                      " places the correlated branch outside the " +
                      std::to_string(config.history_window) + "-record history window");
  }
  const LoopCountRule rule{position_spread, 1};
  return generate(config, rule, tally);
}

}  // namespace cnnbp::trace
