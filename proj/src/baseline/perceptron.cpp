#include <cmath>
#include <cstdlib>

#include "cnnbp/baseline.hpp"
#include "cnnbp/error.hpp"

namespace cnnbp::baseline {

void PerceptronConfig::validate() const {
  if (history_length == 0) throw ConfigError("perceptron: history_length must be >= 1");
  if (weight_bits < 2 || weight_bits > 15) throw ConfigError("perceptron: weight_bits must be in [2, 15]");
  if (num_perceptrons == 0) throw ConfigError("perceptron: num_perceptrons must be >= 1");
}

std::int32_t PerceptronConfig::theta() const {
  return static_cast<std::int32_t>(std::floor(1.93 * history_length + 14.0));
}

Perceptron::Perceptron(const PerceptronConfig& config)
    : config_(config),
      theta_(config.theta()),
      weights_(static_cast<std::size_t>(config.num_perceptrons) * (config.history_length + 1), 0),
      hist_(config.history_length, -1) {
  config_.validate();
}

std::int8_t Perceptron::history(std::uint32_t age) const {
  const std::size_t n = hist_.size();
  return hist_[(head_ + n - age) % n];
}

Perceptron::Output Perceptron::predict(std::uint64_t ip) const {
  const std::int16_t* w = &weights_[row(ip) * (config_.history_length + 1)];
  std::int32_t sum = w[0];
  const std::size_t n = hist_.size();
  // ages 0..n-1 map to weights 1..n
  for (std::size_t age = 0; age < n; ++age) {
    sum += w[age + 1] * hist_[(head_ + n - age) % n];
  }
  return {sum >= 0, sum};
}

void Perceptron::update(std::uint64_t ip, bool taken) {
  const Output out = predict(ip);
  if (out.taken != taken || std::abs(out.sum) <= theta_) {
    std::int16_t* w = &weights_[row(ip) * (config_.history_length + 1)];
    const std::int32_t hi = config_.weight_max();
    const std::int32_t t = taken ? 1 : -1;
    auto bump = [hi](std::int16_t& x, std::int32_t d) {
      const std::int32_t v = x + d;
      x = static_cast<std::int16_t>(v > hi ? hi : (v < -hi ? -hi : v));
    };
    bump(w[0], t);
    const std::size_t n = hist_.size();
    for (std::size_t age = 0; age < n; ++age) bump(w[age + 1], t * hist_[(head_ + n - age) % n]);
  }
  head_ = (head_ + 1) % hist_.size();
  hist_[head_] = taken ? 1 : -1;
}

}  // namespace cnnbp::baseline
