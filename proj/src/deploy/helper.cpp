#include <bit>
#include <cmath>

#include "cnnbp/deploy.hpp"
#include "cnnbp/encoder.hpp"
#include "cnnbp/error.hpp"

namespace cnnbp::deploy {

LookupTable build_table(const cnn::FpCnnParams& params) {
  const cnn::TernaryCnnParams tern = cnn::make_ternary(params);
  LookupTable t;
  t.p = params.shape.p;
  t.m = params.shape.m;
  const std::size_t n = static_cast<std::size_t>(t.rows()) * t.m;
  t.sign = BitPlane(n);
  t.value = BitPlane(n);
  for (std::size_t k = 0; k < n; ++k) {
    const TernaryCode c = TernaryCode::from_value(tern.l1_codes[k]);
    t.sign.set(k, c.sign);
    t.value.set(k, c.value);
  }
  return t;
}

FifoBuffer::FifoBuffer(std::uint32_t history_len, std::uint32_t m, std::size_t recovery_depth)
    : history_len_(history_len),
      m_(m),
      depth_(recovery_depth == kDefaultRecovery ? history_len : recovery_depth),
      sign_(static_cast<std::size_t>(history_len) * m),
      value_(static_cast<std::size_t>(history_len) * m) {
  if (history_len == 0 || m == 0) throw ConfigError("fifo: history_len and m must be positive");
}

void FifoBuffer::push_row(const LookupTable& table, std::uint32_t index) {
  if (table.m != m_) throw ConfigError("fifo: table filter count does not match");
  if (index >= table.rows()) throw ConfigError("fifo: table index out of range");
  if (depth_ > 0) {
    Evicted e{BitPlane(m_), BitPlane(m_)};
    const std::size_t oldest = static_cast<std::size_t>(history_len_ - 1) * m_;
    e.sign.copy_bits(sign_, oldest, 0, m_);
    e.value.copy_bits(value_, oldest, 0, m_);
    log_.push_back(std::move(e));
    if (log_.size() > depth_) log_.pop_front();
  }
  sign_.shift_up(m_);
  value_.shift_up(m_);
  const std::size_t row = static_cast<std::size_t>(index) * m_;
  sign_.copy_bits(table.sign, row, 0, m_);
  value_.copy_bits(table.value, row, 0, m_);
}

void FifoBuffer::rollback(std::size_t n) {
  if (n > log_.size()) {
    throw ContractError("fifo: cannot roll back " + std::to_string(n) + " updates, only " +
                        std::to_string(log_.size()) + " recorded");
  }
  const std::size_t oldest = static_cast<std::size_t>(history_len_ - 1) * m_;
  for (std::size_t i = 0; i < n; ++i) {
    const Evicted& e = log_.back();
    sign_.shift_down(m_);
    value_.shift_down(m_);
    sign_.copy_bits(e.sign, 0, oldest, m_);
    value_.copy_bits(e.value, 0, oldest, m_);
    log_.pop_back();
  }
}

void fifo_update(FifoBuffer& fifo, const LookupTable& table, std::uint64_t ip, bool taken) {
  fifo.push_row(table, static_cast<std::uint32_t>(encoder::encode_index(ip, taken, table.p)));
}

void rollback(FifoBuffer& fifo, std::size_t n) { fifo.rollback(n); }

Threshold derive_threshold(const cnn::FpCnnParams& params) {
  params.validate();
  if (params.gamma2 == 0.0) throw ConfigError("deploy: gamma2 is zero, output is constant");
  const std::int64_t bound = static_cast<std::int64_t>(params.shape.history_len) * params.shape.m;
  Threshold th;
  th.negate = params.gamma2 < 0.0;
  const double sign = th.negate ? -1.0 : 1.0;
  // Taken iff normalize2(P) > 0, which for P' = sign * P means P' > sign * P*.
  const double pstar = params.mean2 - params.beta2 * params.sigma2() / params.gamma2;
  double start = sign * pstar;
  if (!(start > static_cast<double>(-bound - 2))) start = static_cast<double>(-bound - 2);
  if (start > static_cast<double>(bound + 1)) start = static_cast<double>(bound + 1);
  std::int64_t t = static_cast<std::int64_t>(std::floor(start));
  auto taken_at = [&](std::int64_t pprime) { return params.normalize2(sign * static_cast<double>(pprime)) > 0.0; };
  // Floating-point rounding can leave floor(P*) one step off; settle it against
  // the exact decision rule.
  while (t >= -bound - 1 && taken_at(t)) --t;
  while (t <= bound && !taken_at(t + 1)) ++t;
  if (t < -bound - 1) t = -bound - 1;
  if (t > bound) t = bound;
  th.t = t;
  return th;
}

DeployedHelper build_helper(const cnn::FpCnnParams& params) {
  const Threshold th = derive_threshold(params);
  DeployedHelper h;
  h.p = params.shape.p;
  h.m = params.shape.m;
  h.history_len = params.shape.history_len;
  h.table = build_table(params);
  h.threshold = th.t;
  const std::size_t bits = static_cast<std::size_t>(h.history_len) * h.m;
  h.l2_sign = BitPlane(bits);
  h.l2_value = BitPlane(bits);
  for (std::uint32_t age = 0; age < h.history_len; ++age) {
    const std::size_t pos = h.history_len - 1 - age;
    for (std::uint32_t j = 0; j < h.m; ++j) {
      int v = cnn::ternarize(params.w2[pos * h.m + j], params.q);
      if (th.negate) v = -v;
      const TernaryCode c = TernaryCode::from_value(v);
      const std::size_t k = static_cast<std::size_t>(age) * h.m + j;
      h.l2_sign.set(k, c.sign);
      h.l2_value.set(k, c.value);
    }
  }
  return h;
}

std::int64_t popcount_dot(const BitPlane& sign_a, const BitPlane& value_a, const BitPlane& sign_b,
                          const BitPlane& value_b) {
  if (sign_a.size() != value_a.size() || sign_a.size() != sign_b.size() || sign_b.size() != value_b.size()) {
    throw ConfigError("popcount_dot: plane sizes differ");
  }
  const auto s1 = sign_a.words(), v1 = value_a.words();
  const auto s2 = sign_b.words(), v2 = value_b.words();
  std::int64_t agree = 0, disagree = 0;
  for (std::size_t w = 0; w < s1.size(); ++w) {
    const std::uint64_t s = s1[w] ^ s2[w];
    const std::uint64_t active = v1[w] & v2[w];
    agree += std::popcount(~s & active);
    disagree += std::popcount(s & active);
  }
  return agree - disagree;
}

Prediction predict(const DeployedHelper& helper, const FifoBuffer& fifo) {
  if (fifo.history_len() != helper.history_len || fifo.m() != helper.m) {
    throw ConfigError("deploy: FIFO shape does not match helper");
  }
  const std::int64_t P = popcount_dot(fifo.sign(), fifo.value(), helper.l2_sign, helper.l2_value);
  return {P > helper.threshold, P};
}

}  // namespace cnnbp::deploy
