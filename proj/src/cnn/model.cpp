#include <cmath>

#include "cnnbp/cnn.hpp"
#include "cnnbp/error.hpp"
#include "cnnbp/rng.hpp"

namespace cnnbp::cnn {

std::string to_string(Mode mode) { return mode == Mode::ternary ? "tp" : "fp"; }

Mode mode_from_string(const std::string& text) {
  if (text == "fp") return Mode::full_precision;
  if (text == "tp") return Mode::ternary;
  throw ConfigError("unknown mode '" + text + "' (expected fp or tp)");
}

void CnnShape::validate() const {
  if (p < 2 || p > 16) throw ConfigError("cnn: p must be in [2, 16]");
  if (m == 0 || m > 65535) throw ConfigError("cnn: m must be in [1, 65535]");
  if (history_len == 0 || history_len > 65535) {
    throw ConfigError("cnn: history_len must be in [1, 65535]");
  }
}

double FpCnnParams::sigma1(std::uint32_t j) const { return std::sqrt(var1[j] + kNormEps); }
double FpCnnParams::sigma2() const { return std::sqrt(var2 + kNormEps); }

double FpCnnParams::normalize1(std::uint32_t j, double score) const {
  return (score - mean1[j]) * (gamma1[j] / sigma1(j)) + beta1[j];
}

double FpCnnParams::normalize2(double logit) const {
  return (logit - mean2) * (gamma2 / sigma2()) + beta2;
}

void FpCnnParams::validate() const {
  shape.validate();
  const std::size_t n = shape.index_space(), m = shape.m, len = shape.history_len;
  auto check = [](const std::vector<double>& v, std::size_t want, const char* name) {
    if (v.size() != want) {
      throw ConfigError(std::string("cnn: ") + name + " has " + std::to_string(v.size()) +
                        " values, expected " + std::to_string(want));
    }
    for (double x : v) {
      if (!std::isfinite(x)) throw ConfigError(std::string("cnn: non-finite value in ") + name);
    }
  };
  check(w1, n * m, "w1");
  check(b1, m, "b1");
  check(gamma1, m, "gamma1");
  check(beta1, m, "beta1");
  check(mean1, m, "mean1");
  check(var1, m, "var1");
  check(w2, len * m, "w2");
  for (double x : {gamma2, beta2, mean2, var2}) {
    if (!std::isfinite(x)) throw ConfigError("cnn: non-finite layer-2 normalization value");
  }
  for (double v : var1) {
    if (v < 0) throw ConfigError("cnn: negative running variance");
  }
  if (var2 < 0) throw ConfigError("cnn: negative running variance");
  if (!(q > 0.0 && q < 1.0)) throw ConfigError("cnn: q must be in (0, 1)");
}

FpCnnParams init_params(const CnnShape& shape, Mode mode, double q, std::uint64_t seed) {
  shape.validate();
  FpCnnParams p;
  p.shape = shape;
  p.mode = mode;
  p.q = q;
  const std::size_t n = shape.index_space(), m = shape.m, len = shape.history_len;
  Rng rng(seed);
  p.w1.resize(n * m);
  for (double& w : p.w1) w = rng.uniform(-0.05, 0.05);
  p.w2.resize(len * m);
  for (double& w : p.w2) w = rng.uniform(-0.05, 0.05);
  p.b1.assign(m, 0.0);
  p.gamma1.assign(m, 1.0);
  p.beta1.assign(m, 0.0);
  p.mean1.assign(m, 0.0);
  p.var1.assign(m, 1.0);
  p.validate();
  return p;
}

TernaryCnnParams make_ternary(const FpCnnParams& params) {
  params.validate();
  TernaryCnnParams t;
  t.base = params;
  const std::uint32_t n = params.shape.index_space(), m = params.shape.m;
  t.l1_codes.resize(static_cast<std::size_t>(n) * m);
  for (std::uint32_t i = 0; i < n; ++i) {
    for (std::uint32_t j = 0; j < m; ++j) {
      const double y = params.normalize1(j, params.w1[i * m + j] + params.b1[j]);
      t.l1_codes[i * m + j] = quantize_ternary(y, params.q);
    }
  }
  t.l2_codes.resize(params.w2.size());
  for (std::size_t k = 0; k < params.w2.size(); ++k) t.l2_codes[k] = ternarize(params.w2[k], params.q);
  return t;
}

namespace {

void check_window(const CnnShape& shape, std::size_t size) {
  if (size != shape.history_len) {
    throw ConfigError("window has " + std::to_string(size) + " positions, model expects " +
                      std::to_string(shape.history_len));
  }
}

ForwardResult finish_forward(const FpCnnParams& params, std::vector<double> layer1) {
  ForwardResult r;
  double z = 0.0;
  for (std::size_t k = 0; k < layer1.size(); ++k) z += params.w2[k] * layer1[k];
  r.layer1 = std::move(layer1);
  r.logit = params.normalize2(z);
  r.taken = r.logit > 0.0;
  return r;
}

}  // namespace

ForwardResult forward_fp(const FpCnnParams& params, const encoder::HistoryMatrix& matrix) {
  const std::uint32_t n = params.shape.index_space(), m = params.shape.m;
  const std::uint32_t len = params.shape.history_len;
  if (matrix.rows != n || matrix.cols != len) {
    throw ConfigError("history matrix is " + std::to_string(matrix.rows) + "x" +
                      std::to_string(matrix.cols) + ", model expects " + std::to_string(n) + "x" +
                      std::to_string(len));
  }
  std::vector<double> layer1(static_cast<std::size_t>(len) * m);
  for (std::uint32_t t = 0; t < len; ++t) {
    for (std::uint32_t j = 0; j < m; ++j) {
      double s = params.b1[j];
      for (std::uint32_t i = 0; i < n; ++i) s += params.w1[i * m + j] * matrix(i, t);
      layer1[t * m + j] = params.normalize1(j, s);
    }
  }
  return finish_forward(params, std::move(layer1));
}

ForwardResult forward_fp(const FpCnnParams& params, std::span<const std::int32_t> window) {
  const std::uint32_t m = params.shape.m, len = params.shape.history_len;
  check_window(params.shape, window.size());
  std::vector<double> layer1(static_cast<std::size_t>(len) * m);
  for (std::uint32_t t = 0; t < len; ++t) {
    const std::int32_t idx = window[t];
    for (std::uint32_t j = 0; j < m; ++j) {
      const double s = (idx == encoder::kPad ? 0.0 : params.w1[idx * m + j]) + params.b1[j];
      layer1[t * m + j] = params.normalize1(j, s);
    }
  }
  return finish_forward(params, std::move(layer1));
}

TernaryResult forward_ternary_reference(const TernaryCnnParams& params,
                                        std::span<const std::int32_t> window) {
  const std::uint32_t m = params.base.shape.m, len = params.base.shape.history_len;
  check_window(params.base.shape, window.size());
  std::int64_t P = 0;
  for (std::uint32_t t = 0; t < len; ++t) {
    const std::int32_t idx = window[t];
    if (idx == encoder::kPad) continue;
    for (std::uint32_t j = 0; j < m; ++j) {
      P += params.l1_codes[idx * m + j] * params.l2_codes[t * m + j];
    }
  }
  return {params.base.normalize2(static_cast<double>(P)) > 0.0, P};
}

bool predict(const FpCnnParams& params, std::span<const std::int32_t> window) {
  if (params.mode == Mode::ternary) return forward_ternary_reference(make_ternary(params), window).taken;
  return forward_fp(params, window).taken;
}

Gradients::Gradients(const CnnShape& shape)
    : w1(static_cast<std::size_t>(shape.index_space()) * shape.m, 0.0),
      b1(shape.m, 0.0),
      gamma1(shape.m, 0.0),
      beta1(shape.m, 0.0),
      w2(static_cast<std::size_t>(shape.history_len) * shape.m, 0.0) {}

void Gradients::zero() {
  for (auto* v : {&w1, &b1, &gamma1, &beta1, &w2}) std::fill(v->begin(), v->end(), 0.0);
  gamma2 = beta2 = 0.0;
}

std::vector<ParamGroup> trainable(FpCnnParams& p) {
  return {{"w1", p.w1},       {"b1", p.b1}, {"gamma1", p.gamma1},
          {"beta1", p.beta1}, {"w2", p.w2}, {"gamma2", std::span<double>(&p.gamma2, 1)},
          {"beta2", std::span<double>(&p.beta2, 1)}};
}

std::vector<ParamGroup> trainable(Gradients& g) {
  return {{"w1", g.w1},       {"b1", g.b1}, {"gamma1", g.gamma1},
          {"beta1", g.beta1}, {"w2", g.w2}, {"gamma2", std::span<double>(&g.gamma2, 1)},
          {"beta2", std::span<double>(&g.beta2, 1)}};
}

}  // namespace cnnbp::cnn
