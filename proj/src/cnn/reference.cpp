// Serial reference for the training-mode forward/backward pass. Kept simple
// and unoptimized; the OpenMP kernel is tested against it.

#include <cmath>

#include "cnnbp/cnn.hpp"
#include "cnnbp/error.hpp"
#include "kernel_common.hpp"

namespace cnnbp::cnn {

double loss_and_grad_serial(const FpCnnParams& params, const BatchView& batch, Gradients* grads,
                            BatchNormStats* stats) {
  const std::size_t B = batch.size();
  const std::size_t L = params.shape.history_len, m = params.shape.m;
  if (B == 0 || batch.windows.size() != B * L) throw ConfigError("batch shape mismatch");
  const bool tern = params.mode == Mode::ternary;
  const double NP = static_cast<double>(B * L);
  auto at = [&](std::size_t b, std::size_t t, std::size_t j) { return (b * L + t) * m + j; };

  std::vector<double> w2e(params.w2.size());
  for (std::size_t k = 0; k < w2e.size(); ++k) w2e[k] = tern ? ternarize(params.w2[k], params.q) : params.w2[k];

  std::vector<double> s(B * L * m), xhat(B * L * m), y(B * L * m), a(B * L * m);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < L; ++t) {
      const std::int32_t idx = batch.windows[b * L + t];
      for (std::size_t j = 0; j < m; ++j)
        s[at(b, t, j)] = (idx == encoder::kPad ? 0.0 : params.w1[idx * m + j]) + params.b1[j];
    }

  std::vector<double> mu(m, 0.0), var(m, 0.0), sig(m);
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t t = 0; t < L; ++t) mu[j] += s[at(b, t, j)];
    mu[j] /= NP;
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t t = 0; t < L; ++t) var[j] += (s[at(b, t, j)] - mu[j]) * (s[at(b, t, j)] - mu[j]);
    var[j] /= NP;
    sig[j] = std::sqrt(var[j] + kNormEps);
  }

  std::vector<double> z(B, 0.0);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < L; ++t) {
      const bool pad = batch.windows[b * L + t] == encoder::kPad;
      for (std::size_t j = 0; j < m; ++j) {
        const std::size_t k = at(b, t, j);
        xhat[k] = (s[k] - mu[j]) / sig[j];
        y[k] = params.gamma1[j] * xhat[k] + params.beta1[j];
        a[k] = tern ? (pad ? 0.0 : ternarize(y[k], params.q)) : y[k];
        z[b] += w2e[t * m + j] * a[k];
      }
    }

  double mu2 = 0.0, var2 = 0.0;
  for (double v : z) mu2 += v;
  mu2 /= static_cast<double>(B);
  for (double v : z) var2 += (v - mu2) * (v - mu2);
  var2 /= static_cast<double>(B);
  const double sig2 = std::sqrt(var2 + kNormEps);

  std::vector<double> zhat(B), o(B);
  double loss = 0.0;
  std::size_t correct = 0;
  for (std::size_t b = 0; b < B; ++b) {
    zhat[b] = (z[b] - mu2) / sig2;
    o[b] = params.gamma2 * zhat[b] + params.beta2;
    const double label = batch.labels[b] ? 1.0 : 0.0;
    loss += detail::softplus(o[b]) - label * o[b];
    if ((o[b] > 0.0) == (batch.labels[b] != 0)) ++correct;
  }
  loss /= static_cast<double>(B);

  if (stats) {
    stats->mean1 = mu;
    stats->var1 = var;
    stats->mean2 = mu2;
    stats->var2 = var2;
    stats->correct = correct;
  }
  if (!grads) return loss;
  grads->zero();

  std::vector<double> dzhat(B), dz(B);
  double mean_dzhat = 0.0, mean_dzhat_zhat = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    const double label = batch.labels[b] ? 1.0 : 0.0;
    const double d_o = (detail::sigmoid(o[b]) - label) / static_cast<double>(B);
    grads->gamma2 += d_o * zhat[b];
    grads->beta2 += d_o;
    dzhat[b] = d_o * params.gamma2;
    mean_dzhat += dzhat[b];
    mean_dzhat_zhat += dzhat[b] * zhat[b];
  }
  mean_dzhat /= static_cast<double>(B);
  mean_dzhat_zhat /= static_cast<double>(B);
  for (std::size_t b = 0; b < B; ++b) dz[b] = (dzhat[b] - mean_dzhat - zhat[b] * mean_dzhat_zhat) / sig2;

  for (std::size_t t = 0; t < L; ++t)
    for (std::size_t j = 0; j < m; ++j) {
      double g = 0.0;
      for (std::size_t b = 0; b < B; ++b) g += dz[b] * a[at(b, t, j)];
      const std::size_t k = t * m + j;
      grads->w2[k] = (tern && std::abs(params.w2[k]) > 1.0) ? 0.0 : g;
    }

  std::vector<double> dy(B * L * m);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < L; ++t) {
      const bool pad = batch.windows[b * L + t] == encoder::kPad;
      for (std::size_t j = 0; j < m; ++j) {
        const std::size_t k = at(b, t, j);
        double g = dz[b] * w2e[t * m + j];
        if (tern && (pad || std::abs(y[k]) > 1.0)) g = 0.0;
        dy[k] = g;
        grads->beta1[j] += g;
        grads->gamma1[j] += g * xhat[k];
      }
    }

  for (std::size_t j = 0; j < m; ++j) {
    // mean(dxhat) and mean(dxhat * xhat) with dxhat = dy * gamma
    const double mean_dx = params.gamma1[j] * grads->beta1[j] / NP;
    const double mean_dx_x = params.gamma1[j] * grads->gamma1[j] / NP;
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t t = 0; t < L; ++t) {
        const std::size_t k = at(b, t, j);
        const double ds = (dy[k] * params.gamma1[j] - mean_dx - xhat[k] * mean_dx_x) / sig[j];
        grads->b1[j] += ds;
        const std::int32_t idx = batch.windows[b * L + t];
        if (idx != encoder::kPad) grads->w1[idx * m + j] += ds;
      }
  }
  return loss;
}

}  // namespace cnnbp::cnn
