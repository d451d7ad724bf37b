// OpenMP training kernel. Per-sample work runs in parallel; every reduction
// goes through per-sample partials summed serially in sample order, so the
// result does not depend on the thread count.

#include <cmath>

#include "cnnbp/cnn.hpp"
#include "cnnbp/error.hpp"
#include "kernel_common.hpp"

namespace cnnbp::cnn {

namespace {

struct Workspace {
  std::vector<double> xhat, act, w2e, part_a, part_b, z, dz;
};

Workspace& workspace() {
  thread_local Workspace ws;
  return ws;
}

}  // namespace

double loss_and_grad_omp(const FpCnnParams& params, const BatchView& batch, Gradients* grads,
                         BatchNormStats* stats) {
  const std::int64_t B = static_cast<std::int64_t>(batch.size());
  const std::size_t L = params.shape.history_len, m = params.shape.m;
  if (B == 0 || batch.windows.size() != static_cast<std::size_t>(B) * L) {
    throw ConfigError("batch shape mismatch");
  }
  const bool tern = params.mode == Mode::ternary;
  const double q = params.q;
  const double NP = static_cast<double>(B) * static_cast<double>(L);
  const std::size_t per_sample = L * m;
  const std::int32_t* win = batch.windows.data();

  Workspace& ws = workspace();
  ws.xhat.resize(B * per_sample);
  ws.act.resize(B * per_sample);
  ws.w2e.resize(per_sample);
  ws.part_a.assign(B * m, 0.0);
  ws.part_b.assign(B * m, 0.0);
  ws.z.assign(B, 0.0);
  ws.dz.resize(B);
  double* xhat = ws.xhat.data();
  double* act = ws.act.data();
  double* w2e = ws.w2e.data();
  double* pa = ws.part_a.data();
  double* pb = ws.part_b.data();
  double* z = ws.z.data();

  for (std::size_t k = 0; k < per_sample; ++k) w2e[k] = tern ? ternarize(params.w2[k], q) : params.w2[k];
  const double* w1 = params.w1.data();
  const double* b1 = params.b1.data();

  // Layer-1 scores and per-sample channel sums.
#pragma omp parallel for schedule(static)
  for (std::int64_t b = 0; b < B; ++b) {
    double* s = xhat + b * per_sample;
    double* sum = pa + b * m;
    for (std::size_t t = 0; t < L; ++t) {
      const std::int32_t idx = win[b * L + t];
      const double* row = idx == encoder::kPad ? nullptr : w1 + static_cast<std::size_t>(idx) * m;
      for (std::size_t j = 0; j < m; ++j) {
        const double v = (row ? row[j] : 0.0) + b1[j];
        s[t * m + j] = v;
        sum[j] += v;
      }
    }
  }
  std::vector<double> mu(m, 0.0), var(m, 0.0), sig(m);
  for (std::int64_t b = 0; b < B; ++b)
    for (std::size_t j = 0; j < m; ++j) mu[j] += pa[b * m + j];
  for (std::size_t j = 0; j < m; ++j) mu[j] /= NP;

#pragma omp parallel for schedule(static)
  for (std::int64_t b = 0; b < B; ++b) {
    const double* s = xhat + b * per_sample;
    double* sq = pb + b * m;
    for (std::size_t t = 0; t < L; ++t)
      for (std::size_t j = 0; j < m; ++j) {
        const double d = s[t * m + j] - mu[j];
        sq[j] += d * d;
      }
  }
  for (std::int64_t b = 0; b < B; ++b)
    for (std::size_t j = 0; j < m; ++j) var[j] += pb[b * m + j];
  for (std::size_t j = 0; j < m; ++j) {
    var[j] /= NP;
    sig[j] = std::sqrt(var[j] + kNormEps);
  }

  // Normalize, activate, Layer 2.
  const double* gamma = params.gamma1.data();
  const double* beta = params.beta1.data();
#pragma omp parallel for schedule(static)
  for (std::int64_t b = 0; b < B; ++b) {
    double* x = xhat + b * per_sample;
    double* a = act + b * per_sample;
    double acc = 0.0;
    for (std::size_t t = 0; t < L; ++t) {
      const bool pad = win[b * L + t] == encoder::kPad;
      for (std::size_t j = 0; j < m; ++j) {
        const std::size_t k = t * m + j;
        x[k] = (x[k] - mu[j]) / sig[j];
        const double y = gamma[j] * x[k] + beta[j];
        a[k] = tern ? (pad ? 0.0 : ternarize(y, q)) : y;
        acc += w2e[k] * a[k];
      }
    }
    z[b] = acc;
  }

  double mu2 = 0.0, var2 = 0.0;
  for (std::int64_t b = 0; b < B; ++b) mu2 += z[b];
  mu2 /= static_cast<double>(B);
  for (std::int64_t b = 0; b < B; ++b) var2 += (z[b] - mu2) * (z[b] - mu2);
  var2 /= static_cast<double>(B);
  const double sig2 = std::sqrt(var2 + kNormEps);

  double loss = 0.0;
  std::size_t correct = 0;
  double dgamma2 = 0.0, dbeta2 = 0.0, mean_dzhat = 0.0, mean_dzhat_zhat = 0.0;
  for (std::int64_t b = 0; b < B; ++b) {
    const double zhat = (z[b] - mu2) / sig2;
    const double o = params.gamma2 * zhat + params.beta2;
    const double label = batch.labels[b] ? 1.0 : 0.0;
    loss += detail::softplus(o) - label * o;
    if ((o > 0.0) == (batch.labels[b] != 0)) ++correct;
    const double d_o = (detail::sigmoid(o) - label) / static_cast<double>(B);
    dgamma2 += d_o * zhat;
    dbeta2 += d_o;
    ws.dz[b] = d_o * params.gamma2;  // dzhat for now
    mean_dzhat += ws.dz[b];
    mean_dzhat_zhat += ws.dz[b] * zhat;
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

  mean_dzhat /= static_cast<double>(B);
  mean_dzhat_zhat /= static_cast<double>(B);
  double* dz = ws.dz.data();
  for (std::int64_t b = 0; b < B; ++b) {
    const double zhat = (z[b] - mu2) / sig2;
    dz[b] = (dz[b] - mean_dzhat - zhat * mean_dzhat_zhat) / sig2;
  }
  grads->gamma2 = dgamma2;
  grads->beta2 = dbeta2;

  double* gw2 = grads->w2.data();
  const double* w2 = params.w2.data();
#pragma omp parallel for schedule(static)
  for (std::int64_t k = 0; k < static_cast<std::int64_t>(per_sample); ++k) {
    double g = 0.0;
    for (std::int64_t b = 0; b < B; ++b) g += dz[b] * act[b * per_sample + k];
    gw2[k] = (tern && std::abs(w2[k]) > 1.0) ? 0.0 : g;
  }

  // act becomes dy; partial sums of dy (pa) and dy * xhat (pb).
  std::fill(ws.part_a.begin(), ws.part_a.end(), 0.0);
  std::fill(ws.part_b.begin(), ws.part_b.end(), 0.0);
#pragma omp parallel for schedule(static)
  for (std::int64_t b = 0; b < B; ++b) {
    const double* x = xhat + b * per_sample;
    double* d = act + b * per_sample;
    double* sdy = pa + b * m;
    double* sdyx = pb + b * m;
    for (std::size_t t = 0; t < L; ++t) {
      const bool pad = win[b * L + t] == encoder::kPad;
      for (std::size_t j = 0; j < m; ++j) {
        const std::size_t k = t * m + j;
        double g = dz[b] * w2e[k];
        if (tern && (pad || std::abs(gamma[j] * x[k] + beta[j]) > 1.0)) g = 0.0;
        d[k] = g;
        sdy[j] += g;
        sdyx[j] += g * x[k];
      }
    }
  }
  std::vector<double> dbeta(m, 0.0), dgamma(m, 0.0);
  for (std::int64_t b = 0; b < B; ++b)
    for (std::size_t j = 0; j < m; ++j) {
      dbeta[j] += pa[b * m + j];
      dgamma[j] += pb[b * m + j];
    }
  std::vector<double> mean_dx(m), mean_dx_x(m);
  for (std::size_t j = 0; j < m; ++j) {
    mean_dx[j] = gamma[j] * dbeta[j] / NP;
    mean_dx_x[j] = gamma[j] * dgamma[j] / NP;
  }

  // act becomes ds; pa holds per-sample db1 partials.
  std::fill(ws.part_a.begin(), ws.part_a.end(), 0.0);
#pragma omp parallel for schedule(static)
  for (std::int64_t b = 0; b < B; ++b) {
    const double* x = xhat + b * per_sample;
    double* d = act + b * per_sample;
    double* sb = pa + b * m;
    for (std::size_t t = 0; t < L; ++t)
      for (std::size_t j = 0; j < m; ++j) {
        const std::size_t k = t * m + j;
        d[k] = (d[k] * gamma[j] - mean_dx[j] - x[k] * mean_dx_x[j]) / sig[j];
        sb[j] += d[k];
      }
  }
  for (std::size_t j = 0; j < m; ++j) {
    grads->beta1[j] = dbeta[j];
    grads->gamma1[j] = dgamma[j];
    double g = 0.0;
    for (std::int64_t b = 0; b < B; ++b) g += pa[b * m + j];
    grads->b1[j] = g;
  }

  double* gw1 = grads->w1.data();
  std::fill(grads->w1.begin(), grads->w1.end(), 0.0);
  // Each filter column is owned by one thread.
#pragma omp parallel for schedule(static)
  for (std::int64_t j = 0; j < static_cast<std::int64_t>(m); ++j) {
    for (std::int64_t b = 0; b < B; ++b)
      for (std::size_t t = 0; t < L; ++t) {
        const std::int32_t idx = win[b * L + t];
        if (idx != encoder::kPad) gw1[static_cast<std::size_t>(idx) * m + j] += act[b * per_sample + t * m + j];
      }
  }
  return loss;
}

}  // namespace cnnbp::cnn
