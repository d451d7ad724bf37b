#include <gtest/gtest.h>
#include <omp.h>

#include <cmath>
#include <vector>

#include "cnn_util.hpp"
#include "cnnbp/cnn.hpp"

using namespace cnnbp;
using testing_util::random_params;
using testing_util::random_window;

namespace {

struct Batch {
  std::vector<std::int32_t> windows;
  std::vector<std::uint8_t> labels;
  cnn::BatchView view() const { return {windows, labels}; }
};

Batch random_batch(Rng& rng, const cnn::CnnShape& s, std::size_t n) {
  Batch b;
  for (std::size_t i = 0; i < n; ++i) {
    const auto w = random_window(rng, s);
    b.windows.insert(b.windows.end(), w.begin(), w.end());
    b.labels.push_back(rng.coin() ? 1 : 0);
  }
  return b;
}

struct Outcome {
  double loss;
  std::vector<std::vector<double>> grads;
  cnn::BatchNormStats stats;
};

template <typename Fn>
Outcome run(Fn fn, const cnn::FpCnnParams& p, const Batch& b) {
  cnn::Gradients g(p.shape);
  Outcome o;
  o.loss = fn(p, b.view(), &g, &o.stats);
  for (const auto& group : cnn::trainable(g)) o.grads.emplace_back(group.values.begin(), group.values.end());
  return o;
}

void expect_close(double a, double b) {
  EXPECT_LE(std::abs(a - b), 1e-12 * std::max({1.0, std::abs(a), std::abs(b)})) << a << " vs " << b;
}

}  // namespace

TEST(Kernels, LossAndGradOmpMatchesSerial) {
  Rng rng(1);
  for (const cnn::Mode mode : {cnn::Mode::full_precision, cnn::Mode::ternary}) {
    for (int trial = 0; trial < 6; ++trial) {
      const cnn::CnnShape s{static_cast<std::uint32_t>(3 + rng.below(5)), static_cast<std::uint32_t>(1 + rng.below(12)),
                            static_cast<std::uint32_t>(4 + rng.below(60))};
      const cnn::FpCnnParams p = random_params(rng, s, mode, 0.6);
      const Batch b = random_batch(rng, s, 2 + rng.below(90));
      const Outcome ser = run(cnn::loss_and_grad_serial, p, b);
      const Outcome par = run(cnn::loss_and_grad_omp, p, b);
      expect_close(ser.loss, par.loss);
      ASSERT_EQ(ser.grads.size(), par.grads.size());
      for (std::size_t g = 0; g < ser.grads.size(); ++g) {
        for (std::size_t k = 0; k < ser.grads[g].size(); ++k) expect_close(ser.grads[g][k], par.grads[g][k]);
      }
      EXPECT_EQ(ser.stats.correct, par.stats.correct);
      for (std::size_t j = 0; j < s.m; ++j) {
        expect_close(ser.stats.mean1[j], par.stats.mean1[j]);
        expect_close(ser.stats.var1[j], par.stats.var1[j]);
      }
      expect_close(ser.stats.mean2, par.stats.mean2);
      expect_close(ser.stats.var2, par.stats.var2);
    }
  }
}

TEST(Kernels, LossAndGradOmpIndependentOfThreadCount) {
  Rng rng(2);
  const cnn::CnnShape s{8, 16, 100};
  const cnn::FpCnnParams p = random_params(rng, s, cnn::Mode::ternary, 0.6);
  const Batch b = random_batch(rng, s, 128);
  const int threads = omp_get_max_threads();
  omp_set_num_threads(1);
  const Outcome one = run(cnn::loss_and_grad_omp, p, b);
  omp_set_num_threads(std::max(2, threads));
  const Outcome many = run(cnn::loss_and_grad_omp, p, b);
  omp_set_num_threads(threads);
  EXPECT_EQ(one.loss, many.loss);
  EXPECT_EQ(one.grads, many.grads);
  EXPECT_EQ(one.stats.mean1, many.stats.mean1);
  EXPECT_EQ(one.stats.var1, many.stats.var1);
}

TEST(Kernels, PredictBatchOmpMatchesSerial) {
  Rng rng(3);
  for (const cnn::Mode mode : {cnn::Mode::full_precision, cnn::Mode::ternary}) {
    const cnn::CnnShape s{7, 6, 40};
    const cnn::FpCnnParams p = random_params(rng, s, mode, 0.6);
    const Batch b = random_batch(rng, s, 3000);
    std::vector<std::uint8_t> ser(b.labels.size()), par(b.labels.size());
    cnn::predict_batch_serial(p, b.windows, ser);
    cnn::predict_batch_omp(p, b.windows, par);
    EXPECT_EQ(ser, par);
    for (std::size_t i = 0; i < 200; ++i) {
      const std::span<const std::int32_t> w(b.windows.data() + i * s.history_len, s.history_len);
      EXPECT_EQ(ser[i] != 0, cnn::predict(p, w));
    }
  }
}
