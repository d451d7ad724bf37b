#include <cmath>
#include <numeric>

#include "cnnbp/cnn.hpp"
#include "cnnbp/error.hpp"
#include "cnnbp/rng.hpp"

namespace cnnbp::cnn {

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("train: epochs must be >= 1");
  if (batch_size == 0) throw ConfigError("train: batch_size must be >= 1");
  if (!(q > 0.0 && q < 1.0)) throw ConfigError("train: q must be in (0, 1)");
  if (!(adam.learning_rate > 0.0)) throw ConfigError("train: learning_rate must be > 0");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
    throw ConfigError("train: Adam betas must be in [0, 1)");
  }
  if (!(adam.epsilon > 0.0)) throw ConfigError("train: Adam epsilon must be > 0");
}

namespace {

class Adam {
 public:
  Adam(const AdamConfig& cfg, FpCnnParams& params) : cfg_(cfg) {
    for (const auto& g : trainable(params)) {
      m_.emplace_back(g.values.size(), 0.0);
      v_.emplace_back(g.values.size(), 0.0);
    }
  }

  void step(FpCnnParams& params, Gradients& grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    auto ps = trainable(params);
    auto gs = trainable(grads);
    for (std::size_t k = 0; k < ps.size(); ++k) {
      auto p = ps[k].values;
      auto g = gs[k].values;
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        p[i] -= cfg_.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.epsilon);
      }
    }
  }

 private:
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::uint64_t t_ = 0;
};

void clip_unit(std::vector<double>& v) {
  for (double& x : v) x = std::clamp(x, -1.0, 1.0);
}

void check_finite(const Gradients& g, std::uint32_t epoch, std::size_t batch) {
  auto bad = [](const std::vector<double>& v) {
    return std::any_of(v.begin(), v.end(), [](double x) { return !std::isfinite(x); });
  };
  if (bad(g.w1) || bad(g.b1) || bad(g.gamma1) || bad(g.beta1) || bad(g.w2) ||
      !std::isfinite(g.gamma2) || !std::isfinite(g.beta2)) {
    throw TrainingError("non-finite gradient at epoch " + std::to_string(epoch) + ", batch " +
                        std::to_string(batch));
  }
}

void check_batch_windows(const FpCnnParams& params, std::span<const std::int32_t> windows,
                         std::span<std::uint8_t> out) {
  if (windows.size() != out.size() * params.shape.history_len) {
    throw ConfigError("predict_batch: window buffer does not match output size");
  }
}

}  // namespace

CompiledModel::CompiledModel(const FpCnnParams& params) : params_(params) {
  params_.validate();
  const std::uint32_t n = params_.shape.index_space(), m = params_.shape.m;
  if (params_.mode == Mode::ternary) {
    const TernaryCnnParams tp = make_ternary(params_);
    act_.assign(tp.l1_codes.begin(), tp.l1_codes.end());
    pad_act_.assign(m, 0.0);
    w2e_.assign(tp.l2_codes.begin(), tp.l2_codes.end());
  } else {
    act_.resize(static_cast<std::size_t>(n) * m);
    for (std::uint32_t i = 0; i < n; ++i)
      for (std::uint32_t j = 0; j < m; ++j)
        act_[i * m + j] = params_.normalize1(j, params_.w1[i * m + j] + params_.b1[j]);
    pad_act_.resize(m);
    for (std::uint32_t j = 0; j < m; ++j) pad_act_[j] = params_.normalize1(j, params_.b1[j]);
    w2e_ = params_.w2;
  }
}

double CompiledModel::raw(const std::int32_t* window) const {
  const std::size_t m = params_.shape.m, L = params_.shape.history_len;
  double z = 0.0;
  for (std::size_t t = 0; t < L; ++t) {
    const std::int32_t idx = window[t];
    const double* a = idx == encoder::kPad ? pad_act_.data() : act_.data() + static_cast<std::size_t>(idx) * m;
    const double* w = w2e_.data() + t * m;
    for (std::size_t j = 0; j < m; ++j) z += w[j] * a[j];
  }
  return z;
}

bool CompiledModel::predict(const std::int32_t* window) const { return params_.normalize2(raw(window)) > 0.0; }


TrainResult train(FpCnnParams init, const std::vector<encoder::Sample>& dataset,
                  const TrainConfig& config) {
  config.validate();
  init.mode = config.mode;
  init.q = config.q;
  init.validate();
  if (dataset.empty()) throw ConfigError("train: empty dataset");
  const std::size_t L = init.shape.history_len;
  const std::size_t N = dataset.size();
  for (const auto& s : dataset) {
    if (s.window.size() != L) throw ConfigError("train: sample window length mismatch");
  }

  TrainResult result;
  result.params = std::move(init);
  FpCnnParams& params = result.params;
  const bool tern = params.mode == Mode::ternary;
  if (tern) {
    clip_unit(params.w1);
    clip_unit(params.w2);
  }

  Rng rng(config.seed);
  std::vector<std::size_t> order(N);
  std::iota(order.begin(), order.end(), 0);
  Adam adam(config.adam, params);
  Gradients grads(params.shape);
  BatchNormStats stats;
  std::vector<std::int32_t> win;
  std::vector<std::uint8_t> labels;
  const double keep = kNormMomentum, take = 1.0 - kNormMomentum;

  for (std::uint32_t epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t seen = 0, correct = 0, batch_no = 0;
    for (std::size_t start = 0; start < N; start += config.batch_size, ++batch_no) {
      const std::size_t size = std::min<std::size_t>(config.batch_size, N - start);
      // A single-sample batch has no variance to normalize by.
      if (size < 2 && N >= 2) continue;
      win.resize(size * L);
      labels.resize(size);
      for (std::size_t b = 0; b < size; ++b) {
        const auto& s = dataset[order[start + b]];
        std::copy(s.window.begin(), s.window.end(), win.begin() + static_cast<std::ptrdiff_t>(b * L));
        labels[b] = s.taken ? 1 : 0;
      }
      const double loss = loss_and_grad_omp(params, BatchView{win, labels}, &grads, &stats);
      if (!std::isfinite(loss)) {
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(batch_no));
      }
      check_finite(grads, epoch, batch_no);
      adam.step(params, grads);
      if (tern) {
        clip_unit(params.w1);
        clip_unit(params.w2);
      }
      for (std::size_t j = 0; j < params.shape.m; ++j) {
        params.mean1[j] = keep * params.mean1[j] + take * stats.mean1[j];
        params.var1[j] = keep * params.var1[j] + take * stats.var1[j];
      }
      params.mean2 = keep * params.mean2 + take * stats.mean2;
      params.var2 = keep * params.var2 + take * stats.var2;

      loss_sum += loss * static_cast<double>(size);
      seen += size;
      correct += stats.correct;
    }
    result.epoch_loss.push_back(seen ? loss_sum / static_cast<double>(seen) : 0.0);
    result.epoch_accuracy.push_back(seen ? static_cast<double>(correct) / static_cast<double>(seen) : 0.0);
  }
  return result;
}

void predict_batch_serial(const FpCnnParams& params, std::span<const std::int32_t> windows,
                          std::span<std::uint8_t> out) {
  check_batch_windows(params, windows, out);
  const CompiledModel model(params);
  const std::size_t L = params.shape.history_len;
  for (std::size_t s = 0; s < out.size(); ++s) out[s] = model.predict(windows.data() + s * L) ? 1 : 0;
}

void predict_batch_omp(const FpCnnParams& params, std::span<const std::int32_t> windows,
                       std::span<std::uint8_t> out) {
  check_batch_windows(params, windows, out);
  const CompiledModel model(params);
  const std::size_t L = params.shape.history_len;
  const auto n = static_cast<std::int64_t>(out.size());
#pragma omp parallel for schedule(static)
  for (std::int64_t s = 0; s < n; ++s) out[s] = model.predict(windows.data() + s * L) ? 1 : 0;
}

EvalResult evaluate(const FpCnnParams& params, const std::vector<encoder::Sample>& dataset) {
  if (dataset.empty()) throw ConfigError("evaluate: empty dataset");
  params.validate();
  const CompiledModel model(params);
  const std::size_t L = params.shape.history_len;
  for (const auto& s : dataset) {
    if (s.window.size() != L) throw ConfigError("evaluate: sample window length mismatch");
  }
  const auto n = static_cast<std::int64_t>(dataset.size());
  std::int64_t wrong = 0;
#pragma omp parallel for schedule(static) reduction(+ : wrong)
  for (std::int64_t i = 0; i < n; ++i) {
    const auto& s = dataset[i];
    if (model.predict(s.window.data()) != s.taken) ++wrong;
  }
  EvalResult r;
  r.count = dataset.size();
  r.mispredictions = static_cast<std::size_t>(wrong);
  r.accuracy = 1.0 - static_cast<double>(r.mispredictions) / static_cast<double>(r.count);
  return r;
}

}  // namespace cnnbp::cnn
