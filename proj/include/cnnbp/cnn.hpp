#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cnnbp/encoder.hpp"

namespace cnnbp::cnn {

enum class Mode { full_precision, ternary };

std::string to_string(Mode mode);
Mode mode_from_string(const std::string& text);

inline constexpr double kNormEps = 1e-5;
/// running = momentum * running + (1 - momentum) * batch
inline constexpr double kNormMomentum = 0.9;

struct CnnShape {
  std::uint32_t p = 8;
  std::uint32_t m = 32;
  std::uint32_t history_len = 200;

  std::uint32_t index_space() const { return 1u << p; }
  void validate() const;
  friend bool operator==(const CnnShape&, const CnnShape&) = default;
};

/// Two-layer CNN parameters.
///
/// Layer 1 is a width-1 convolution with m filters over the one-hot history
/// columns (w1 is 2^p x m, row-major by index) followed by per-filter
/// normalization. Layer 2 is a single linear filter over all positions and
/// filters (w2 is history_len x m, row-major by position, position
/// history_len-1 most recent) followed by a scalar normalization. The
/// normalizations apply y = (x - mean) * gamma / sqrt(var + eps) + beta with
/// running statistics at inference time.
struct FpCnnParams {
  CnnShape shape;
  Mode mode = Mode::full_precision;
  double q = 0.8;

  std::vector<double> w1, b1;
  std::vector<double> gamma1, beta1, mean1, var1;
  std::vector<double> w2;
  double gamma2 = 1.0, beta2 = 0.0, mean2 = 0.0, var2 = 1.0;

  double sigma1(std::uint32_t j) const;
  double sigma2() const;
  /// Layer-1 normalization of filter j applied to a pre-norm score.
  double normalize1(std::uint32_t j, double score) const;
  double normalize2(double logit) const;

  /// Dimensions agree with shape and every value is finite; throws otherwise.
  void validate() const;

  friend bool operator==(const FpCnnParams&, const FpCnnParams&) = default;
};

/// Uniform(-0.05, 0.05) weights, zero bias, unit gamma, zero beta.
FpCnnParams init_params(const CnnShape& shape, Mode mode, double q, std::uint64_t seed);

/// -1 if value <= -q, +1 if value >= q, else 0. Ties go away from zero.
constexpr std::int8_t quantize_ternary(double value, double q) {
  if (value >= q) return 1;
  if (value <= -q) return -1;
  return 0;
}

/// quantize_ternary after clipping to [-1, 1].
constexpr std::int8_t ternarize(double value, double q) {
  const double c = value > 1.0 ? 1.0 : (value < -1.0 ? -1.0 : value);
  return quantize_ternary(c, q);
}

/// Ternary view of trained parameters: folded Layer-1 codes per
/// (index, filter) and ternary Layer-2 weights per (position, filter).
struct TernaryCnnParams {
  FpCnnParams base;
  std::vector<std::int8_t> l1_codes;  // 2^p x m
  std::vector<std::int8_t> l2_codes;  // history_len x m
};

/// l1_codes[i, j] = quantize(normalize1_j(w1[i, j] + b1[j]), q);
/// l2_codes = ternarize(w2).
TernaryCnnParams make_ternary(const FpCnnParams& params);

struct ForwardResult {
  std::vector<double> layer1;  // normalized scores, history_len x m
  double logit = 0.0;          // normalized Layer-2 output
  bool taken = false;
};

/// Full-precision inference from a dense history matrix (explicit multiply).
ForwardResult forward_fp(const FpCnnParams& params, const encoder::HistoryMatrix& matrix);
/// Same computation from encoded indices via row lookup.
ForwardResult forward_fp(const FpCnnParams& params, std::span<const std::int32_t> window);

struct TernaryResult {
  bool taken = false;
  std::int64_t P = 0;  // integer ternary inner product
};

/// Deployed semantics without bit packing: pad positions contribute zero.
TernaryResult forward_ternary_reference(const TernaryCnnParams& params,
                                        std::span<const std::int32_t> window);

/// Inference-mode prediction for either mode.
bool predict(const FpCnnParams& params, std::span<const std::int32_t> window);

// ---------------------------------------------------------------- training

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct TrainConfig {
  std::uint32_t epochs = 40;
  std::size_t sample_budget = 5000;
  AdamConfig adam;
  std::uint32_t batch_size = 64;
  double q = 0.8;
  Mode mode = Mode::full_precision;
  std::uint64_t seed = 1;

  void validate() const;
};

struct Gradients {
  std::vector<double> w1, b1, gamma1, beta1, w2;
  double gamma2 = 0.0, beta2 = 0.0;

  explicit Gradients(const CnnShape& shape);
  void zero();
};

/// Named views over the trainable parameters (w1, b1, gamma1, beta1, w2,
/// gamma2, beta2), in that fixed order.
struct ParamGroup {
  const char* name;
  std::span<double> values;
};
std::vector<ParamGroup> trainable(FpCnnParams& params);
std::vector<ParamGroup> trainable(Gradients& grads);

/// Contiguous batch: `windows` holds batch x history_len encoded indices.
struct BatchView {
  std::span<const std::int32_t> windows;
  std::span<const std::uint8_t> labels;
  std::size_t size() const { return labels.size(); }
};

/// Batch statistics produced by a training-mode forward pass.
struct BatchNormStats {
  std::vector<double> mean1, var1;
  double mean2 = 0.0, var2 = 0.0;
  std::size_t correct = 0;
};

/// Mean sigmoid cross-entropy of a training-mode pass (batch statistics,
/// quantization with straight-through gradients in ternary mode) and its
/// gradient. Serial reference implementation.
double loss_and_grad_serial(const FpCnnParams& params, const BatchView& batch, Gradients* grads,
                            BatchNormStats* stats);
/// OpenMP implementation; deterministic for any thread count.
double loss_and_grad_omp(const FpCnnParams& params, const BatchView& batch, Gradients* grads,
                         BatchNormStats* stats);

struct TrainResult {
  FpCnnParams params;
  std::vector<double> epoch_loss;
  std::vector<double> epoch_accuracy;  // training-mode batch accuracy
};

/// Adam on mean sigmoid cross-entropy. Throws TrainingError on a
/// non-finite loss or gradient.
TrainResult train(FpCnnParams init, const std::vector<encoder::Sample>& dataset,
                  const TrainConfig& config);

// -------------------------------------------------------------- evaluation

struct EvalResult {
  std::size_t count = 0;
  std::size_t mispredictions = 0;
  double accuracy = 0.0;
};

/// Frozen-statistics evaluation. Throws ConfigError on an empty dataset.
EvalResult evaluate(const FpCnnParams& params, const std::vector<encoder::Sample>& dataset);

/// Frozen model with Layer-1 activations precomputed per index, so each
/// position costs one row lookup. Matches forward_fp / the ternary reference.
class CompiledModel {
 public:
  explicit CompiledModel(const FpCnnParams& params);

  const FpCnnParams& params() const { return params_; }
  /// Pre-normalization Layer-2 output for history_len encoded indices.
  double raw(const std::int32_t* window) const;
  bool predict(const std::int32_t* window) const;

 private:
  FpCnnParams params_;
  std::vector<double> act_;      // 2^p x m
  std::vector<double> pad_act_;  // m
  std::vector<double> w2e_;      // history_len x m, effective weights
};

/// Per-sample predictions, serial and OpenMP versions.
void predict_batch_serial(const FpCnnParams& params, std::span<const std::int32_t> windows,
                          std::span<std::uint8_t> out);
void predict_batch_omp(const FpCnnParams& params, std::span<const std::int32_t> windows,
                       std::span<std::uint8_t> out);

// ----------------------------------------------------------- serialization

/// JSON text with fixed field names; doubles printed in shortest
/// round-trip form.
std::string to_json_text(const FpCnnParams& params);
FpCnnParams from_json_text(const std::string& text);
void save_model(const FpCnnParams& params, const std::filesystem::path& path);
FpCnnParams load_model(const std::filesystem::path& path);

}  // namespace cnnbp::cnn
