#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "cnnbp/baseline.hpp"
#include "cnnbp/cnn.hpp"
#include "cnnbp/deploy.hpp"
#include "cnnbp/encoder.hpp"
#include "cnnbp/trace.hpp"

namespace cnnbp::harness {

// ------------------------------------------------------------ configuration

/// A workload is either a trace file or a synthetic generator setting.
struct WorkloadSpec {
  enum class Kind { file, listing1, varposition };

  Kind kind = Kind::listing1;
  std::filesystem::path path;
  trace::SynthConfig synth;
  std::uint32_t position_spread = 25;

  /// File stem for traces, synth.workload_id otherwise.
  std::string id() const;
};

trace::Trace load_workload(const WorkloadSpec& spec);

struct ExperimentConfig {
  std::vector<WorkloadSpec> workloads;
  baseline::BaselineKind baseline = baseline::BaselineKind::tage;
  baseline::TageLiteConfig tage;
  baseline::PerceptronConfig perceptron;
  baseline::H2pScreenConfig screen;
  encoder::EncoderConfig encoder;
  std::uint32_t filters = 32;
  /// Training hyperparameters shared by both modes; mode and seed are set
  /// per job.
  cnn::TrainConfig train;
  /// Learning rate for ternary training; train.adam.learning_rate when unset.
  /// Ternary weights start below the quantization threshold and need larger
  /// steps to leave zero.
  std::optional<double> ternary_learning_rate = 1e-2;
  std::vector<cnn::Mode> modes{cnn::Mode::full_precision, cnn::Mode::ternary};
  std::uint32_t min_workloads_per_h2p = 3;
  std::filesystem::path output_dir = "out";
  std::uint64_t seed = 1;

  cnn::CnnShape shape() const { return {encoder.p, filters, encoder.history_len}; }
  cnn::TrainConfig train_config(cnn::Mode mode, std::uint64_t seed) const;
  baseline::Baseline make_baseline() const;

  /// Field-level checks; throws ConfigError.
  void validate() const;
  /// validate() plus the cross-validation requirements (>= 2 workloads,
  /// 2 <= min_workloads_per_h2p <= workload count).
  void validate_crossval() const;
};

/// Strict JSON: unknown keys, wrong types and out-of-range values throw
/// ConfigError. Relative trace paths resolve against `base_dir`.
ExperimentConfig parse_config(const std::string& json_text, const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);
std::string config_to_json(const ExperimentConfig& config);

// ---------------------------------------------------------------- helpers

/// Per-H2P predictor that sees every branch of the stream and is asked only
/// for its own static branch.
class HelperPredictor {
 public:
  virtual ~HelperPredictor() = default;
  virtual bool predict() const = 0;
  /// Appends a resolved branch to the helper's history.
  virtual void observe(std::uint64_t ip, bool taken) = 0;
};

/// Full-precision helper over a rolling window of encoded indices.
class FpHelper final : public HelperPredictor {
 public:
  explicit FpHelper(const cnn::FpCnnParams& params);
  bool predict() const override;
  void observe(std::uint64_t ip, bool taken) override;

 private:
  cnn::CompiledModel model_;
  encoder::HistoryWindow window_;
  mutable std::vector<std::int32_t> scratch_;
};

/// Bit-packed ternary helper (table + FIFO + popcount).
class TpHelper final : public HelperPredictor {
 public:
  explicit TpHelper(const cnn::FpCnnParams& params);
  explicit TpHelper(deploy::DeployedHelper helper);
  bool predict() const override;
  void observe(std::uint64_t ip, bool taken) override;
  const deploy::DeployedHelper& deployed() const { return helper_; }

 private:
  deploy::DeployedHelper helper_;
  deploy::FifoBuffer fifo_;
};

/// FpHelper or TpHelper according to params.mode.
std::unique_ptr<HelperPredictor> make_helper(const cnn::FpCnnParams& params);

using HelperSet = std::map<std::uint64_t, std::unique_ptr<HelperPredictor>>;

struct OverrideStats {
  baseline::StatsMap baseline;  // baseline alone
  baseline::StatsMap combined;  // baseline with helper overrides
};

/// Runs the baseline over the trace, replacing its prediction with the
/// helper's for ips in `helpers`. The baseline trains on actual outcomes
/// either way, so `baseline` equals a plain simulate_baseline run.
OverrideStats simulate_with_helpers(const trace::Trace& trace, baseline::Baseline& base, HelperSet& helpers);

/// total mispredictions * 1000 / instruction_count. Throws ConfigError when
/// the count is missing or zero.
double compute_mpki(const baseline::StatsMap& stats, std::optional<std::uint64_t> instruction_count);

// ----------------------------------------------------------- cross-validation

/// A loaded trace with its baseline statistics and screened H2Ps.
struct Workload {
  std::string id;
  trace::Trace trace;
  baseline::StatsMap stats;
  std::vector<std::uint64_t> h2ps;
};

Workload prepare_workload(const ExperimentConfig& config, const WorkloadSpec& spec);

/// H2Ps screened in at least min_workloads_per_h2p workloads.
std::set<std::uint64_t> eligible_h2ps(const std::vector<Workload>& workloads, std::uint32_t min_workloads);

/// One evaluated (fold, h2p, mode, held-out workload) combination.
struct EvalRow {
  std::uint32_t fold = 0;
  std::string train_workload;
  std::uint64_t h2p = 0;
  cnn::Mode mode = cnn::Mode::full_precision;
  std::string heldout;
  std::uint64_t occurrences = 0;
  std::uint64_t baseline_mispredictions = 0;
  std::uint64_t helper_mispredictions = 0;
  /// (baseline - helper) / baseline
  double reduction = 0.0;

  friend bool operator==(const EvalRow&, const EvalRow&) = default;
};

struct SkipRow {
  std::uint32_t fold = 0;
  std::string train_workload;
  std::uint64_t h2p = 0;
  cnn::Mode mode = cnn::Mode::full_precision;
  std::string heldout;
  std::string reason;

  friend bool operator==(const SkipRow&, const SkipRow&) = default;
};

/// Whole-trace MPKI of one held-out workload with and without the fold's
/// helpers of one mode.
struct MpkiRow {
  std::uint32_t fold = 0;
  cnn::Mode mode = cnn::Mode::full_precision;
  std::string heldout;
  std::uint64_t instructions = 0;
  std::uint64_t baseline_mispredictions = 0;
  std::uint64_t combined_mispredictions = 0;
  double mpki_before = 0.0;
  double mpki_after = 0.0;

  friend bool operator==(const MpkiRow&, const MpkiRow&) = default;
};

struct TrainedHelper {
  std::uint64_t h2p = 0;
  cnn::Mode mode = cnn::Mode::full_precision;
  cnn::FpCnnParams params;
  std::size_t training_samples = 0;
  double final_training_loss = 0.0;
};

struct FoldResult {
  std::uint32_t fold = 0;
  std::string train_workload;
  std::vector<std::uint64_t> h2ps;  // trained in this fold, ascending
  std::vector<TrainedHelper> helpers;  // by (h2p, mode order in config)
  std::vector<EvalRow> rows;
  std::vector<SkipRow> skipped;
  std::vector<MpkiRow> mpki;
  std::vector<std::string> warnings;
};

/// Trains helpers for every H2P of `train` that is in `eligible`, then
/// evaluates them on each held-out workload. Held-outs must not include
/// the training workload. Training jobs run in parallel; output order is
/// (h2p, mode, held-out) regardless of scheduling.
FoldResult run_fold(const ExperimentConfig& config, std::uint32_t fold_index, const Workload& train,
                    const std::vector<const Workload*>& heldouts, const std::set<std::uint64_t>& eligible);

/// Mean over folds of the per-fold reduction (itself a mean over held-outs).
struct H2pSummary {
  std::uint64_t h2p = 0;
  cnn::Mode mode = cnn::Mode::full_precision;
  std::uint32_t folds = 0;
  double mean_reduction = 0.0;
  bool winner = false;

  friend bool operator==(const H2pSummary&, const H2pSummary&) = default;
};

struct ModeSummary {
  cnn::Mode mode = cnn::Mode::full_precision;
  std::uint32_t h2ps = 0;
  std::uint32_t winners = 0;
  double pct_winners = 0.0;
  /// Mean reduction over winning H2Ps only (0 when there are none).
  double mean_reduction_winners = 0.0;
  /// Mean reduction over every evaluated H2P.
  double mean_reduction_all = 0.0;
  /// Pooled over all MPKI rows: sum of mispredictions * 1000 / sum of instructions.
  double mpki_before = 0.0;
  double mpki_after = 0.0;
  std::uint64_t storage_bytes_per_helper = 0;

  friend bool operator==(const ModeSummary&, const ModeSummary&) = default;
};

struct LatencyConstant {
  std::string name;
  std::string value;
  std::string source;

  friend bool operator==(const LatencyConstant&, const LatencyConstant&) = default;
};

/// Fixed literature values, reported as-is and never measured here.
std::vector<LatencyConstant> latency_metadata();

struct EvalReport {
  /// The only run-dependent field; everything else is a pure function of the config.
  std::string generated_at;
  std::string config_json;
  std::vector<std::string> workloads;
  std::vector<std::uint64_t> eligible_h2ps;
  std::uint32_t num_folds = 0;
  std::vector<EvalRow> rows;
  std::vector<SkipRow> skipped;
  std::vector<MpkiRow> mpki;
  std::vector<H2pSummary> h2p_summaries;
  std::vector<ModeSummary> mode_summaries;
  std::vector<LatencyConstant> latency;
  std::vector<std::string> warnings;

  bool empty() const { return rows.empty(); }
  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

/// Recomputes H2P and mode summaries from rows and MPKI rows. Row order
/// matters only for floating-point summation: reductions are averaged over
/// held-outs in row order, then over folds in ascending fold order.
void summarize(EvalReport& report, const ExperimentConfig& config);

/// Every workload trains one fold. Throws ConfigError on an invalid config.
/// With no eligible H2P the report is empty and carries a warning.
EvalReport run_crossval(const ExperimentConfig& config);

// ---------------------------------------------------------------- reporting

std::string report_to_json(const EvalReport& report);
EvalReport report_from_json(const std::string& text);

/// Columns fold,train_workload,h2p,mode,heldout,occurrences,
/// baseline_mispredictions,helper_mispredictions,reduction.
void write_rows_csv(const std::vector<EvalRow>& rows, std::ostream& out);
std::vector<EvalRow> read_rows_csv(std::istream& in);
void write_skips_csv(const std::vector<SkipRow>& rows, std::ostream& out);
/// Per-mode table: H2Ps, % winners, reduction (winners and all), MPKI.
std::string summary_table(const EvalReport& report);

struct ReportFiles {
  std::filesystem::path json, rows_csv, skips_csv, summary;
};

/// Writes report.json, folds.csv, skipped.csv and summary.txt into dir.
ReportFiles emit_report(const EvalReport& report, const std::filesystem::path& dir);

/// Current UTC time as ISO-8601.
std::string utc_timestamp();

}  // namespace cnnbp::harness
