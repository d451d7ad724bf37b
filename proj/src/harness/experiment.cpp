#include <algorithm>
#include <exception>
#include <mutex>

#include "cnnbp/error.hpp"
#include "cnnbp/harness.hpp"
#include "cnnbp/rng.hpp"

namespace cnnbp::harness {

FpHelper::FpHelper(const cnn::FpCnnParams& params)
    : model_(params), window_(params.shape.history_len), scratch_(params.shape.history_len) {}

bool FpHelper::predict() const {
  window_.copy_to(scratch_.data());
  return model_.predict(scratch_.data());
}

void FpHelper::observe(std::uint64_t ip, bool taken) {
  window_.push(static_cast<std::int32_t>(encoder::encode_index(ip, taken, model_.params().shape.p)));
}

TpHelper::TpHelper(const cnn::FpCnnParams& params) : TpHelper(deploy::build_helper(params)) {}

// Trace-driven evaluation never rolls back, so the undo log is disabled.
TpHelper::TpHelper(deploy::DeployedHelper helper) : helper_(std::move(helper)), fifo_(helper_.make_fifo(0)) {}

bool TpHelper::predict() const { return deploy::predict(helper_, fifo_).taken; }

void TpHelper::observe(std::uint64_t ip, bool taken) { deploy::fifo_update(fifo_, helper_.table, ip, taken); }

std::unique_ptr<HelperPredictor> make_helper(const cnn::FpCnnParams& params) {
  if (params.mode == cnn::Mode::ternary) return std::make_unique<TpHelper>(params);
  return std::make_unique<FpHelper>(params);
}

OverrideStats simulate_with_helpers(const trace::Trace& trace, baseline::Baseline& base, HelperSet& helpers) {
  OverrideStats out;
  for (const auto& r : trace.records) {
    const bool base_pred = base.predict(r.ip);
    bool pred = base_pred;
    if (auto it = helpers.find(r.ip); it != helpers.end()) pred = it->second->predict();
    auto& b = out.baseline[r.ip];
    auto& c = out.combined[r.ip];
    ++b.predictions;
    ++c.predictions;
    if (base_pred != r.taken) ++b.mispredictions;
    if (pred != r.taken) ++c.mispredictions;
    base.update(r.ip, r.taken);
    for (auto& [ip, h] : helpers) h->observe(r.ip, r.taken);
  }
  return out;
}

double compute_mpki(const baseline::StatsMap& stats, std::optional<std::uint64_t> instruction_count) {
  if (!instruction_count) throw ConfigError("mpki: trace has no instruction_count");
  if (*instruction_count == 0) throw ConfigError("mpki: instruction_count must be > 0");
  return static_cast<double>(baseline::total_mispredictions(stats)) * 1000.0 /
         static_cast<double>(*instruction_count);
}

Workload prepare_workload(const ExperimentConfig& config, const WorkloadSpec& spec) {
  Workload w;
  w.id = spec.id();
  w.trace = load_workload(spec);
  w.trace.validate();
  baseline::Baseline base = config.make_baseline();
  w.stats = baseline::simulate_baseline(w.trace, base);
  w.h2ps = baseline::screen_h2ps(w.stats, config.screen, w.trace.meta.instruction_count);
  return w;
}

std::set<std::uint64_t> eligible_h2ps(const std::vector<Workload>& workloads, std::uint32_t min_workloads) {
  std::map<std::uint64_t, std::uint32_t> count;
  for (const auto& w : workloads) {
    for (auto ip : w.h2ps) ++count[ip];
  }
  std::set<std::uint64_t> out;
  for (const auto& [ip, n] : count) {
    if (n >= min_workloads) out.insert(ip);
  }
  return out;
}

namespace {

// Runs body(i) for i in [0, n) across threads; rethrows the first failure
// (lowest index) after the loop.
template <typename Body>
void parallel_jobs(std::size_t n, Body body) {
  std::vector<std::exception_ptr> errors(n);
  const auto count = static_cast<std::int64_t>(n);
#pragma omp parallel for schedule(dynamic, 1)
  for (std::int64_t i = 0; i < count; ++i) {
    try {
      body(static_cast<std::size_t>(i));
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::uint64_t fp_storage_bytes(const cnn::CnnShape& s) {
  // Folded Layer-1 table and Layer-2 weights as 32-bit floats, plus threshold.
  return 4 * (static_cast<std::uint64_t>(s.index_space()) * s.m + static_cast<std::uint64_t>(s.history_len) * s.m) + 8;
}

}  // namespace

FoldResult run_fold(const ExperimentConfig& config, std::uint32_t fold_index, const Workload& train,
                    const std::vector<const Workload*>& heldouts, const std::set<std::uint64_t>& eligible) {
  for (const Workload* h : heldouts) {
    if (h->id == train.id) throw ConfigError("run_fold: training workload '" + train.id + "' is also held out");
  }
  FoldResult fold;
  fold.fold = fold_index;
  fold.train_workload = train.id;
  for (auto ip : train.h2ps) {
    if (eligible.contains(ip)) fold.h2ps.push_back(ip);
  }
  const std::size_t nmodes = config.modes.size();

  // Training: one independent job per (h2p, mode).
  fold.helpers.resize(fold.h2ps.size() * nmodes);
  const std::uint64_t fold_seed = derive_seed(config.seed, fold_index);
  parallel_jobs(fold.helpers.size(), [&](std::size_t job) {
    const std::uint64_t h2p = fold.h2ps[job / nmodes];
    const cnn::Mode mode = config.modes[job % nmodes];
    const std::uint64_t job_seed = derive_seed(fold_seed, h2p, static_cast<std::uint64_t>(mode));
    const auto samples = encoder::collect_training_set(train.trace, h2p, config.encoder,
                                                       config.train.sample_budget, derive_seed(job_seed, 1));
    const cnn::TrainConfig tc = config.train_config(mode, derive_seed(job_seed, 2));
    auto init = cnn::init_params(config.shape(), mode, tc.q, derive_seed(job_seed, 3));
    cnn::TrainResult r = cnn::train(std::move(init), samples, tc);
    TrainedHelper& th = fold.helpers[job];
    th.h2p = h2p;
    th.mode = mode;
    th.params = std::move(r.params);
    th.training_samples = samples.size();
    th.final_training_loss = r.epoch_loss.empty() ? 0.0 : r.epoch_loss.back();
  });

  // Evaluation: one simulation per (mode, held-out) with that mode's helpers.
  struct EvalOut {
    OverrideStats stats;
  };
  std::vector<EvalOut> evals(nmodes * heldouts.size());
  parallel_jobs(evals.size(), [&](std::size_t task) {
    const std::size_t mi = task / heldouts.size();
    const Workload& held = *heldouts[task % heldouts.size()];
    HelperSet helpers;
    for (std::size_t hi = 0; hi < fold.h2ps.size(); ++hi) {
      helpers[fold.h2ps[hi]] = make_helper(fold.helpers[hi * nmodes + mi].params);
    }
    baseline::Baseline base = config.make_baseline();
    evals[task].stats = simulate_with_helpers(held.trace, base, helpers);
  });

  for (std::size_t hi = 0; hi < fold.h2ps.size(); ++hi) {
    const std::uint64_t h2p = fold.h2ps[hi];
    for (std::size_t mi = 0; mi < nmodes; ++mi) {
      for (std::size_t k = 0; k < heldouts.size(); ++k) {
        const Workload& held = *heldouts[k];
        const OverrideStats& st = evals[mi * heldouts.size() + k].stats;
        auto skip = [&](std::string reason) {
          fold.skipped.push_back({fold_index, train.id, h2p, config.modes[mi], held.id, std::move(reason)});
        };
        const auto b = st.baseline.find(h2p);
        if (b == st.baseline.end() || b->second.predictions == 0) {
          skip("h2p does not occur in held-out workload");
          continue;
        }
        if (b->second.mispredictions == 0) {
          skip("baseline has no mispredictions on held-out workload");
          continue;
        }
        const auto& c = st.combined.at(h2p);
        EvalRow row;
        row.fold = fold_index;
        row.train_workload = train.id;
        row.h2p = h2p;
        row.mode = config.modes[mi];
        row.heldout = held.id;
        row.occurrences = b->second.predictions;
        row.baseline_mispredictions = b->second.mispredictions;
        row.helper_mispredictions = c.mispredictions;
        row.reduction = (static_cast<double>(row.baseline_mispredictions) -
                         static_cast<double>(row.helper_mispredictions)) /
                        static_cast<double>(row.baseline_mispredictions);
        fold.rows.push_back(std::move(row));
      }
    }
  }

  if (!fold.h2ps.empty()) {
    for (std::size_t mi = 0; mi < nmodes; ++mi) {
      for (std::size_t k = 0; k < heldouts.size(); ++k) {
        const Workload& held = *heldouts[k];
        const OverrideStats& st = evals[mi * heldouts.size() + k].stats;
        const auto ic = held.trace.meta.instruction_count;
        if (!ic || *ic == 0) {
          fold.warnings.push_back("no instruction_count for workload '" + held.id + "'; MPKI omitted");
          continue;
        }
        MpkiRow m;
        m.fold = fold_index;
        m.mode = config.modes[mi];
        m.heldout = held.id;
        m.instructions = *ic;
        m.baseline_mispredictions = baseline::total_mispredictions(st.baseline);
        m.combined_mispredictions = baseline::total_mispredictions(st.combined);
        m.mpki_before = compute_mpki(st.baseline, ic);
        m.mpki_after = compute_mpki(st.combined, ic);
        fold.mpki.push_back(std::move(m));
      }
    }
  }
  return fold;
}

std::vector<LatencyConstant> latency_metadata() {
  const std::string src = "published literature value; not measured by this tool";
  return {
      {"serial_computations.cnn_helper_2bit", "6", src},
      {"serial_computations.tage_sc_l_8kb", "34", src},
      {"serial_computations.tage_sc_l_64kb", "32", src},
      {"popcount_stages", "13 or 15 (depends on m)", src},
  };
}

void summarize(EvalReport& report, const ExperimentConfig& config) {
  report.h2p_summaries.clear();
  report.mode_summaries.clear();
  for (const cnn::Mode mode : config.modes) {
    // h2p -> fold -> (sum, count), summed in row order.
    std::map<std::uint64_t, std::map<std::uint32_t, std::pair<double, std::uint32_t>>> acc;
    for (const auto& r : report.rows) {
      if (r.mode != mode) continue;
      auto& [sum, n] = acc[r.h2p][r.fold];
      sum += r.reduction;
      ++n;
    }
    ModeSummary ms;
    ms.mode = mode;
    double sum_all = 0.0, sum_win = 0.0;
    for (const auto& [h2p, folds] : acc) {
      double fold_sum = 0.0;
      for (const auto& [f, sn] : folds) fold_sum += sn.first / static_cast<double>(sn.second);
      H2pSummary hs;
      hs.h2p = h2p;
      hs.mode = mode;
      hs.folds = static_cast<std::uint32_t>(folds.size());
      hs.mean_reduction = fold_sum / static_cast<double>(folds.size());
      hs.winner = hs.mean_reduction > 0.0;
      ++ms.h2ps;
      sum_all += hs.mean_reduction;
      if (hs.winner) {
        ++ms.winners;
        sum_win += hs.mean_reduction;
      }
      report.h2p_summaries.push_back(hs);
    }
    if (ms.h2ps > 0) {
      ms.pct_winners = 100.0 * static_cast<double>(ms.winners) / static_cast<double>(ms.h2ps);
      ms.mean_reduction_all = sum_all / static_cast<double>(ms.h2ps);
    }
    if (ms.winners > 0) ms.mean_reduction_winners = sum_win / static_cast<double>(ms.winners);
    std::uint64_t instr = 0, before = 0, after = 0;
    for (const auto& m : report.mpki) {
      if (m.mode != mode) continue;
      instr += m.instructions;
      before += m.baseline_mispredictions;
      after += m.combined_mispredictions;
    }
    if (instr > 0) {
      ms.mpki_before = static_cast<double>(before) * 1000.0 / static_cast<double>(instr);
      ms.mpki_after = static_cast<double>(after) * 1000.0 / static_cast<double>(instr);
    }
    const cnn::CnnShape s = config.shape();
    ms.storage_bytes_per_helper =
        mode == cnn::Mode::ternary ? deploy::storage_bytes(s.p, s.m, s.history_len) : fp_storage_bytes(s);
    report.mode_summaries.push_back(ms);
  }
}

EvalReport run_crossval(const ExperimentConfig& config) {
  config.validate_crossval();
  EvalReport report;
  report.generated_at = utc_timestamp();
  report.config_json = config_to_json(config);
  report.latency = latency_metadata();

  std::vector<Workload> workloads(config.workloads.size());
  parallel_jobs(workloads.size(), [&](std::size_t i) { workloads[i] = prepare_workload(config, config.workloads[i]); });
  for (const auto& w : workloads) report.workloads.push_back(w.id);

  const auto eligible = eligible_h2ps(workloads, config.min_workloads_per_h2p);
  report.eligible_h2ps.assign(eligible.begin(), eligible.end());
  if (eligible.empty()) {
    report.warnings.push_back("no H2P was screened in at least " + std::to_string(config.min_workloads_per_h2p) +
                              " workloads; nothing to evaluate");
    summarize(report, config);
    return report;
  }

  for (std::uint32_t f = 0; f < workloads.size(); ++f) {
    std::vector<const Workload*> heldouts;
    for (std::uint32_t k = 0; k < workloads.size(); ++k) {
      if (k != f) heldouts.push_back(&workloads[k]);
    }
    FoldResult fold = run_fold(config, f, workloads[f], heldouts, eligible);
    ++report.num_folds;
    auto append = [](auto& dst, auto& src) { dst.insert(dst.end(), src.begin(), src.end()); };
    append(report.rows, fold.rows);
    append(report.skipped, fold.skipped);
    append(report.mpki, fold.mpki);
    append(report.warnings, fold.warnings);
  }
  if (report.rows.empty()) report.warnings.push_back("no (h2p, held-out) pair could be evaluated");
  summarize(report, config);
  return report;
}

}  // namespace cnnbp::harness
