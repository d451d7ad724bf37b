// Command-line front end: trace generation, baseline simulation, screening,
// helper training/deployment/evaluation and cross-validation.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "cnnbp/baseline.hpp"
#include "cnnbp/cnn.hpp"
#include "cnnbp/deploy.hpp"
#include "cnnbp/encoder.hpp"
#include "cnnbp/error.hpp"
#include "cnnbp/harness.hpp"
#include "cnnbp/rng.hpp"
#include "cnnbp/trace.hpp"

namespace fs = std::filesystem;
using namespace cnnbp;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitEmpty = 2;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string mode;
  std::string baseline;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "Experiment config (JSON)");
  cmd->add_option("--seed", c.seed, "Seed override");
  cmd->add_option("--out", c.out, "Output file or directory");
  cmd->add_option("--mode", c.mode, "Helper mode")->check(CLI::IsMember({"fp", "tp", "both"}));
  cmd->add_option("--baseline", c.baseline, "Baseline predictor")->check(CLI::IsMember({"tage", "perceptron"}));
}

harness::ExperimentConfig resolve_config(const Common& c) {
  harness::ExperimentConfig cfg = c.config.empty() ? harness::ExperimentConfig{} : harness::load_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  if (!c.out.empty()) cfg.output_dir = c.out;
  if (c.mode == "fp") cfg.modes = {cnn::Mode::full_precision};
  if (c.mode == "tp") cfg.modes = {cnn::Mode::ternary};
  if (c.mode == "both") cfg.modes = {cnn::Mode::full_precision, cnn::Mode::ternary};
  if (c.baseline == "tage") cfg.baseline = baseline::BaselineKind::tage;
  if (c.baseline == "perceptron") cfg.baseline = baseline::BaselineKind::perceptron;
  cfg.validate();
  return cfg;
}

std::uint64_t parse_ip(const std::string& s) {
  std::size_t used = 0;
  const std::uint64_t v = std::stoull(s, &used, 0);
  if (used != s.size()) throw ConfigError("bad instruction pointer '" + s + "'");
  return v;
}

std::string hex(std::uint64_t ip) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "0x%llx", static_cast<unsigned long long>(ip));
  return buf;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ------------------------------------------------------------------ gen

struct GenArgs {
  std::string kind = "listing1";
  std::uint64_t calls = 100000;
  std::uint32_t spread = 25;
  std::uint32_t noise = 3;
  std::string format;
  std::string workload;
};

int run_gen(const Common& c, const GenArgs& a) {
  if (c.out.empty()) throw ConfigError("gen: --out is required");
  trace::SynthConfig s;
  s.num_calls = a.calls;
  s.noise_per_iteration = a.noise;
  s.seed = c.seed.value_or(1);
  s.workload_id = a.workload.empty() ? fs::path(c.out).stem().string() : a.workload;
  const trace::Trace t =
      a.kind == "varposition" ? trace::generate_varposition_trace(s, a.spread) : trace::generate_listing1_trace(s);
  if (a.format.empty()) {
    trace::write_trace(t, c.out);
  } else {
    trace::write_trace(t, c.out, a.format == "text" ? trace::TraceFormat::text : trace::TraceFormat::binary);
  }
  std::cout << "wrote " << t.size() << " records to " << c.out << '\n';
  return kExitOk;
}

// ------------------------------------------------------------------ sim / screen

int run_sim(const Common& c, const std::string& trace_path) {
  const auto cfg = resolve_config(c);
  const trace::Trace t = trace::read_trace(trace_path);
  baseline::Baseline b = cfg.make_baseline();
  const auto stats = baseline::simulate_baseline(t, b);
  if (c.out.empty()) {
    baseline::write_stats_csv(stats, std::cout);
  } else {
    std::ofstream out(c.out);
    if (!out) throw std::runtime_error("cannot open " + c.out);
    baseline::write_stats_csv(stats, out);
  }
  if (t.meta.instruction_count) {
    std::cerr << "MPKI " << harness::compute_mpki(stats, t.meta.instruction_count) << '\n';
  }
  return kExitOk;
}

int run_screen(const Common& c, const std::string& trace_path) {
  const auto cfg = resolve_config(c);
  const trace::Trace t = trace::read_trace(trace_path);
  baseline::Baseline b = cfg.make_baseline();
  const auto stats = baseline::simulate_baseline(t, b);
  const auto h2ps = baseline::screen_h2ps(stats, cfg.screen, t.meta.instruction_count);
  std::ostringstream os;
  os << "ip,predictions,mispredictions,accuracy\n";
  for (auto ip : h2ps) {
    const auto& s = stats.at(ip);
    os << hex(ip) << ',' << s.predictions << ',' << s.mispredictions << ',' << s.accuracy() << '\n';
  }
  if (c.out.empty()) {
    std::cout << os.str();
  } else {
    std::ofstream(c.out) << os.str();
  }
  if (h2ps.empty()) {
    std::cerr << "warning: no H2P found\n";
    return kExitEmpty;
  }
  return kExitOk;
}

// ------------------------------------------------------------------ train

int run_train(const Common& c, const std::string& trace_path, const std::vector<std::string>& ips) {
  const auto cfg = resolve_config(c);
  const trace::Trace t = trace::read_trace(trace_path);
  std::vector<std::uint64_t> targets;
  for (const auto& s : ips) targets.push_back(parse_ip(s));
  if (targets.empty()) {
    baseline::Baseline b = cfg.make_baseline();
    targets = baseline::screen_h2ps(baseline::simulate_baseline(t, b), cfg.screen, t.meta.instruction_count);
    if (targets.empty()) {
      std::cerr << "warning: no H2P found\n";
      return kExitEmpty;
    }
  }
  const fs::path dir = c.out.empty() ? fs::path(".") : fs::path(c.out);
  fs::create_directories(dir);
  for (auto ip : targets) {
    const auto samples = encoder::collect_training_set(t, ip, cfg.encoder, cfg.train.sample_budget,
                                                       derive_seed(cfg.seed, ip, 1));
    for (auto mode : cfg.modes) {
      const auto tc = cfg.train_config(mode, derive_seed(cfg.seed, ip, 2 + static_cast<std::uint64_t>(mode)));
      auto init = cnn::init_params(cfg.shape(), mode, tc.q, derive_seed(cfg.seed, ip, 4));
      const auto r = cnn::train(std::move(init), samples, tc);
      const fs::path path = dir / ("model_" + hex(ip) + "_" + cnn::to_string(mode) + ".json");
      cnn::save_model(r.params, path);
      std::cout << hex(ip) << ' ' << cnn::to_string(mode) << ": " << samples.size()
                << " samples, final loss " << r.epoch_loss.back() << ", training accuracy "
                << r.epoch_accuracy.back() << " -> " << path.string() << '\n';
    }
  }
  return kExitOk;
}

// ------------------------------------------------------------------ deploy

int run_deploy(const Common& c, const std::string& model_path) {
  if (c.out.empty()) throw ConfigError("deploy: --out is required");
  cnn::FpCnnParams p = cnn::load_model(model_path);
  if (p.mode != cnn::Mode::ternary) {
    std::cerr << "warning: model was trained in full precision; the packed helper quantizes it as-is\n";
    p.mode = cnn::Mode::ternary;
  }
  const auto helper = deploy::build_helper(p);
  const auto blob = deploy::serialize_helper(helper);
  std::ofstream out(c.out, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + c.out);
  out.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size()));
  std::cout << "helper blob " << blob.size() << " bytes, on-chip storage "
            << deploy::storage_bytes(helper.p, helper.m, helper.history_len) << " bytes, threshold "
            << helper.threshold << '\n';
  return kExitOk;
}

// ------------------------------------------------------------------ eval

int run_eval(const Common& c, const std::string& trace_path, const std::vector<std::string>& models,
             const std::vector<std::string>& ips) {
  const auto cfg = resolve_config(c);
  if (models.size() != ips.size()) throw ConfigError("eval: give one --h2p per --model");
  const trace::Trace t = trace::read_trace(trace_path);
  harness::HelperSet helpers;
  for (std::size_t i = 0; i < models.size(); ++i) {
    const fs::path mp = models[i];
    if (mp.extension() == ".bin") {
      const std::string bytes = read_file(mp);
      auto h = deploy::deserialize_helper(
          std::span(reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()));
      helpers[parse_ip(ips[i])] = std::make_unique<harness::TpHelper>(std::move(h));
    } else {
      helpers[parse_ip(ips[i])] = harness::make_helper(cnn::load_model(mp));
    }
  }
  baseline::Baseline b = cfg.make_baseline();
  const auto st = harness::simulate_with_helpers(t, b, helpers);
  std::cout << "ip,occurrences,baseline_mispredictions,helper_mispredictions,baseline_accuracy,helper_accuracy\n";
  for (const auto& [ip, h] : helpers) {
    const auto it = st.baseline.find(ip);
    if (it == st.baseline.end()) {
      std::cout << hex(ip) << ",0,,,,\n";
      continue;
    }
    const auto& cb = st.combined.at(ip);
    std::cout << hex(ip) << ',' << it->second.predictions << ',' << it->second.mispredictions << ','
              << cb.mispredictions << ',' << it->second.accuracy() << ',' << cb.accuracy() << '\n';
  }
  if (t.meta.instruction_count) {
    std::cout << "MPKI before " << harness::compute_mpki(st.baseline, t.meta.instruction_count) << ", after "
              << harness::compute_mpki(st.combined, t.meta.instruction_count) << '\n';
  }
  return kExitOk;
}

// ------------------------------------------------------------------ crossval / report

int run_crossval_cmd(const Common& c) {
  if (c.config.empty()) throw ConfigError("crossval: --config is required");
  const auto cfg = resolve_config(c);
  const auto report = harness::run_crossval(cfg);
  const auto files = harness::emit_report(report, cfg.output_dir);
  std::cout << harness::summary_table(report) << "\nreport written to " << files.json.string() << '\n';
  if (report.empty()) {
    std::cerr << "warning: empty result\n";
    return kExitEmpty;
  }
  return kExitOk;
}

int run_report(const Common& c, const std::string& in) {
  const auto report = harness::report_from_json(read_file(in));
  std::cout << harness::summary_table(report);
  if (!c.out.empty()) harness::emit_report(report, c.out);
  return report.empty() ? kExitEmpty : kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CNN helper branch predictor toolkit"};
  app.require_subcommand(1);
  Common common;

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen", "Generate a synthetic trace");
  add_common(gen_cmd, common);
  gen_cmd->add_option("--kind", gen.kind)->check(CLI::IsMember({"listing1", "varposition"}));
  gen_cmd->add_option("--calls", gen.calls, "Number of calls to the traced function");
  gen_cmd->add_option("--spread", gen.spread, "Distinct correlated-branch offsets (varposition)");
  gen_cmd->add_option("--noise", gen.noise, "Uncorrelated branches per loop iteration");
  gen_cmd->add_option("--format", gen.format)->check(CLI::IsMember({"binary", "text"}));
  gen_cmd->add_option("--workload", gen.workload, "Workload id stored in the trace");

  std::string trace_path;
  auto* sim_cmd = app.add_subcommand("sim", "Run the baseline and print per-branch stats");
  add_common(sim_cmd, common);
  sim_cmd->add_option("--trace", trace_path)->required();

  auto* screen_cmd = app.add_subcommand("screen", "List hard-to-predict branches");
  add_common(screen_cmd, common);
  screen_cmd->add_option("--trace", trace_path)->required();

  std::vector<std::string> ips;
  auto* train_cmd = app.add_subcommand("train", "Train helpers for H2Ps of a trace");
  add_common(train_cmd, common);
  train_cmd->add_option("--trace", trace_path)->required();
  train_cmd->add_option("--h2p", ips, "Branch ip (default: every screened H2P)");

  std::string model_path;
  auto* deploy_cmd = app.add_subcommand("deploy", "Pack a trained model into a helper blob");
  add_common(deploy_cmd, common);
  deploy_cmd->add_option("--model", model_path)->required();

  std::vector<std::string> models;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate helpers alongside the baseline on a trace");
  add_common(eval_cmd, common);
  eval_cmd->add_option("--trace", trace_path)->required();
  eval_cmd->add_option("--model", models, "Model JSON or helper blob (.bin)")->required();
  eval_cmd->add_option("--h2p", ips, "Branch ip for each model")->required();

  auto* cv_cmd = app.add_subcommand("crossval", "Cross-workload evaluation from a config");
  add_common(cv_cmd, common);

  std::string report_in;
  auto* report_cmd = app.add_subcommand("report", "Print the summary of a saved report");
  add_common(report_cmd, common);
  report_cmd->add_option("--in", report_in, "report.json")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitFailure;
  }

  try {
    if (*gen_cmd) return run_gen(common, gen);
    if (*sim_cmd) return run_sim(common, trace_path);
    if (*screen_cmd) return run_screen(common, trace_path);
    if (*train_cmd) return run_train(common, trace_path, ips);
    if (*deploy_cmd) return run_deploy(common, model_path);
    if (*eval_cmd) return run_eval(common, trace_path, models, ips);
    if (*cv_cmd) return run_crossval_cmd(common);
    if (*report_cmd) return run_report(common, report_in);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitFailure;
}
