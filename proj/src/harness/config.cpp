#include <fstream>
#include <limits>
#include <set>
#include <type_traits>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cnnbp/error.hpp"
#include "cnnbp/harness.hpp"

namespace cnnbp::harness {

using nlohmann::json;

std::string WorkloadSpec::id() const {
  if (kind == Kind::file) return path.stem().string();
  return synth.workload_id;
}

trace::Trace load_workload(const WorkloadSpec& spec) {
  switch (spec.kind) {
    case WorkloadSpec::Kind::file: {
      trace::Trace t = trace::read_trace(spec.path);
      if (t.meta.workload_id.empty()) t.meta.workload_id = spec.id();
      return t;
    }
    case WorkloadSpec::Kind::listing1:
      return trace::generate_listing1_trace(spec.synth);
    case WorkloadSpec::Kind::varposition:
      return trace::generate_varposition_trace(spec.synth, spec.position_spread);
  }
  throw ConfigError("unknown workload kind");
}

cnn::TrainConfig ExperimentConfig::train_config(cnn::Mode mode, std::uint64_t job_seed) const {
  cnn::TrainConfig t = train;
  t.mode = mode;
  t.seed = job_seed;
  if (mode == cnn::Mode::ternary && ternary_learning_rate) t.adam.learning_rate = *ternary_learning_rate;
  return t;
}

baseline::Baseline ExperimentConfig::make_baseline() const { return baseline::Baseline(baseline, tage, perceptron); }

void ExperimentConfig::validate() const {
  tage.validate();
  perceptron.validate();
  screen.validate();
  encoder.validate();
  shape().validate();
  train.validate();
  if (ternary_learning_rate && !(*ternary_learning_rate > 0.0)) {
    throw ConfigError("config: ternary_learning_rate must be > 0");
  }
  if (modes.empty()) throw ConfigError("config: modes must not be empty");
  for (std::size_t i = 0; i < modes.size(); ++i) {
    for (std::size_t j = i + 1; j < modes.size(); ++j) {
      if (modes[i] == modes[j]) throw ConfigError("config: duplicate mode " + cnn::to_string(modes[i]));
    }
  }
  std::set<std::string> ids;
  for (const auto& w : workloads) {
    if (w.kind != WorkloadSpec::Kind::file) w.synth.validate();
    if (!ids.insert(w.id()).second) throw ConfigError("config: duplicate workload id '" + w.id() + "'");
  }
}

void ExperimentConfig::validate_crossval() const {
  validate();
  if (workloads.size() < 2) throw ConfigError("config: cross-validation needs at least 2 workloads");
  if (min_workloads_per_h2p < 2) throw ConfigError("config: min_workloads_per_h2p must be >= 2");
  if (min_workloads_per_h2p > workloads.size()) {
    throw ConfigError("config: min_workloads_per_h2p exceeds the number of workloads");
  }
}

namespace {

// Object reader that rejects unknown keys once the caller is done with it.
class Fields {
 public:
  Fields(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError("config: " + where_ + " must be an object");
  }

  bool has(const char* key) const { return j_.contains(key); }

  const json& raw(const char* key) {
    seen_.insert(key);
    return j_.at(key);
  }

  template <typename T>
  void get(const char* key, T& out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    const json& v = j_.at(key);
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) fail(key, "a boolean");
      out = v.get<bool>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) fail(key, "a number");
      out = v.get<T>();
    } else if constexpr (std::is_integral_v<T> && std::is_unsigned_v<T>) {
      if (!v.is_number_unsigned()) fail(key, "a non-negative integer");
      const auto x = v.get<std::uint64_t>();
      if (x > std::numeric_limits<T>::max()) fail(key, "a smaller integer");
      out = static_cast<T>(x);
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) fail(key, "an integer");
      out = v.get<T>();
    } else {
      if (!v.is_string()) fail(key, "a string");
      out = v.get<std::string>();
    }
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.contains(k)) throw ConfigError("config: unknown key '" + k + "' in " + where_);
    }
  }

 private:
  [[noreturn]] void fail(const char* key, const char* what) const {
    throw ConfigError("config: " + where_ + "." + key + " must be " + what);
  }

  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

WorkloadSpec parse_workload(const json& j, const std::string& where, const std::filesystem::path& base) {
  Fields f(j, where);
  WorkloadSpec w;
  if (f.has("trace")) {
    std::string p;
    f.get("trace", p);
    w.kind = WorkloadSpec::Kind::file;
    w.path = std::filesystem::path(p);
    if (w.path.is_relative() && !base.empty()) w.path = base / w.path;
    f.finish();
    return w;
  }
  std::string gen = "listing1";
  f.get("generator", gen);
  if (gen == "listing1") {
    w.kind = WorkloadSpec::Kind::listing1;
  } else if (gen == "varposition") {
    w.kind = WorkloadSpec::Kind::varposition;
  } else {
    throw ConfigError("config: " + where + ".generator must be listing1 or varposition");
  }
  auto& s = w.synth;
  f.get("num_calls", s.num_calls);
  f.get("value_lo", s.value_lo);
  f.get("value_hi", s.value_hi);
  f.get("taken_threshold", s.taken_threshold);
  f.get("loop_modulus", s.loop_count_rule.modulus);
  f.get("loop_offset", s.loop_count_rule.offset);
  f.get("noise_per_iteration", s.noise_per_iteration);
  f.get("history_window", s.history_window);
  f.get("seed", s.seed);
  f.get("workload_id", s.workload_id);
  f.get("position_spread", w.position_spread);
  f.finish();
  return w;
}

json workload_json(const WorkloadSpec& w) {
  if (w.kind == WorkloadSpec::Kind::file) return {{"trace", w.path.string()}};
  const auto& s = w.synth;
  json j = {{"generator", w.kind == WorkloadSpec::Kind::listing1 ? "listing1" : "varposition"},
            {"num_calls", s.num_calls},
            {"value_lo", s.value_lo},
            {"value_hi", s.value_hi},
            {"taken_threshold", s.taken_threshold},
            {"loop_modulus", s.loop_count_rule.modulus},
            {"loop_offset", s.loop_count_rule.offset},
            {"noise_per_iteration", s.noise_per_iteration},
            {"history_window", s.history_window},
            {"seed", s.seed},
            {"workload_id", s.workload_id}};
  if (w.kind == WorkloadSpec::Kind::varposition) j["position_spread"] = w.position_spread;
  return j;
}

}  // namespace

ExperimentConfig parse_config(const std::string& json_text, const std::filesystem::path& base_dir) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  ExperimentConfig c;
  Fields top(root, "config");

  if (top.has("workloads")) {
    const json& ws = top.raw("workloads");
    if (!ws.is_array()) throw ConfigError("config: workloads must be an array");
    for (std::size_t i = 0; i < ws.size(); ++i) {
      c.workloads.push_back(parse_workload(ws[i], "workloads[" + std::to_string(i) + "]", base_dir));
    }
  }
  if (top.has("baseline")) {
    Fields b(top.raw("baseline"), "baseline");
    std::string kind = "tage";
    b.get("kind", kind);
    if (kind == "tage") {
      c.baseline = baseline::BaselineKind::tage;
    } else if (kind == "perceptron") {
      c.baseline = baseline::BaselineKind::perceptron;
    } else {
      throw ConfigError("config: baseline.kind must be tage or perceptron");
    }
    if (b.has("tage")) {
      Fields t(b.raw("tage"), "baseline.tage");
      t.get("num_tagged_tables", c.tage.num_tagged_tables);
      t.get("table_entries", c.tage.table_entries);
      t.get("tag_bits", c.tage.tag_bits);
      t.get("max_history", c.tage.max_history);
      t.get("min_history", c.tage.min_history);
      t.get("counter_bits", c.tage.counter_bits);
      t.get("useful_bits", c.tage.useful_bits);
      t.get("bimodal_entries", c.tage.bimodal_entries);
      t.finish();
    }
    if (b.has("perceptron")) {
      Fields p(b.raw("perceptron"), "baseline.perceptron");
      p.get("history_length", c.perceptron.history_length);
      p.get("weight_bits", c.perceptron.weight_bits);
      p.get("num_perceptrons", c.perceptron.num_perceptrons);
      p.finish();
    }
    b.finish();
  }
  if (top.has("screen")) {
    Fields s(top.raw("screen"), "screen");
    s.get("accuracy_threshold", c.screen.accuracy_threshold);
    s.get("min_mispredictions", c.screen.min_mispredictions);
    s.get("window_instructions", c.screen.window_instructions);
    s.get("min_mispredictions_floor", c.screen.min_mispredictions_floor);
    s.finish();
  }
  if (top.has("encoder")) {
    Fields e(top.raw("encoder"), "encoder");
    e.get("p", c.encoder.p);
    e.get("history_len", c.encoder.history_len);
    e.finish();
  }
  if (top.has("cnn")) {
    Fields n(top.raw("cnn"), "cnn");
    n.get("filters", c.filters);
    n.finish();
  }
  if (top.has("train")) {
    Fields t(top.raw("train"), "train");
    t.get("epochs", c.train.epochs);
    t.get("sample_budget", c.train.sample_budget);
    t.get("batch_size", c.train.batch_size);
    t.get("q", c.train.q);
    t.get("learning_rate", c.train.adam.learning_rate);
    t.get("beta1", c.train.adam.beta1);
    t.get("beta2", c.train.adam.beta2);
    t.get("epsilon", c.train.adam.epsilon);
    if (t.has("ternary_learning_rate")) {
      if (t.raw("ternary_learning_rate").is_null()) {
        c.ternary_learning_rate.reset();
      } else {
        double lr = 0.0;
        t.get("ternary_learning_rate", lr);
        c.ternary_learning_rate = lr;
      }
    }
    t.finish();
  }
  if (top.has("modes")) {
    const json& ms = top.raw("modes");
    if (!ms.is_array()) throw ConfigError("config: modes must be an array");
    c.modes.clear();
    for (const auto& m : ms) {
      if (!m.is_string()) throw ConfigError("config: modes entries must be strings");
      c.modes.push_back(cnn::mode_from_string(m.get<std::string>()));
    }
  }
  top.get("min_workloads_per_h2p", c.min_workloads_per_h2p);
  std::string out = c.output_dir.string();
  top.get("output_dir", out);
  c.output_dir = out;
  if (c.output_dir.is_relative() && !base_dir.empty() && top.has("output_dir")) c.output_dir = base_dir / c.output_dir;
  top.get("seed", c.seed);
  top.finish();
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.parent_path());
}

std::string config_to_json(const ExperimentConfig& c) {
  json ws = json::array();
  for (const auto& w : c.workloads) ws.push_back(workload_json(w));
  json modes = json::array();
  for (auto m : c.modes) modes.push_back(cnn::to_string(m));
  json train = {{"epochs", c.train.epochs},
                {"sample_budget", c.train.sample_budget},
                {"batch_size", c.train.batch_size},
                {"q", c.train.q},
                {"learning_rate", c.train.adam.learning_rate},
                {"beta1", c.train.adam.beta1},
                {"beta2", c.train.adam.beta2},
                {"epsilon", c.train.adam.epsilon}};
  train["ternary_learning_rate"] = c.ternary_learning_rate ? json(*c.ternary_learning_rate) : json(nullptr);
  json j = {
      {"workloads", ws},
      {"baseline",
       {{"kind", c.baseline == baseline::BaselineKind::tage ? "tage" : "perceptron"},
        {"tage",
         {{"num_tagged_tables", c.tage.num_tagged_tables},
          {"table_entries", c.tage.table_entries},
          {"tag_bits", c.tage.tag_bits},
          {"max_history", c.tage.max_history},
          {"min_history", c.tage.min_history},
          {"counter_bits", c.tage.counter_bits},
          {"useful_bits", c.tage.useful_bits},
          {"bimodal_entries", c.tage.bimodal_entries}}},
        {"perceptron",
         {{"history_length", c.perceptron.history_length},
          {"weight_bits", c.perceptron.weight_bits},
          {"num_perceptrons", c.perceptron.num_perceptrons}}}}},
      {"screen",
       {{"accuracy_threshold", c.screen.accuracy_threshold},
        {"min_mispredictions", c.screen.min_mispredictions},
        {"window_instructions", c.screen.window_instructions},
        {"min_mispredictions_floor", c.screen.min_mispredictions_floor}}},
      {"encoder", {{"p", c.encoder.p}, {"history_len", c.encoder.history_len}}},
      {"cnn", {{"filters", c.filters}}},
      {"train", train},
      {"modes", modes},
      {"min_workloads_per_h2p", c.min_workloads_per_h2p},
      {"output_dir", c.output_dir.string()},
      {"seed", c.seed}};
  return j.dump(2);
}

}  // namespace cnnbp::harness
