#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cnnbp/cnn.hpp"
#include "cnnbp/error.hpp"

namespace cnnbp::cnn {

namespace {

using nlohmann::json;

void require_keys(const json& j, std::initializer_list<const char*> keys, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  const std::set<std::string> allowed(keys.begin(), keys.end());
  for (const auto& [k, v] : j.items()) {
    if (!allowed.count(k)) throw ConfigError(where + ": unknown field '" + k + "'");
  }
  for (const char* k : keys) {
    if (!j.contains(k)) throw ConfigError(where + ": missing field '" + std::string(k) + "'");
  }
}

}  // namespace

std::string to_json_text(const FpCnnParams& p) {
  p.validate();
  json j;
  j["format"] = "cnnbp-model";
  j["version"] = 1;
  j["p"] = p.shape.p;
  j["m"] = p.shape.m;
  j["history_len"] = p.shape.history_len;
  j["mode"] = to_string(p.mode);
  j["q"] = p.q;
  j["norm_eps"] = kNormEps;
  j["w1"] = p.w1;
  j["b1"] = p.b1;
  j["norm1"] = {{"gamma", p.gamma1}, {"beta", p.beta1}, {"running_mean", p.mean1}, {"running_var", p.var1}};
  j["w2"] = p.w2;
  j["norm2"] = {{"gamma", p.gamma2}, {"beta", p.beta2}, {"running_mean", p.mean2}, {"running_var", p.var2}};
  return j.dump(1) + "\n";
}

FpCnnParams from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("model is not valid JSON: ") + e.what(), e.byte);
  }
  FpCnnParams p;
  try {
    require_keys(j, {"format", "version", "p", "m", "history_len", "mode", "q", "norm_eps", "w1", "b1",
                     "norm1", "w2", "norm2"},
                 "model");
    if (j["format"] != "cnnbp-model" || j["version"] != 1) {
      throw ConfigError("model: unsupported format or version");
    }
    if (j["norm_eps"].get<double>() != kNormEps) throw ConfigError("model: norm_eps mismatch");
    p.shape.p = j["p"].get<std::uint32_t>();
    p.shape.m = j["m"].get<std::uint32_t>();
    p.shape.history_len = j["history_len"].get<std::uint32_t>();
    p.mode = mode_from_string(j["mode"].get<std::string>());
    p.q = j["q"].get<double>();
    p.w1 = j["w1"].get<std::vector<double>>();
    p.b1 = j["b1"].get<std::vector<double>>();
    const json& n1 = j["norm1"];
    require_keys(n1, {"gamma", "beta", "running_mean", "running_var"}, "model.norm1");
    p.gamma1 = n1["gamma"].get<std::vector<double>>();
    p.beta1 = n1["beta"].get<std::vector<double>>();
    p.mean1 = n1["running_mean"].get<std::vector<double>>();
    p.var1 = n1["running_var"].get<std::vector<double>>();
    p.w2 = j["w2"].get<std::vector<double>>();
    const json& n2 = j["norm2"];
    require_keys(n2, {"gamma", "beta", "running_mean", "running_var"}, "model.norm2");
    p.gamma2 = n2["gamma"].get<double>();
    p.beta2 = n2["beta"].get<double>();
    p.mean2 = n2["running_mean"].get<double>();
    p.var2 = n2["running_var"].get<double>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
  p.validate();
  return p;
}

void save_model(const FpCnnParams& params, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write model " + path.string());
  out << to_json_text(params);
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

FpCnnParams load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open model " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json_text(ss.str());
}

}  // namespace cnnbp::cnn
