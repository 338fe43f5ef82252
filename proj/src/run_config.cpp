#include "ladeep/run_config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace ladeep {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(std::string_view v, const std::string& where) {
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError(where + ": invalid number '" + std::string(v) + "'");
  return out;
}

using Setter = std::function<void(RunConfig&, std::string_view, const std::string&)>;

template <typename T>
Setter number(T RunConfig::*field) {
  return [field](RunConfig& c, std::string_view v, const std::string& w) { c.*field = parse_number<T>(v, w); };
}

template <typename T>
Setter model_number(T model::ModelConfig::*field) {
  return [field](RunConfig& c, std::string_view v, const std::string& w) { c.model.*field = parse_number<T>(v, w); };
}

const std::map<std::string, Setter, std::less<>>& setters() {
  static const std::map<std::string, Setter, std::less<>> table = {
      {"m", model_number(&model::ModelConfig::m)},
      {"n", model_number(&model::ModelConfig::n)},
      {"c", model_number(&model::ModelConfig::c)},
      {"y", model_number(&model::ModelConfig::y)},
      {"s_a", model_number(&model::ModelConfig::s_a)},
      {"s_b", model_number(&model::ModelConfig::s_b)},
      {"h", model_number(&model::ModelConfig::h)},
      {"w", model_number(&model::ModelConfig::w)},
      {"ffn_hidden", model_number(&model::ModelConfig::ffn_hidden)},
      {"heads", model_number(&model::ModelConfig::heads)},
      {"eps", model_number(&model::ModelConfig::eps)},
      {"coord_scale", model_number(&model::ModelConfig::coord_scale)},
      {"data", [](RunConfig& c, std::string_view v, const std::string&) { c.data = std::string(v); }},
      {"seed", number(&RunConfig::seed)},
      {"epochs", number(&RunConfig::epochs)},
      {"lr", number(&RunConfig::lr)},
      {"batch", number(&RunConfig::batch)},
      {"metric_pitch", number(&RunConfig::metric_pitch)},
      {"design_tol", number(&RunConfig::design_tol)},
      {"design_max_iter", number(&RunConfig::design_max_iter)},
      {"design_alpha", number(&RunConfig::design_alpha)},
  };
  return table;
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  if (epochs == 0) throw ConfigError("epochs must be positive");
  if (batch == 0) throw ConfigError("batch must be positive");
  if (!(lr > 0.0 && std::isfinite(lr))) throw ConfigError("lr must be positive");
  if (!(metric_pitch > 0.0 && std::isfinite(metric_pitch))) throw ConfigError("metric_pitch must be positive");
  if (!(design_tol >= 0.0 && std::isfinite(design_tol))) throw ConfigError("design_tol must be >= 0");
  if (!(design_alpha > 0.0 && design_alpha <= 1.0)) throw ConfigError("design_alpha must lie in (0, 1]");
}

train::TrainOptions RunConfig::train_options() const {
  train::TrainOptions o;
  o.epochs = epochs;
  o.lr = lr;
  o.batch = batch;
  o.seed = seed;
  return o;
}

RunConfig parse_run_config(std::string_view text, const std::string& origin) {
  RunConfig cfg;
  std::set<std::string, std::less<>> seen;
  std::size_t lineno = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++lineno;
    const std::string where = origin + ":" + std::to_string(lineno);
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(where + ": expected key=value");
    const std::string_view key = trim(line.substr(0, eq));
    const std::string_view value = trim(line.substr(eq + 1));
    const auto it = setters().find(key);
    if (it == setters().end()) throw ConfigError(where + ": unknown key '" + std::string(key) + "'");
    if (!seen.insert(std::string(key)).second) throw ConfigError(where + ": repeated key '" + std::string(key) + "'");
    if (value.empty()) throw ConfigError(where + ": empty value for '" + std::string(key) + "'");
    it->second(cfg, value, where);
  }
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), path.string());
}

}  // namespace ladeep
