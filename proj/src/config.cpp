#include "prefopt/config.hpp"

#include <cmath>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string_view>

#include <json.hpp>

#include "prefopt/common.hpp"

namespace prefopt {
namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& origin, const std::string& msg) {
  throw ConfigError(origin + ": " + msg);
}

std::string join(const std::string& path, const char* key) {
  return path.empty() ? std::string(key) : path + "." + key;
}

// every key must be in the allowed list; typos are errors, not silent no-ops
void check_keys(const json& j, const std::string& origin, const std::string& path,
                std::initializer_list<const char*> allowed) {
  for (const auto& item : j.items()) {
    bool known = false;
    for (const char* a : allowed) {
      if (item.key() == a) {
        known = true;
        break;
      }
    }
    if (!known) fail(origin, "unknown key \"" + join(path, item.key().c_str()) + "\"");
  }
}

const json* find(const json& j, const char* key) {
  auto it = j.find(key);
  return it == j.end() ? nullptr : &*it;
}

json section(const json& j, const std::string& origin, const std::string& path,
             const char* key) {
  const json* v = find(j, key);
  if (!v) return json::object();
  if (!v->is_object()) fail(origin, "\"" + join(path, key) + "\" must be an object");
  return *v;
}

double get_num(const json& j, const std::string& origin, const std::string& path,
               const char* key, double def) {
  const json* v = find(j, key);
  if (!v) return def;
  if (!v->is_number()) fail(origin, "\"" + join(path, key) + "\" must be a number");
  return v->get<double>();
}

uint64_t get_uint(const json& j, const std::string& origin, const std::string& path,
                  const char* key, uint64_t def) {
  const json* v = find(j, key);
  if (!v) return def;
  if (!v->is_number_unsigned() &&
      !(v->is_number_integer() && v->get<int64_t>() >= 0)) {
    fail(origin, "\"" + join(path, key) + "\" must be a non-negative integer");
  }
  return v->get<uint64_t>();
}

bool get_bool(const json& j, const std::string& origin, const std::string& path,
              const char* key, bool def) {
  const json* v = find(j, key);
  if (!v) return def;
  if (!v->is_boolean()) fail(origin, "\"" + join(path, key) + "\" must be a boolean");
  return v->get<bool>();
}

std::string get_str(const json& j, const std::string& origin, const std::string& path,
                    const char* key, std::string def) {
  const json* v = find(j, key);
  if (!v) return def;
  if (!v->is_string()) fail(origin, "\"" + join(path, key) + "\" must be a string");
  return v->get<std::string>();
}

WorldSpec parse_world(const json& j, const std::string& origin) {
  const std::string path = "world";
  check_keys(j, origin, path,
             {"prompts", "candidates", "vocab", "dim", "separation",
              "ref_temperature", "seed", "mode"});
  WorldSpec w;
  w.prompts = static_cast<uint32_t>(get_uint(j, origin, path, "prompts", w.prompts));
  w.candidates =
      static_cast<uint32_t>(get_uint(j, origin, path, "candidates", w.candidates));
  w.vocab = static_cast<uint32_t>(get_uint(j, origin, path, "vocab", w.vocab));
  w.dim = static_cast<uint32_t>(get_uint(j, origin, path, "dim", w.dim));
  w.separation = get_num(j, origin, path, "separation", w.separation);
  w.ref_temperature =
      get_num(j, origin, path, "ref_temperature", w.ref_temperature);
  w.seed = get_uint(j, origin, path, "seed", w.seed);
  w.mode = parse_mode(get_str(j, origin, path, "mode", mode_name(w.mode)));
  return w;
}

DataConfig parse_data(const json& j, const std::string& origin) {
  const std::string path = "data";
  check_keys(j, origin, path,
             {"form", "annotator", "flip_rate", "fixed_subset", "annotator_seed",
              "records_per_prompt", "construction_seed", "path"});
  DataConfig d;
  d.form = parse_form(get_str(j, origin, path, "form", form_name(d.form)));
  d.annotator.kind =
      parse_annotator(get_str(j, origin, path, "annotator",
                              annotator_name(d.annotator.kind)));
  d.annotator.flip_rate =
      get_num(j, origin, path, "flip_rate", d.annotator.flip_rate);
  d.annotator.fixed_subset =
      get_bool(j, origin, path, "fixed_subset", d.annotator.fixed_subset);
  d.annotator.seed = get_uint(j, origin, path, "annotator_seed", d.annotator.seed);
  d.records_per_prompt = static_cast<uint32_t>(
      get_uint(j, origin, path, "records_per_prompt", d.records_per_prompt));
  d.construction_seed =
      get_uint(j, origin, path, "construction_seed", d.construction_seed);
  d.path = get_str(j, origin, path, "path", d.path);
  return d;
}

ObjectiveSpec parse_objective(const json& j, const std::string& origin) {
  const std::string path = "objective";
  check_keys(j, origin, path,
             {"method", "beta", "gamma", "tau", "lambda", "alpha", "lambda_w",
              "lambda_l", "kto_mc_samples"});
  ObjectiveSpec o;
  o.method = parse_method(get_str(j, origin, path, "method", method_name(o.method)));
  o.beta = get_num(j, origin, path, "beta", o.beta);
  o.gamma = get_num(j, origin, path, "gamma", o.gamma);
  o.tau = get_num(j, origin, path, "tau", o.tau);
  o.lambda = get_num(j, origin, path, "lambda", o.lambda);
  o.alpha = get_num(j, origin, path, "alpha", o.alpha);
  o.lambda_w = get_num(j, origin, path, "lambda_w", o.lambda_w);
  o.lambda_l = get_num(j, origin, path, "lambda_l", o.lambda_l);
  o.kto_mc_samples = static_cast<uint32_t>(
      get_uint(j, origin, path, "kto_mc_samples", o.kto_mc_samples));
  if (o.beta <= 0) fail(origin, "\"objective.beta\" must be positive");
  if (o.tau <= 0) fail(origin, "\"objective.tau\" must be positive");
  return o;
}

OptimizerConfig parse_optimizer(const json& j, const std::string& origin) {
  const std::string path = "optimizer";
  check_keys(j, origin, path,
             {"lr", "lr_preset", "batch_size", "epochs", "steps", "beta1",
              "beta2", "eps"});
  OptimizerConfig o;
  const bool has_lr = find(j, "lr") != nullptr;
  const bool has_preset = find(j, "lr_preset") != nullptr;
  if (has_lr && has_preset) {
    fail(origin, "\"optimizer.lr\" and \"optimizer.lr_preset\" are mutually exclusive");
  }
  if (has_preset) {
    const std::string preset = get_str(j, origin, path, "lr_preset", "");
    if (preset == "3e-7") o.adam.lr = 3e-7;
    else if (preset == "5e-7") o.adam.lr = 5e-7;
    else if (preset == "7e-7") o.adam.lr = 7e-7;
    else if (preset == "1e-6") o.adam.lr = 1e-6;
    else fail(origin, "\"optimizer.lr_preset\" must be one of "
                      "\"3e-7\", \"5e-7\", \"7e-7\", \"1e-6\"");
  } else {
    o.adam.lr = get_num(j, origin, path, "lr", o.adam.lr);
  }
  if (o.adam.lr < 0) fail(origin, "\"optimizer.lr\" must be non-negative");
  o.batch_size =
      static_cast<uint32_t>(get_uint(j, origin, path, "batch_size", o.batch_size));
  if (o.batch_size == 0) fail(origin, "\"optimizer.batch_size\" must be positive");
  o.epochs = static_cast<uint32_t>(get_uint(j, origin, path, "epochs", o.epochs));
  if (o.epochs == 0) fail(origin, "\"optimizer.epochs\" must be positive");
  o.steps = get_uint(j, origin, path, "steps", o.steps);
  o.adam.beta1 = get_num(j, origin, path, "beta1", o.adam.beta1);
  o.adam.beta2 = get_num(j, origin, path, "beta2", o.adam.beta2);
  o.adam.eps = get_num(j, origin, path, "eps", o.adam.eps);
  return o;
}

EvalConfig parse_eval(const json& j, const std::string& origin) {
  const std::string path = "eval";
  check_keys(j, origin, path, {"records_per_prompt", "winrate_samples", "seed"});
  EvalConfig e;
  e.records_per_prompt = static_cast<uint32_t>(
      get_uint(j, origin, path, "records_per_prompt", e.records_per_prompt));
  e.winrate_samples = static_cast<uint32_t>(
      get_uint(j, origin, path, "winrate_samples", e.winrate_samples));
  e.seed = get_uint(j, origin, path, "seed", e.seed);
  return e;
}

}  // namespace

RunConfig parse_config(const std::string& text, const std::string& origin) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(origin + ": " + e.what());
  }
  if (!j.is_object()) fail(origin, "top level must be an object");
  check_keys(j, origin, "",
             {"name", "world", "data", "objective", "optimizer", "telemetry",
              "output", "eval", "parallel"});

  RunConfig cfg;
  cfg.name = get_str(j, origin, "", "name", cfg.name);
  cfg.world = parse_world(section(j, origin, "", "world"), origin);
  cfg.data = parse_data(section(j, origin, "", "data"), origin);
  cfg.objective = parse_objective(section(j, origin, "", "objective"), origin);
  cfg.optimizer = parse_optimizer(section(j, origin, "", "optimizer"), origin);

  const json tele = section(j, origin, "", "telemetry");
  check_keys(tele, origin, "telemetry", {"cadence"});
  cfg.telemetry_cadence = static_cast<uint32_t>(
      get_uint(tele, origin, "telemetry", "cadence", cfg.telemetry_cadence));
  if (cfg.telemetry_cadence == 0) fail(origin, "\"telemetry.cadence\" must be positive");

  const json out = section(j, origin, "", "output");
  check_keys(out, origin, "output", {"metrics", "checkpoint"});
  cfg.metrics_path = get_str(out, origin, "output", "metrics", cfg.metrics_path);
  cfg.checkpoint_path =
      get_str(out, origin, "output", "checkpoint", cfg.checkpoint_path);

  cfg.eval = parse_eval(section(j, origin, "", "eval"), origin);
  cfg.parallel = get_bool(j, origin, "", "parallel", cfg.parallel);
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file \"" + path + "\"");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), path);
}

uint64_t planned_steps(const OptimizerConfig& opt, size_t n_records) {
  if (opt.steps > 0) return opt.steps;
  const uint64_t per_epoch = (n_records + opt.batch_size - 1) / opt.batch_size;
  return static_cast<uint64_t>(opt.epochs) * std::max<uint64_t>(per_epoch, 1);
}

}  // namespace prefopt
