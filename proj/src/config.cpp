#include "nnmpc/config.hpp"

#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "nnmpc/errors.hpp"

namespace nnmpc {

using ordered_json = nlohmann::ordered_json;

namespace {

void reject_unknown(const ordered_json& obj, const std::set<std::string>& allowed,
                    const std::string& where) {
  for (const auto& [key, value] : obj.items()) {
    if (!allowed.count(key)) {
      throw ConfigError("unknown key '" + key + "' in " + where);
    }
  }
}

Vec get_vec(const ordered_json& j, const std::string& where) {
  if (!j.is_array()) throw ConfigError(where + " must be an array of numbers");
  Vec v(static_cast<int>(j.size()));
  for (size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw ConfigError(where + " must be an array of numbers");
    v[static_cast<int>(i)] = j[i].get<double>();
  }
  return v;
}

ordered_json vec_json(const Vec& v) {
  ordered_json arr = ordered_json::array();
  for (int i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

}  // namespace

OcpSpec RunConfig::make_ocp_spec() const {
  OcpSpec spec{make_pendulum_model(pendulum, step_length),
               horizon,
               Mat(q_diag.asDiagonal()),
               Mat(r_diag.asDiagonal()),
               Mat(p_diag.asDiagonal()),
               state_lower,
               state_upper,
               input_lower,
               input_upper};
  spec.validate();
  return spec;
}

SqpSettings RunConfig::make_sqp_settings() const {
  SqpSettings s;
  s.kkt_tol = kkt_tol;
  s.max_iter = max_sqp_iter;
  return s;
}

TrainConfig RunConfig::make_train_config(bool sensitivity_regularized) const {
  TrainConfig t;
  t.lambda_mse = lambda_mse;
  t.lambda_sens = sensitivity_regularized ? lambda_sens : 0.0;
  t.lambda_reg = sensitivity_regularized ? lambda_reg : 0.0;
  t.learning_rate = learning_rate;
  t.epochs = epochs;
  t.batch_size = batch_size;
  t.hidden = hidden;
  t.init_seed = init_seed();
  t.shuffle_seed = shuffle_seed();
  return t;
}

CertifyOptions RunConfig::make_certify_options(bool with_probe, int workers) const {
  CertifyOptions c;
  c.epsilon = epsilon;
  c.probe_factor = with_probe ? probe_factor : 0;
  c.lipschitz_seed = lipschitz_seed();
  c.workers = workers;
  c.solver = make_sqp_settings();
  return c;
}

RunConfig parse_config(const std::string& json_text) {
  ordered_json j = ordered_json::parse(json_text, nullptr, false);
  if (j.is_discarded()) throw ConfigError("config is not valid JSON");
  if (!j.is_object()) throw ConfigError("config must be a JSON object");

  RunConfig cfg;
  reject_unknown(j, {"model", "ocp", "grid", "train", "certify", "simulate", "seed",
                     "out_dir"},
                 "config");

  try {
    if (j.contains("model")) {
      const auto& m = j["model"];
      reject_unknown(m, {"m", "g", "l", "h"}, "model");
      if (m.contains("m")) cfg.pendulum.mass = m["m"].get<double>();
      if (m.contains("g")) cfg.pendulum.gravity = m["g"].get<double>();
      if (m.contains("l")) cfg.pendulum.length = m["l"].get<double>();
      if (m.contains("h")) cfg.step_length = m["h"].get<double>();
    }
    if (j.contains("ocp")) {
      const auto& o = j["ocp"];
      reject_unknown(o,
                     {"horizon", "q_diag", "r_diag", "p_diag", "state_lower",
                      "state_upper", "input_lower", "input_upper", "kkt_tol",
                      "max_sqp_iter"},
                     "ocp");
      if (o.contains("horizon")) cfg.horizon = o["horizon"].get<int>();
      if (o.contains("q_diag")) cfg.q_diag = get_vec(o["q_diag"], "ocp.q_diag");
      if (o.contains("r_diag")) cfg.r_diag = get_vec(o["r_diag"], "ocp.r_diag");
      if (o.contains("p_diag")) cfg.p_diag = get_vec(o["p_diag"], "ocp.p_diag");
      if (o.contains("state_lower")) cfg.state_lower = get_vec(o["state_lower"], "ocp.state_lower");
      if (o.contains("state_upper")) cfg.state_upper = get_vec(o["state_upper"], "ocp.state_upper");
      if (o.contains("input_lower")) cfg.input_lower = get_vec(o["input_lower"], "ocp.input_lower");
      if (o.contains("input_upper")) cfg.input_upper = get_vec(o["input_upper"], "ocp.input_upper");
      if (o.contains("kkt_tol")) cfg.kkt_tol = o["kkt_tol"].get<double>();
      if (o.contains("max_sqp_iter")) cfg.max_sqp_iter = o["max_sqp_iter"].get<int>();
    }
    if (j.contains("grid")) {
      const auto& g = j["grid"];
      reject_unknown(g, {"lower", "upper", "counts"}, "grid");
      if (g.contains("lower")) cfg.grid.lower = get_vec(g["lower"], "grid.lower");
      if (g.contains("upper")) cfg.grid.upper = get_vec(g["upper"], "grid.upper");
      if (g.contains("counts")) cfg.grid.counts = g["counts"].get<std::vector<int>>();
    }
    if (j.contains("train")) {
      const auto& t = j["train"];
      reject_unknown(t,
                     {"epochs", "learning_rate", "batch_size", "hidden", "lambda1",
                      "lambda2", "lambda3", "validation_points"},
                     "train");
      if (t.contains("epochs")) cfg.epochs = t["epochs"].get<int>();
      if (t.contains("learning_rate")) cfg.learning_rate = t["learning_rate"].get<double>();
      if (t.contains("batch_size")) cfg.batch_size = t["batch_size"].get<int>();
      if (t.contains("hidden")) cfg.hidden = t["hidden"].get<std::vector<int>>();
      if (t.contains("lambda1")) cfg.lambda_mse = t["lambda1"].get<double>();
      if (t.contains("lambda2")) cfg.lambda_sens = t["lambda2"].get<double>();
      if (t.contains("lambda3")) cfg.lambda_reg = t["lambda3"].get<double>();
      if (t.contains("validation_points")) {
        cfg.validation_points = t["validation_points"].get<int>();
      }
    }
    if (j.contains("certify")) {
      const auto& c = j["certify"];
      reject_unknown(c, {"epsilon", "probe_factor"}, "certify");
      if (c.contains("epsilon")) cfg.epsilon = c["epsilon"].get<double>();
      if (c.contains("probe_factor")) cfg.probe_factor = c["probe_factor"].get<int>();
    }
    if (j.contains("simulate")) {
      const auto& s = j["simulate"];
      reject_unknown(s, {"x0", "steps", "disturbance_epsilon"}, "simulate");
      if (s.contains("x0")) cfg.x0 = get_vec(s["x0"], "simulate.x0");
      if (s.contains("steps")) cfg.sim_steps = s["steps"].get<int>();
      if (s.contains("disturbance_epsilon")) {
        cfg.disturbance_epsilon = s["disturbance_epsilon"].get<double>();
      }
    }
    if (j.contains("seed")) cfg.seed = j["seed"].get<uint64_t>();
    if (j.contains("out_dir")) cfg.out_dir = j["out_dir"].get<std::string>();
  } catch (const ordered_json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }

  cfg.grid.validate();
  cfg.make_ocp_spec();  // validates weights and bounds
  if (cfg.epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (cfg.lambda_mse < 0 || cfg.lambda_sens < 0 || cfg.lambda_reg < 0) {
    throw ConfigError("loss weights must be nonnegative");
  }
  if (cfg.sim_steps < 1) throw ConfigError("simulate.steps must be >= 1");
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_config(text);
}

std::string dump_config(const RunConfig& cfg) {
  ordered_json j;
  j["model"] = {{"m", cfg.pendulum.mass},
                {"g", cfg.pendulum.gravity},
                {"l", cfg.pendulum.length},
                {"h", cfg.step_length}};
  j["ocp"] = {{"horizon", cfg.horizon},
              {"q_diag", vec_json(cfg.q_diag)},
              {"r_diag", vec_json(cfg.r_diag)},
              {"p_diag", vec_json(cfg.p_diag)},
              {"state_lower", vec_json(cfg.state_lower)},
              {"state_upper", vec_json(cfg.state_upper)},
              {"input_lower", vec_json(cfg.input_lower)},
              {"input_upper", vec_json(cfg.input_upper)},
              {"kkt_tol", cfg.kkt_tol},
              {"max_sqp_iter", cfg.max_sqp_iter}};
  j["grid"] = {{"lower", vec_json(cfg.grid.lower)},
               {"upper", vec_json(cfg.grid.upper)},
               {"counts", cfg.grid.counts}};
  j["train"] = {{"epochs", cfg.epochs},
                {"learning_rate", cfg.learning_rate},
                {"batch_size", cfg.batch_size},
                {"hidden", cfg.hidden},
                {"lambda1", cfg.lambda_mse},
                {"lambda2", cfg.lambda_sens},
                {"lambda3", cfg.lambda_reg},
                {"validation_points", cfg.validation_points}};
  j["certify"] = {{"epsilon", cfg.epsilon}, {"probe_factor", cfg.probe_factor}};
  j["simulate"] = {{"x0", vec_json(cfg.x0)},
                   {"steps", cfg.sim_steps},
                   {"disturbance_epsilon", cfg.disturbance_epsilon}};
  j["seed"] = cfg.seed;
  j["out_dir"] = cfg.out_dir;
  return j.dump(2);
}

std::string config_hash(const RunConfig& cfg) {
  // The output location is not part of a run's identity; two runs of the
  // same study into different directories must hash identically.
  ordered_json j = ordered_json::parse(dump_config(cfg));
  j.erase("out_dir");
  const std::string text = j.dump(2);
  uint64_t hash = 1469598103934665603ULL;
  for (unsigned char ch : text) {
    hash ^= ch;
    hash *= 1099511628211ULL;
  }
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(hash));
  return buf;
}

}  // namespace nnmpc
