#include "masklab/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "masklab/errors.hpp"

namespace masklab {

using nlohmann::json;

namespace {

// Reads known keys out of one JSON object and rejects the rest.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw InputError(where() + " must be an object");
  }

  bool has(const char* key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  void get(const char* key, int& out) {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_number_integer()) throw InputError(where(key) + " must be an integer");
    out = v.get<int>();
  }
  void get(const char* key, long& out) {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_number_integer()) throw InputError(where(key) + " must be an integer");
    out = v.get<long>();
  }
  void get(const char* key, std::uint64_t& out) {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
      throw InputError(where(key) + " must be a non-negative integer");
    }
    out = v.get<std::uint64_t>();
  }
  void get(const char* key, double& out) {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_number()) throw InputError(where(key) + " must be a number");
    out = v.get<double>();
  }
  void get(const char* key, bool& out) {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_boolean()) throw InputError(where(key) + " must be a boolean");
    out = v.get<bool>();
  }
  void get(const char* key, std::string& out) {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_string()) throw InputError(where(key) + " must be a string");
    out = v.get<std::string>();
  }
  template <typename T>
  void get(const char* key, std::vector<T>& out) {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_array()) throw InputError(where(key) + " must be an array");
    std::vector<T> tmp;
    for (const json& e : v) {
      if constexpr (std::is_floating_point_v<T>) {
        if (!e.is_number()) throw InputError(where(key) + " must hold numbers");
      } else {
        if (!e.is_number_integer()) throw InputError(where(key) + " must hold integers");
      }
      tmp.push_back(e.get<T>());
    }
    out = std::move(tmp);
  }

  const json& child(const char* key) {
    seen_.insert(key);
    return j_.at(key);
  }

  std::string where(const char* key = nullptr) const {
    std::string p = path_.empty() ? "config" : path_;
    if (key) p += std::string(".") + key;
    return p;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw InputError("unknown config key: " + where(it.key().c_str()));
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

std::string kind_name(EnvSpec::Kind k) { return k == EnvSpec::Kind::kDoor ? "door" : "staircase"; }

EnvSpec::Kind kind_from(const std::string& s) {
  if (s == "staircase") return EnvSpec::Kind::kStaircase;
  if (s == "door") return EnvSpec::Kind::kDoor;
  throw InputError("unknown env kind: " + s);
}

std::string start_name(DoorStart s) { return s == DoorStart::kLeftEnd ? "left_end" : "uniform"; }

DoorStart start_from(const std::string& s) {
  if (s == "uniform") return DoorStart::kUniform;
  if (s == "left_end") return DoorStart::kLeftEnd;
  throw InputError("unknown door start: " + s);
}

void read_env(const json& j, EnvSpec& env) {
  Section sec(j, "env");
  std::string kind = kind_name(env.kind);
  sec.get("kind", kind);
  env.kind = kind_from(kind);
  if (sec.has("staircase")) {
    Section s(sec.child("staircase"), "env.staircase");
    auto& c = env.staircase;
    s.get("length", c.length);
    s.get("num_actions", c.num_actions);
    s.get("horizon", c.horizon);
    s.get("goal_reward", c.goal_reward);
    s.get("invalid_penalty", c.invalid_penalty);
    s.get("move_reward", c.move_reward);
    s.get("start_cell", c.start_cell);
    s.finish();
  }
  if (sec.has("door")) {
    Section s(sec.child("door"), "env.door");
    auto& c = env.door;
    s.get("num_cells", c.num_cells);
    s.get("num_doors", c.num_doors);
    s.get("num_actions", c.num_actions);
    s.get("horizon", c.horizon);
    s.get("goal_reward", c.goal_reward);
    s.get("invalid_penalty", c.invalid_penalty);
    std::string start = start_name(c.start);
    s.get("start", start);
    c.start = start_from(start);
    s.finish();
  }
  sec.finish();
}

void read_loss(const json& j, LossConfig& c) {
  Section s(j, "loss");
  s.get("clip", c.clip);
  s.get("value_coeff", c.value_coeff);
  s.get("entropy_coeff", c.entropy_coeff);
  s.get("classification_coeff", c.classification_coeff);
  s.get("focal_gamma", c.focal_gamma);
  s.get("kl_soft_mask_value", c.kl_soft_mask_value);
  s.get("threshold", c.threshold);
  s.get("gae_lambda", c.gae_lambda);
  s.get("discount", c.discount);
  s.get("normalize_advantages", c.normalize_advantages);
  std::string pf = to_string(c.kl_prefactor);
  s.get("kl_prefactor", pf);
  c.kl_prefactor = kl_prefactor_from_string(pf);
  s.finish();
}

void read_train(const json& j, TrainConfig& c) {
  Section s(j, "train");
  std::string cond = to_string(c.condition);
  s.get("condition", cond);
  c.condition = condition_from_string(cond);
  s.get("num_envs", c.num_envs);
  s.get("rollout_len", c.rollout_len);
  s.get("epochs", c.epochs);
  s.get("minibatches", c.minibatches);
  s.get("lr", c.lr);
  s.get("anneal_lr", c.anneal_lr);
  s.get("max_grad_norm", c.max_grad_norm);
  s.get("total_steps", c.total_steps);
  s.get("hidden", c.hidden);
  s.get("num_layers", c.num_layers);
  s.get("eval_episodes", c.eval_episodes);
  s.get("eval_seed", c.eval_seed);
  s.finish();
}

void read_theory(const json& j, TheoryBatteryConfig& c) {
  Section s(j, "theory");
  s.get("lengths", c.lengths);
  s.get("action_counts", c.action_counts);
  s.get("entropy_coeffs", c.entropy_coeffs);
  s.get("rhos", c.rhos);
  s.get("num_steps", c.num_steps);
  s.get("learning_rate", c.learning_rate);
  s.get("discount", c.discount);
  s.finish();
}

json to_json(const RunConfig& rc) {
  const TrainConfig& t = rc.train;
  const auto& st = t.env.staircase;
  const auto& dr = t.env.door;
  const LossConfig& l = t.loss;
  const TheoryBatteryConfig& th = rc.theory;
  json j;
  j["command"] = rc.command;
  j["output_dir"] = rc.output_dir;
  j["seeds"] = rc.seeds;
  j["env"] = {{"kind", kind_name(t.env.kind)},
              {"staircase",
               {{"length", st.length},
                {"num_actions", st.num_actions},
                {"horizon", st.horizon},
                {"goal_reward", st.goal_reward},
                {"invalid_penalty", st.invalid_penalty},
                {"move_reward", st.move_reward},
                {"start_cell", st.start_cell}}},
              {"door",
               {{"num_cells", dr.num_cells},
                {"num_doors", dr.num_doors},
                {"num_actions", dr.num_actions},
                {"horizon", dr.horizon},
                {"goal_reward", dr.goal_reward},
                {"invalid_penalty", dr.invalid_penalty},
                {"start", start_name(dr.start)}}}};
  j["train"] = {{"condition", to_string(t.condition)},
                {"num_envs", t.num_envs},
                {"rollout_len", t.rollout_len},
                {"epochs", t.epochs},
                {"minibatches", t.minibatches},
                {"lr", t.lr},
                {"anneal_lr", t.anneal_lr},
                {"max_grad_norm", t.max_grad_norm},
                {"total_steps", t.total_steps},
                {"hidden", t.hidden},
                {"num_layers", t.num_layers},
                {"eval_episodes", t.eval_episodes},
                {"eval_seed", t.eval_seed}};
  j["loss"] = {{"clip", l.clip},
               {"value_coeff", l.value_coeff},
               {"entropy_coeff", l.entropy_coeff},
               {"classification_coeff", l.classification_coeff},
               {"focal_gamma", l.focal_gamma},
               {"kl_soft_mask_value", l.kl_soft_mask_value},
               {"threshold", l.threshold},
               {"gae_lambda", l.gae_lambda},
               {"discount", l.discount},
               {"normalize_advantages", l.normalize_advantages},
               {"kl_prefactor", to_string(l.kl_prefactor)}};
  j["theory"] = {{"lengths", th.lengths},
                 {"action_counts", th.action_counts},
                 {"entropy_coeffs", th.entropy_coeffs},
                 {"rhos", th.rhos},
                 {"num_steps", th.num_steps},
                 {"learning_rate", th.learning_rate},
                 {"discount", th.discount}};
  return j;
}

}  // namespace

void RunConfig::validate() const {
  static const std::set<std::string> commands{"verify-theory", "train", "eval", "sweep", "report"};
  if (!commands.count(command)) throw InputError("unknown command: " + command);
  if (seeds.empty()) throw InputError("seeds must not be empty");
  train.validate();
  train.env.make();  // environment constructors validate their own fields
  if (theory.num_steps < 1) throw InputError("theory.num_steps must be positive");
  if (!(theory.learning_rate > 0.0)) throw InputError("theory.learning_rate must be positive");
  if (!(theory.discount > 0.0 && theory.discount < 1.0)) throw InputError("theory.discount must lie in (0,1)");
}

RunConfig parse_run_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw InputError(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig rc;
  Section top(j, "");
  top.get("command", rc.command);
  top.get("output_dir", rc.output_dir);
  top.get("seeds", rc.seeds);
  if (top.has("env")) read_env(top.child("env"), rc.train.env);
  if (top.has("train")) read_train(top.child("train"), rc.train);
  if (top.has("loss")) read_loss(top.child("loss"), rc.train.loss);
  if (top.has("theory")) read_theory(top.child("theory"), rc.theory);
  top.finish();
  rc.validate();
  return rc;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

RunConfig load_run_config(const std::string& path) { return parse_run_config(read_text_file(path)); }

std::string serialize(const RunConfig& config) { return to_json(config).dump(2) + "\n"; }

std::string config_hash(const RunConfig& config) {
  const std::string canonical = to_json(config).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : canonical) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string resolve_output_dir(const std::string& configured) {
  const char* root = std::getenv("MASKLAB_OUTPUT_ROOT");
  const std::filesystem::path p(configured);
  if (!root || !*root || p.is_absolute()) return configured;
  return (std::filesystem::path(root) / p).string();
}

MdpFile parse_mdp(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw InputError(std::string("MDP file is not valid JSON: ") + e.what());
  }
  Section s(j, "mdp");
  int S = 0, A = 0;
  double gamma = 0.9;
  std::vector<double> initial;
  s.get("num_states", S);
  s.get("num_actions", A);
  s.get("discount", gamma);
  s.get("initial", initial);
  if (S < 1 || A < 1) throw InputError("mdp.num_states and mdp.num_actions must be positive");
  if (static_cast<int>(initial.size()) != S) throw InputError("mdp.initial must have num_states entries");

  auto index = [&](const json& v, int bound, const char* what) {
    if (!v.is_number_integer()) throw InputError(std::string("mdp: ") + what + " must be an integer");
    const int k = v.get<int>();
    if (k < 0 || k >= bound) throw InputError(std::string("mdp: ") + what + " out of range");
    return k;
  };

  std::vector<std::vector<Transition>> trans(static_cast<std::size_t>(S) * A);
  if (s.has("transitions")) {
    const json& t = s.child("transitions");
    if (!t.is_array()) throw InputError("mdp.transitions must be an array");
    for (const json& e : t) {
      if (!e.is_array() || e.size() != 4 || !e[3].is_number()) {
        throw InputError("mdp.transitions entries must be [s, a, s', p]");
      }
      const int from = index(e[0], S, "state");
      const int a = index(e[1], A, "action");
      const int to = index(e[2], S, "next state");
      trans[static_cast<std::size_t>(from) * A + a].push_back({to, e[3].get<double>()});
    }
  }
  for (int st = 0; st < S; ++st) {
    for (int a = 0; a < A; ++a) {
      auto& list = trans[static_cast<std::size_t>(st) * A + a];
      if (list.empty()) list.push_back({st, 1.0});
    }
  }
  Matrix reward = Matrix::Zero(S, A);
  if (s.has("rewards")) {
    const json& r = s.child("rewards");
    if (!r.is_array()) throw InputError("mdp.rewards must be an array");
    for (const json& e : r) {
      if (!e.is_array() || e.size() != 3 || !e[2].is_number()) {
        throw InputError("mdp.rewards entries must be [s, a, r]");
      }
      reward(index(e[0], S, "state"), index(e[1], A, "action")) = e[2].get<double>();
    }
  }
  std::vector<ValidityMask> masks;
  if (s.has("masks")) {
    const json& m = s.child("masks");
    if (!m.is_array() || static_cast<int>(m.size()) != S) throw InputError("mdp.masks must have num_states rows");
    for (const json& row : m) {
      if (!row.is_array() || static_cast<int>(row.size()) != A) {
        throw InputError("mdp.masks rows must have num_actions entries");
      }
      std::vector<bool> bits;
      for (const json& b : row) {
        if (!b.is_number_integer() && !b.is_boolean()) throw InputError("mdp.masks entries must be 0/1");
        bits.push_back(b.is_boolean() ? b.get<bool>() : b.get<int>() != 0);
      }
      masks.emplace_back(std::move(bits));
    }
  } else {
    masks.assign(static_cast<std::size_t>(S), ValidityMask::all_valid(A));
  }
  s.finish();
  Vector init = Eigen::Map<const Vector>(initial.data(), S);
  return MdpFile{TabularMdp(S, A, std::move(trans), std::move(reward), gamma, std::move(init)), std::move(masks)};
}

MdpFile load_mdp(const std::string& path) { return parse_mdp(read_text_file(path)); }

}  // namespace masklab
