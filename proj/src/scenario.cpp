#include <immune/scenario.hpp>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include <immune/errors.hpp>
#include <immune/numeric.hpp>

namespace immune {

using nlohmann::json;

// ============================================================
// Parsing helpers
// ============================================================

namespace {

const json& require(const json& obj, const std::string& key, const std::string& path) {
  if (!obj.is_object()) throw ValidationError(path + ": expected an object");
  auto it = obj.find(key);
  if (it == obj.end()) throw ValidationError(path + "." + key + ": missing");
  return *it;
}

// Probabilities and rewards may arrive as JSON numbers or decimal strings;
// both are read at full double precision.
double as_double(const json& v, const std::string& path) {
  if (v.is_number()) return v.get<double>();
  if (v.is_string()) {
    const std::string s = v.get<std::string>();
    char* end = nullptr;
    double x = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0') {
      throw ValidationError(path + ": \"" + s + "\" is not a decimal number");
    }
    return x;
  }
  throw ValidationError(path + ": expected a number or decimal string");
}

long as_long(const json& v, const std::string& path) {
  if (v.is_number_integer()) return v.get<long>();
  if (v.is_number_unsigned()) return static_cast<long>(v.get<unsigned long>());
  throw ValidationError(path + ": expected an integer");
}

uint64_t as_u64(const json& v, const std::string& path) {
  if (v.is_number_unsigned()) return v.get<uint64_t>();
  if (v.is_number_integer()) {
    long x = v.get<long>();
    if (x < 0) throw ValidationError(path + ": expected a non-negative integer");
    return static_cast<uint64_t>(x);
  }
  throw ValidationError(path + ": expected a non-negative integer");
}

std::string as_string(const json& v, const std::string& path) {
  if (!v.is_string()) throw ValidationError(path + ": expected a string");
  return v.get<std::string>();
}

int token_id(const Vocab& vocab, const std::string& symbol, const std::string& path) {
  int id = vocab.id_of(symbol);
  if (id < 0) throw ValidationError(path + ": unknown token \"" + symbol + "\"");
  return id;
}

// "h r" -> {id(h), id(r)}; "" -> {}.
std::vector<int> parse_token_string(const Vocab& vocab, const std::string& text,
                                    const std::string& path) {
  std::vector<int> out;
  std::istringstream in(text);
  std::string symbol;
  while (in >> symbol) out.push_back(token_id(vocab, symbol, path));
  return out;
}

std::string join_tokens(const Vocab& vocab, std::span<const int> ids) {
  std::string out;
  for (size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += vocab.symbol(ids[i]);
  }
  return out;
}

std::vector<int> parse_token_array(const Vocab& vocab, const json& arr,
                                   const std::string& path) {
  if (!arr.is_array()) throw ValidationError(path + ": expected an array of token symbols");
  std::vector<int> out;
  for (size_t i = 0; i < arr.size(); ++i) {
    out.push_back(token_id(vocab, as_string(arr[i], path + "[" + std::to_string(i) + "]"),
                           path + "[" + std::to_string(i) + "]"));
  }
  return out;
}

Vocab parse_vocab(const json& j) {
  Vocab vocab;
  const json& toks = require(j, "tokens", "vocab");
  if (!toks.is_array()) throw ValidationError("vocab.tokens: expected an array");
  for (size_t i = 0; i < toks.size(); ++i) {
    vocab.tokens.push_back(as_string(toks[i], "vocab.tokens[" + std::to_string(i) + "]"));
  }
  vocab.eos_id = vocab.id_of(as_string(require(j, "eos", "vocab"), "vocab.eos"));
  if (vocab.eos_id < 0) throw ValidationError("vocab.eos: symbol not in vocab.tokens");
  vocab.validate();
  return vocab;
}

TabularPolicy parse_policy(const json& j, const Vocab& vocab) {
  TabularPolicy policy;
  policy.vocab = vocab;
  policy.order = static_cast<int>(as_long(require(j, "order", "policy"), "policy.order"));
  policy.horizon = static_cast<int>(as_long(require(j, "horizon", "policy"), "policy.horizon"));
  if (j.contains("uniform_fallback")) {
    if (!j["uniform_fallback"].is_boolean()) {
      throw ValidationError("policy.uniform_fallback: expected a boolean");
    }
    policy.uniform_fallback = j["uniform_fallback"].get<bool>();
  }
  const json& rows = require(j, "rows", "policy");
  if (!rows.is_object()) throw ValidationError("policy.rows: expected an object");
  for (const auto& [prompt, table] : rows.items()) {
    if (!table.is_object()) {
      throw ValidationError("policy.rows[\"" + prompt + "\"]: expected an object");
    }
    for (const auto& [ctx_text, row_json] : table.items()) {
      std::string path = "policy.rows[\"" + prompt + "\"][\"" + ctx_text + "\"]";
      std::vector<int> key = parse_token_string(vocab, ctx_text, path);
      if (!row_json.is_array()) throw ValidationError(path + ": expected an array");
      std::vector<double> row;
      for (size_t i = 0; i < row_json.size(); ++i) {
        row.push_back(as_double(row_json[i], path + "[" + std::to_string(i) + "]"));
      }
      policy.rows[prompt][key] = std::move(row);
    }
  }
  policy.validate();
  return policy;
}

RewardModel parse_reward(const json& j, const Vocab& vocab, const std::string& base_path) {
  RewardModel model;
  std::string kind = as_string(require(j, "kind", base_path), base_path + ".kind");
  if (kind == "tabular") {
    model.kind = RewardModel::Kind::tabular;
  } else if (kind == "rule") {
    model.kind = RewardModel::Kind::rule;
  } else {
    throw ValidationError(base_path + ".kind: \"" + kind + "\" (want \"tabular\" or \"rule\")");
  }
  if (j.contains("r_min")) model.r_min = as_double(j["r_min"], base_path + ".r_min");
  if (j.contains("r_max")) model.r_max = as_double(j["r_max"], base_path + ".r_max");

  if (model.kind == RewardModel::Kind::tabular) {
    const json& entries = require(j, "entries", base_path);
    if (!entries.is_object()) throw ValidationError(base_path + ".entries: expected an object");
    for (const auto& [prompt, table] : entries.items()) {
      if (!table.is_object()) {
        throw ValidationError(base_path + ".entries[\"" + prompt + "\"]: expected an object");
      }
      for (const auto& [traj_text, r_json] : table.items()) {
        std::string path = base_path + ".entries[\"" + prompt + "\"][\"" + traj_text + "\"]";
        std::vector<int> key = parse_token_string(vocab, traj_text, path);
        // A trailing eos in the key is allowed and canonicalized away.
        if (!key.empty() && key.back() == vocab.eos_id) key.pop_back();
        for (int id : key) {
          if (id == vocab.eos_id) throw ValidationError(path + ": eos inside the response");
        }
        model.entries[prompt][key] = as_double(r_json, path);
      }
    }
    if (j.contains("default")) {
      model.default_value = as_double(j["default"], base_path + ".default");
    }
  } else {
    const json& rule = require(j, "rule", base_path);
    std::string path = base_path + ".rule";
    if (rule.contains("base")) model.rule.base = as_double(rule["base"], path + ".base");
    if (rule.contains("harmful_tokens")) {
      model.rule.harmful_tokens =
          parse_token_array(vocab, rule["harmful_tokens"], path + ".harmful_tokens");
    }
    if (rule.contains("min_count")) {
      model.rule.min_count =
          static_cast<int>(as_long(rule["min_count"], path + ".min_count"));
    }
    if (rule.contains("harmful_score")) {
      model.rule.harmful_score = as_double(rule["harmful_score"], path + ".harmful_score");
    }
    if (rule.contains("token_bonus")) {
      if (!rule["token_bonus"].is_object()) {
        throw ValidationError(path + ".token_bonus: expected an object");
      }
      for (const auto& [symbol, bonus] : rule["token_bonus"].items()) {
        int id = token_id(vocab, symbol, path + ".token_bonus");
        model.rule.token_bonus[id] = as_double(bonus, path + ".token_bonus[\"" + symbol + "\"]");
      }
    }
  }
  model.validate(vocab);
  return model;
}

PromptSpace parse_prompts(const json& j) {
  PromptSpace space;
  const json& ids = require(j, "ids", "prompts");
  if (!ids.is_array()) throw ValidationError("prompts.ids: expected an array");
  for (size_t i = 0; i < ids.size(); ++i) {
    space.ids.push_back(as_string(ids[i], "prompts.ids[" + std::to_string(i) + "]"));
  }
  const json& p0 = require(j, "p0", "prompts");
  if (!p0.is_array()) throw ValidationError("prompts.p0: expected an array");
  for (size_t i = 0; i < p0.size(); ++i) {
    space.p0.push_back(as_double(p0[i], "prompts.p0[" + std::to_string(i) + "]"));
  }
  space.anchor = as_string(require(j, "anchor", "prompts"), "prompts.anchor");
  space.validate();
  return space;
}

AttackConfig parse_attack(const json& j, const Vocab& vocab) {
  AttackConfig attack;
  attack.beta = as_double(require(j, "beta", "attack"), "attack.beta");
  if (j.contains("suffix_len")) {
    attack.suffix_len = static_cast<int>(as_long(j["suffix_len"], "attack.suffix_len"));
  }
  if (j.contains("target_prefix")) {
    attack.target_prefix = parse_token_array(vocab, j["target_prefix"], "attack.target_prefix");
  }
  if (j.contains("search_budget")) {
    attack.search_budget = as_long(j["search_budget"], "attack.search_budget");
  }
  if (!(attack.beta > 0.0)) throw ValidationError("attack.beta: must be > 0");
  if (attack.suffix_len < 0) throw ValidationError("attack.suffix_len: negative");
  if (attack.search_budget < 1) throw ValidationError("attack.search_budget: must be >= 1");
  return attack;
}

DecodeConfig parse_decode(const json& j, uint64_t scenario_seed) {
  DecodeConfig config;
  config.seed = scenario_seed;
  if (j.contains("k")) config.k = static_cast<int>(as_long(j["k"], "decode.k"));
  if (j.contains("alpha")) config.alpha = as_double(j["alpha"], "decode.alpha");
  if (j.contains("q_mode")) {
    std::string mode = as_string(j["q_mode"], "decode.q_mode");
    if (mode == "exact") {
      config.q_mode = QMode::exact;
    } else if (mode == "mc") {
      config.q_mode = QMode::mc;
    } else {
      throw ValidationError("decode.q_mode: \"" + mode + "\" (want \"exact\" or \"mc\")");
    }
  }
  if (j.contains("n_rollouts")) {
    config.n_rollouts = static_cast<int>(as_long(j["n_rollouts"], "decode.n_rollouts"));
  }
  if (j.contains("max_tokens")) {
    config.max_tokens = static_cast<int>(as_long(j["max_tokens"], "decode.max_tokens"));
  }
  if (config.k < 1) throw ValidationError("decode.k: must be >= 1");
  if (!(config.alpha > 0.0)) throw ValidationError("decode.alpha: must be > 0");
  if (config.n_rollouts < 1) throw ValidationError("decode.n_rollouts: must be >= 1");
  if (config.max_tokens < 0) throw ValidationError("decode.max_tokens: negative");
  return config;
}

JudgeSpec parse_judge(const json& j, const Vocab& vocab) {
  JudgeSpec judge;
  judge.threshold = as_double(require(j, "threshold", "judge"), "judge.threshold");
  if (j.contains("n_samples")) {
    judge.n_samples = static_cast<int>(as_long(j["n_samples"], "judge.n_samples"));
  }
  if (j.contains("n_adv_queries")) {
    judge.n_adv_queries = static_cast<int>(as_long(j["n_adv_queries"], "judge.n_adv_queries"));
  }
  if (j.contains("reward")) judge.reward = parse_reward(j["reward"], vocab, "judge.reward");
  if (judge.n_samples < 1) throw ValidationError("judge.n_samples: must be >= 1");
  if (judge.n_adv_queries < 0) throw ValidationError("judge.n_adv_queries: negative");
  return judge;
}

}  // namespace

// ============================================================
// Scenario
// ============================================================

void Scenario::validate() const {
  policy.validate();
  reward.validate(policy.vocab);
  prompts.validate();
  if (judge.reward) judge.reward->validate(policy.vocab);

  const RewardModel& jr = judge_reward();
  if (!(judge.threshold > jr.r_min && judge.threshold < jr.r_max)) {
    throw ValidationError("judge.threshold: " + format_double(judge.threshold) +
                          " must lie strictly inside (" + format_double(jr.r_min) + ", " +
                          format_double(jr.r_max) + ")");
  }
  if (!policy.uniform_fallback) {
    for (const std::string& id : prompts.ids) {
      if (!policy.has_prompt(id)) {
        throw ValidationError("prompts.ids: prompt \"" + id +
                              "\" has no policy rows and uniform_fallback is off");
      }
    }
  }
  if (attack) {
    if (!attack->target_prefix.empty()) {
      int content = 0;
      for (size_t i = 0; i < attack->target_prefix.size(); ++i) {
        int y = attack->target_prefix[i];
        if (y == policy.vocab.eos_id && i + 1 != attack->target_prefix.size()) {
          throw ValidationError("attack.target_prefix: eos before the final position");
        }
        if (y != policy.vocab.eos_id) ++content;
      }
      if (content > policy.horizon) {
        throw ValidationError("attack.target_prefix: content length exceeds policy.horizon");
      }
    } else if (attack->suffix_len > 0) {
      throw ValidationError("attack.target_prefix: required when suffix_len > 0");
    }
  }
  if (judge.n_adv_queries > 0 && !attack) {
    throw ValidationError("judge.n_adv_queries: requires an attack block (for beta)");
  }
  if (enumeration_cap < 1) throw ValidationError("enumeration_cap: must be >= 1");
}

Scenario parse_scenario(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("scenario: invalid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ValidationError("scenario: top level must be an object");

  Scenario scenario;
  Vocab vocab = parse_vocab(require(doc, "vocab", "scenario"));
  if (doc.contains("seed")) scenario.seed = as_u64(doc["seed"], "seed");
  scenario.policy = parse_policy(require(doc, "policy", "scenario"), vocab);
  scenario.reward = parse_reward(require(doc, "reward", "scenario"), vocab, "reward");
  scenario.prompts = parse_prompts(require(doc, "prompts", "scenario"));
  if (doc.contains("attack") && !doc["attack"].is_null()) {
    scenario.attack = parse_attack(doc["attack"], vocab);
  }
  scenario.decode = doc.contains("decode") ? parse_decode(doc["decode"], scenario.seed)
                                           : DecodeConfig{.seed = scenario.seed};
  if (doc.contains("judge")) {
    scenario.judge = parse_judge(doc["judge"], vocab);
  }
  if (doc.contains("enumeration_cap")) {
    scenario.enumeration_cap = as_long(doc["enumeration_cap"], "enumeration_cap");
  }
  scenario.decode.enumeration_cap = scenario.enumeration_cap;
  scenario.validate();
  return scenario;
}

Scenario load_scenario(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("scenario: cannot open \"" + path + "\"");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_scenario(buf.str());
}

// ============================================================
// Serialization
// ============================================================

namespace {

json reward_to_json(const RewardModel& model, const Vocab& vocab) {
  json j;
  j["kind"] = model.kind == RewardModel::Kind::tabular ? "tabular" : "rule";
  j["r_min"] = model.r_min;
  j["r_max"] = model.r_max;
  if (model.kind == RewardModel::Kind::tabular) {
    json entries = json::object();
    for (const auto& [prompt, table] : model.entries) {
      json t = json::object();
      for (const auto& [tokens, r] : table) t[join_tokens(vocab, tokens)] = r;
      entries[prompt] = std::move(t);
    }
    j["entries"] = std::move(entries);
    if (model.default_value) j["default"] = *model.default_value;
  } else {
    json rule;
    rule["base"] = model.rule.base;
    json harmful = json::array();
    for (int id : model.rule.harmful_tokens) harmful.push_back(vocab.symbol(id));
    rule["harmful_tokens"] = std::move(harmful);
    rule["min_count"] = model.rule.min_count;
    rule["harmful_score"] = model.rule.harmful_score;
    if (!model.rule.token_bonus.empty()) {
      json bonus = json::object();
      for (const auto& [id, b] : model.rule.token_bonus) bonus[vocab.symbol(id)] = b;
      rule["token_bonus"] = std::move(bonus);
    }
    j["rule"] = std::move(rule);
  }
  return j;
}

}  // namespace

std::string scenario_to_json(const Scenario& scenario) {
  const Vocab& vocab = scenario.vocab();
  json doc;

  doc["vocab"]["tokens"] = vocab.tokens;
  doc["vocab"]["eos"] = vocab.symbol(vocab.eos_id);

  json rows = json::object();
  for (const auto& [prompt, table] : scenario.policy.rows) {
    json t = json::object();
    for (const auto& [key, row] : table) t[join_tokens(vocab, key)] = row;
    rows[prompt] = std::move(t);
  }
  doc["policy"] = {{"order", scenario.policy.order},
                   {"horizon", scenario.policy.horizon},
                   {"uniform_fallback", scenario.policy.uniform_fallback},
                   {"rows", std::move(rows)}};

  doc["reward"] = reward_to_json(scenario.reward, vocab);

  doc["prompts"] = {{"ids", scenario.prompts.ids},
                    {"p0", scenario.prompts.p0},
                    {"anchor", scenario.prompts.anchor}};

  if (scenario.attack) {
    json target = json::array();
    for (int id : scenario.attack->target_prefix) target.push_back(vocab.symbol(id));
    doc["attack"] = {{"beta", scenario.attack->beta},
                     {"suffix_len", scenario.attack->suffix_len},
                     {"target_prefix", std::move(target)},
                     {"search_budget", scenario.attack->search_budget}};
  }

  doc["decode"] = {{"k", scenario.decode.k},
                   {"alpha", scenario.decode.alpha},
                   {"q_mode", scenario.decode.q_mode == QMode::exact ? "exact" : "mc"},
                   {"n_rollouts", scenario.decode.n_rollouts},
                   {"max_tokens", scenario.decode.max_tokens}};

  doc["judge"] = {{"threshold", scenario.judge.threshold},
                  {"n_samples", scenario.judge.n_samples},
                  {"n_adv_queries", scenario.judge.n_adv_queries}};
  if (scenario.judge.reward) {
    doc["judge"]["reward"] = reward_to_json(*scenario.judge.reward, vocab);
  }

  doc["seed"] = scenario.seed;
  doc["enumeration_cap"] = scenario.enumeration_cap;
  return doc.dump(2) + "\n";
}

void save_scenario(const Scenario& scenario, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("scenario: cannot write \"" + path + "\"");
  out << scenario_to_json(scenario);
}

// ============================================================
// Generator
// ============================================================

namespace {

int draw_int(Rng& rng, int lo, int hi) {
  int span = hi - lo + 1;
  int v = lo + static_cast<int>(rng.next_double() * span);
  return std::min(v, hi);
}

// Symmetric Dirichlet(1) row via normalized exponentials; the tiny floor
// keeps weights strictly positive even on a pathological draw.
std::vector<double> dirichlet_row(Rng& rng, int n) {
  std::vector<double> w(static_cast<size_t>(n));
  double sum = 0.0;
  for (double& x : w) {
    x = -std::log(rng.next_double_open()) + 1e-12;
    sum += x;
  }
  for (double& x : w) x /= sum;
  return w;
}

// All content-token contexts of exactly `len` tokens, lexicographic order.
void content_contexts(const Vocab& vocab, int len, std::vector<int>& current,
                      std::vector<std::vector<int>>& out) {
  if (len == 0) {
    out.push_back(current);
    return;
  }
  for (int z = 0; z < vocab.size(); ++z) {
    if (z == vocab.eos_id) continue;
    current.push_back(z);
    content_contexts(vocab, len - 1, current, out);
    current.pop_back();
  }
}

}  // namespace

Scenario gen_scenario(const GenSpec& spec) {
  Rng root(spec.seed);
  Rng r_sizes = root.derive(stream_tag::kGen).derive(1);
  Rng r_rows = root.derive(stream_tag::kGen).derive(2);
  Rng r_rewards = root.derive(stream_tag::kGen).derive(3);
  Rng r_p0 = root.derive(stream_tag::kGen).derive(4);

  int n_vocab = spec.vocab_size > 0 ? std::clamp(spec.vocab_size, 2, 8) : draw_int(r_sizes, 3, 5);
  int horizon = spec.horizon > 0 ? std::clamp(spec.horizon, 1, 5) : draw_int(r_sizes, 2, 3);
  int n_prompts = spec.n_prompts > 0 ? std::clamp(spec.n_prompts, 1, 8) : draw_int(r_sizes, 2, 4);
  int order = spec.order >= 0 ? std::clamp(spec.order, 0, 3) : draw_int(r_sizes, 0, 1);

  Scenario scenario;
  scenario.seed = spec.seed;

  Vocab vocab;
  for (int i = 0; i + 1 < n_vocab; ++i) vocab.tokens.push_back("t" + std::to_string(i));
  vocab.tokens.push_back("</s>");
  vocab.eos_id = n_vocab - 1;

  scenario.policy.vocab = vocab;
  scenario.policy.order = order;
  scenario.policy.horizon = horizon;
  scenario.policy.uniform_fallback = false;

  // Rows for every reachable context key (content tokens only, since
  // generated scenarios carry no attack suffix).
  int max_key_len = std::min(order, horizon - 1);
  std::vector<std::vector<int>> keys;
  for (int len = 0; len <= max_key_len; ++len) {
    std::vector<int> current;
    content_contexts(vocab, len, current, keys);
  }
  for (int p = 0; p < n_prompts; ++p) {
    std::string id = "q" + std::to_string(p);
    for (const auto& key : keys) {
      scenario.policy.rows[id][key] = dirichlet_row(r_rows, n_vocab);
    }
  }

  for (int p = 0; p < n_prompts; ++p) scenario.prompts.ids.push_back("q" + std::to_string(p));
  scenario.prompts.anchor = "q0";

  // Anchor-heavy base prompt distribution.
  {
    double w0 = 0.7 + 0.25 * r_p0.next_double();
    scenario.prompts.p0.assign(static_cast<size_t>(n_prompts), 0.0);
    scenario.prompts.p0[0] = w0;
    if (n_prompts > 1) {
      std::vector<double> rest = dirichlet_row(r_p0, n_prompts - 1);
      for (int p = 1; p < n_prompts; ++p) {
        scenario.prompts.p0[static_cast<size_t>(p)] = (1.0 - w0) * rest[static_cast<size_t>(p - 1)];
      }
    } else {
      scenario.prompts.p0[0] = 1.0;
    }
  }

  // Tabular rewards: uniform draws per (prompt, trajectory) over each
  // prompt's support, plus anchor-scored entries for the union support so
  // the prompter's anchor-scored objective is always defined.
  scenario.reward.kind = RewardModel::Kind::tabular;
  scenario.reward.r_min = 0.0;
  scenario.reward.r_max = 1.0;
  for (int p = 0; p < n_prompts; ++p) {
    std::string id = "q" + std::to_string(p);
    TrajectoryDistribution dist = enumerate_trajectories(scenario.policy, id);
    for (const auto& wt : dist.support) {
      std::vector<int> key = wt.traj.token_ids;
      key.pop_back();  // strip eos
      scenario.reward.entries[id][key] = r_rewards.next_double();
    }
  }
  for (int p = 1; p < n_prompts; ++p) {
    std::string id = "q" + std::to_string(p);
    for (const auto& [key, r] : scenario.reward.entries[id]) {
      if (!scenario.reward.entries["q0"].count(key)) {
        scenario.reward.entries["q0"][key] = r_rewards.next_double();
      }
    }
  }

  scenario.decode = DecodeConfig{.seed = spec.seed};
  scenario.judge.threshold = 0.5;
  scenario.judge.n_samples = 3;
  scenario.judge.n_adv_queries = 0;
  scenario.enumeration_cap = kDefaultEnumerationCap;
  scenario.decode.enumeration_cap = scenario.enumeration_cap;

  scenario.validate();
  return scenario;
}

}  // namespace immune
