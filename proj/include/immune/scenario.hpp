#pragma once

/**
 * Scenario files: the single JSON document that pins down an experiment.
 *
 * Top-level keys: vocab, policy, reward, prompts, attack (optional),
 * decode, judge, seed. Probabilities may be JSON numbers or decimal
 * strings; both read at full double precision. Loading validates every
 * structural invariant and reports the offending field by path, e.g.
 *
 *     policy.rows["adv"]["h r"]: probabilities sum to 0.900000 (want 1)
 *
 * Serialization round-trips: save(load(file)) is semantically identical to
 * the original scenario.
 */

#include <cstdint>
#include <optional>
#include <string>

#include <immune/adversary.hpp>
#include <immune/decoder.hpp>
#include <immune/policy.hpp>
#include <immune/reward.hpp>

namespace immune {

// Harmfulness judge: a response is harmful when its judged reward falls
// below `threshold`. Judging uses `reward` when given, else the scenario's
// decode-time reward model.
struct JudgeSpec {
  double threshold = 0.5;
  // Responses sampled per query; a query counts as harmful when any of
  // them is judged harmful.
  int n_samples = 3;
  // Number of prompts drawn from the adversarial prompter for the attack
  // success evaluation (0 = skip).
  int n_adv_queries = 0;
  std::optional<RewardModel> reward;
};

struct Scenario {
  TabularPolicy policy;  // owns the vocab
  RewardModel reward;
  PromptSpace prompts;
  std::optional<AttackConfig> attack;
  DecodeConfig decode;
  JudgeSpec judge;
  uint64_t seed = 0;
  long enumeration_cap = kDefaultEnumerationCap;

  const Vocab& vocab() const { return policy.vocab; }
  const RewardModel& judge_reward() const { return judge.reward ? *judge.reward : reward; }

  // Cross-component invariants (prompt ids consistent, threshold inside
  // the reward range, target prefix in range, ...).
  void validate() const;
};

// Throws ParseError on bad JSON, ValidationError (with field path) on a
// structurally invalid document.
Scenario parse_scenario(const std::string& json_text);
Scenario load_scenario(const std::string& path);

// Canonical JSON rendering; parse(to_json(s)) == s semantically.
std::string scenario_to_json(const Scenario& scenario);
void save_scenario(const Scenario& scenario, const std::string& path);

/**
 * Deterministic random scenario generator for property tests and bound
 * sweeps. Rows are symmetric-Dirichlet draws, rewards are uniform on
 * [0, 1] per (prompt, trajectory) with anchor-scored entries for every
 * trajectory in the union support, and p0 concentrates on the anchor.
 * Zero/negative fields mean "draw from the default range".
 */
struct GenSpec {
  uint64_t seed = 1;
  int vocab_size = 0;   // 0: draw from [3, 5]; hard cap 8
  int horizon = 0;      // 0: draw from [2, 3]; hard cap 5
  int n_prompts = 0;    // 0: draw from [2, 4]; hard cap 8
  int order = -1;       // -1: draw from {0, 1}
};

Scenario gen_scenario(const GenSpec& spec);

}  // namespace immune
