#pragma once

/**
 * Safety reward models and exact / Monte-Carlo state-action values.
 *
 * A reward model scores a complete (prompt, response) pair with a real in
 * [r_min, r_max]. Two kinds exist:
 *
 *   - tabular: explicit entries keyed by prompt id and the response's
 *     content tokens (the trailing eos is implied and stripped), with an
 *     optional default for missing pairs;
 *   - rule: score `harmful_score` when at least `min_count` tokens from a
 *     designated harmful set appear, otherwise `base` plus any per-token
 *     bonuses, clamped to [r_min, r_max].
 *
 * The value of appending token z at state s is the expected final reward
 * when the base policy finishes the response:
 *
 *     Q(s, z) = E_{tau ~ rho_safe(.|[s, z])} [ R(prompt, [s, z, tau]) ]
 *
 * q_exact computes the sum over the full continuation tree; q_mc estimates
 * it from seeded rollouts. Appending eos closes the response, so its value
 * is simply the reward of the completed trajectory.
 */

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <immune/policy.hpp>
#include <immune/rng.hpp>

namespace immune {

// ============================================================
// Reward models
// ============================================================

struct RewardRule {
  double base = 1.0;
  // Token ids whose combined occurrence count triggers `harmful_score`.
  std::vector<int> harmful_tokens;
  int min_count = 1;
  double harmful_score = 0.0;
  // Additive bonus per occurrence of a token id (applied when not harmful).
  std::map<int, double> token_bonus;
};

struct RewardModel {
  enum class Kind { tabular, rule };

  Kind kind = Kind::rule;
  double r_min = 0.0;
  double r_max = 1.0;

  // kind == tabular: entries[prompt id][content tokens] = reward.
  std::map<std::string, std::map<std::vector<int>, double>> entries;
  std::optional<double> default_value;

  // kind == rule.
  RewardRule rule;

  // Throws ValidationError on out-of-range entries or r_min >= r_max.
  void validate(const Vocab& vocab) const;
};

// Point value of a state-action pair together with how it was computed.
struct QEstimate {
  double value = 0.0;
  bool exact = true;
  int n_rollouts = 0;
  // Standard error of the MC mean (0 for exact or degenerate estimates).
  double std_err = 0.0;
};

// ============================================================
// Operations
// ============================================================

/**
 * Reward of a complete trajectory under `model`. Tabular lookups strip the
 * trailing eos from `traj` and throw MissingRewardEntryError when the pair
 * is absent and no default is declared.
 */
double reward(const RewardModel& model, const std::string& prompt, const Trajectory& traj);

/**
 * Exact Q(s, z): enumerate every base-policy continuation of
 * [prefix, partial, z] and average the final rewards. `partial` holds the
 * response tokens emitted so far; `prefix` holds conditioning-only tokens
 * (for example an adversarial suffix) that are not scored.
 */
QEstimate q_exact(const TabularPolicy& policy, const RewardModel& model,
                  const std::string& prompt, std::span<const int> partial, int z,
                  std::span<const int> prefix = {}, long cap = kDefaultEnumerationCap);

/**
 * Monte-Carlo Q(s, z) from `n_rollouts` base-policy completions. Rollout j
 * draws from rng.derive(j), so the estimate is a pure function of the seed
 * and is independent of evaluation order.
 */
QEstimate q_mc(const TabularPolicy& policy, const RewardModel& model, const std::string& prompt,
               std::span<const int> partial, int z, int n_rollouts, const Rng& rng,
               std::span<const int> prefix = {});

/**
 * Point mass on the reward-maximizing complete trajectory for `prompt`
 * (the unregularized best response). Ties break toward the canonically
 * smaller trajectory: shorter, then smaller token ids.
 */
TrajectoryDistribution best_response(const TabularPolicy& policy, const RewardModel& model,
                                     const std::string& prompt,
                                     long cap = kDefaultEnumerationCap);

}  // namespace immune
