#pragma once

/**
 * Adversarial prompter constructions.
 *
 * Two attack surfaces are modeled:
 *
 *   1. Suffix attacks: find the fixed-length token suffix q that minimizes
 *      the base policy's negative log-likelihood of a harmful target prefix,
 *
 *          minimize  sum_i -log pi_safe(y_i | [x, q, y_<i]),
 *
 *      by exhaustive search when the suffix space fits the budget and by
 *      greedy coordinate descent otherwise. Suffixes condition the policy
 *      only; they are never scored as response content, and eos is excluded
 *      from the suffix alphabet because a prompt fragment cannot contain an
 *      end-of-response marker.
 *
 *   2. KL-regularized prompt re-weighting: over a finite prompt space with
 *      base distribution p0, the prompter that minimizes
 *
 *          E_{q~p}[ J(q) ] + beta * KL(p || p0)
 *
 *      has the closed form p_adv(q) propto p0(q) * exp(-J(q) / beta), where
 *      J(q) is the expected safety reward of the base policy's responses to
 *      q. By default J scores responses against the anchor prompt's reward
 *      entries (the attacker's own harmful intent); a flag scores against q
 *      instead.
 */

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <immune/policy.hpp>
#include <immune/reward.hpp>

namespace immune {

// Finite prompt space with its base distribution and designated anchor
// (the harmful request whose safety the attacker wants to break).
struct PromptSpace {
  std::vector<std::string> ids;
  std::vector<double> p0;
  std::string anchor;

  int anchor_index() const;
  // Throws ValidationError on empty ids, duplicate ids, bad p0, or an
  // anchor not present in ids.
  void validate() const;
};

struct AttackConfig {
  // KL-regularization strength of the prompter; must be > 0.
  double beta = 1.0;
  // Length of the optimized suffix; 0 disables the suffix attack.
  int suffix_len = 0;
  // Harmful target tokens whose likelihood the suffix maximizes.
  std::vector<int> target_prefix;
  // Exhaustive search is used while (|vocab|-1)^suffix_len <= budget;
  // beyond it the search falls back to coordinate descent.
  long search_budget = 4096;
};

struct SuffixAttackResult {
  std::vector<int> suffix;
  // Negative log-likelihood of the target prefix given [prompt, suffix].
  double loss = 0.0;
  // True when the result came from exhaustive search.
  bool exact = false;
  long evaluations = 0;
};

struct AdversarialPrompter {
  // p_adv over the prompt space, same index order as PromptSpace::ids.
  std::vector<double> dist;
  // J(q) per prompt (expected safety reward of base responses).
  std::vector<double> j_values;
  // E_{p_adv}[J] + beta * KL(p_adv || p0), the minimized objective.
  double objective_value = 0.0;
};

/**
 * Optimize a suffix for (policy, prompt, config.target_prefix). Throws
 * TargetUnreachableError when every examined suffix leaves the target at
 * probability zero, ValidationError on an empty target or bad lengths.
 */
SuffixAttackResult suffix_attack(const TabularPolicy& policy, const std::string& prompt,
                                 const AttackConfig& config);

/**
 * Prompter objective E_{q~p}[J(q)] + beta * KL(p || p0) for an arbitrary
 * distribution p over the space. beta = 0 evaluates the unregularized
 * expected reward. `score_with_prompt` switches J to reward entries of q
 * itself instead of the anchor.
 */
double prompter_objective(std::span<const double> p, const TabularPolicy& policy,
                          const RewardModel& model, const PromptSpace& space, double beta,
                          bool score_with_prompt = false,
                          long cap = kDefaultEnumerationCap);

/**
 * Closed-form optimal prompter p_adv(q) propto p0(q) * exp(-J(q)/beta).
 * Prompts outside supp(p0) stay at probability zero. Throws
 * ValidationError on beta <= 0.
 */
AdversarialPrompter kl_prompter(const TabularPolicy& policy, const RewardModel& model,
                                const PromptSpace& space, double beta,
                                bool score_with_prompt = false,
                                long cap = kDefaultEnumerationCap);

}  // namespace immune
