#pragma once

/**
 * Suboptimality accounting for the controlled decoder under adversarial
 * prompting, and numerical verification of the safety bound.
 *
 * With p0 the base prompt distribution, p_adv the KL-regularized prompter,
 * rho* the per-prompt best-response point mass and rho_dec the decoder's
 * induced trajectory distribution, the gap splits as
 *
 *   delta1 = E_{p0, rho*}[R]    - E_{p_adv, rho*}[R]     (prompt shift)
 *   delta2 = E_{p_adv, rho*}[R] - E_{p_adv, rho_dec}[R]  (decoding slack)
 *   delta  = delta1 + delta2.
 *
 * The checked bound is the chain
 *
 *   delta1 <= R_max * TV(p0, p_adv)                      (tv_step)
 *          <= R_max * sqrt(KL(p0 || p_adv) / 2)          (pinsker)
 *   KL(p0 || p_adv) <= (E_{p0}[J] - min J) / beta        (prompt_kl)
 *   delta2 <= alpha * KL(rho* || rho_safe)               (delta2_bound)
 *
 * giving delta <= R_max * sqrt(KL/2) + alpha * KL(rho*||rho_safe); the
 * looser sqrt(KL) headline form is reported alongside. The policy-KL term
 * is evaluated at the anchor prompt; per-prompt KLs are kept as
 * diagnostics. Every inequality is checked with 1e-9 additive slack.
 */

#include <map>
#include <span>
#include <string>
#include <vector>

#include <immune/adversary.hpp>
#include <immune/decoder.hpp>
#include <immune/policy.hpp>
#include <immune/reward.hpp>

namespace immune {

// E_{x ~ prompt_dist} E_{tau ~ response_dist[x]} [ R(x, tau) ].
double expected_reward(std::span<const double> prompt_dist,
                       const std::map<std::string, TrajectoryDistribution>& response_dists,
                       const RewardModel& model, const PromptSpace& space);

struct SubGap {
  double delta1 = 0.0;
  double delta2 = 0.0;
  double delta_total = 0.0;  // E_{p0,rho*}[R] - E_{p_adv,rho_dec}[R]
};

/**
 * Exact gap decomposition for a given prompter distribution and decoder
 * configuration (q_mode must be exact).
 */
SubGap sub_gap(const PromptSpace& space, std::span<const double> p_adv,
               const TabularPolicy& policy, const RewardModel& model,
               const DecodeConfig& config, long cap = kDefaultEnumerationCap);

struct GapReport {
  double alpha = 0.0;
  double beta = 0.0;

  double delta1 = 0.0;
  double delta2 = 0.0;
  double delta_total = 0.0;

  // R_max * sqrt(KL(p0 || p_adv)): headline prompt term.
  double term_prompt = 0.0;
  // alpha * KL(rho* || rho_safe) at the anchor prompt.
  double term_policy = 0.0;
  // Checked bound: R_max * sqrt(KL/2) + term_policy.
  double bound_rhs = 0.0;
  // Headline bound: term_prompt + term_policy.
  double bound_rhs_statement = 0.0;

  double kl_p0_padv = 0.0;
  double tv_p0_padv = 0.0;
  double kl_rhostar_rhosafe = 0.0;
  // (E_{p0}[J] - min_q J(q)) / beta, the prompt-KL upper bound.
  double kl_prompt_bound_rhs = 0.0;

  // Diagnostics: KL(rho*(.|x) || rho_safe(.|x)) per prompt, ids order.
  std::vector<double> per_prompt_policy_kl;

  struct Holds {
    bool theorem = false;      // delta_total <= bound_rhs + tol
    bool statement = false;    // delta_total <= bound_rhs_statement + tol
    bool tv_step = false;      // delta1 <= R_max * TV + tol
    bool pinsker = false;      // TV <= sqrt(KL/2) + tol
    bool prompt_kl = false;    // KL <= kl_prompt_bound_rhs + tol
    bool delta2_bound = false; // delta2 <= term_policy + tol
    bool all() const { return theorem && statement && tv_step && pinsker && prompt_kl && delta2_bound; }
  } holds;
};

// Additive slack applied to every bound check.
constexpr double kBoundTol = 1e-9;

/**
 * Full safety-bound verification at one (alpha, beta): build the prompter,
 * the per-prompt best responses and the induced decoder over the complete
 * candidate set, then evaluate every link of the chain exactly.
 */
GapReport theorem1_check(const PromptSpace& space, const TabularPolicy& policy,
                         const RewardModel& model, double alpha, double beta,
                         long cap = kDefaultEnumerationCap);

struct SweepRow {
  double alpha = 0.0;
  double delta2 = 0.0;
  // alpha * KL(rho* || rho_safe) at the anchor.
  double bound_term = 0.0;
};

// Decoding slack as a function of alpha at fixed prompter strength beta.
std::vector<SweepRow> alpha_sweep(const PromptSpace& space, const TabularPolicy& policy,
                                  const RewardModel& model, std::span<const double> alphas,
                                  double beta, long cap = kDefaultEnumerationCap);

}  // namespace immune
