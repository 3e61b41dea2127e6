#pragma once

/**
 * Inference-time safety alignment by controlled decoding.
 *
 * At each step the decoder takes the k most probable tokens of the frozen
 * base policy, scores each candidate z by
 *
 *     g(z) = Q(s, z) / alpha + log pi_safe(z | s),
 *
 * and samples the next token from softmax(g). Small alpha trusts the
 * safety value Q; large alpha recovers the base policy. Over the full
 * candidate set this per-step rule equals the closed-form tilt
 *
 *     pi*(z | s)  propto  pi_safe(z | s) * exp(Q(s, z) / alpha),
 *
 * which maximizes E_pi[Q] - alpha * KL(pi || pi_safe) over the candidate
 * simplex; the equivalence is exercised by the test suite.
 *
 * All scoring runs in log domain, so alpha as small as 1e-3 stays finite.
 * Candidates with zero base probability are dropped before scoring (their
 * tilted mass is zero anyway and their log-prob is -inf).
 */

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <immune/policy.hpp>
#include <immune/reward.hpp>
#include <immune/rng.hpp>

namespace immune {

enum class QMode { exact, mc };

struct DecodeConfig {
  // Candidate-set size; clamps to |vocab| on small vocabularies.
  int k = 10;
  // Safety-trust temperature; must be > 0.
  double alpha = 1.0;
  QMode q_mode = QMode::exact;
  // Rollouts per candidate when q_mode == mc.
  int n_rollouts = 32;
  // Response-length bound; 0 means the policy horizon. Values above the
  // policy horizon clamp to it.
  int max_tokens = 0;
  uint64_t seed = 0;
  long enumeration_cap = kDefaultEnumerationCap;

  int effective_k(int vocab_size) const { return k < vocab_size ? k : vocab_size; }
  int effective_horizon(int policy_horizon) const {
    return (max_tokens > 0 && max_tokens < policy_horizon) ? max_tokens : policy_horizon;
  }
};

// Everything the decoder knew at one step, for audit and tests.
struct StepRecord {
  std::vector<int> state;        // response tokens before this step
  std::vector<int> candidates;   // surviving candidate ids, top-k order
  std::vector<double> log_base;  // log pi_safe(z | s) per candidate
  std::vector<double> q_values;  // Q(s, z) per candidate
  std::vector<double> q_std_err; // MC standard errors (0 when exact)
  std::vector<double> scores;    // g(z) = Q/alpha + log pi_safe
  std::vector<double> f;         // softmax(scores), the sampling law
  int chosen = -1;               // sampled token id
};

struct DecodeTrace {
  std::vector<StepRecord> steps;
};

/**
 * Closed-form tilt over an explicit candidate set: normalize
 * base_row[i] * exp(q_values[i] / alpha). Throws ZeroBaseMassError if any
 * candidate has zero base probability, ValidationError on alpha <= 0 or
 * length mismatch.
 */
std::vector<double> closed_form_token_dist(std::span<const double> base_row,
                                           std::span<const double> q_values, double alpha);

/**
 * One decoding step at state (prompt, prefix, partial): form candidates,
 * score, sample from the tilted law using the step's derived stream.
 * Returns the chosen token id inside the filled StepRecord.
 */
StepRecord immune_decode_step(const TabularPolicy& policy, const RewardModel& model,
                              const std::string& prompt, std::span<const int> partial,
                              const DecodeConfig& config, const Rng& master,
                              std::span<const int> prefix = {});

/**
 * Full controlled decode of one response. Stops on a sampled eos or closes
 * with a forced eos at the horizon. Identical (inputs, config, seed) give
 * bit-identical results.
 */
std::pair<Trajectory, DecodeTrace> immune_decode(const TabularPolicy& policy,
                                                 const RewardModel& model,
                                                 const std::string& prompt,
                                                 const DecodeConfig& config,
                                                 std::span<const int> prefix = {});

/**
 * Exact trajectory distribution induced by running the per-step tilted law
 * everywhere (q_mode must be exact). This is the decoder-as-policy object
 * the bound checks compare against the base distribution.
 */
TrajectoryDistribution induced_decoding_policy(const TabularPolicy& policy,
                                               const RewardModel& model,
                                               const std::string& prompt,
                                               const DecodeConfig& config,
                                               std::span<const int> prefix = {});

}  // namespace immune
