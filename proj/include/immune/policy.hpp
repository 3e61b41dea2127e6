#pragma once

/**
 * Tabular autoregressive token policies and exact trajectory algebra.
 *
 * A policy maps (prompt id, recent context) to a next-token distribution.
 * Context keys are the last `order` response-side tokens, so order 0 is a
 * bag-of-prompts model and order m is an m-gram model. Every distribution
 * the rest of the library consumes (decoding, attacks, bound checks) is
 * driven by the four exact operations declared here: row lookup, top-k,
 * trajectory enumeration and seeded sampling.
 *
 * Responses are token sequences that end with a single eos. Generation that
 * reaches `horizon` content tokens without sampling eos is closed by a
 * forced eos, which keeps every trajectory finite and every enumeration a
 * finite sum.
 */

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <immune/rng.hpp>
#include <immune/vocab.hpp>

namespace immune {

// Default cap on the number of trajectories exact enumeration may touch.
constexpr long kDefaultEnumerationCap = 1'000'000;

// ============================================================
// Trajectories
// ============================================================

// A complete response: content tokens followed by exactly one eos.
// `eos_forced` records whether the eos was appended by the horizon rule
// rather than sampled from a row.
struct Trajectory {
  std::vector<int> token_ids;
  bool terminated = false;
  bool eos_forced = false;
};

// Canonical order: shorter first, then lexicographic on token ids.
// Used for distribution supports and for argmax tie-breaking.
bool trajectory_less(const Trajectory& a, const Trajectory& b);
bool trajectory_equal(const Trajectory& a, const Trajectory& b);

struct WeightedTrajectory {
  Trajectory traj;
  double prob = 0.0;
};

// Finite distribution over complete trajectories, support in canonical
// order with strictly positive weights.
struct TrajectoryDistribution {
  std::vector<WeightedTrajectory> support;

  double total_mass() const;
  // Probability of `traj`, 0 if absent.
  double prob_of(const Trajectory& traj) const;
  // Throws ValidationError if unsorted, non-positive or mass far from 1.
  void validate() const;
};

// ============================================================
// Tabular policy
// ============================================================

struct TabularPolicy {
  Vocab vocab;
  // Markov order of the context key (last `order` tokens).
  int order = 0;
  // Maximum number of content tokens before eos is forced.
  int horizon = 1;
  // When true, a missing (prompt, context) row falls back to the uniform
  // distribution; when false the lookup is a hard error.
  bool uniform_fallback = false;
  // rows[prompt id][context key] = next-token probabilities (size |vocab|).
  std::map<std::string, std::map<std::vector<int>, std::vector<double>>> rows;

  bool has_prompt(const std::string& prompt) const { return rows.count(prompt) > 0; }

  // Context key for a full left context: its last min(order, len) tokens.
  std::vector<int> context_key(std::span<const int> context) const;

  // Throws ValidationError/MalformedRowError on structural problems.
  void validate() const;
};

// ============================================================
// Operations
// ============================================================

/**
 * Next-token distribution at (prompt, context). Returns the stored row, or
 * the uniform row when the policy declares fallback and the key is missing.
 *
 * Throws UnknownPromptError for an unlisted prompt without fallback,
 * MalformedRowError if the stored row fails validation.
 */
std::vector<double> next_token_dist(const TabularPolicy& policy, const std::string& prompt,
                                    std::span<const int> context);

/**
 * Ids of the k most probable tokens, probability descending; equal
 * probabilities order by smaller id. k larger than the vocabulary clamps.
 */
std::vector<int> top_k(std::span<const double> dist, int k);

/**
 * Exact distribution over complete trajectories reached from `prefix`
 * (conditioning tokens that are not part of the response). Support excludes
 * zero-probability paths, carries eos-forced closures at the horizon, and
 * sums to 1 within 1e-9.
 *
 * Throws EnumerationTooLargeError when |vocab|^horizon or the live support
 * would exceed `cap`.
 */
TrajectoryDistribution enumerate_trajectories(const TabularPolicy& policy,
                                              const std::string& prompt,
                                              std::span<const int> prefix = {},
                                              long cap = kDefaultEnumerationCap);

/**
 * Ancestral sample of one complete trajectory from `prefix` under the base
 * policy, consuming draws from `rng` one row at a time.
 */
Trajectory sample_trajectory(const TabularPolicy& policy, const std::string& prompt, Rng& rng,
                             std::span<const int> prefix = {});

}  // namespace immune
