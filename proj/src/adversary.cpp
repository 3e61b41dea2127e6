#include <immune/adversary.hpp>

#include <algorithm>
#include <cmath>
#include <limits>

#include <immune/distance.hpp>
#include <immune/errors.hpp>
#include <immune/numeric.hpp>

namespace immune {

// ============================================================
// PromptSpace
// ============================================================

int PromptSpace::anchor_index() const {
  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] == anchor) return static_cast<int>(i);
  }
  return -1;
}

void PromptSpace::validate() const {
  if (ids.empty()) throw ValidationError("prompts.ids: empty");
  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i].empty()) throw ValidationError("prompts.ids[" + std::to_string(i) + "]: empty id");
    for (size_t j = i + 1; j < ids.size(); ++j) {
      if (ids[i] == ids[j]) throw ValidationError("prompts.ids: duplicate id \"" + ids[i] + "\"");
    }
  }
  if (p0.size() != ids.size()) {
    throw ValidationError("prompts.p0: " + std::to_string(p0.size()) + " weights for " +
                          std::to_string(ids.size()) + " prompts");
  }
  double sum = 0.0;
  for (size_t i = 0; i < p0.size(); ++i) {
    if (p0[i] < 0.0 || !std::isfinite(p0[i])) {
      throw ValidationError("prompts.p0[" + std::to_string(i) + "]: weight " +
                            format_double(p0[i]));
    }
    sum += p0[i];
  }
  if (std::abs(sum - 1.0) > kProbTol) {
    throw ValidationError("prompts.p0: weights sum to " + format_double(sum) +
                          " (want 1 within 1e-9)");
  }
  if (anchor_index() < 0) {
    throw ValidationError("prompts.anchor: \"" + anchor + "\" not in prompts.ids");
  }
}

// ============================================================
// Suffix attack
// ============================================================

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// NLL of the target prefix given [prompt, suffix]; +inf when any target
// token has zero probability along the way.
double target_nll(const TabularPolicy& policy, const std::string& prompt,
                  std::span<const int> suffix, std::span<const int> target) {
  std::vector<int> context(suffix.begin(), suffix.end());
  double loss = 0.0;
  for (int y : target) {
    std::vector<double> row = next_token_dist(policy, prompt, context);
    if (row[y] <= 0.0) return kInf;
    loss -= std::log(row[y]);
    context.push_back(y);
  }
  return loss;
}

void validate_attack_target(const TabularPolicy& policy, const AttackConfig& config) {
  if (config.suffix_len < 0) throw ValidationError("attack.suffix_len: negative");
  if (config.search_budget < 1) throw ValidationError("attack.search_budget: must be >= 1");
  if (config.target_prefix.empty()) {
    throw ValidationError("attack.target_prefix: empty target");
  }
  int content = 0;
  for (size_t i = 0; i < config.target_prefix.size(); ++i) {
    int y = config.target_prefix[i];
    if (y < 0 || y >= policy.vocab.size()) {
      throw ValidationError("attack.target_prefix[" + std::to_string(i) + "]: token id " +
                            std::to_string(y) + " out of range");
    }
    if (y == policy.vocab.eos_id && i + 1 != config.target_prefix.size()) {
      throw ValidationError("attack.target_prefix: eos before the final position");
    }
    if (y != policy.vocab.eos_id) ++content;
  }
  if (content > policy.horizon) {
    throw ValidationError("attack.target_prefix: " + std::to_string(content) +
                          " content tokens exceed horizon " + std::to_string(policy.horizon));
  }
}

}  // namespace

SuffixAttackResult suffix_attack(const TabularPolicy& policy, const std::string& prompt,
                                 const AttackConfig& config) {
  validate_attack_target(policy, config);

  // Suffixes are prompt-side conditioning, so the end-of-response marker is
  // excluded from their alphabet.
  std::vector<int> alphabet;
  for (int z = 0; z < policy.vocab.size(); ++z) {
    if (z != policy.vocab.eos_id) alphabet.push_back(z);
  }

  SuffixAttackResult result;
  const int L = config.suffix_len;

  if (L == 0) {
    result.suffix = {};
    result.loss = target_nll(policy, prompt, result.suffix, config.target_prefix);
    result.exact = true;
    result.evaluations = 1;
    if (result.loss == kInf) {
      throw TargetUnreachableError("suffix_attack: target prefix has probability 0");
    }
    return result;
  }

  double space = std::pow(static_cast<double>(alphabet.size()), static_cast<double>(L));
  bool exhaustive = space <= static_cast<double>(config.search_budget);

  if (exhaustive) {
    // Odometer over alphabet^L in lexicographic order; first minimum wins,
    // i.e. ties break toward the lexicographically smaller suffix.
    std::vector<size_t> digits(static_cast<size_t>(L), 0);
    std::vector<int> suffix(static_cast<size_t>(L));
    double best = kInf;
    std::vector<int> best_suffix;
    long evals = 0;
    while (true) {
      for (int i = 0; i < L; ++i) suffix[static_cast<size_t>(i)] = alphabet[digits[static_cast<size_t>(i)]];
      double loss = target_nll(policy, prompt, suffix, config.target_prefix);
      ++evals;
      if (loss < best) {
        best = loss;
        best_suffix = suffix;
      }
      int pos = L - 1;
      while (pos >= 0 && ++digits[static_cast<size_t>(pos)] == alphabet.size()) {
        digits[static_cast<size_t>(pos)] = 0;
        --pos;
      }
      if (pos < 0) break;
    }
    if (best == kInf) {
      throw TargetUnreachableError(
          "suffix_attack: target prefix has probability 0 under every suffix");
    }
    result.suffix = best_suffix;
    result.loss = best;
    result.exact = true;
    result.evaluations = evals;
    return result;
  }

  // Greedy coordinate descent: sweep positions, trying every alphabet token
  // with the rest fixed; keep strict improvements only, stop when a full
  // sweep improves nothing or the budget is exhausted.
  std::vector<int> suffix(static_cast<size_t>(L), alphabet[0]);
  double best = target_nll(policy, prompt, suffix, config.target_prefix);
  long evals = 1;
  bool improved = true;
  while (improved && evals < config.search_budget) {
    improved = false;
    for (int pos = 0; pos < L && evals < config.search_budget; ++pos) {
      int keep = suffix[static_cast<size_t>(pos)];
      int best_tok = keep;
      for (int tok : alphabet) {
        if (tok == keep) continue;
        suffix[static_cast<size_t>(pos)] = tok;
        double loss = target_nll(policy, prompt, suffix, config.target_prefix);
        ++evals;
        if (loss < best) {
          best = loss;
          best_tok = tok;
          improved = true;
        }
        if (evals >= config.search_budget) break;
      }
      suffix[static_cast<size_t>(pos)] = best_tok;
    }
  }
  if (best == kInf) {
    throw TargetUnreachableError(
        "suffix_attack: target prefix has probability 0 under every examined suffix");
  }
  result.suffix = suffix;
  result.loss = best;
  result.exact = false;
  result.evaluations = evals;
  return result;
}

// ============================================================
// KL-regularized prompter
// ============================================================

namespace {

// J(q): expected safety reward of the base policy's responses to q. The
// scoring prompt is the anchor unless score_with_prompt asks for q itself.
double j_value(const TabularPolicy& policy, const RewardModel& model, const PromptSpace& space,
               const std::string& q, bool score_with_prompt, long cap) {
  const std::string& scorer = score_with_prompt ? q : space.anchor;
  TrajectoryDistribution dist = enumerate_trajectories(policy, q, {}, cap);
  double value = 0.0;
  for (const auto& wt : dist.support) value += wt.prob * reward(model, scorer, wt.traj);
  return value;
}

}  // namespace

double prompter_objective(std::span<const double> p, const TabularPolicy& policy,
                          const RewardModel& model, const PromptSpace& space, double beta,
                          bool score_with_prompt, long cap) {
  if (p.size() != space.ids.size()) {
    throw ValidationError("prompter_objective: distribution size " + std::to_string(p.size()) +
                          " != prompt count " + std::to_string(space.ids.size()));
  }
  if (beta < 0.0) throw ValidationError("prompter_objective: beta must be >= 0");
  double sum = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    if (p[i] < 0.0) {
      throw ValidationError("prompter_objective: negative mass at index " + std::to_string(i));
    }
    sum += p[i];
  }
  if (std::abs(sum - 1.0) > kProbTol) {
    throw ValidationError("prompter_objective: distribution sums to " + format_double(sum));
  }

  double expected_j = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    expected_j += p[i] * j_value(policy, model, space, space.ids[i], score_with_prompt, cap);
  }
  if (beta == 0.0) return expected_j;
  return expected_j + beta * kl_divergence(p, space.p0);
}

AdversarialPrompter kl_prompter(const TabularPolicy& policy, const RewardModel& model,
                                const PromptSpace& space, double beta, bool score_with_prompt,
                                long cap) {
  if (!(beta > 0.0)) {
    throw ValidationError("kl_prompter: beta must be > 0, got " + format_double(beta));
  }
  AdversarialPrompter out;
  out.j_values.resize(space.ids.size());
  for (size_t i = 0; i < space.ids.size(); ++i) {
    out.j_values[i] = j_value(policy, model, space, space.ids[i], score_with_prompt, cap);
  }

  // p_adv(q) propto p0(q) * exp(-J(q)/beta). Shifting J by its minimum over
  // supp(p0) before exponentiating keeps weights in (0, 1] and makes a
  // constant J cancel exactly, leaving p_adv = normalized p0.
  double j_min = kInf;
  for (size_t i = 0; i < space.ids.size(); ++i) {
    if (space.p0[i] > 0.0) j_min = std::min(j_min, out.j_values[i]);
  }
  out.dist.assign(space.ids.size(), 0.0);
  double z = 0.0;
  for (size_t i = 0; i < space.ids.size(); ++i) {
    if (space.p0[i] <= 0.0) continue;
    out.dist[i] = space.p0[i] * std::exp((j_min - out.j_values[i]) / beta);
    z += out.dist[i];
  }
  for (double& w : out.dist) w /= z;

  out.objective_value = prompter_objective(out.dist, policy, model, space, beta,
                                           score_with_prompt, cap);
  return out;
}

}  // namespace immune
