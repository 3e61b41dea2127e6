#include <immune/reward.hpp>

#include <algorithm>
#include <cmath>
#include <sstream>

#include <immune/errors.hpp>
#include <immune/numeric.hpp>

namespace immune {

// ============================================================
// RewardModel
// ============================================================

namespace {

std::string join_ids(const Vocab& vocab, std::span<const int> ids) {
  std::ostringstream out;
  for (size_t i = 0; i < ids.size(); ++i) {
    if (i) out << ' ';
    out << vocab.symbol(ids[i]);
  }
  return out.str();
}

void check_range(double r, double r_min, double r_max, const std::string& where) {
  if (!std::isfinite(r) || r < r_min || r > r_max) {
    throw ValidationError(where + ": reward " + format_double(r) + " outside [" +
                          format_double(r_min) + ", " + format_double(r_max) + "]");
  }
}

// Content tokens of a complete trajectory (trailing eos stripped).
std::vector<int> content_tokens(const Trajectory& traj) {
  std::vector<int> out = traj.token_ids;
  if (!out.empty() && traj.terminated) out.pop_back();
  return out;
}

}  // namespace

void RewardModel::validate(const Vocab& vocab) const {
  if (!(r_min < r_max)) {
    throw ValidationError("reward: r_min " + format_double(r_min) + " must be < r_max " +
                          format_double(r_max));
  }
  if (kind == Kind::tabular) {
    for (const auto& [prompt, table] : entries) {
      for (const auto& [tokens, r] : table) {
        for (int id : tokens) {
          if (id < 0 || id >= vocab.size()) {
            throw ValidationError("reward.entries[\"" + prompt + "\"]: token id " +
                                  std::to_string(id) + " out of range");
          }
        }
        check_range(r, r_min, r_max,
                    "reward.entries[\"" + prompt + "\"][\"" + join_ids(vocab, tokens) + "\"]");
      }
    }
    if (default_value) check_range(*default_value, r_min, r_max, "reward.default");
  } else {
    check_range(rule.base, r_min, r_max, "reward.rule.base");
    check_range(rule.harmful_score, r_min, r_max, "reward.rule.harmful_score");
    if (rule.min_count < 1) throw ValidationError("reward.rule.min_count: must be >= 1");
    for (int id : rule.harmful_tokens) {
      if (id < 0 || id >= vocab.size()) {
        throw ValidationError("reward.rule.harmful_tokens: token id " + std::to_string(id) +
                              " out of range");
      }
    }
    for (const auto& [id, bonus] : rule.token_bonus) {
      if (id < 0 || id >= vocab.size()) {
        throw ValidationError("reward.rule.token_bonus: token id " + std::to_string(id) +
                              " out of range");
      }
      if (!std::isfinite(bonus)) {
        throw ValidationError("reward.rule.token_bonus[" + std::to_string(id) +
                              "]: non-finite bonus");
      }
    }
  }
}

double reward(const RewardModel& model, const std::string& prompt, const Trajectory& traj) {
  if (model.kind == RewardModel::Kind::tabular) {
    std::vector<int> key = content_tokens(traj);
    auto prompt_it = model.entries.find(prompt);
    if (prompt_it != model.entries.end()) {
      auto it = prompt_it->second.find(key);
      if (it != prompt_it->second.end()) return it->second;
    }
    if (model.default_value) return *model.default_value;
    throw MissingRewardEntryError("reward.entries[\"" + prompt +
                                  "\"]: no entry for response of length " +
                                  std::to_string(key.size()) + " and no default");
  }

  // Rule-based scoring.
  const RewardRule& rule = model.rule;
  int hits = 0;
  double bonus = 0.0;
  for (int id : traj.token_ids) {
    if (std::find(rule.harmful_tokens.begin(), rule.harmful_tokens.end(), id) !=
        rule.harmful_tokens.end()) {
      ++hits;
    }
    auto b = rule.token_bonus.find(id);
    if (b != rule.token_bonus.end()) bonus += b->second;
  }
  if (!rule.harmful_tokens.empty() && hits >= rule.min_count) return rule.harmful_score;
  return std::clamp(rule.base + bonus, model.r_min, model.r_max);
}

// ============================================================
// State-action values
// ============================================================

namespace {

// Recursive expectation of the final reward over every base continuation
// of (context, response); relative probabilities only, so no underflow at
// desk scale is possible and terms sum in deterministic token order.
double continuation_value(const TabularPolicy& policy, const RewardModel& model,
                          const std::string& prompt, std::vector<int>& context,
                          std::vector<int>& response, long cap, long& count) {
  if (static_cast<int>(response.size()) >= policy.horizon) {
    Trajectory traj;
    traj.token_ids = response;
    traj.token_ids.push_back(policy.vocab.eos_id);
    traj.terminated = true;
    traj.eos_forced = true;
    if (++count > cap) {
      throw EnumerationTooLargeError("q_exact: continuation tree exceeds cap " +
                                     std::to_string(cap));
    }
    return reward(model, prompt, traj);
  }
  std::vector<double> row = next_token_dist(policy, prompt, context);
  double value = 0.0;
  for (int z = 0; z < static_cast<int>(row.size()); ++z) {
    if (row[z] <= 0.0) continue;
    if (z == policy.vocab.eos_id) {
      Trajectory traj;
      traj.token_ids = response;
      traj.token_ids.push_back(policy.vocab.eos_id);
      traj.terminated = true;
      if (++count > cap) {
        throw EnumerationTooLargeError("q_exact: continuation tree exceeds cap " +
                                       std::to_string(cap));
      }
      value += row[z] * reward(model, prompt, traj);
      continue;
    }
    context.push_back(z);
    response.push_back(z);
    value += row[z] * continuation_value(policy, model, prompt, context, response, cap, count);
    response.pop_back();
    context.pop_back();
  }
  return value;
}

}  // namespace

QEstimate q_exact(const TabularPolicy& policy, const RewardModel& model,
                  const std::string& prompt, std::span<const int> partial, int z,
                  std::span<const int> prefix, long cap) {
  if (z < 0 || z >= policy.vocab.size()) {
    throw ValidationError("q_exact: token id " + std::to_string(z) + " out of range");
  }
  QEstimate est;
  est.exact = true;

  if (z == policy.vocab.eos_id) {
    // Appending eos completes the response; the value is its reward.
    Trajectory traj;
    traj.token_ids.assign(partial.begin(), partial.end());
    traj.token_ids.push_back(z);
    traj.terminated = true;
    est.value = reward(model, prompt, traj);
    return est;
  }

  std::vector<int> context(prefix.begin(), prefix.end());
  context.insert(context.end(), partial.begin(), partial.end());
  context.push_back(z);
  std::vector<int> response(partial.begin(), partial.end());
  response.push_back(z);
  long count = 0;
  est.value = continuation_value(policy, model, prompt, context, response, cap, count);
  return est;
}

QEstimate q_mc(const TabularPolicy& policy, const RewardModel& model, const std::string& prompt,
               std::span<const int> partial, int z, int n_rollouts, const Rng& rng,
               std::span<const int> prefix) {
  if (z < 0 || z >= policy.vocab.size()) {
    throw ValidationError("q_mc: token id " + std::to_string(z) + " out of range");
  }
  if (n_rollouts < 1) throw ValidationError("q_mc: n_rollouts must be >= 1");

  QEstimate est;
  est.exact = false;
  est.n_rollouts = n_rollouts;

  if (z == policy.vocab.eos_id) {
    Trajectory traj;
    traj.token_ids.assign(partial.begin(), partial.end());
    traj.token_ids.push_back(z);
    traj.terminated = true;
    est.value = reward(model, prompt, traj);
    est.std_err = 0.0;
    return est;
  }

  std::vector<int> context(prefix.begin(), prefix.end());
  context.insert(context.end(), partial.begin(), partial.end());
  context.push_back(z);
  std::vector<int> committed(partial.begin(), partial.end());
  committed.push_back(z);

  double sum = 0.0, sum_sq = 0.0;
  std::vector<int> ctx;
  for (int j = 0; j < n_rollouts; ++j) {
    Rng stream = rng.derive(static_cast<uint64_t>(j));
    ctx = context;
    Trajectory full;
    full.token_ids = committed;
    full.terminated = true;
    while (static_cast<int>(full.token_ids.size()) < policy.horizon) {
      std::vector<double> row = next_token_dist(policy, prompt, ctx);
      int t = stream.categorical(row);
      if (t == policy.vocab.eos_id) break;
      full.token_ids.push_back(t);
      ctx.push_back(t);
    }
    full.eos_forced = static_cast<int>(full.token_ids.size()) >= policy.horizon;
    full.token_ids.push_back(policy.vocab.eos_id);
    double r = reward(model, prompt, full);
    sum += r;
    sum_sq += r * r;
  }
  double mean = sum / n_rollouts;
  est.value = mean;
  if (n_rollouts > 1) {
    double var = (sum_sq - n_rollouts * mean * mean) / (n_rollouts - 1);
    est.std_err = var > 0.0 ? std::sqrt(var / n_rollouts) : 0.0;
  }
  return est;
}

TrajectoryDistribution best_response(const TabularPolicy& policy, const RewardModel& model,
                                     const std::string& prompt, long cap) {
  TrajectoryDistribution base = enumerate_trajectories(policy, prompt, {}, cap);
  if (base.support.empty()) {
    throw ValidationError("best_response: empty trajectory support for prompt \"" + prompt +
                          "\"");
  }
  // Support is in canonical order, so scanning with a strict '>' breaks
  // reward ties toward the shorter / smaller trajectory automatically.
  const WeightedTrajectory* best = nullptr;
  double best_r = 0.0;
  for (const auto& wt : base.support) {
    double r = reward(model, prompt, wt.traj);
    if (best == nullptr || r > best_r) {
      best = &wt;
      best_r = r;
    }
  }
  TrajectoryDistribution out;
  out.support.push_back({best->traj, 1.0});
  return out;
}

}  // namespace immune
