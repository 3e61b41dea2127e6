#include <immune/policy.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <immune/errors.hpp>
#include <immune/numeric.hpp>

namespace immune {

// ============================================================
// Vocab
// ============================================================

int Vocab::id_of(const std::string& symbol) const {
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] == symbol) return static_cast<int>(i);
  }
  return -1;
}

void Vocab::validate() const {
  if (tokens.size() < 2) {
    throw ValidationError("vocab.tokens: need at least 2 tokens (content + eos), got " +
                          std::to_string(tokens.size()));
  }
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i].empty()) {
      throw ValidationError("vocab.tokens[" + std::to_string(i) + "]: empty symbol");
    }
    if (tokens[i].find_first_of(" \t\r\n") != std::string::npos) {
      // Symbols join into space-separated context/trajectory keys, so
      // whitespace inside a symbol would break the round-trip.
      throw ValidationError("vocab.tokens[" + std::to_string(i) + "]: symbol \"" + tokens[i] +
                            "\" contains whitespace");
    }
    for (size_t j = i + 1; j < tokens.size(); ++j) {
      if (tokens[i] == tokens[j]) {
        throw ValidationError("vocab.tokens: duplicate symbol \"" + tokens[i] + "\"");
      }
    }
  }
  if (eos_id < 0 || eos_id >= size()) {
    throw ValidationError("vocab.eos: id " + std::to_string(eos_id) +
                          " outside vocabulary of size " + std::to_string(size()));
  }
}

// ============================================================
// Trajectories
// ============================================================

bool trajectory_less(const Trajectory& a, const Trajectory& b) {
  if (a.token_ids.size() != b.token_ids.size()) return a.token_ids.size() < b.token_ids.size();
  return a.token_ids < b.token_ids;
}

bool trajectory_equal(const Trajectory& a, const Trajectory& b) {
  return a.token_ids == b.token_ids;
}

double TrajectoryDistribution::total_mass() const {
  double m = 0.0;
  for (const auto& wt : support) m += wt.prob;
  return m;
}

double TrajectoryDistribution::prob_of(const Trajectory& traj) const {
  for (const auto& wt : support) {
    if (trajectory_equal(wt.traj, traj)) return wt.prob;
  }
  return 0.0;
}

void TrajectoryDistribution::validate() const {
  for (size_t i = 0; i < support.size(); ++i) {
    if (!(support[i].prob > 0.0)) {
      throw ValidationError("trajectory distribution: non-positive mass at index " +
                            std::to_string(i));
    }
    if (i + 1 < support.size() && !trajectory_less(support[i].traj, support[i + 1].traj)) {
      throw ValidationError("trajectory distribution: support not in canonical order at index " +
                            std::to_string(i));
    }
  }
  double m = total_mass();
  if (std::abs(m - 1.0) > kProbTol) {
    throw ValidationError("trajectory distribution: total mass " + format_double(m));
  }
}

// ============================================================
// TabularPolicy
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

void check_row(const Vocab& vocab, std::span<const double> row, const std::string& where) {
  if (static_cast<int>(row.size()) != vocab.size()) {
    throw MalformedRowError(where + ": row has " + std::to_string(row.size()) +
                            " entries, vocabulary has " + std::to_string(vocab.size()));
  }
  double sum = 0.0;
  for (size_t i = 0; i < row.size(); ++i) {
    if (row[i] < 0.0 || !std::isfinite(row[i])) {
      throw MalformedRowError(where + "[" + std::to_string(i) + "]: probability " +
                              format_double(row[i]));
    }
    sum += row[i];
  }
  if (std::abs(sum - 1.0) > kProbTol) {
    throw MalformedRowError(where + ": probabilities sum to " + format_double(sum) +
                            " (want 1 within 1e-9)");
  }
}

}  // namespace

std::vector<int> TabularPolicy::context_key(std::span<const int> context) const {
  size_t keep = std::min<size_t>(static_cast<size_t>(order), context.size());
  return std::vector<int>(context.end() - keep, context.end());
}

void TabularPolicy::validate() const {
  vocab.validate();
  if (order < 0) throw ValidationError("policy.order: negative");
  if (horizon < 1) throw ValidationError("policy.horizon: must be >= 1");
  if (rows.empty() && !uniform_fallback) {
    throw ValidationError("policy.rows: empty table and no uniform_fallback");
  }
  for (const auto& [prompt, table] : rows) {
    for (const auto& [key, row] : table) {
      if (static_cast<int>(key.size()) > order) {
        throw ValidationError("policy.rows[\"" + prompt + "\"][\"" + join_ids(vocab, key) +
                              "\"]: context longer than order " + std::to_string(order));
      }
      for (int id : key) {
        if (id < 0 || id >= vocab.size()) {
          throw ValidationError("policy.rows[\"" + prompt + "\"]: context token id " +
                                std::to_string(id) + " out of range");
        }
      }
      check_row(vocab, row, "policy.rows[\"" + prompt + "\"][\"" + join_ids(vocab, key) + "\"]");
    }
  }
}

// ============================================================
// Operations
// ============================================================

std::vector<double> next_token_dist(const TabularPolicy& policy, const std::string& prompt,
                                    std::span<const int> context) {
  auto uniform = [&] {
    return std::vector<double>(static_cast<size_t>(policy.vocab.size()),
                               1.0 / policy.vocab.size());
  };

  auto prompt_it = policy.rows.find(prompt);
  if (prompt_it == policy.rows.end()) {
    if (policy.uniform_fallback) return uniform();
    throw UnknownPromptError("policy has no rows for prompt \"" + prompt +
                             "\" and uniform_fallback is off");
  }

  std::vector<int> key = policy.context_key(context);
  auto row_it = prompt_it->second.find(key);
  if (row_it == prompt_it->second.end()) {
    if (policy.uniform_fallback) return uniform();
    throw UnknownPromptError("policy.rows[\"" + prompt + "\"]: no row for context \"" +
                             join_ids(policy.vocab, key) + "\" and uniform_fallback is off");
  }
  check_row(policy.vocab, row_it->second, "policy.rows[\"" + prompt + "\"][\"" +
                                              join_ids(policy.vocab, key) + "\"]");
  return row_it->second;
}

std::vector<int> top_k(std::span<const double> dist, int k) {
  std::vector<int> ids(dist.size());
  std::iota(ids.begin(), ids.end(), 0);
  std::stable_sort(ids.begin(), ids.end(), [&](int a, int b) {
    if (dist[a] != dist[b]) return dist[a] > dist[b];
    return a < b;
  });
  int keep = std::min<int>(k, static_cast<int>(ids.size()));
  if (keep < 0) keep = 0;
  ids.resize(static_cast<size_t>(keep));
  return ids;
}

namespace {

// Shared recursion for enumeration: walk every positive-probability
// continuation, forcing eos once the response holds `horizon` tokens.
void enumerate_rec(const TabularPolicy& policy, const std::string& prompt, int horizon,
                   std::vector<int>& context, std::vector<int>& response, double log_prob,
                   long cap, long& count, std::vector<WeightedTrajectory>& out) {
  if (static_cast<int>(response.size()) >= horizon) {
    Trajectory traj;
    traj.token_ids = response;
    traj.token_ids.push_back(policy.vocab.eos_id);
    traj.terminated = true;
    traj.eos_forced = true;
    if (++count > cap) {
      throw EnumerationTooLargeError("enumeration exceeds cap of " + std::to_string(cap) +
                                     " trajectories");
    }
    out.push_back({std::move(traj), std::exp(log_prob)});
    return;
  }
  std::vector<double> row = next_token_dist(policy, prompt, context);
  for (int z = 0; z < static_cast<int>(row.size()); ++z) {
    if (row[z] <= 0.0) continue;
    double lp = log_prob + std::log(row[z]);
    if (z == policy.vocab.eos_id) {
      Trajectory traj;
      traj.token_ids = response;
      traj.token_ids.push_back(policy.vocab.eos_id);
      traj.terminated = true;
      if (++count > cap) {
        throw EnumerationTooLargeError("enumeration exceeds cap of " + std::to_string(cap) +
                                       " trajectories");
      }
      out.push_back({std::move(traj), std::exp(lp)});
      continue;
    }
    context.push_back(z);
    response.push_back(z);
    enumerate_rec(policy, prompt, horizon, context, response, lp, cap, count, out);
    response.pop_back();
    context.pop_back();
  }
}

void check_enumeration_size(const TabularPolicy& policy, long cap) {
  // Cheap a-priori bound: |vocab|^horizon paths at most.
  double worst = std::pow(static_cast<double>(policy.vocab.size()),
                          static_cast<double>(policy.horizon));
  if (worst > static_cast<double>(cap)) {
    throw EnumerationTooLargeError("|vocab|^horizon = " + format_double(worst) +
                                   " exceeds enumeration cap " + std::to_string(cap));
  }
}

}  // namespace

TrajectoryDistribution enumerate_trajectories(const TabularPolicy& policy,
                                              const std::string& prompt,
                                              std::span<const int> prefix, long cap) {
  check_enumeration_size(policy, cap);
  TrajectoryDistribution dist;
  std::vector<int> context(prefix.begin(), prefix.end());
  std::vector<int> response;
  long count = 0;
  enumerate_rec(policy, prompt, policy.horizon, context, response, 0.0, cap, count,
                dist.support);
  std::sort(dist.support.begin(), dist.support.end(),
            [](const WeightedTrajectory& a, const WeightedTrajectory& b) {
              return trajectory_less(a.traj, b.traj);
            });
  return dist;
}

Trajectory sample_trajectory(const TabularPolicy& policy, const std::string& prompt, Rng& rng,
                             std::span<const int> prefix) {
  Trajectory traj;
  std::vector<int> context(prefix.begin(), prefix.end());
  while (static_cast<int>(traj.token_ids.size()) < policy.horizon) {
    std::vector<double> row = next_token_dist(policy, prompt, context);
    int z = rng.categorical(row);
    if (z == policy.vocab.eos_id) {
      traj.token_ids.push_back(z);
      traj.terminated = true;
      return traj;
    }
    traj.token_ids.push_back(z);
    context.push_back(z);
  }
  traj.token_ids.push_back(policy.vocab.eos_id);
  traj.terminated = true;
  traj.eos_forced = true;
  return traj;
}

}  // namespace immune
