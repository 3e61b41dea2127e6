#include <immune/decoder.hpp>

#include <algorithm>
#include <cmath>

#include <immune/errors.hpp>
#include <immune/numeric.hpp>

namespace immune {

std::vector<double> closed_form_token_dist(std::span<const double> base_row,
                                           std::span<const double> q_values, double alpha) {
  if (!(alpha > 0.0)) {
    throw ValidationError("closed_form_token_dist: alpha must be > 0, got " +
                          format_double(alpha));
  }
  if (base_row.size() != q_values.size()) {
    throw ValidationError("closed_form_token_dist: base_row and q_values sizes differ");
  }
  if (base_row.empty()) {
    throw ValidationError("closed_form_token_dist: empty candidate set");
  }
  std::vector<double> scores(base_row.size());
  for (size_t i = 0; i < base_row.size(); ++i) {
    if (base_row[i] <= 0.0) {
      throw ZeroBaseMassError("closed_form_token_dist: candidate " + std::to_string(i) +
                              " has zero base probability");
    }
    scores[i] = std::log(base_row[i]) + q_values[i] / alpha;
  }
  return softmax(scores);
}

namespace {

// Candidate selection, scoring and tilting for one state; shared verbatim
// by the online decoder and the induced-distribution construction so the
// two can never drift apart.
StepRecord score_state(const TabularPolicy& policy, const RewardModel& model,
                       const std::string& prompt, std::span<const int> partial,
                       const DecodeConfig& config, const Rng& master,
                       std::span<const int> prefix) {
  StepRecord rec;
  rec.state.assign(partial.begin(), partial.end());

  std::vector<int> context(prefix.begin(), prefix.end());
  context.insert(context.end(), partial.begin(), partial.end());
  std::vector<double> row = next_token_dist(policy, prompt, context);

  // Top-k of the base row, then drop zero-mass ids: their tilted weight is
  // zero by construction and their log-probability is -inf.
  std::vector<int> ranked = top_k(row, config.effective_k(policy.vocab.size()));
  for (int z : ranked) {
    if (row[z] > 0.0) rec.candidates.push_back(z);
  }

  size_t step = partial.size();
  for (int z : rec.candidates) {
    QEstimate est;
    if (config.q_mode == QMode::exact) {
      est = q_exact(policy, model, prompt, partial, z, prefix, config.enumeration_cap);
    } else {
      Rng q_stream = master.derive(stream_tag::kQmc)
                         .derive(static_cast<uint64_t>(step))
                         .derive(static_cast<uint64_t>(z));
      est = q_mc(policy, model, prompt, partial, z, config.n_rollouts, q_stream, prefix);
    }
    rec.log_base.push_back(std::log(row[z]));
    rec.q_values.push_back(est.value);
    rec.q_std_err.push_back(est.std_err);
    rec.scores.push_back(est.value / config.alpha + std::log(row[z]));
  }
  rec.f = softmax(rec.scores);
  return rec;
}

}  // namespace

StepRecord immune_decode_step(const TabularPolicy& policy, const RewardModel& model,
                              const std::string& prompt, std::span<const int> partial,
                              const DecodeConfig& config, const Rng& master,
                              std::span<const int> prefix) {
  if (!(config.alpha > 0.0)) {
    throw ValidationError("immune_decode_step: alpha must be > 0");
  }
  StepRecord rec = score_state(policy, model, prompt, partial, config, master, prefix);
  Rng draw = master.derive(stream_tag::kStep).derive(partial.size());
  int idx = draw.categorical(rec.f);
  rec.chosen = rec.candidates[static_cast<size_t>(idx)];
  return rec;
}

std::pair<Trajectory, DecodeTrace> immune_decode(const TabularPolicy& policy,
                                                 const RewardModel& model,
                                                 const std::string& prompt,
                                                 const DecodeConfig& config,
                                                 std::span<const int> prefix) {
  Rng master(config.seed);
  int horizon = config.effective_horizon(policy.horizon);

  Trajectory traj;
  DecodeTrace trace;
  std::vector<int> partial;
  while (static_cast<int>(partial.size()) < horizon) {
    StepRecord rec = immune_decode_step(policy, model, prompt, partial, config, master, prefix);
    int z = rec.chosen;
    trace.steps.push_back(std::move(rec));
    if (z == policy.vocab.eos_id) {
      traj.token_ids = partial;
      traj.token_ids.push_back(z);
      traj.terminated = true;
      return {traj, trace};
    }
    partial.push_back(z);
  }
  // Horizon reached without a sampled eos: close the response.
  traj.token_ids = partial;
  traj.token_ids.push_back(policy.vocab.eos_id);
  traj.terminated = true;
  traj.eos_forced = true;
  return {traj, trace};
}

namespace {

void induced_rec(const TabularPolicy& policy, const RewardModel& model,
                 const std::string& prompt, const DecodeConfig& config,
                 std::span<const int> prefix, int horizon, std::vector<int>& partial,
                 double prob, const Rng& master, long cap, long& count,
                 std::vector<WeightedTrajectory>& out) {
  auto emit = [&](double mass, bool forced) {
    Trajectory traj;
    traj.token_ids = partial;
    traj.token_ids.push_back(policy.vocab.eos_id);
    traj.terminated = true;
    traj.eos_forced = forced;
    if (++count > cap) {
      throw EnumerationTooLargeError("induced_decoding_policy: support exceeds cap " +
                                     std::to_string(cap));
    }
    out.push_back({std::move(traj), mass});
  };

  if (static_cast<int>(partial.size()) >= horizon) {
    emit(prob, true);
    return;
  }
  StepRecord rec = score_state(policy, model, prompt, partial, config, master, prefix);
  for (size_t i = 0; i < rec.candidates.size(); ++i) {
    int z = rec.candidates[i];
    double p = prob * rec.f[i];
    if (p <= 0.0) continue;
    if (z == policy.vocab.eos_id) {
      emit(p, false);
      continue;
    }
    partial.push_back(z);
    induced_rec(policy, model, prompt, config, prefix, horizon, partial, p, master, cap, count,
                out);
    partial.pop_back();
  }
}

}  // namespace

TrajectoryDistribution induced_decoding_policy(const TabularPolicy& policy,
                                               const RewardModel& model,
                                               const std::string& prompt,
                                               const DecodeConfig& config,
                                               std::span<const int> prefix) {
  if (config.q_mode != QMode::exact) {
    throw ValidationError("induced_decoding_policy: requires q_mode = exact");
  }
  if (!(config.alpha > 0.0)) {
    throw ValidationError("induced_decoding_policy: alpha must be > 0");
  }
  TrajectoryDistribution dist;
  std::vector<int> partial;
  long count = 0;
  Rng master(config.seed);  // never consumed in exact mode, kept for signature parity
  induced_rec(policy, model, prompt, config, prefix, config.effective_horizon(policy.horizon),
              partial, 1.0, master, config.enumeration_cap, count, dist.support);
  std::sort(dist.support.begin(), dist.support.end(),
            [](const WeightedTrajectory& a, const WeightedTrajectory& b) {
              return trajectory_less(a.traj, b.traj);
            });
  dist.validate();
  return dist;
}

}  // namespace immune
