#include <immune/analysis.hpp>

#include <algorithm>
#include <cmath>

#include <immune/distance.hpp>
#include <immune/errors.hpp>
#include <immune/numeric.hpp>

namespace immune {

double expected_reward(std::span<const double> prompt_dist,
                       const std::map<std::string, TrajectoryDistribution>& response_dists,
                       const RewardModel& model, const PromptSpace& space) {
  if (prompt_dist.size() != space.ids.size()) {
    throw ValidationError("expected_reward: prompt distribution size mismatch");
  }
  double value = 0.0;
  for (size_t i = 0; i < prompt_dist.size(); ++i) {
    if (prompt_dist[i] <= 0.0) continue;
    auto it = response_dists.find(space.ids[i]);
    if (it == response_dists.end()) {
      throw ValidationError("expected_reward: no response distribution for prompt \"" +
                            space.ids[i] + "\"");
    }
    double inner = 0.0;
    for (const auto& wt : it->second.support) {
      inner += wt.prob * reward(model, space.ids[i], wt.traj);
    }
    value += prompt_dist[i] * inner;
  }
  return value;
}

SubGap sub_gap(const PromptSpace& space, std::span<const double> p_adv,
               const TabularPolicy& policy, const RewardModel& model,
               const DecodeConfig& config, long cap) {
  if (p_adv.size() != space.ids.size()) {
    throw ValidationError("sub_gap: p_adv size mismatch");
  }
  if (config.q_mode != QMode::exact) {
    throw ValidationError("sub_gap: decoder config must use q_mode = exact");
  }

  // Best responses and induced decoder laws for every prompt either
  // distribution can reach.
  std::map<std::string, TrajectoryDistribution> best, dec;
  for (size_t i = 0; i < space.ids.size(); ++i) {
    if (space.p0[i] <= 0.0 && p_adv[i] <= 0.0) continue;
    best[space.ids[i]] = best_response(policy, model, space.ids[i], cap);
    dec[space.ids[i]] = induced_decoding_policy(policy, model, space.ids[i], config);
  }

  double e_p0_best = expected_reward(space.p0, best, model, space);
  double e_adv_best = expected_reward(p_adv, best, model, space);
  double e_adv_dec = expected_reward(p_adv, dec, model, space);

  SubGap gap;
  gap.delta1 = e_p0_best - e_adv_best;
  gap.delta2 = e_adv_best - e_adv_dec;
  gap.delta_total = e_p0_best - e_adv_dec;
  return gap;
}

GapReport theorem1_check(const PromptSpace& space, const TabularPolicy& policy,
                         const RewardModel& model, double alpha, double beta, long cap) {
  if (!(alpha > 0.0)) throw ValidationError("theorem1_check: alpha must be > 0");

  GapReport report;
  report.alpha = alpha;
  report.beta = beta;

  AdversarialPrompter prompter = kl_prompter(policy, model, space, beta, false, cap);

  DecodeConfig config;
  config.k = policy.vocab.size();  // full candidate set for the bound
  config.alpha = alpha;
  config.q_mode = QMode::exact;
  config.enumeration_cap = cap;

  SubGap gap = sub_gap(space, prompter.dist, policy, model, config, cap);
  report.delta1 = gap.delta1;
  report.delta2 = gap.delta2;
  report.delta_total = gap.delta_total;

  report.kl_p0_padv = kl_divergence(space.p0, prompter.dist);
  report.tv_p0_padv = tv_distance(space.p0, prompter.dist);

  // Prompt-side KL upper bound (E_{p0}[J] - min_q J(q)) / beta.
  double e_p0_j = 0.0;
  double j_min = prompter.j_values.empty() ? 0.0 : prompter.j_values[0];
  for (size_t i = 0; i < space.ids.size(); ++i) {
    e_p0_j += space.p0[i] * prompter.j_values[i];
    j_min = std::min(j_min, prompter.j_values[i]);
  }
  report.kl_prompt_bound_rhs = (e_p0_j - j_min) / beta;

  // Policy-side KL at the anchor, with per-prompt values as diagnostics.
  report.per_prompt_policy_kl.resize(space.ids.size());
  for (size_t i = 0; i < space.ids.size(); ++i) {
    TrajectoryDistribution star = best_response(policy, model, space.ids[i], cap);
    TrajectoryDistribution safe = enumerate_trajectories(policy, space.ids[i], {}, cap);
    report.per_prompt_policy_kl[i] = kl_divergence(star, safe);
  }
  report.kl_rhostar_rhosafe =
      report.per_prompt_policy_kl[static_cast<size_t>(space.anchor_index())];

  double r_max = model.r_max;
  report.term_prompt = r_max * std::sqrt(report.kl_p0_padv);
  report.term_policy = alpha * report.kl_rhostar_rhosafe;
  report.bound_rhs = r_max * std::sqrt(report.kl_p0_padv / 2.0) + report.term_policy;
  report.bound_rhs_statement = report.term_prompt + report.term_policy;

  report.holds.theorem = report.delta_total <= report.bound_rhs + kBoundTol;
  report.holds.statement = report.delta_total <= report.bound_rhs_statement + kBoundTol;
  report.holds.tv_step = report.delta1 <= r_max * report.tv_p0_padv + kBoundTol;
  report.holds.pinsker = report.tv_p0_padv <= std::sqrt(report.kl_p0_padv / 2.0) + kBoundTol;
  report.holds.prompt_kl = report.kl_p0_padv <= report.kl_prompt_bound_rhs + kBoundTol;
  report.holds.delta2_bound = report.delta2 <= report.term_policy + kBoundTol;
  return report;
}

std::vector<SweepRow> alpha_sweep(const PromptSpace& space, const TabularPolicy& policy,
                                  const RewardModel& model, std::span<const double> alphas,
                                  double beta, long cap) {
  AdversarialPrompter prompter = kl_prompter(policy, model, space, beta, false, cap);
  TrajectoryDistribution star = best_response(policy, model, space.anchor, cap);
  TrajectoryDistribution safe = enumerate_trajectories(policy, space.anchor, {}, cap);
  double kl_anchor = kl_divergence(star, safe);

  std::vector<SweepRow> rows;
  for (double alpha : alphas) {
    DecodeConfig config;
    config.k = policy.vocab.size();
    config.alpha = alpha;
    config.q_mode = QMode::exact;
    config.enumeration_cap = cap;
    SubGap gap = sub_gap(space, prompter.dist, policy, model, config, cap);
    rows.push_back({alpha, gap.delta2, alpha * kl_anchor});
  }
  return rows;
}

}  // namespace immune
