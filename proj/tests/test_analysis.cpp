#include <doctest.h>

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include <immune/analysis.hpp>
#include <immune/decoder.hpp>
#include <immune/distance.hpp>
#include <immune/errors.hpp>
#include <immune/reward.hpp>
#include <immune/scenario.hpp>

#include "test_support.hpp"

using namespace immune;
using namespace test_support;

namespace {

Trajectory make_traj(std::vector<int> ids) {
  Trajectory traj;
  traj.token_ids = std::move(ids);
  traj.terminated = true;
  return traj;
}

DecodeConfig exact_config(double alpha, int k = 10) {
  DecodeConfig config;
  config.alpha = alpha;
  config.k = k;
  config.q_mode = QMode::exact;
  return config;
}

// Two-prompt fixture with distinct rows so the prompt shift is non-trivial.
struct TwoPromptFixture {
  TabularPolicy policy;
  RewardModel model;
  PromptSpace space;
};

TwoPromptFixture two_prompt_fixture() {
  TwoPromptFixture fx;
  fx.policy.vocab = hse_vocab();
  fx.policy.order = 0;
  fx.policy.horizon = 1;
  fx.policy.rows["x"][{}] = {0.6, 0.3, 0.1};
  fx.policy.rows["y"][{}] = {0.2, 0.5, 0.3};
  fx.model = no_h_reward();
  fx.space.ids = {"x", "y"};
  fx.space.p0 = {0.7, 0.3};
  fx.space.anchor = "x";
  return fx;
}

}  // namespace

// ============================================================
// Expected reward
// ============================================================

TEST_CASE("expected reward: hand-computed double expectation") {
  PromptSpace space;
  space.ids = {"x", "y"};
  space.p0 = {0.3, 0.7};
  space.anchor = "x";

  RewardModel model;
  model.kind = RewardModel::Kind::tabular;
  model.entries["x"][{}] = 0.9;
  model.entries["x"][{0}] = 0.1;
  model.entries["x"][{1}] = 0.7;
  model.entries["y"][{}] = 0.2;
  model.entries["y"][{1}] = 1.0;

  std::map<std::string, TrajectoryDistribution> responses;
  responses["x"].support = {{make_traj({2}), 0.2},
                            {make_traj({0, 2}), 0.5},
                            {make_traj({1, 2}), 0.3}};
  responses["y"].support = {{make_traj({2}), 0.6}, {make_traj({1, 2}), 0.4}};

  std::vector<double> prompt_dist = {0.3, 0.7};
  double expect = 0.3 * (0.2 * 0.9 + 0.5 * 0.1 + 0.3 * 0.7) + 0.7 * (0.6 * 0.2 + 0.4 * 1.0);
  CHECK(expected_reward(prompt_dist, responses, model, space) ==
        doctest::Approx(expect).epsilon(1e-12));
}

// ============================================================
// Gap decomposition
// ============================================================

TEST_CASE("sub gap: single-prompt fixture matches the hand decomposition") {
  TabularPolicy policy = hse_policy();
  RewardModel model = no_h_reward();
  PromptSpace space = single_prompt_space();
  std::vector<double> p_adv = {1.0};

  SubGap gap = sub_gap(space, p_adv, policy, model, exact_config(1.0));
  // rho* earns reward 1; the tilted decoder leaks exactly the h-step mass.
  CHECK(gap.delta1 == 0.0);
  CHECK(gap.delta2 == doctest::Approx(0.3555950173551955).epsilon(1e-12));
  CHECK(gap.delta_total == doctest::Approx(gap.delta1 + gap.delta2).epsilon(1e-12));
}

TEST_CASE("sub gap: recomposes from its public ingredients") {
  TwoPromptFixture fx = two_prompt_fixture();
  std::vector<double> p_adv = {0.2, 0.8};
  DecodeConfig config = exact_config(0.7);

  SubGap gap = sub_gap(fx.space, p_adv, fx.policy, fx.model, config);

  std::map<std::string, TrajectoryDistribution> star, dec;
  for (const std::string& id : fx.space.ids) {
    star[id] = best_response(fx.policy, fx.model, id);
    dec[id] = induced_decoding_policy(fx.policy, fx.model, id, config);
  }
  double r_base = expected_reward(fx.space.p0, star, fx.model, fx.space);
  double r_adv_star = expected_reward(p_adv, star, fx.model, fx.space);
  double r_adv_dec = expected_reward(p_adv, dec, fx.model, fx.space);

  CHECK(gap.delta1 == doctest::Approx(r_base - r_adv_star).epsilon(1e-12));
  CHECK(gap.delta2 == doctest::Approx(r_adv_star - r_adv_dec).epsilon(1e-12));
  CHECK(gap.delta_total == doctest::Approx(r_base - r_adv_dec).epsilon(1e-12));
  CHECK(gap.delta_total == doctest::Approx(gap.delta1 + gap.delta2).epsilon(1e-12));
}

TEST_CASE("sub gap: tiny alpha closes the decoding slack") {
  TabularPolicy policy = hse_policy();
  RewardModel model = no_h_reward();
  PromptSpace space = single_prompt_space();
  std::vector<double> p_adv = {1.0};
  SubGap gap = sub_gap(space, p_adv, policy, model, exact_config(0.01));
  CHECK(gap.delta_total <= 1e-6);
  CHECK(gap.delta2 >= -1e-9);
}

// ============================================================
// Bound verification
// ============================================================

TEST_CASE("theorem check: single-prompt fixture, point-mass policy KL") {
  TabularPolicy policy = hse_policy();
  RewardModel model = no_h_reward();
  PromptSpace space = single_prompt_space();

  GapReport report = theorem1_check(space, policy, model, 1.0, 1.0);
  // One prompt: the prompter cannot move, so the prompt side is exact zero.
  CHECK(report.delta1 == 0.0);
  CHECK(report.kl_p0_padv == 0.0);
  CHECK(report.tv_p0_padv == 0.0);
  // rho* is the point mass on [eos]; the base gives it probability 0.1.
  CHECK(report.kl_rhostar_rhosafe == doctest::Approx(-std::log(0.1)).epsilon(1e-12));
  CHECK(report.term_policy == doctest::Approx(-std::log(0.1)).epsilon(1e-12));
  CHECK(report.per_prompt_policy_kl.size() == 1);
  CHECK(report.per_prompt_policy_kl[0] == doctest::Approx(report.kl_rhostar_rhosafe));
  CHECK(report.delta2 == doctest::Approx(0.3555950173551955).epsilon(1e-12));
  CHECK(report.bound_rhs == doctest::Approx(report.term_policy).epsilon(1e-12));
  CHECK(report.holds.all());
}

TEST_CASE("theorem check: huge beta keeps the prompter at p0") {
  TwoPromptFixture fx = two_prompt_fixture();
  GapReport report = theorem1_check(fx.space, fx.policy, fx.model, 1.0, 1e9);
  CHECK(report.kl_p0_padv <= 1e-12);
  CHECK(report.tv_p0_padv <= 1e-6);
  CHECK(report.holds.all());
}

TEST_CASE("theorem check: two-prompt fixture satisfies every link") {
  TwoPromptFixture fx = two_prompt_fixture();
  for (double alpha : {0.1, 1.0, 10.0}) {
    for (double beta : {0.1, 1.0, 10.0}) {
      GapReport report = theorem1_check(fx.space, fx.policy, fx.model, alpha, beta);
      CAPTURE(alpha);
      CAPTURE(beta);
      CHECK(report.alpha == alpha);
      CHECK(report.beta == beta);
      CHECK(report.holds.all());
      CHECK(report.delta_total == doctest::Approx(report.delta1 + report.delta2).epsilon(1e-12));
      CHECK(report.bound_rhs <= report.bound_rhs_statement + 1e-15);
    }
  }
}

TEST_CASE("theorem check: per-step decoder can violate the policy-KL link") {
  // Counterexample: per-step Q-tilting is not the trajectory-level
  // KL-regularized maximizer, and the gap exceeds alpha * KL(rho*||rho_safe).
  TabularPolicy policy = slack_policy();
  RewardModel model = slack_reward();
  PromptSpace space = single_prompt_space();

  GapReport report = theorem1_check(space, policy, model, 0.1, 1.0);
  CHECK(report.delta2 == doctest::Approx(0.09282259362974998).epsilon(1e-12));
  CHECK(report.term_policy == doctest::Approx(0.07985076962177717).epsilon(1e-12));
  CHECK(report.delta2 > report.term_policy + kBoundTol);

  // The failure is detected and attributed to the decoding-slack link; the
  // prompt-side links stay sound.
  CHECK(!report.holds.delta2_bound);
  CHECK(!report.holds.theorem);
  CHECK(!report.holds.statement);
  CHECK(report.holds.tv_step);
  CHECK(report.holds.pinsker);
  CHECK(report.holds.prompt_kl);
  CHECK(!report.holds.all());
}

TEST_CASE("theorem check: generated scenarios across the grid") {
  for (uint64_t seed = 1; seed <= 20; ++seed) {
    GenSpec spec;
    spec.seed = seed;
    Scenario scenario = gen_scenario(spec);
    for (double alpha : {0.1, 1.0, 10.0}) {
      GapReport report =
          theorem1_check(scenario.prompts, scenario.policy, scenario.reward, alpha, 1.0);
      CAPTURE(seed);
      CAPTURE(alpha);
      CHECK(report.holds.all());
    }
  }
}

// ============================================================
// Alpha sweep
// ============================================================

TEST_CASE("alpha sweep: slack grows with alpha and vanishes at zero") {
  TabularPolicy policy = hse_policy();
  RewardModel model = no_h_reward();
  PromptSpace space = single_prompt_space();

  std::vector<double> alphas = {1e-4, 0.01, 0.1, 1.0, 10.0};
  std::vector<SweepRow> rows = alpha_sweep(space, policy, model, alphas, 1.0);
  REQUIRE(rows.size() == alphas.size());
  for (size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i].alpha == alphas[i]);
    CHECK(rows[i].delta2 >= -1e-9);
    // bound_term = alpha * KL(point mass on [eos] || base).
    CHECK(rows[i].bound_term == doctest::Approx(alphas[i] * -std::log(0.1)).epsilon(1e-12));
    if (i > 0) CHECK(rows[i].delta2 >= rows[i - 1].delta2 - 1e-12);
  }
  CHECK(rows.front().delta2 <= 1e-6);
}

TEST_CASE("alpha sweep: constant reward has zero slack") {
  TabularPolicy policy = hse_policy();
  RewardModel model = constant_reward(0.5);
  PromptSpace space = single_prompt_space();

  std::vector<double> alphas = {0.1, 1.0, 10.0};
  std::vector<SweepRow> rows = alpha_sweep(space, policy, model, alphas, 1.0);
  for (const SweepRow& row : rows) {
    CHECK(std::abs(row.delta2) <= 1e-12);
    CHECK(row.bound_term == doctest::Approx(row.alpha * -std::log(0.1)).epsilon(1e-12));
  }
}
