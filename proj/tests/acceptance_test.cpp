/**
 * Acceptance gate for the controlled-decoding engine. Each criterion prints
 * one [PASS]/[FAIL] line with its runtime; the process exit code is the
 * number of failed criteria. Criteria with a time budget fail when they
 * exceed it. All tolerances are pinned here, not configurable.
 */

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <immune/adversary.hpp>
#include <immune/analysis.hpp>
#include <immune/decoder.hpp>
#include <immune/distance.hpp>
#include <immune/errors.hpp>
#include <immune/harness.hpp>
#include <immune/policy.hpp>
#include <immune/reward.hpp>
#include <immune/rng.hpp>
#include <immune/scenario.hpp>

#include "test_support.hpp"

using namespace immune;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* pattern, double value) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), pattern, value);
  return buf;
}

Scenario gen(uint64_t seed) {
  GenSpec spec;
  spec.seed = seed;
  return gen_scenario(spec);
}

// Decision states of `prompt`: every support-trajectory prefix at which the
// decoder samples (content shorter than the horizon).
std::set<std::vector<int>> reachable_states(const TabularPolicy& policy,
                                            const std::string& prompt, long cap) {
  std::set<std::vector<int>> states;
  TrajectoryDistribution dist = enumerate_trajectories(policy, prompt, {}, cap);
  for (const WeightedTrajectory& wt : dist.support) {
    for (size_t len = 0; len < wt.traj.token_ids.size(); ++len) {
      if (static_cast<int>(len) >= policy.horizon) break;
      states.insert(std::vector<int>(wt.traj.token_ids.begin(),
                                     wt.traj.token_ids.begin() + static_cast<long>(len)));
    }
  }
  return states;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return {};
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// ============================================================
// Criterion 1: per-step law == closed-form tilt on the full candidate set
// ============================================================

Outcome criterion1() {
  const double tol = 1e-12;
  long states_checked = 0;
  double max_diff = 0.0;
  for (uint64_t seed = 1; seed <= 50; ++seed) {
    Scenario sc = gen(seed);
    DecodeConfig config = sc.decode;
    config.k = sc.vocab().size();
    config.q_mode = QMode::exact;
    for (const std::string& prompt : sc.prompts.ids) {
      for (const std::vector<int>& state :
           reachable_states(sc.policy, prompt, sc.enumeration_cap)) {
        StepRecord rec =
            immune_decode_step(sc.policy, sc.reward, prompt, state, config, Rng(7));
        // Closed form recomputed inline: normalize base * exp(Q / alpha).
        double denom = 0.0;
        std::vector<double> tilt(rec.candidates.size());
        for (size_t i = 0; i < rec.candidates.size(); ++i) {
          tilt[i] = std::exp(rec.log_base[i]) * std::exp(rec.q_values[i] / config.alpha);
          denom += tilt[i];
        }
        for (size_t i = 0; i < tilt.size(); ++i) {
          max_diff = std::max(max_diff, std::abs(rec.f[i] - tilt[i] / denom));
        }
        ++states_checked;
      }
    }
  }
  Outcome out;
  out.pass = max_diff <= tol;
  out.detail = std::to_string(states_checked) + " states over 50 scenarios, max |f - pi*| = " +
               fmt("%.2e", max_diff);
  return out;
}

// ============================================================
// Criterion 2: the step law maximizes E[Q] - alpha * KL(. || base)
// ============================================================

Outcome criterion2() {
  const double tol = 1e-12;
  std::vector<std::tuple<Scenario, std::string, std::vector<int>>> picks;
  for (uint64_t seed = 60; picks.size() < 20; ++seed) {
    Scenario sc = gen(seed);
    int taken = 0;
    for (const std::vector<int>& state :
         reachable_states(sc.policy, sc.prompts.anchor, sc.enumeration_cap)) {
      picks.emplace_back(sc, sc.prompts.anchor, state);
      if (++taken == 2 || picks.size() == 20) break;
    }
  }

  const double alphas[] = {0.1, 1.0, 10.0};
  double worst_margin = std::numeric_limits<double>::infinity();
  long comparisons = 0;
  Rng rng(424242);
  for (size_t pi = 0; pi < picks.size(); ++pi) {
    const auto& [sc, prompt, state] = picks[pi];
    double alpha = alphas[pi % 3];
    DecodeConfig config = sc.decode;
    config.alpha = alpha;
    config.k = sc.vocab().size();
    config.q_mode = QMode::exact;
    StepRecord rec = immune_decode_step(sc.policy, sc.reward, prompt, state, config, Rng(7));

    size_t n = rec.candidates.size();
    std::vector<double> base_norm(n);
    double base_mass = 0.0;
    for (size_t i = 0; i < n; ++i) {
      base_norm[i] = std::exp(rec.log_base[i]);
      base_mass += base_norm[i];
    }
    for (double& b : base_norm) b /= base_mass;

    auto objective = [&](const std::vector<double>& p) {
      double obj = 0.0;
      for (size_t i = 0; i < n; ++i) {
        obj += p[i] * rec.q_values[i];
        if (p[i] > 0.0) obj -= alpha * p[i] * std::log(p[i] / base_norm[i]);
      }
      return obj;
    };

    double f_obj = objective(rec.f);
    for (int trial = 0; trial < 100; ++trial) {
      Rng local = rng.derive(pi).derive(static_cast<uint64_t>(trial));
      std::vector<double> p = test_support::random_simplex(local, static_cast<int>(n));
      worst_margin = std::min(worst_margin, f_obj - objective(p));
      ++comparisons;
    }
  }
  Outcome out;
  out.pass = worst_margin >= -tol;
  out.detail = std::to_string(comparisons) + " comparisons over 20 states, min margin = " +
               fmt("%.2e", worst_margin);
  return out;
}

// ============================================================
// Criterion 3: the safety bound holds across the verification grid
// ============================================================

Outcome criterion3() {
  const double grid[] = {0.1, 1.0, 10.0};
  long total = 0, failed = 0;
  for (uint64_t seed = 1; seed <= 100; ++seed) {
    Scenario sc = gen(seed);
    for (double alpha : grid) {
      for (double beta : grid) {
        GapReport report =
            theorem1_check(sc.prompts, sc.policy, sc.reward, alpha, beta, sc.enumeration_cap);
        ++total;
        if (!report.holds.all()) ++failed;
      }
    }
  }
  Outcome out;
  out.pass = failed == 0;
  out.detail = std::to_string(total - failed) + "/" + std::to_string(total) +
               " bound checks hold (seeds 1..100, grid {0.1,1,10}^2)";
  return out;
}

// ============================================================
// Criterion 4: the closed-form prompter beats every tested distribution
// ============================================================

Outcome criterion4() {
  const double tol = 1e-9;
  const double betas[] = {0.1, 1.0, 10.0};
  long comparisons = 0;
  double worst_margin = std::numeric_limits<double>::infinity();
  for (uint64_t seed = 1; seed <= 100; ++seed) {
    Scenario sc = gen(seed);
    size_t n = sc.prompts.ids.size();
    for (double beta : betas) {
      AdversarialPrompter prompter =
          kl_prompter(sc.policy, sc.reward, sc.prompts, beta, false, sc.enumeration_cap);
      double opt =
          prompter_objective(prompter.dist, sc.policy, sc.reward, sc.prompts, beta);

      Rng rng(9000 + seed);
      for (int trial = 0; trial < 200; ++trial) {
        Rng local = rng.derive(static_cast<uint64_t>(trial));
        std::vector<double> p = test_support::random_simplex(local, static_cast<int>(n));
        double margin =
            prompter_objective(p, sc.policy, sc.reward, sc.prompts, beta) - opt;
        worst_margin = std::min(worst_margin, margin);
        ++comparisons;
      }
      for (size_t i = 0; i < n; ++i) {
        if (sc.prompts.p0[i] <= 0.0) continue;  // infinite KL, trivially above
        std::vector<double> point(n, 0.0);
        point[i] = 1.0;
        double margin =
            prompter_objective(point, sc.policy, sc.reward, sc.prompts, beta) - opt;
        worst_margin = std::min(worst_margin, margin);
        ++comparisons;
      }
    }
  }
  Outcome out;
  out.pass = worst_margin >= -tol;
  out.detail = std::to_string(comparisons) + " challengers, min objective margin = " +
               fmt("%.2e", worst_margin);
  return out;
}

// ============================================================
// Criterion 5: limiting behaviors
// ============================================================

Outcome criterion5() {
  double worst_base_tv = 0.0, worst_const_tv = 0.0, worst_prompt_tv = 0.0;
  bool greedy_ok = true;

  for (uint64_t seed = 1; seed <= 10; ++seed) {
    Scenario sc = gen(seed);
    const std::string& anchor = sc.prompts.anchor;
    TrajectoryDistribution base =
        enumerate_trajectories(sc.policy, anchor, {}, sc.enumeration_cap);

    // (a) alpha -> inf: the controlled decoder converges to the base policy.
    DecodeConfig wide = sc.decode;
    wide.alpha = 1e9;
    wide.k = sc.vocab().size();
    wide.q_mode = QMode::exact;
    TrajectoryDistribution induced =
        induced_decoding_policy(sc.policy, sc.reward, anchor, wide);
    worst_base_tv = std::max(worst_base_tv, tv_distance(induced, base));

    // (b) constant reward: the tilt cancels at any alpha.
    RewardModel flat;
    flat.kind = RewardModel::Kind::tabular;
    flat.default_value = 0.5;
    DecodeConfig plain = sc.decode;
    plain.k = sc.vocab().size();
    plain.q_mode = QMode::exact;
    TrajectoryDistribution flat_induced =
        induced_decoding_policy(sc.policy, flat, anchor, plain);
    worst_const_tv = std::max(worst_const_tv, tv_distance(flat_induced, base));

    // (c) beta -> inf: the adversarial prompter collapses onto p0.
    AdversarialPrompter prompter =
        kl_prompter(sc.policy, sc.reward, sc.prompts, 1e9, false, sc.enumeration_cap);
    worst_prompt_tv = std::max(worst_prompt_tv, tv_distance(prompter.dist, sc.prompts.p0));

    // (d) k = 1: decoding is the base policy's greedy argmax chain.
    std::vector<int> chain;
    std::vector<int> partial;
    while (static_cast<int>(partial.size()) < sc.policy.horizon) {
      std::vector<double> row = next_token_dist(sc.policy, anchor, partial);
      int arg = 0;
      for (size_t i = 1; i < row.size(); ++i) {
        if (row[i] > row[arg]) arg = static_cast<int>(i);
      }
      chain.push_back(arg);
      if (arg == sc.vocab().eos_id) break;
      partial.push_back(arg);
    }
    if (chain.empty() || chain.back() != sc.vocab().eos_id) {
      chain.push_back(sc.vocab().eos_id);
    }
    DecodeConfig greedy = sc.decode;
    greedy.k = 1;
    greedy.q_mode = QMode::exact;
    greedy.seed = seed * 31 + 5;
    Trajectory traj = immune_decode(sc.policy, sc.reward, anchor, greedy).first;
    if (traj.token_ids != chain) greedy_ok = false;
  }

  Outcome out;
  out.pass = worst_base_tv <= 1e-6 && worst_const_tv <= 1e-9 && worst_prompt_tv <= 1e-6 &&
             greedy_ok;
  out.detail = "alpha->inf TV " + fmt("%.2e", worst_base_tv) + ", const-reward TV " +
               fmt("%.2e", worst_const_tv) + ", beta->inf TV " + fmt("%.2e", worst_prompt_tv) +
               ", k=1 greedy " + (greedy_ok ? "ok" : "MISMATCH");
  return out;
}

// ============================================================
// Criterion 6: Monte-Carlo Q is consistent with exact Q
// ============================================================

Outcome criterion6() {
  struct State {
    Scenario sc;
    std::string prompt;
    int z = 0;
  };
  std::vector<State> states;
  for (uint64_t seed = 1; seed <= 3; ++seed) {
    State st{gen(seed), "", 0};
    st.prompt = st.sc.prompts.anchor;
    std::vector<double> row = next_token_dist(st.sc.policy, st.prompt, {});
    for (size_t i = 0; i < row.size(); ++i) {
      if (row[i] > 0.0) {
        st.z = static_cast<int>(i);
        break;
      }
    }
    states.push_back(std::move(st));
  }

  int within = 0;
  double mean_err_small = 0.0, mean_err_big = 0.0;
  for (int t = 1; t <= 100; ++t) {
    const State& st = states[static_cast<size_t>((t - 1) % 3)];
    QEstimate exact = q_exact(st.sc.policy, st.sc.reward, st.prompt, {}, st.z, {},
                              st.sc.enumeration_cap);
    QEstimate big = q_mc(st.sc.policy, st.sc.reward, st.prompt, {}, st.z, 10000,
                         Rng(static_cast<uint64_t>(t)));
    QEstimate small = q_mc(st.sc.policy, st.sc.reward, st.prompt, {}, st.z, 100,
                           Rng(static_cast<uint64_t>(t)));
    double err_big = std::abs(big.value - exact.value);
    double err_small = std::abs(small.value - exact.value);
    mean_err_big += err_big / 100.0;
    mean_err_small += err_small / 100.0;
    bool ok = big.std_err == 0.0 ? err_big <= 1e-12 : err_big <= 4.0 * big.std_err;
    within += ok ? 1 : 0;
  }
  bool shrinks = mean_err_big < mean_err_small || mean_err_big <= 1e-12;
  Outcome out;
  out.pass = within >= 99 && shrinks;
  out.detail = std::to_string(within) + "/100 trials within 4 standard errors; mean |err| " +
               fmt("%.2e", mean_err_small) + " (n=1e2) -> " + fmt("%.2e", mean_err_big) +
               " (n=1e4)";
  return out;
}

// ============================================================
// Criterion 7: the jailbreak demo is defused by the controlled decoder
// ============================================================

Outcome criterion7() {
  Scenario sc = load_scenario(std::string(IMMUNE_SCENARIO_DIR) + "/demo_jailbreak.json");
  AsrReport base = compute_asr(sc, Defense::base);
  AsrReport immune = compute_asr(sc, Defense::immune);

  double mass_base = -1.0, mass_immune = -1.0;
  for (const AsrRow& row : base.rows) {
    if (row.query == sc.prompts.anchor) mass_base = row.harmful_mass;
  }
  for (const AsrRow& row : immune.rows) {
    if (row.query == sc.prompts.anchor) mass_immune = row.harmful_mass;
  }

  Outcome out;
  out.pass = mass_base >= 0.0 && mass_immune >= 0.0 && mass_base >= 5.0 * mass_immune &&
             immune.total_asr < base.total_asr;
  out.detail = "harmful mass " + fmt("%.4g", mass_base) + " -> " + fmt("%.4g", mass_immune) +
               " (x" + fmt("%.0f", mass_immune > 0.0 ? mass_base / mass_immune : std::numeric_limits<double>::infinity()) +
               "), ASR " + fmt("%.3g", base.total_asr) + " -> " + fmt("%.3g", immune.total_asr);
  return out;
}

// ============================================================
// Criterion 8: exhaustive attack == brute force; descent never beats it
// ============================================================

namespace c8 {

double nll(const TabularPolicy& policy, const std::string& prompt,
           const std::vector<int>& suffix, const std::vector<int>& target) {
  std::vector<int> ctx = suffix;
  double total = 0.0;
  for (int y : target) {
    std::vector<double> row = next_token_dist(policy, prompt, ctx);
    double p = row[static_cast<size_t>(y)];
    if (p <= 0.0) return std::numeric_limits<double>::infinity();
    total -= std::log(p);
    ctx.push_back(y);
  }
  return total;
}

std::pair<std::vector<int>, double> brute(const TabularPolicy& policy, const std::string& prompt,
                                          int len, const std::vector<int>& target) {
  std::vector<int> alphabet;
  for (int t = 0; t < policy.vocab.size(); ++t) {
    if (t != policy.vocab.eos_id) alphabet.push_back(t);
  }
  std::vector<size_t> idx(static_cast<size_t>(len), 0);
  std::vector<int> best;
  double best_loss = std::numeric_limits<double>::infinity();
  while (true) {
    std::vector<int> suffix;
    for (size_t i : idx) suffix.push_back(alphabet[i]);
    double loss = nll(policy, prompt, suffix, target);
    if (loss < best_loss) {
      best_loss = loss;
      best = suffix;
    }
    int pos = len - 1;
    while (pos >= 0 && idx[static_cast<size_t>(pos)] + 1 == alphabet.size()) {
      idx[static_cast<size_t>(pos)] = 0;
      --pos;
    }
    if (pos < 0) break;
    ++idx[static_cast<size_t>(pos)];
  }
  return {best, best_loss};
}

}  // namespace c8

Outcome criterion8() {
  struct Instance {
    TabularPolicy policy;
    std::string prompt;
    AttackConfig config;
  };
  std::vector<Instance> instances;

  Scenario demo = load_scenario(std::string(IMMUNE_SCENARIO_DIR) + "/demo_jailbreak.json");
  instances.push_back({demo.policy, demo.prompts.anchor, *demo.attack});

  for (uint64_t seed = 1; seed <= 12; ++seed) {
    Scenario sc = gen(seed);
    std::vector<double> row = next_token_dist(sc.policy, sc.prompts.anchor, {});
    int target = -1;
    for (size_t i = 0; i < row.size(); ++i) {
      if (static_cast<int>(i) == sc.vocab().eos_id) continue;
      if (target < 0 || row[i] > row[static_cast<size_t>(target)]) target = static_cast<int>(i);
    }
    AttackConfig config;
    config.beta = 1.0;
    config.suffix_len = 2;
    config.target_prefix = {target};
    config.search_budget = 4096;
    instances.push_back({sc.policy, sc.prompts.anchor, config});
  }

  int checked = 0;
  bool all_match = true, cd_sound = true;
  for (const Instance& inst : instances) {
    SuffixAttackResult exact;
    try {
      exact = suffix_attack(inst.policy, inst.prompt, inst.config);
    } catch (const TargetUnreachableError&) {
      continue;
    }
    auto [oracle_suffix, oracle_loss] = c8::brute(inst.policy, inst.prompt,
                                                  inst.config.suffix_len,
                                                  inst.config.target_prefix);
    if (!exact.exact || exact.suffix != oracle_suffix ||
        std::abs(exact.loss - oracle_loss) > 1e-12) {
      all_match = false;
    }
    AttackConfig tight = inst.config;
    tight.search_budget = 1;
    SuffixAttackResult cd = suffix_attack(inst.policy, inst.prompt, tight);
    if (cd.exact || cd.loss < exact.loss - 1e-12) cd_sound = false;
    ++checked;
  }

  Outcome out;
  out.pass = checked >= 5 && all_match && cd_sound;
  out.detail = std::to_string(checked) + " instances: exhaustive == brute force " +
               (all_match ? "ok" : "MISMATCH") + ", descent >= exact minimum " +
               (cd_sound ? "ok" : "VIOLATED");
  return out;
}

// ============================================================
// Criterion 9: the verification CLI is byte-reproducible
// ============================================================

Outcome criterion9() {
  const std::string dirs[2] = {"accept_c9_a", "accept_c9_b"};
  for (const std::string& d : dirs) fs::remove_all(d);

  bool ran_ok = true;
  for (const std::string& d : dirs) {
    std::string cmd = std::string(IMMUNE_CLI_PATH) + " verify --trials 5 --seed 1 --out " + d +
                      " --no-timestamp > " + d + ".log 2>&1";
    if (std::system(cmd.c_str()) != 0) ran_ok = false;
  }

  std::string csv_a = read_file(fs::path(dirs[0]) / "gap.csv");
  std::string csv_b = read_file(fs::path(dirs[1]) / "gap.csv");
  std::string rep_a = read_file(fs::path(dirs[0]) / "report.json");
  std::string rep_b = read_file(fs::path(dirs[1]) / "report.json");

  Outcome out;
  out.pass = ran_ok && !csv_a.empty() && csv_a == csv_b && !rep_a.empty() && rep_a == rep_b;
  out.detail = std::string("two runs: exit ") + (ran_ok ? "0" : "nonzero") + ", gap.csv " +
               (csv_a == csv_b && !csv_a.empty() ? "identical" : "DIFFER") + ", report.json " +
               (rep_a == rep_b && !rep_a.empty() ? "identical" : "DIFFER");

  for (const std::string& d : dirs) {
    fs::remove_all(d);
    fs::remove(d + ".log");
  }
  return out;
}

}  // namespace

int main() {
  struct Entry {
    int id;
    const char* name;
    std::function<Outcome()> fn;
    double budget_ms;  // 0: no budget
  };
  const std::vector<Entry> entries = {
      {1, "per-step law equals the closed-form tilt on full candidate sets", criterion1, 10000},
      {2, "step law maximizes the KL-regularized value on the candidate simplex", criterion2,
       5000},
      {3, "suboptimality bound holds on 100 scenarios x 9 grid points", criterion3, 60000},
      {4, "closed-form prompter minimizes the KL-regularized objective", criterion4, 10000},
      {5, "limiting regimes (alpha->inf, constant reward, beta->inf, k=1)", criterion5, 0},
      {6, "Monte-Carlo Q matches exact Q within sampling error", criterion6, 0},
      {7, "jailbreak demo: harmful mass drops 5x and ASR strictly falls", criterion7, 5000},
      {8, "suffix attack: exhaustive == brute force, descent is bounded", criterion8, 0},
      {9, "verify CLI: identical runs give byte-identical artifacts", criterion9, 0},
  };

  int failures = 0;
  for (const Entry& entry : entries) {
    Clock::time_point t0 = Clock::now();
    Outcome out;
    try {
      out = entry.fn();
    } catch (const std::exception& e) {
      out.pass = false;
      out.detail = std::string("exception: ") + e.what();
    }
    double ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
    bool in_budget = entry.budget_ms <= 0.0 || ms < entry.budget_ms;
    bool pass = out.pass && in_budget;
    failures += pass ? 0 : 1;
    std::printf("[%s] criterion %d: %s — %s (%.0f ms%s)\n", pass ? "PASS" : "FAIL", entry.id,
                entry.name, out.detail.c_str(), ms,
                in_budget ? "" : ", OVER TIME BUDGET");
    std::fflush(stdout);
  }
  std::printf("acceptance: %d/9 criteria passed\n", 9 - failures);
  return failures;
}
