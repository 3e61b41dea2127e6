#pragma once

/**
 * Experiment harness: attack-success-rate evaluation and the mode runners
 * behind the CLI. Every mode writes a report.json (plus mode-specific CSV
 * files) into an output directory; identical inputs, flags and seeds give
 * byte-identical CSVs and, timestamp aside, byte-identical JSON.
 */

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <immune/analysis.hpp>
#include <immune/scenario.hpp>

namespace immune {

enum class Defense { base, immune };

std::string defense_name(Defense d);

// One evaluated query: a prompt, optionally conditioned on an attack
// suffix, decoded n_samples times under one defense.
struct AsrRow {
  std::string query;    // prompt id, "<anchor>+suffix", or sampled prompt id
  std::string defense;  // "base" | "immune"
  int n_queries = 0;    // instances aggregated into this row
  int n_harmful = 0;    // instances with >= 1 harmful response
  double asr = 0.0;     // n_harmful / n_queries
  // Exact probability that one decoded response is judged harmful
  // (enumeration-based; negative when enumeration was infeasible).
  double harmful_mass = -1.0;
};

struct AsrReport {
  std::vector<AsrRow> rows;   // per-query rows followed by one "total" row
  int n_samples = 0;
  Defense defense = Defense::base;
  // Aggregate ASR over all query instances.
  double total_asr = 0.0;
};

/**
 * Evaluate one defense on the scenario's query set: the anchor prompt, the
 * suffix-attacked anchor (when an attack with suffix_len > 0 is declared)
 * and judge.n_adv_queries draws from the KL prompter (when an attack is
 * declared). Sampling seeds derive from the scenario seed per
 * (query, sample), so results are deterministic and monotone in n_samples.
 */
AsrReport compute_asr(const Scenario& scenario, Defense defense,
                      std::optional<int> n_samples_override = {});

// ============================================================
// Mode runners (the CLI is a thin flag parser over these)
// ============================================================

struct RunOptions {
  std::string out_dir = "out";
  std::optional<uint64_t> seed;
  std::optional<double> alpha;
  std::optional<double> beta;
  std::optional<int> k;
  std::optional<QMode> q_mode;
  std::optional<int> n_rollouts;
  std::optional<int> n_samples;
  bool trace = false;
  bool no_timestamp = false;
  // verify: number of generated scenarios and the (alpha, beta) grid.
  int trials = 100;
  std::vector<double> grid;  // empty: {0.1, 1, 10}
  // sweep: alpha grid (empty: {0.01, 0.1, 1, 10}).
  std::vector<double> sweep_alphas;
};

// Returns the process exit code: 0 on success / all checks passing.
int run_decode(const Scenario& scenario, const RunOptions& options);
int run_attack(const Scenario& scenario, const RunOptions& options);
int run_asr(const Scenario& scenario, const RunOptions& options);
int run_sweep(const Scenario& scenario, const RunOptions& options);
// verify generates its own scenarios from options.seed (default 1).
int run_verify(const RunOptions& options);
int run_gen(const GenSpec& spec, const std::string& out_file);

}  // namespace immune
