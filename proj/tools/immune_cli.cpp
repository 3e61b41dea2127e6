// Command-line front end: thin flag parsing over the harness mode runners.
//
//   immune decode --scenario s.json --out out/ [--trace]
//   immune attack --scenario s.json --out out/
//   immune asr    --scenario s.json --out out/ [--samples 3]
//   immune verify --trials 100 --seed 1 --out out/
//   immune sweep  --scenario s.json --out out/
//   immune gen    --seed 7 --out scenario.json

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <immune/errors.hpp>
#include <immune/harness.hpp>
#include <immune/scenario.hpp>

namespace {

struct CliState {
  std::string scenario_path;
  immune::RunOptions options;
  // Raw flag storage (CLI11 binds to concrete objects).
  uint64_t seed = 0;
  double alpha = 0.0;
  double beta = 0.0;
  int k = 0;
  std::string q_mode;
  int rollouts = 0;
  int samples = 0;
};

void add_common_flags(CLI::App* cmd, CliState& state, bool needs_scenario) {
  if (needs_scenario) {
    cmd->add_option("--scenario", state.scenario_path, "Scenario JSON file")->required();
  }
  cmd->add_option("--out", state.options.out_dir, "Output directory");
  cmd->add_option("--seed", state.seed, "Override the scenario seed");
  cmd->add_option("--alpha", state.alpha, "Override decode alpha");
  cmd->add_option("--beta", state.beta, "Override prompter beta");
  cmd->add_option("--k", state.k, "Override candidate-set size");
  cmd->add_option("--q-mode", state.q_mode, "Q evaluation: exact | mc")
      ->check(CLI::IsMember({"exact", "mc"}));
  cmd->add_option("--rollouts", state.rollouts, "MC rollouts per candidate");
  cmd->add_option("--samples", state.samples, "Judge samples per query");
  cmd->add_flag("--trace", state.options.trace, "Write a per-step trace file");
  cmd->add_flag("--no-timestamp", state.options.no_timestamp,
                "Omit the timestamp from report.json");
}

bool flag_given(const CLI::App* cmd, const std::string& name) {
  const CLI::Option* opt = cmd->get_option_no_throw(name);
  return opt != nullptr && opt->count() > 0;
}

// Overrides are optional; only flags the user actually passed land in RunOptions.
void collect_overrides(const CLI::App* cmd, CliState& state) {
  if (flag_given(cmd, "--seed")) state.options.seed = state.seed;
  if (flag_given(cmd, "--alpha")) state.options.alpha = state.alpha;
  if (flag_given(cmd, "--beta")) state.options.beta = state.beta;
  if (flag_given(cmd, "--k")) state.options.k = state.k;
  if (flag_given(cmd, "--q-mode")) {
    state.options.q_mode = state.q_mode == "exact" ? immune::QMode::exact : immune::QMode::mc;
  }
  if (flag_given(cmd, "--rollouts")) state.options.n_rollouts = state.rollouts;
  if (flag_given(cmd, "--samples")) state.options.n_samples = state.samples;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Controlled-decoding safety alignment on tabular policies"};
  app.require_subcommand(1);

  CliState state;

  CLI::App* decode = app.add_subcommand("decode", "Decode the anchor prompt with the defense");
  add_common_flags(decode, state, true);

  CLI::App* attack = app.add_subcommand("attack", "Run the suffix attack and the KL prompter");
  add_common_flags(attack, state, true);

  CLI::App* asr = app.add_subcommand("asr", "Attack success rates under base and defense");
  add_common_flags(asr, state, true);

  CLI::App* sweep = app.add_subcommand("sweep", "Decoding slack as a function of alpha");
  add_common_flags(sweep, state, true);
  std::vector<double> sweep_alphas;
  sweep->add_option("--alphas", sweep_alphas, "Alpha grid for the sweep");

  CLI::App* verify = app.add_subcommand("verify", "Check the safety bound on generated scenarios");
  add_common_flags(verify, state, false);
  verify->add_option("--trials", state.options.trials, "Number of generated scenarios");
  verify->add_option("--grid", state.options.grid, "Grid values used for both alpha and beta");

  CLI::App* gen = app.add_subcommand("gen", "Generate a random scenario file");
  uint64_t gen_seed = 1;
  std::string gen_out = "scenario.json";
  int gen_vocab = 0, gen_horizon = 0, gen_prompts = 0, gen_order = -1;
  gen->add_option("--seed", gen_seed, "Generator seed");
  gen->add_option("--out", gen_out, "Output scenario file");
  gen->add_option("--vocab", gen_vocab, "Vocabulary size (0 = random in [3,5], cap 8)");
  gen->add_option("--horizon", gen_horizon, "Horizon (0 = random in [2,3], cap 5)");
  gen->add_option("--prompts", gen_prompts, "Prompt count (0 = random in [2,4], cap 8)");
  gen->add_option("--order", gen_order, "Context order (-1 = random in {0,1})");

  CLI11_PARSE(app, argc, argv);
  for (const CLI::App* sub : app.get_subcommands()) collect_overrides(sub, state);
  state.options.sweep_alphas = sweep_alphas;

  try {
    if (gen->parsed()) {
      immune::GenSpec spec;
      spec.seed = gen_seed;
      spec.vocab_size = gen_vocab;
      spec.horizon = gen_horizon;
      spec.n_prompts = gen_prompts;
      spec.order = gen_order;
      return immune::run_gen(spec, gen_out);
    }
    if (verify->parsed()) return immune::run_verify(state.options);

    immune::Scenario scenario = immune::load_scenario(state.scenario_path);
    if (decode->parsed()) return immune::run_decode(scenario, state.options);
    if (attack->parsed()) return immune::run_attack(scenario, state.options);
    if (asr->parsed()) return immune::run_asr(scenario, state.options);
    if (sweep->parsed()) return immune::run_sweep(scenario, state.options);
  } catch (const immune::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
