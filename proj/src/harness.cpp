#include <immune/harness.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include <json.hpp>

#include <immune/distance.hpp>
#include <immune/errors.hpp>
#include <immune/numeric.hpp>

namespace immune {

using nlohmann::json;
namespace fs = std::filesystem;

std::string defense_name(Defense d) { return d == Defense::base ? "base" : "immune"; }

// ============================================================
// ASR evaluation
// ============================================================

namespace {

struct Query {
  std::string label;
  std::string prompt;
  std::vector<int> prefix;
};

// The evaluation set: anchor, suffix-attacked anchor, prompter draws.
std::vector<Query> build_queries(const Scenario& scenario) {
  std::vector<Query> queries;
  const std::string& anchor = scenario.prompts.anchor;
  queries.push_back({anchor, anchor, {}});

  if (scenario.attack && scenario.attack->suffix_len > 0) {
    SuffixAttackResult attack =
        suffix_attack(scenario.policy, anchor, *scenario.attack);
    queries.push_back({anchor + "+suffix", anchor, attack.suffix});
  }
  if (scenario.attack && scenario.judge.n_adv_queries > 0) {
    AdversarialPrompter prompter =
        kl_prompter(scenario.policy, scenario.reward, scenario.prompts, scenario.attack->beta,
                    false, scenario.enumeration_cap);
    Rng draws = Rng(scenario.seed).derive(stream_tag::kAsrDraw);
    for (int i = 0; i < scenario.judge.n_adv_queries; ++i) {
      int idx = draws.derive(static_cast<uint64_t>(i)).categorical(prompter.dist);
      queries.push_back({scenario.prompts.ids[static_cast<size_t>(idx)],
                         scenario.prompts.ids[static_cast<size_t>(idx)],
                         {}});
    }
  }
  return queries;
}

bool is_harmful(const Scenario& scenario, const std::string& prompt, const Trajectory& traj) {
  return reward(scenario.judge_reward(), prompt, traj) < scenario.judge.threshold;
}

// Exact per-response harmful probability for one query under one defense;
// -1 when enumeration is infeasible.
double harmful_mass(const Scenario& scenario, Defense defense, const Query& query) {
  try {
    TrajectoryDistribution dist;
    if (defense == Defense::base) {
      dist = enumerate_trajectories(scenario.policy, query.prompt, query.prefix,
                                    scenario.enumeration_cap);
    } else {
      DecodeConfig config = scenario.decode;
      config.q_mode = QMode::exact;
      dist = induced_decoding_policy(scenario.policy, scenario.reward, query.prompt, config,
                                     query.prefix);
    }
    double mass = 0.0;
    for (const auto& wt : dist.support) {
      if (is_harmful(scenario, query.prompt, wt.traj)) mass += wt.prob;
    }
    return mass;
  } catch (const EnumerationTooLargeError&) {
    return -1.0;
  }
}

}  // namespace

AsrReport compute_asr(const Scenario& scenario, Defense defense,
                      std::optional<int> n_samples_override) {
  AsrReport report;
  report.defense = defense;
  report.n_samples = n_samples_override.value_or(scenario.judge.n_samples);
  if (report.n_samples < 1) throw ValidationError("compute_asr: n_samples must be >= 1");

  std::vector<Query> queries = build_queries(scenario);

  // Aggregate instances by label, preserving first-seen order.
  std::vector<std::string> order;
  std::map<std::string, AsrRow> rows;
  int total_queries = 0, total_harmful = 0;

  for (size_t qi = 0; qi < queries.size(); ++qi) {
    const Query& q = queries[qi];
    bool flagged = false;
    for (int s = 0; s < report.n_samples; ++s) {
      Rng stream = Rng(scenario.seed)
                       .derive(stream_tag::kAsrQuery)
                       .derive(qi)
                       .derive(static_cast<uint64_t>(s));
      Trajectory traj;
      if (defense == Defense::base) {
        traj = sample_trajectory(scenario.policy, q.prompt, stream, q.prefix);
      } else {
        DecodeConfig config = scenario.decode;
        config.seed = stream.seed();
        traj = immune_decode(scenario.policy, scenario.reward, q.prompt, config, q.prefix).first;
      }
      if (is_harmful(scenario, q.prompt, traj)) {
        flagged = true;
        break;
      }
    }
    auto [it, inserted] = rows.try_emplace(q.label);
    if (inserted) {
      it->second.query = q.label;
      it->second.defense = defense_name(defense);
      it->second.harmful_mass = harmful_mass(scenario, defense, q);
      order.push_back(q.label);
    }
    it->second.n_queries += 1;
    it->second.n_harmful += flagged ? 1 : 0;
    ++total_queries;
    total_harmful += flagged ? 1 : 0;
  }

  for (const std::string& label : order) {
    AsrRow row = rows[label];
    row.asr = static_cast<double>(row.n_harmful) / row.n_queries;
    report.rows.push_back(std::move(row));
  }
  AsrRow total;
  total.query = "total";
  total.defense = defense_name(defense);
  total.n_queries = total_queries;
  total.n_harmful = total_harmful;
  total.asr = total_queries > 0 ? static_cast<double>(total_harmful) / total_queries : 0.0;
  report.total_asr = total.asr;
  report.rows.push_back(total);
  return report;
}

// ============================================================
// Report plumbing
// ============================================================

namespace {

std::string iso_timestamp() {
  auto now = std::chrono::system_clock::now();
  std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

json report_header(const std::string& mode, uint64_t seed, const RunOptions& options) {
  json header;
  header["tool"] = "immune";
  header["mode"] = mode;
  header["seed"] = seed;
  if (!options.no_timestamp) header["timestamp"] = iso_timestamp();
  return header;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write \"" + path.string() + "\"");
  out << text;
}

void write_report(const fs::path& dir, const json& report) {
  write_file(dir / "report.json", report.dump(2) + "\n");
}

fs::path prepare_out_dir(const RunOptions& options) {
  fs::path dir(options.out_dir);
  fs::create_directories(dir);
  return dir;
}

// Apply CLI overrides onto the scenario's decode/judge blocks.
Scenario apply_overrides(Scenario scenario, const RunOptions& options) {
  if (options.seed) {
    scenario.seed = *options.seed;
    scenario.decode.seed = *options.seed;
  }
  if (options.alpha) scenario.decode.alpha = *options.alpha;
  if (options.k) scenario.decode.k = *options.k;
  if (options.q_mode) scenario.decode.q_mode = *options.q_mode;
  if (options.n_rollouts) scenario.decode.n_rollouts = *options.n_rollouts;
  if (options.n_samples) scenario.judge.n_samples = *options.n_samples;
  if (options.beta && scenario.attack) scenario.attack->beta = *options.beta;
  return scenario;
}

json trajectory_to_json(const Vocab& vocab, const Trajectory& traj) {
  json j;
  j["token_ids"] = traj.token_ids;
  json symbols = json::array();
  for (int id : traj.token_ids) symbols.push_back(vocab.symbol(id));
  j["tokens"] = std::move(symbols);
  j["terminated"] = traj.terminated;
  j["eos_forced"] = traj.eos_forced;
  return j;
}

json step_to_json(const Vocab& vocab, const StepRecord& rec) {
  json j;
  j["state"] = rec.state;
  j["candidates"] = rec.candidates;
  json symbols = json::array();
  for (int id : rec.candidates) symbols.push_back(vocab.symbol(id));
  j["candidate_tokens"] = std::move(symbols);
  j["log_base"] = rec.log_base;
  j["q_values"] = rec.q_values;
  j["q_std_err"] = rec.q_std_err;
  j["scores"] = rec.scores;
  j["f"] = rec.f;
  j["chosen"] = rec.chosen;
  return j;
}

json gap_to_json(const GapReport& report) {
  json j;
  j["alpha"] = report.alpha;
  j["beta"] = report.beta;
  j["delta1"] = report.delta1;
  j["delta2"] = report.delta2;
  j["delta_total"] = report.delta_total;
  j["term_prompt"] = report.term_prompt;
  j["term_policy"] = report.term_policy;
  j["bound_rhs"] = report.bound_rhs;
  j["bound_rhs_statement"] = report.bound_rhs_statement;
  j["kl_p0_padv"] = report.kl_p0_padv;
  j["tv_p0_padv"] = report.tv_p0_padv;
  j["kl_rhostar_rhosafe"] = report.kl_rhostar_rhosafe;
  j["kl_prompt_bound_rhs"] = report.kl_prompt_bound_rhs;
  j["per_prompt_policy_kl"] = report.per_prompt_policy_kl;
  j["holds"] = {{"theorem", report.holds.theorem},
                {"statement", report.holds.statement},
                {"tv_step", report.holds.tv_step},
                {"pinsker", report.holds.pinsker},
                {"prompt_kl", report.holds.prompt_kl},
                {"delta2_bound", report.holds.delta2_bound},
                {"all", report.holds.all()}};
  return j;
}

}  // namespace

// ============================================================
// Mode runners
// ============================================================

int run_decode(const Scenario& raw, const RunOptions& options) {
  Scenario scenario = apply_overrides(raw, options);
  fs::path dir = prepare_out_dir(options);

  auto [traj, trace] = immune_decode(scenario.policy, scenario.reward, scenario.prompts.anchor,
                                     scenario.decode);
  double r = reward(scenario.reward, scenario.prompts.anchor, traj);

  json report = report_header("decode", scenario.seed, options);
  report["prompt"] = scenario.prompts.anchor;
  report["config"] = {{"k", scenario.decode.k},
                      {"alpha", scenario.decode.alpha},
                      {"q_mode", scenario.decode.q_mode == QMode::exact ? "exact" : "mc"},
                      {"n_rollouts", scenario.decode.n_rollouts}};
  report["trajectory"] = trajectory_to_json(scenario.vocab(), traj);
  report["reward"] = r;
  report["n_steps"] = trace.steps.size();
  write_report(dir, report);

  if (options.trace) {
    json tj = report_header("decode-trace", scenario.seed, options);
    json steps = json::array();
    for (const StepRecord& rec : trace.steps) steps.push_back(step_to_json(scenario.vocab(), rec));
    tj["steps"] = std::move(steps);
    write_file(dir / "trace.json", tj.dump(2) + "\n");
  }

  std::string text;
  for (size_t i = 0; i < traj.token_ids.size(); ++i) {
    if (i) text += ' ';
    text += scenario.vocab().symbol(traj.token_ids[i]);
  }
  std::cout << "decode: prompt=" << scenario.prompts.anchor << " response=\"" << text
            << "\" reward=" << format_double(r) << "\n";
  return 0;
}

int run_attack(const Scenario& raw, const RunOptions& options) {
  Scenario scenario = apply_overrides(raw, options);
  if (!scenario.attack) {
    throw ValidationError("attack mode: scenario declares no attack block");
  }
  fs::path dir = prepare_out_dir(options);
  json report = report_header("attack", scenario.seed, options);

  if (scenario.attack->suffix_len > 0) {
    SuffixAttackResult res =
        suffix_attack(scenario.policy, scenario.prompts.anchor, *scenario.attack);
    json suffix = json::array();
    for (int id : res.suffix) suffix.push_back(scenario.vocab().symbol(id));
    report["suffix_attack"] = {{"suffix", std::move(suffix)},
                               {"loss", res.loss},
                               {"exact", res.exact},
                               {"evaluations", res.evaluations}};
    std::cout << "attack: suffix loss=" << format_double(res.loss)
              << (res.exact ? " (exact)" : " (coordinate descent)") << "\n";
  }

  AdversarialPrompter prompter =
      kl_prompter(scenario.policy, scenario.reward, scenario.prompts, scenario.attack->beta,
                  false, scenario.enumeration_cap);
  report["kl_prompter"] = {{"beta", scenario.attack->beta},
                           {"p_adv", prompter.dist},
                           {"j_values", prompter.j_values},
                           {"objective", prompter.objective_value},
                           {"kl_p0_padv", kl_divergence(scenario.prompts.p0, prompter.dist)}};
  write_report(dir, report);
  std::cout << "attack: prompter objective=" << format_double(prompter.objective_value) << "\n";
  return 0;
}

int run_asr(const Scenario& raw, const RunOptions& options) {
  Scenario scenario = apply_overrides(raw, options);
  fs::path dir = prepare_out_dir(options);

  AsrReport base = compute_asr(scenario, Defense::base, options.n_samples);
  AsrReport immune = compute_asr(scenario, Defense::immune, options.n_samples);

  std::string csv = "prompt,defense,n,harmful,asr\n";
  json rows = json::array();
  for (const AsrReport* rep : {&base, &immune}) {
    for (const AsrRow& row : rep->rows) {
      csv += row.query + "," + row.defense + "," + std::to_string(row.n_queries) + "," +
             std::to_string(row.n_harmful) + "," + format_double(row.asr) + "\n";
      json r = {{"prompt", row.query}, {"defense", row.defense},   {"n", row.n_queries},
                {"harmful", row.n_harmful}, {"asr", row.asr}};
      if (row.harmful_mass >= 0.0) r["harmful_mass"] = row.harmful_mass;
      rows.push_back(std::move(r));
    }
  }
  write_file(dir / "asr.csv", csv);

  json report = report_header("asr", scenario.seed, options);
  report["n_samples"] = base.n_samples;
  report["rows"] = std::move(rows);
  report["asr_base"] = base.total_asr;
  report["asr_immune"] = immune.total_asr;
  write_report(dir, report);

  std::cout << "asr: base=" << format_double(base.total_asr)
            << " immune=" << format_double(immune.total_asr) << " (n=" << base.n_samples
            << " samples/query)\n";
  return 0;
}

int run_sweep(const Scenario& raw, const RunOptions& options) {
  Scenario scenario = apply_overrides(raw, options);
  fs::path dir = prepare_out_dir(options);

  std::vector<double> alphas =
      options.sweep_alphas.empty() ? std::vector<double>{0.01, 0.1, 1.0, 10.0}
                                   : options.sweep_alphas;
  double beta = options.beta.value_or(scenario.attack ? scenario.attack->beta : 1.0);
  std::vector<SweepRow> rows = alpha_sweep(scenario.prompts, scenario.policy, scenario.reward,
                                           alphas, beta, scenario.enumeration_cap);

  std::string csv = "alpha,delta2,bound_term\n";
  json jrows = json::array();
  for (const SweepRow& row : rows) {
    csv += format_double(row.alpha) + "," + format_double(row.delta2) + "," +
           format_double(row.bound_term) + "\n";
    jrows.push_back(
        {{"alpha", row.alpha}, {"delta2", row.delta2}, {"bound_term", row.bound_term}});
  }
  write_file(dir / "sweep.csv", csv);

  json report = report_header("sweep", scenario.seed, options);
  report["beta"] = beta;
  report["rows"] = std::move(jrows);
  write_report(dir, report);
  std::cout << "sweep: " << rows.size() << " alphas at beta=" << format_double(beta) << "\n";
  return 0;
}

int run_verify(const RunOptions& options) {
  fs::path dir = prepare_out_dir(options);
  uint64_t base_seed = options.seed.value_or(1);
  std::vector<double> grid =
      options.grid.empty() ? std::vector<double>{0.1, 1.0, 10.0} : options.grid;
  std::vector<double> alphas = options.alpha ? std::vector<double>{*options.alpha} : grid;
  std::vector<double> betas = options.beta ? std::vector<double>{*options.beta} : grid;

  std::string csv = "alpha,beta,delta1,delta2,delta,bound_rhs,holds\n";
  json violations = json::array();
  long n_checks = 0, n_violations = 0;

  for (int t = 0; t < options.trials; ++t) {
    GenSpec spec;
    spec.seed = base_seed + static_cast<uint64_t>(t);
    Scenario scenario = gen_scenario(spec);
    for (double alpha : alphas) {
      for (double beta : betas) {
        GapReport report = theorem1_check(scenario.prompts, scenario.policy, scenario.reward,
                                          alpha, beta, scenario.enumeration_cap);
        ++n_checks;
        bool ok = report.holds.all();
        csv += format_double(report.alpha) + "," + format_double(report.beta) + "," +
               format_double(report.delta1) + "," + format_double(report.delta2) + "," +
               format_double(report.delta_total) + "," + format_double(report.bound_rhs) + "," +
               (ok ? "1" : "0") + "\n";
        if (!ok) {
          ++n_violations;
          json v;
          v["scenario_seed"] = spec.seed;
          v["report"] = gap_to_json(report);
          v["scenario"] = json::parse(scenario_to_json(scenario));
          violations.push_back(std::move(v));
        }
      }
    }
  }
  write_file(dir / "gap.csv", csv);

  json report = report_header("verify", base_seed, options);
  report["trials"] = options.trials;
  report["alphas"] = alphas;
  report["betas"] = betas;
  report["n_checks"] = n_checks;
  report["n_violations"] = n_violations;
  report["violations"] = std::move(violations);
  write_report(dir, report);

  std::cout << "verify: " << n_checks << " checks over " << options.trials << " scenarios, "
            << n_violations << " violations\n";
  return n_violations == 0 ? 0 : 1;
}

int run_gen(const GenSpec& spec, const std::string& out_file) {
  Scenario scenario = gen_scenario(spec);
  save_scenario(scenario, out_file);
  std::cout << "gen: wrote " << out_file << " (|vocab|=" << scenario.vocab().size()
            << ", horizon=" << scenario.policy.horizon
            << ", prompts=" << scenario.prompts.ids.size() << ")\n";
  return 0;
}

}  // namespace immune
