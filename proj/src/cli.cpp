// Copyright 2026 The ehinfer Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "ehinfer/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>

#include "ehinfer/io.hpp"

namespace ehinfer {
namespace {

class MissingArtifact : public Error {
 public:
  using Error::Error;
};

class SolverFailure : public Error {
 public:
  using Error::Error;
};

class TrainingFailure : public Error {
 public:
  using Error::Error;
};

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag) {
  if (flag) return *flag;
  if (const char* e = std::getenv("EH_INFER_SEED")) {
    try {
      std::size_t used = 0;
      const std::uint64_t v = std::stoull(e, &used);
      if (used == std::string(e).size()) return v;
    } catch (const std::exception&) {
    }
    throw InputError("EH_INFER_SEED is not an unsigned integer");
  }
  throw InputError("a seed is required: pass --seed or set EH_INFER_SEED");
}

HarvestEnvironment load_env(const std::string& path, std::optional<double> gamma) {
  HarvestEnvironment env = env_from_json(read_json_file(path));
  if (!gamma) return env;
  try {
    return HarvestEnvironment(env.chain(), env.arrivals(), env.battery(), EpochConfig{env.slots(), *gamma},
                              env.conditioning());
  } catch (const std::invalid_argument& e) {
    throw InputError(e.what());
  }
}

ControllerKind parse_controller(const std::string& raw) {
  std::string s = raw;
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  if (s == "mms") return ControllerKind::kMmS;
  if (s == "oracle" || s == "osiaworacle") return ControllerKind::kOsIAwOracle;
  if (s == "inc-iag" || s == "inciagee") return ControllerKind::kIncIAgEE;
  if (s == "inc-dqn" || s == "inciawdqn") return ControllerKind::kIncIAwDQN;
  if (s == "os-dqn" || s == "osiawdqn") return ControllerKind::kOsIAwDQN;
  if (s == "random" || s == "randomfeasible") return ControllerKind::kRandomFeasible;
  if (s == "fixed" || s == "fixedmode") return ControllerKind::kFixedMode;
  throw InputError("unknown controller: " + raw);
}

std::vector<double> iag_accuracy(const std::optional<ConfidenceDataset>& ds, const HarvestEnvironment& env) {
  if (ds) {
    if (ds->modes() != env.modes()) throw InputError("dataset and environment disagree on K");
    return exit_accuracies(*ds);
  }
  const SyntheticSpec spec;
  if (env.modes() != spec.modes())
    throw InputError("no dataset given and the default accuracies need K = 4");
  std::vector<double> rho{1.0 / spec.n_classes};
  rho.insert(rho.end(), spec.target_accuracy.begin(), spec.target_accuracy.end());
  return rho;
}

Json load_artifact(const std::optional<std::string>& path, std::string* text) {
  if (!path) throw MissingArtifact("this controller needs --policy");
  std::ifstream probe(*path);
  if (!probe) throw MissingArtifact("policy artifact not found: " + *path);
  *text = read_text_file(*path);
  try {
    return Json::parse(*text);
  } catch (const Json::exception& e) {
    throw InputError(*path + ": " + e.what());
  }
}

ControllerHandle load_controller(ControllerKind kind, const HarvestEnvironment& env,
                                 const std::optional<std::string>& policy_path, int fixed_mode,
                                 std::string* artifact_text) {
  artifact_text->clear();
  switch (kind) {
    case ControllerKind::kRandomFeasible: return make_random_controller(env);
    case ControllerKind::kFixedMode:
      if (fixed_mode < 0 || fixed_mode >= env.modes()) throw InputError("--mode out of range");
      return make_fixed_controller(env, fixed_mode);
    default: break;
  }
  const Json j = load_artifact(policy_path, artifact_text);
  switch (kind) {
    case ControllerKind::kMmS:
      if (j.value("kind", "") != "mms") throw InputError("policy artifact is not an MmS policy");
      if (j.value("env_fingerprint", "") != hex64(fingerprint(env)))
        throw InputError("policy artifact was solved for a different environment");
      return make_mms_controller(env, policy_from_json(j, env.num_states()));
    case ControllerKind::kIncIAgEE:
      if (j.value("kind", "") != "inc-iag") throw InputError("policy artifact is not an IncIAg policy");
      if (j.value("env_fingerprint", "") != hex64(fingerprint(env)))
        throw InputError("policy artifact was solved for a different environment");
      return make_inc_iag_controller(env, policy_from_json(j, IncrementalIndex(env).size()));
    case ControllerKind::kOsIAwOracle:
      return make_oracle_controller(env, oracle_from_json(j, env));
    case ControllerKind::kIncIAwDQN:
    case ControllerKind::kOsIAwDQN: {
      ControlMode mode;
      Mlp<float> net = checkpoint_from_json(j, &mode);
      const ControlMode want =
          kind == ControllerKind::kIncIAwDQN ? ControlMode::kIncremental : ControlMode::kOneShotOracle;
      if (mode != want) throw InputError("checkpoint control mode does not match the controller");
      try {
        return make_dqn_controller(env, DqnPolicy(env, mode, std::move(net)));
      } catch (const DimensionMismatch& e) {
        throw InputError(e.what());
      }
    }
    default: break;
  }
  throw InputError("unsupported controller");
}

std::string sibling(const std::string& path, const std::string& suffix) { return path + suffix; }

// ---------------------------------------------------------------------------

struct GenDataArgs {
  std::optional<std::string> spec;
  std::string kind = "synthetic";
  int n = 0;
  std::optional<std::uint64_t> seed;
  std::string out;
};

int cmd_gen_data(const GenDataArgs& a, std::ostream& out) {
  const std::uint64_t seed = resolve_seed(a.seed);
  if (a.n <= 0) throw InputError("--n must be positive");
  const Json spec_json = a.spec ? read_json_file(*a.spec) : Json::object();
  ConfidenceDataset ds = [&] {
    if (a.kind == "synthetic") return generate_synthetic(synthetic_spec_from_json(spec_json), a.n, seed);
    if (a.kind == "logits") return generate_logit_dataset(logit_spec_from_json(spec_json), a.n, seed);
    throw InputError("--kind must be synthetic or logits");
  }();
  write_dataset(a.out, ds);
  const CalibrationReport rel = reliability(ds);
  Json summary;
  summary["n"] = ds.size();
  summary["modes"] = ds.modes();
  summary["n_classes"] = ds.n_classes();
  summary["seed"] = seed;
  summary["accuracy"] = exit_accuracies(ds);
  std::vector<double> conf;
  for (int k = 0; k < ds.modes(); ++k) conf.push_back(mean_confidence(ds, k));
  summary["mean_confidence"] = conf;
  summary["ece"] = rel.ece;
  summary["fingerprint"] = hex64(ds.fingerprint());
  write_json_file(sibling(a.out, ".summary.json"), summary);
  out << "wrote " << ds.size() << " records to " << a.out << "\n";
  out << "accuracy";
  for (double r : exit_accuracies(ds)) out << " " << format_number(r);
  out << "\n";
  return kExitOk;
}

struct SolveArgs {
  std::string kind;
  std::string env;
  std::optional<std::string> dataset;
  std::optional<double> gamma;
  double eps = 1e-8;
  int max_iter = 1'000'000;
  std::string method = "pi";
  std::string out;
};

int cmd_solve(const SolveArgs& a, std::ostream& out) {
  const HarvestEnvironment env = load_env(a.env, a.gamma);
  if (!(a.eps > 0.0)) throw InputError("--eps must be positive");
  if (a.max_iter <= 0) throw InputError("--max-iter must be positive");
  if (a.kind != "mms" && a.kind != "inc-iag" && a.kind != "oracle")
    throw InputError("--kind must be mms, inc-iag or oracle");
  if (a.method != "pi" && a.method != "vi") throw InputError("--method must be pi or vi");
  if (a.kind == "oracle" && !a.dataset) throw InputError("--kind oracle needs --dataset");
  std::optional<ConfidenceDataset> ds;
  if (a.dataset) ds = read_dataset(*a.dataset);

  Json report;
  report["kind"] = a.kind;
  report["env_fingerprint"] = hex64(fingerprint(env));
  try {
    if (a.kind == "oracle") {
      const OracleSolution sol = solve_oracle(env, *ds, a.eps, a.max_iter);
      write_json_file(a.out, oracle_to_json(sol, env));
      report["iterations"] = sol.iterations;
      report["residual"] = sol.residuals.back();
      report["iteration_bound"] = oracle_iteration_bound(env.epoch().discount, a.eps);
      report["value_monotone_in_battery"] = value_monotone_in_battery(env, sol.v_bar);
      report["dataset_fingerprint"] = hex64(sol.dataset_fingerprint);
      out << "oracle: " << sol.iterations << " sweeps, residual " << format_number(sol.residuals.back())
          << "\n";
    } else {
      const std::vector<double> rho = iag_accuracy(ds, env);
      const FiniteMdp mms = build_mms_mdp(env, rho);
      auto solve = [&](const FiniteMdp& mdp) {
        return a.method == "pi" ? policy_iteration(mdp, a.max_iter) : value_iteration(mdp, a.eps, a.max_iter);
      };
      const SolveResult mres = solve(mms);
      if (a.kind == "mms") {
        write_json_file(a.out, policy_to_json("mms", env, mres.policy, mres.value));
        const MonotoneCheck mono = check_monotone(env, mres.policy);
        report["monotone"] = mono.monotone;
        if (!mono.monotone) report["monotone_violation"] = {{"b", *mono.violation_b}, {"h", *mono.violation_h}};
        Json sup = Json::array();
        bool all_sup = true;
        for (int h = 0; h < env.env_states(); ++h) {
          const SuperadditiveCheck c = check_superadditive(mms_q_by_level(env, mms, mres.value, h));
          all_sup = all_sup && c.superadditive;
          sup.push_back(Json{{"h", env.chain().labels()[h]}, {"superadditive", c.superadditive},
                             {"worst_margin", c.worst_margin}});
        }
        report["superadditive"] = all_sup;
        report["superadditivity"] = sup;
        report["bellman_residual"] = bellman_residual(mms, mres.value);
        report["iterations"] = mres.iterations;
        out << "mms: monotone=" << (mono.monotone ? "true" : "false")
            << " superadditive=" << (all_sup ? "true" : "false") << "\n";
      } else {
        const FiniteMdp inc = build_inc_iag_mdp(env, rho);
        const SolveResult ires = solve(inc);
        write_json_file(a.out, policy_to_json("inc-iag", env, ires.policy, ires.value));
        const double margin = dominance_margin(env, mres.value, ires.value);
        report["dominance_margin"] = margin;
        report["dominance_holds"] = margin >= -1e-6;
        report["bellman_residual"] = bellman_residual(inc, ires.value);
        report["iterations"] = ires.iterations;
        out << "inc-iag: dominance margin " << format_number(margin) << "\n";
      }
      report["method"] = a.method;
    }
  } catch (const SingularEvaluation& e) {
    throw SolverFailure(e.what());
  } catch (const NonErgodicChain& e) {
    throw SolverFailure(e.what());
  } catch (const NoConvergence& e) {
    throw SolverFailure(e.what());
  }
  write_json_file(sibling(a.out, ".report.json"), report);
  return kExitOk;
}

struct TrainArgs {
  std::string env;
  std::string dataset;
  std::optional<std::string> config;
  std::optional<std::string> mode;
  std::optional<long> steps;
  std::optional<std::uint64_t> seed;
  int eval_epochs = 2000;
  std::string out;
  std::optional<std::string> curve;
};

int cmd_train_dqn(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  const HarvestEnvironment env = load_env(a.env, std::nullopt);
  const ConfidenceDataset ds = read_dataset(a.dataset);
  TrainConfig cfg;
  try {
    const Json cj = a.config ? read_json_file(*a.config) : Json::object();
    cfg = train_config_from_json(cj);
    if (a.mode) cfg.mode = parse_mode(*a.mode);
    if (a.steps) cfg.total_steps = *a.steps;
    if (a.seed || !cj.contains("seed")) cfg.seed = resolve_seed(a.seed);
    cfg.validate();
  } catch (const InputError& e) {
    throw TrainingFailure(e.what());
  } catch (const std::invalid_argument& e) {
    throw TrainingFailure(e.what());
  }
  if (cfg.total_steps == 0) err << "warning: total_steps = 0, writing the untrained network\n";
  TrainResult tr = train(env, ds, cfg);
  write_json_file(a.out, checkpoint_to_json(tr.network, cfg.mode));
  const std::string fp_text = env_to_json(env).dump() + hex64(ds.fingerprint()) + train_config_to_json(cfg).dump();
  if (a.curve) {
    std::string csv = csv_header_comment(fnv1a(fp_text), cfg.seed) + "step,eval_accuracy,loss\n";
    for (const CurvePoint& p : tr.curve)
      csv += std::to_string(p.step) + "," + format_number(p.accuracy) + "," + format_number(p.loss) + "\n";
    write_text_file(*a.curve, csv);
  }
  const DqnPolicy policy(env, cfg.mode, tr.network);
  const double acc = greedy_accuracy(policy, env, ds, a.eval_epochs, derive_seed(cfg.seed, 99));
  out << "final eval accuracy " << format_number(acc) << " after " << tr.gradient_steps
      << " gradient steps\n";
  return kExitOk;
}

struct SimulateArgs {
  std::string controller;
  std::string env;
  std::string dataset;
  std::optional<std::string> policy;
  int fixed_mode = 3;
  int episodes = 30;
  int epochs = 5000;
  std::optional<std::uint64_t> seed;
  std::string out;
};

int cmd_simulate(const SimulateArgs& a, std::ostream& out) {
  const std::uint64_t seed = resolve_seed(a.seed);
  const HarvestEnvironment env = load_env(a.env, std::nullopt);
  const ConfidenceDataset ds = read_dataset(a.dataset);
  const ControllerKind kind = parse_controller(a.controller);
  std::string artifact;
  const ControllerHandle c = load_controller(kind, env, a.policy, a.fixed_mode, &artifact);
  if (a.episodes <= 0 || a.epochs <= 0) throw InputError("--episodes and --epochs must be positive");
  const std::vector<EpisodeResult> res = simulate(*c, env, ds, a.episodes, a.epochs, seed);
  const std::string fp_text = env_to_json(env).dump() + hex64(ds.fingerprint()) + artifact + c->name() +
                              std::to_string(a.episodes) + "," + std::to_string(a.epochs);
  std::string csv = csv_header_comment(fnv1a(fp_text), seed);
  csv += "controller,episode,accuracy,energy,overflow,outages";
  for (int k = 0; k < env.modes(); ++k) csv += ",exit_hist_" + std::to_string(k);
  csv += "\n";
  for (std::size_t e = 0; e < res.size(); ++e) {
    const EpisodeResult& r = res[e];
    csv += c->name() + "," + std::to_string(e) + "," + format_number(r.accuracy) + "," +
           std::to_string(r.energy) + "," + std::to_string(r.overflow) + "," + std::to_string(r.outages);
    for (long h : r.histogram) csv += "," + std::to_string(h);
    csv += "\n";
  }
  write_text_file(a.out, csv);
  const MeanCi m = mean_ci(accuracies(res));
  out << c->name() << " accuracy " << format_number(m.mean) << " [" << format_number(m.low) << ", "
      << format_number(m.high) << "]\n";
  return kExitOk;
}

struct SweepArgs {
  std::optional<std::string> grid;
  std::string est;
  std::string test;
  std::string controllers = "MmS,OsIAwOracle,IncIAgEE,RandomFeasible";
  std::optional<std::string> dqn_config;
  int fixed_mode = 3;
  int jobs = 1;
  std::optional<std::uint64_t> seed;
  std::optional<int> episodes;
  std::optional<int> epochs;
  std::string out;
  std::optional<std::string> groups;
};

int cmd_sweep(const SweepArgs& a, std::ostream& out) {
  SweepGrid grid = a.grid ? sweep_grid_from_json(read_json_file(*a.grid)) : SweepGrid{};
  if (a.seed) {
    grid.seeds = {*a.seed};
  } else if (!a.grid) {
    grid.seeds = {resolve_seed(std::nullopt)};
  }
  if (a.episodes) grid.episodes = *a.episodes;
  if (a.epochs) grid.epochs = *a.epochs;
  if (grid.episodes <= 0 || grid.epochs <= 0) throw InputError("--episodes and --epochs must be positive");
  const ConfidenceDataset est = read_dataset(a.est);
  const ConfidenceDataset test = read_dataset(a.test);
  SweepOptions opt;
  opt.controllers.clear();
  std::string item;
  std::istringstream list(a.controllers);
  while (std::getline(list, item, ','))
    if (!item.empty()) opt.controllers.push_back(parse_controller(item));
  if (opt.controllers.empty()) throw InputError("--controllers is empty");
  opt.fixed_mode = a.fixed_mode;
  opt.jobs = a.jobs;
  if (a.dqn_config) opt.dqn = train_config_from_json(read_json_file(*a.dqn_config));
  const std::vector<SweepRow> rows = sweep(grid, est, test, opt);
  Json grid_json{{"p_gg", grid.p_gg}, {"p_bb", grid.p_bb}, {"pe_good", grid.pe_good},
                 {"pe_bad", grid.pe_bad}, {"b_max", grid.b_max}, {"seeds", grid.seeds},
                 {"cost", grid.cost}, {"slots", grid.slots}, {"discount", grid.discount},
                 {"episodes", grid.episodes}, {"epochs", grid.epochs}, {"controllers", a.controllers}};
  if (opt.dqn) grid_json["dqn"] = train_config_to_json(*opt.dqn);
  const std::uint64_t fp =
      fnv1a(grid_json.dump() + hex64(est.fingerprint()) + hex64(test.fingerprint()));
  write_text_file(a.out, csv_header_comment(fp, grid.seeds.front()) + sweep_csv(rows, est.modes()));
  if (a.groups) {
    std::string csv = csv_header_comment(fp, grid.seeds.front()) + "grouping,key,controller,mean_accuracy,rows\n";
    for (const auto& [key, g] : group_by_bmax(rows))
      csv += "b_max," + std::to_string(key.first) + "," + key.second + "," + format_number(g.mean) + "," +
             std::to_string(g.rows) + "\n";
    for (const auto& [key, g] : group_by_mu(rows))
      csv += "mu," + format_number(key.first) + "," + key.second + "," + format_number(g.mean) + "," +
             std::to_string(g.rows) + "\n";
    write_text_file(*a.groups, csv);
  }
  out << "wrote " << rows.size() << " rows over " << grid.cells() << " cells\n";
  return kExitOk;
}

struct ExitProbArgs {
  std::string controller;
  std::string env;
  std::optional<std::string> policy;
  std::optional<std::string> dataset;
  int fixed_mode = 3;
  int rollouts = 10000;
  std::optional<std::uint64_t> seed;
  std::string out;
};

int cmd_exit_probs(const ExitProbArgs& a, std::ostream& out) {
  const HarvestEnvironment env = load_env(a.env, std::nullopt);
  const ControllerKind kind = parse_controller(a.controller);
  std::string artifact;
  const ControllerHandle c = load_controller(kind, env, a.policy, a.fixed_mode, &artifact);
  std::optional<ConfidenceDataset> ds;
  if (a.dataset) ds = read_dataset(*a.dataset);
  std::uint64_t seed = 0;
  Eigen::MatrixXd eta;
  std::string method;
  if (kind == ControllerKind::kMmS) {
    eta = exit_probability_mms(env, policy_from_json(Json::parse(artifact), env.num_states()));
    method = "one-hot";
  } else if (kind == ControllerKind::kIncIAgEE) {
    eta = exit_probability_matrix(env, policy_from_json(Json::parse(artifact), IncrementalIndex(env).size()));
    method = "matrix";
  } else if (kind == ControllerKind::kOsIAwOracle) {
    if (!ds) throw InputError("oracle exit probabilities need --dataset");
    eta = exit_probability_oracle(oracle_from_json(Json::parse(artifact), env), *ds);
    method = "regions";
  } else {
    if (!ds) throw InputError("Monte Carlo exit probabilities need --dataset");
    if (a.rollouts <= 0) throw InputError("--rollouts must be positive");
    seed = resolve_seed(a.seed);
    eta.resize(env.num_states(), env.modes());
    for (int s = 0; s < env.num_states(); ++s)
      eta.row(s) = exit_probability_mc(*c, env, *ds, env.state(s), a.rollouts, derive_seed(seed, s)).transpose();
    method = "monte-carlo";
  }
  const std::string fp_text = env_to_json(env).dump() + artifact + c->name() + method +
                              (ds ? hex64(ds->fingerprint()) : std::string()) + std::to_string(a.rollouts);
  write_text_file(a.out, csv_header_comment(fnv1a(fp_text), seed) + eta_csv(env, eta));
  out << "wrote " << method << " exit probabilities for " << env.num_states() << " states\n";
  return kExitOk;
}

struct CalibrateArgs {
  std::string dataset;
  std::string mode = "fit";
  double tau = 0.5;
  int bins = 10;
  std::string out;
  std::optional<std::string> reliability_out;
};

int cmd_calibrate(const CalibrateArgs& a, std::ostream& out) {
  const ConfidenceDataset ds = read_dataset(a.dataset);
  if (a.bins <= 0) throw InputError("--bins must be positive");
  Json report;
  std::optional<ConfidenceDataset> result;
  if (a.mode == "fit") {
    TemperatureFit fit = temperature_scale(ds);
    report["temperature"] = fit.temperature;
    report["nll_unit"] = fit.nll_unit;
    report["nll_fit"] = fit.nll_fit;
    result.emplace(std::move(fit.dataset));
  } else if (a.mode == "distort") {
    if (!(a.tau > 0.0)) throw InputError("--tau must be positive");
    report["tau"] = a.tau;
    result.emplace(distort_calibration(ds, a.tau));
  } else {
    throw InputError("--mode must be fit or distort");
  }
  const CalibrationReport before = reliability(ds, a.bins);
  const CalibrationReport after = reliability(*result, a.bins);
  report["ece_before"] = before.ece;
  report["ece_after"] = after.ece;
  report["accuracy"] = exit_accuracies(*result);
  write_dataset(a.out, *result);
  write_json_file(sibling(a.out, ".report.json"), report);
  if (a.reliability_out) write_text_file(*a.reliability_out, reliability_csv(after));
  out << a.mode << ": ECE " << format_number(before.ece) << " -> " << format_number(after.ece) << "\n";
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Energy-aware adaptive inference: solvers, training and simulation"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  GenDataArgs gen;
  CLI::App* c_gen = app.add_subcommand("gen-data", "Generate a synthetic confidence dataset");
  c_gen->add_option("--spec", gen.spec, "Generator spec JSON")->check(CLI::ExistingFile);
  c_gen->add_option("--kind", gen.kind, "synthetic | logits")->capture_default_str();
  c_gen->add_option("--n", gen.n, "Number of records")->required();
  c_gen->add_option("--seed", gen.seed, "Master seed (fallback EH_INFER_SEED)");
  c_gen->add_option("--out", gen.out, "Output JSON Lines file")->required();

  SolveArgs solve;
  CLI::App* c_solve = app.add_subcommand("solve", "Solve the MmS, IncIAg or oracle problem");
  c_solve->add_option("--kind", solve.kind, "mms | inc-iag | oracle")->required();
  c_solve->add_option("--env", solve.env, "Environment JSON")->required()->check(CLI::ExistingFile);
  c_solve->add_option("--dataset", solve.dataset, "Estimation set (accuracies or oracle)")
      ->check(CLI::ExistingFile);
  c_solve->add_option("--gamma", solve.gamma, "Override the epoch discount");
  c_solve->add_option("--eps", solve.eps, "Stopping tolerance")->capture_default_str();
  c_solve->add_option("--method", solve.method, "pi | vi for mms and inc-iag")->capture_default_str();
  c_solve->add_option("--max-iter", solve.max_iter, "Iteration budget of the solver")->capture_default_str();
  c_solve->add_option("--out", solve.out, "Policy/solution JSON")->required();

  TrainArgs tr;
  CLI::App* c_train = app.add_subcommand("train-dqn", "Train a DQN controller");
  c_train->add_option("--env", tr.env, "Environment JSON")->required()->check(CLI::ExistingFile);
  c_train->add_option("--dataset", tr.dataset, "Training set")->required()->check(CLI::ExistingFile);
  c_train->add_option("--config", tr.config, "Training config JSON")->check(CLI::ExistingFile);
  c_train->add_option("--mode", tr.mode, "incremental | one-shot");
  c_train->add_option("--steps", tr.steps, "Override total environment steps");
  c_train->add_option("--seed", tr.seed, "Seed (fallback EH_INFER_SEED)");
  c_train->add_option("--eval-epochs", tr.eval_epochs, "Epochs of the final evaluation")->capture_default_str();
  c_train->add_option("--out", tr.out, "Checkpoint JSON")->required();
  c_train->add_option("--curve", tr.curve, "Learning curve CSV");

  SimulateArgs sim;
  CLI::App* c_sim = app.add_subcommand("simulate", "Simulate a controller");
  c_sim->add_option("--controller", sim.controller, "Controller kind")->required();
  c_sim->add_option("--env", sim.env, "Environment JSON")->required()->check(CLI::ExistingFile);
  c_sim->add_option("--dataset", sim.dataset, "Test set")->required()->check(CLI::ExistingFile);
  c_sim->add_option("--policy", sim.policy, "Policy, oracle solution or checkpoint");
  c_sim->add_option("--mode", sim.fixed_mode, "Mode of FixedMode")->capture_default_str();
  c_sim->add_option("--episodes", sim.episodes)->capture_default_str();
  c_sim->add_option("--epochs", sim.epochs)->capture_default_str();
  c_sim->add_option("--seed", sim.seed, "Seed (fallback EH_INFER_SEED)");
  c_sim->add_option("--out", sim.out, "Per-episode CSV")->required();

  SweepArgs sw;
  CLI::App* c_sweep = app.add_subcommand("sweep", "Parameter sweep over two-state environments");
  c_sweep->add_option("--grid", sw.grid, "Grid JSON")->check(CLI::ExistingFile);
  c_sweep->add_option("--est", sw.est, "Estimation set")->required()->check(CLI::ExistingFile);
  c_sweep->add_option("--test", sw.test, "Test set")->required()->check(CLI::ExistingFile);
  c_sweep->add_option("--controllers", sw.controllers, "Comma-separated kinds")->capture_default_str();
  c_sweep->add_option("--dqn-config", sw.dqn_config, "Training config for DQN kinds")
      ->check(CLI::ExistingFile);
  c_sweep->add_option("--mode", sw.fixed_mode, "Mode of FixedMode")->capture_default_str();
  c_sweep->add_option("--jobs", sw.jobs, "Worker threads over cells")->capture_default_str();
  c_sweep->add_option("--seed", sw.seed, "Single seed overriding the grid seeds");
  c_sweep->add_option("--episodes", sw.episodes);
  c_sweep->add_option("--epochs", sw.epochs);
  c_sweep->add_option("--out", sw.out, "Results CSV")->required();
  c_sweep->add_option("--groups", sw.groups, "Grouped means CSV");

  ExitProbArgs ep;
  CLI::App* c_exit = app.add_subcommand("exit-probs", "Exit-selection probabilities per (b, h)");
  c_exit->add_option("--controller", ep.controller, "Controller kind")->required();
  c_exit->add_option("--env", ep.env, "Environment JSON")->required()->check(CLI::ExistingFile);
  c_exit->add_option("--policy", ep.policy, "Policy, oracle solution or checkpoint");
  c_exit->add_option("--dataset", ep.dataset, "Test set")->check(CLI::ExistingFile);
  c_exit->add_option("--mode", ep.fixed_mode, "Mode of FixedMode")->capture_default_str();
  c_exit->add_option("--rollouts", ep.rollouts, "Monte Carlo rollouts per state")->capture_default_str();
  c_exit->add_option("--seed", ep.seed, "Seed for Monte Carlo (fallback EH_INFER_SEED)");
  c_exit->add_option("--out", ep.out, "eta CSV")->required();

  CalibrateArgs cal;
  CLI::App* c_cal = app.add_subcommand("calibrate", "Temperature scaling or calibration distortion");
  c_cal->add_option("--dataset", cal.dataset, "Dataset")->required()->check(CLI::ExistingFile);
  c_cal->add_option("--mode", cal.mode, "fit | distort")->capture_default_str();
  c_cal->add_option("--tau", cal.tau, "Distortion temperature")->capture_default_str();
  c_cal->add_option("--bins", cal.bins, "Reliability bins")->capture_default_str();
  c_cal->add_option("--out", cal.out, "Output dataset")->required();
  c_cal->add_option("--reliability", cal.reliability_out, "Reliability CSV");

  std::vector<std::string> rev(args.rbegin(), args.rend());
  if (!rev.empty()) {
    app.name(rev.back());
    rev.pop_back();
  }
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitInput;
  }

  try {
    if (*c_gen) return cmd_gen_data(gen, out);
    if (*c_solve) return cmd_solve(solve, out);
    if (*c_train) return cmd_train_dqn(tr, out, err);
    if (*c_sim) return cmd_simulate(sim, out);
    if (*c_sweep) return cmd_sweep(sw, out);
    if (*c_exit) return cmd_exit_probs(ep, out);
    if (*c_cal) return cmd_calibrate(cal, out);
  } catch (const MissingArtifact& e) {
    err << "error: " << e.what() << "\n";
    return kExitMissingArtifact;
  } catch (const SolverFailure& e) {
    err << "solver error: " << e.what() << "\n";
    return kExitSolver;
  } catch (const TrainingFailure& e) {
    err << "training config error: " << e.what() << "\n";
    return kExitTraining;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitInput;
  }
  return kExitInput;
}

}  // namespace ehinfer
