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

// Acceptance suite. Prints one PASS/FAIL line per criterion; exits nonzero
// if any selected criterion fails. `--only N` runs a single criterion.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "ehinfer/cli.hpp"
#include "ehinfer/confidence.hpp"
#include "ehinfer/dqn.hpp"
#include "ehinfer/env.hpp"
#include "ehinfer/eval.hpp"
#include "ehinfer/io.hpp"
#include "ehinfer/mdp.hpp"
#include "ehinfer/oracle.hpp"
#include "toy_mdp.hpp"

namespace fs = std::filesystem;
using namespace ehinfer;

namespace {

// Tolerances and budgets.
constexpr double kStochasticTol = 1e-9;
constexpr double kSigmas = 3.0;
constexpr int kMcSamples = 100'000;
constexpr double kRateTol = 0.02;
constexpr double kSuperadditiveTol = 1e-9;
constexpr double kDominanceTol = 1e-6;
constexpr double kLineFitTol = 1e-9;
constexpr double kContractionSlack = 1e-9;
constexpr double kDatasetAgreement = 0.01;
constexpr double kClosedFormTol = 1e-12;
constexpr double kCalibrationGapLow = 0.005;
constexpr double kCalibrationGapHigh = 0.06;
constexpr double kAwareGain = 0.02;
constexpr double kNearMuTwo = 0.05;
constexpr double kUnconstrainedTol = 0.02;
constexpr double kGradientRelTol = 1e-4;
constexpr double kToyFraction = 0.95;
constexpr double kSignificance = 0.05;
constexpr int kGridEnvs = 20;
constexpr int kSimEpisodes = 10;
constexpr int kSimEpochs = 2000;
constexpr std::uint64_t kSimSeed = 11;

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  const char* name;
  double budget_s;
  std::function<Outcome()> run;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

HarvestEnvironment reference_env(int b_max) {
  return two_state_environment(0.9, 0.5, 0.8, 0.0, b_max, {0, 1, 2, 3}, 3, 0.9);
}

HarvestEnvironment cell_env(const SweepCell& c) {
  return two_state_environment(c.p_gg, c.p_bb, c.pe_good, c.pe_bad, c.b_max, {0, 1, 2, 3}, 3, 0.9);
}

const ConfidenceDataset& est_set() {
  static const ConfidenceDataset d = generate_synthetic(SyntheticSpec{}, 10'000, 1);
  return d;
}

const ConfidenceDataset& test_set() {
  static const ConfidenceDataset d = generate_synthetic(SyntheticSpec{}, 10'000, 2);
  return d;
}

std::vector<double> rho() { return exit_accuracies(est_set()); }

// Fixed sample of grid cells shared by the structural criteria.
std::vector<SweepCell> grid_sample() {
  std::vector<SweepCell> cells = sweep_cells(SweepGrid{});
  Rng rng(2026);
  std::shuffle(cells.begin(), cells.end(), rng);
  cells.resize(kGridEnvs);
  return cells;
}

bool within_sigma(double est, double p, int n) {
  if (p <= 0.0 || p >= 1.0) return est == p;
  return std::abs(est - p) <= kSigmas * std::sqrt(p * (1.0 - p) / n);
}

double sim_accuracy(const Controller& c, const HarvestEnvironment& env, const ConfidenceDataset& ds) {
  return mean_ci(accuracies(simulate(c, env, ds, kSimEpisodes, kSimEpochs, kSimSeed))).mean;
}

// 1. Battery update and kernels.
Outcome battery_kernels() {
  Outcome o{true, ""};
  long cases = 0;
  for (int b = 0; b <= 10; ++b)
    for (int u = 0; u <= 3; ++u)
      for (int e = 0; e <= 2; ++e) {
        int expect = b - u + e;
        if (expect < 0) expect = 0;
        if (expect > 10) expect = 10;
        if (battery_step(b, u, e, 10) != expect) o.pass = false;
        ++cases;
      }

  std::vector<HarvestEnvironment> envs{reference_env(10), reference_env(3)};
  for (const SweepCell& c : grid_sample()) envs.push_back(cell_env(c));
  Eigen::MatrixXd pmf(2, 3);
  pmf << 0.2, 0.5, 0.3, 0.6, 0.3, 0.1;
  envs.emplace_back(HarvestChain::two_state(0.7, 0.6), ArrivalModel(pmf), BatteryConfig{6, {0, 1, 2, 3}},
                    EpochConfig{3, 0.9}, ArrivalConditioning::kNext);
  double worst_row = 0.0;
  for (const HarvestEnvironment& env : envs) {
    for (int c = 0; c <= 3; ++c) {
      const Eigen::MatrixXd k = slot_kernel(env, c);
      worst_row = std::max(worst_row, (k.rowwise().sum().array() - 1.0).abs().maxCoeff());
    }
    for (int a = 0; a < env.modes(); ++a) {
      const Eigen::MatrixXd k = epoch_kernel(env, a);
      for (int s = 0; s < env.num_states(); ++s) {
        const double target = env.feasible(env.state(s).b, a) ? 1.0 : 0.0;
        worst_row = std::max(worst_row, std::abs(k.row(s).sum() - target));
      }
    }
  }
  if (worst_row > kStochasticTol) o.pass = false;

  // Monte Carlo against the exact epoch kernel.
  int checked = 0, outside = 0;
  const std::vector<std::pair<EnvState, int>> probes{{{5, 0}, 3}, {{2, 1}, 2}, {{10, 0}, 0}, {{1, 0}, 1}};
  for (std::size_t e : {std::size_t{0}, envs.size() - 1}) {
    const HarvestEnvironment& env = envs[e];
    for (const auto& [s0, a] : probes) {
      if (s0.b > env.b_max()) continue;
      const Eigen::RowVectorXd exact = epoch_transition(env, s0, a);
      Eigen::RowVectorXd count = Eigen::RowVectorXd::Zero(env.num_states());
      Rng rng(derive_seed(77, static_cast<std::uint64_t>(checked)));
      for (int i = 0; i < kMcSamples; ++i) {
        EnvState s = s0;
        for (int t = 0; t < env.slots(); ++t)
          s = sample_slot(rng, env, s, t == 0 ? env.battery().cost[a] : 0).next;
        count(env.index(s)) += 1.0;
      }
      count /= kMcSamples;
      for (int j = 0; j < env.num_states(); ++j) {
        ++checked;
        if (!within_sigma(count(j), exact(j), kMcSamples)) ++outside;
      }
    }
  }
  if (outside > 0) o.pass = false;
  o.detail = std::to_string(cases) + " battery cases, max row error " + fmt("%.2e", worst_row) +
             ", " + std::to_string(outside) + "/" + std::to_string(checked) + " kernel cells outside 3 sigma";
  return o;
}

// 2. Energy rate of the calibration rows.
Outcome energy_rate_rows() {
  const double rows[6][3] = {{0.2, 0.1, 0.54}, {0.4, 0.2, 1.11}, {0.7, 0.35, 1.92},
                             {0.9, 0.55, 2.52}, {1.0, 0.75, 2.88}, {1.0, 1.0, 3.00}};
  Outcome o{true, "mu:"};
  for (const auto& r : rows) {
    const double mu =
        energy_rate(HarvestChain::two_state(0.9, 0.5), ArrivalModel::binary({r[0], r[1]}), 3);
    if (std::abs(mu - r[2]) > kRateTol) o.pass = false;
    o.detail += " " + fmt("%.4f", mu);
  }
  return o;
}

struct StructureResult {
  bool monotone = true;
  bool superadditive = true;
  double worst_superadditive = std::numeric_limits<double>::infinity();
  double margin = std::numeric_limits<double>::infinity();
};

StructureResult structure_of(const HarvestEnvironment& env, bool with_dominance) {
  StructureResult r;
  const std::vector<double> acc = rho();
  const FiniteMdp mdp = build_mms_mdp(env, acc);
  const SolveResult mms = policy_iteration(mdp);
  r.monotone = check_monotone(env, mms.policy).monotone;
  for (int h = 0; h < env.env_states(); ++h) {
    const SuperadditiveCheck sc =
        check_superadditive(mms_q_by_level(env, mdp, mms.value, h), kSuperadditiveTol);
    r.superadditive = r.superadditive && sc.superadditive;
    r.worst_superadditive = std::min(r.worst_superadditive, sc.worst_margin);
  }
  if (with_dominance) {
    const SolveResult inc = policy_iteration(build_inc_iag_mdp(env, acc));
    r.margin = dominance_margin(env, mms.value, inc.value);
  }
  return r;
}

// 3. Monotone, superadditive MmS policies.
Outcome mms_structure() {
  std::vector<HarvestEnvironment> envs{reference_env(30)};
  for (const SweepCell& c : grid_sample()) envs.push_back(cell_env(c));
  int monotone = 0, superadditive = 0;
  double worst = std::numeric_limits<double>::infinity();
  for (const HarvestEnvironment& env : envs) {
    const StructureResult r = structure_of(env, false);
    monotone += r.monotone;
    superadditive += r.superadditive;
    worst = std::min(worst, r.worst_superadditive);
  }
  const int n = static_cast<int>(envs.size());
  return {monotone == n && superadditive == n,
          std::to_string(monotone) + "/" + std::to_string(n) + " monotone, " +
              std::to_string(superadditive) + "/" + std::to_string(n) +
              " superadditive, worst margin " + fmt("%.3e", worst)};
}

// 4. Incremental instance-agnostic value dominates the one-shot value.
Outcome incremental_dominance() {
  std::vector<HarvestEnvironment> envs{reference_env(30)};
  for (const SweepCell& c : grid_sample()) envs.push_back(cell_env(c));
  int ok = 0;
  double worst = std::numeric_limits<double>::infinity();
  for (const HarvestEnvironment& env : envs) {
    const double m = structure_of(env, true).margin;
    ok += m >= -kDominanceTol;
    worst = std::min(worst, m);
  }
  const int n = static_cast<int>(envs.size());
  return {ok == n, std::to_string(ok) + "/" + std::to_string(n) + " environments, worst margin " +
                       fmt("%.3e", worst)};
}

// 5. Partition matrices and the K = 3 confidence-plane partition.
Outcome partition() {
  Outcome o{true, ""};
  const PartitionMatrices pm = build_partition_matrices(3);
  Eigen::MatrixXi m0(2, 3), m1(2, 3), m2(2, 3), f0(2, 2), f1(2, 2), f2(2, 2);
  m0 << 1, -1, 0, 1, 0, -1;
  m1 << -1, 1, 0, 0, 1, -1;
  m2 << -1, 0, 1, 0, -1, 1;
  f0 << -1, 0, 0, -1;
  f1 << 1, 0, 1, -1;
  f2 << 0, 1, -1, 1;
  const bool printed = pm.m[0] == m0 && pm.m[1] == m1 && pm.m[2] == m2 && pm.f[0] == f0 &&
                       pm.f[1] == f1 && pm.f[2] == f2;
  if (!printed) o.pass = false;

  const HarvestEnvironment env = two_state_environment(0.9, 0.5, 0.8, 0.0, 10, {0, 1, 2}, 3, 0.9);
  SyntheticSpec spec;
  spec.target_accuracy = {0.6, 0.8};
  spec.concentration = {8.0, 8.0};
  const ConfidenceDataset ds = generate_synthetic(spec, 10'000, 1);
  const OracleSolution sol = solve_oracle(env, ds, 1e-8);
  const double z0 = ds.chance();

  // A state whose three regions all intersect the unit square.
  int s = -1;
  for (int b = 2; b <= env.b_max() && s < 0; ++b) {
    const int idx = env.index({b, 0});
    const double d1 = sol.delta(idx, 0), d2 = sol.delta(idx, 1);
    if (z0 + d1 > 0.05 && z0 + d1 < 0.9 && z0 + d2 > 0.05 && z0 + d2 < 0.9) s = idx;
  }
  if (s < 0) return {false, "no state with a nondegenerate partition"};
  const double d1 = sol.delta(s, 0);

  // Brute force from the epoch kernels.
  double c[3];
  for (int a = 0; a < 3; ++a)
    c[a] = env.epoch().discount * epoch_transition(env, env.state(s), a).dot(sol.v_bar);
  int disagree = 0;
  int r0_max_i = -1, r0_max_j = -1;
  std::vector<std::vector<int>> region(101, std::vector<int>(101));
  for (int i = 0; i <= 100; ++i)
    for (int j = 0; j <= 100; ++j) {
      Eigen::Vector3d z(z0, i / 100.0, j / 100.0);
      int best = 0;
      for (int a = 1; a < 3; ++a)
        if (z(a) + c[a] > z(best) + c[best]) best = a;
      const int got = region_of(z, s, sol);
      region[i][j] = got;
      disagree += got != best;
      if (got == 0) {
        r0_max_i = std::max(r0_max_i, i);
        r0_max_j = std::max(r0_max_j, j);
      }
    }
  if (disagree > 0) o.pass = false;

  // Z_0 fills the box [0, i_max] x [0, j_max] and nothing else.
  bool rectangle = r0_max_i >= 0;
  for (int i = 0; i <= 100 && rectangle; ++i)
    for (int j = 0; j <= 100; ++j)
      if ((region[i][j] == 0) != (i <= r0_max_i && j <= r0_max_j)) rectangle = false;
  if (!rectangle) o.pass = false;

  // Z_1 / Z_2 boundary located by bisection, then a least-squares line.
  std::vector<double> xs, ys;
  for (int t = 0; t < 40; ++t) {
    const double z1 = z0 + d1 + 0.01 + t * (0.98 - z0 - d1) / 40.0;
    double lo = 0.0, hi = 3.0;
    if (region_of(Eigen::Vector3d(z0, z1, lo), s, sol) != 1 ||
        region_of(Eigen::Vector3d(z0, z1, hi), s, sol) != 2)
      continue;
    for (int it = 0; it < 200 && hi - lo > 1e-15; ++it) {
      const double mid = 0.5 * (lo + hi);
      (region_of(Eigen::Vector3d(z0, z1, mid), s, sol) == 1 ? lo : hi) = mid;
    }
    xs.push_back(z1);
    ys.push_back(0.5 * (lo + hi));
  }
  double slope = std::numeric_limits<double>::quiet_NaN(), resid = 0.0;
  if (xs.size() >= 2) {
    const double n = static_cast<double>(xs.size());
    const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
    const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t k = 0; k < xs.size(); ++k) {
      sxy += (xs[k] - mx) * (ys[k] - my);
      sxx += (xs[k] - mx) * (xs[k] - mx);
    }
    slope = sxy / sxx;
    for (std::size_t k = 0; k < xs.size(); ++k)
      resid = std::max(resid, std::abs(ys[k] - (my + slope * (xs[k] - mx))));
  }
  if (!(std::abs(slope - 1.0) < kLineFitTol && resid < kLineFitTol)) o.pass = false;
  o.detail = std::string("matrices ") + (printed ? "match" : "differ") + ", " +
             std::to_string(disagree) + " grid disagreements, Z0 " +
             (rectangle ? "rectangular" : "not rectangular") + ", boundary slope " +
             fmt("%.12f", slope) + " residual " + fmt("%.1e", resid);
  return o;
}

// 6. Empirical operator iteration.
Outcome empirical_operator() {
  Outcome o{true, ""};
  const HarvestEnvironment env = reference_env(30);
  const double gamma = env.epoch().discount;
  const OracleSolution a = solve_oracle(env, est_set(), 1e-6);
  double ratio = 0.0;
  for (std::size_t l = 1; l < a.residuals.size(); ++l)
    if (a.residuals[l - 1] > 0.0) ratio = std::max(ratio, a.residuals[l] / a.residuals[l - 1]);
  if (ratio > gamma + kContractionSlack) o.pass = false;

  const OracleSolution b = solve_oracle(env, test_set(), 1e-6);
  const double gap = (a.v_bar - b.v_bar).cwiseAbs().maxCoeff();
  if (gap > kDatasetAgreement) o.pass = false;

  // gamma = 0: vbar(s) is the mean over records of the best feasible z.
  const HarvestEnvironment env0 = two_state_environment(0.9, 0.5, 0.8, 0.0, 30, {0, 1, 2, 3}, 3, 0.0);
  const OracleSolution z = solve_oracle(env0, est_set(), 1e-12);
  double closed = 0.0;
  for (int s = 0; s < env0.num_states(); ++s) {
    const int b = env0.state(s).b;
    double sum = 0.0;
    for (int i = 0; i < est_set().size(); ++i) {
      double best = -1.0;
      for (int k = 0; k < env0.modes(); ++k)
        if (env0.feasible(b, k)) best = std::max(best, est_set().z()(i, k));
      sum += best;
    }
    closed = std::max(closed, std::abs(z.v_bar(s) - sum / est_set().size()));
  }
  if (closed > kClosedFormTol) o.pass = false;
  o.detail = "max contraction ratio " + fmt("%.10f", ratio) + " over " +
             std::to_string(a.iterations) + " sweeps, two-dataset sup gap " + fmt("%.4f", gap) +
             ", gamma=0 error " + fmt("%.1e", closed);
  return o;
}

// 7. Exit probabilities of the incremental policy.
Outcome exit_probabilities() {
  Outcome o{true, ""};
  const HarvestEnvironment env = reference_env(30);
  const std::vector<double> acc = rho();
  const SolveResult inc = policy_iteration(build_inc_iag_mdp(env, acc));
  const Eigen::MatrixXd eta = exit_probability_matrix(env, inc.policy);
  const double row_err = (eta.rowwise().sum().array() - 1.0).abs().maxCoeff();
  if (row_err > kStochasticTol) o.pass = false;

  const ControllerHandle c = make_inc_iag_controller(env, inc.policy);
  int checked = 0, outside = 0;
  for (int b : {0, 1, 2, 3, 5, 10, 20, 30})
    for (int h = 0; h < env.env_states(); ++h) {
      const EnvState s{b, h};
      const Eigen::VectorXd mc =
          exit_probability_mc(*c, env, test_set(), s, kMcSamples, derive_seed(7, env.index(s)));
      for (int k = 0; k < env.modes(); ++k) {
        ++checked;
        if (!within_sigma(mc(k), eta(env.index(s), k), kMcSamples)) ++outside;
      }
    }
  if (outside > 0) o.pass = false;

  const SolveResult mms = policy_iteration(build_mms_mdp(env, acc));
  const Eigen::MatrixXd one_hot = exit_probability_mms(env, mms.policy);
  bool hot = true;
  for (int s = 0; s < env.num_states(); ++s)
    for (int k = 0; k < env.modes(); ++k)
      if (one_hot(s, k) != (mms.policy.action[s] == k ? 1.0 : 0.0)) hot = false;
  if (!hot) o.pass = false;
  o.detail = "row error " + fmt("%.1e", row_err) + ", " + std::to_string(outside) + "/" +
             std::to_string(checked) + " cells outside 3 sigma, MmS " + (hot ? "one-hot" : "not one-hot");
  return o;
}

// 8. Calibrated versus distorted confidences under the oracle.
Outcome calibration() {
  const double rows[6][2] = {{0.2, 0.1}, {0.4, 0.2}, {0.7, 0.35}, {0.9, 0.55}, {1.0, 0.75}, {1.0, 1.0}};
  const ConfidenceDataset dest = distort_calibration(est_set(), 0.5);
  const ConfidenceDataset dtest = distort_calibration(test_set(), 0.5);
  Outcome o{true, "gaps:"};
  double mean_gap = 0.0;
  for (const auto& r : rows) {
    const HarvestEnvironment env = two_state_environment(0.9, 0.5, r[0], r[1], 5, {0, 1, 2, 3}, 3, 0.9);
    const ControllerHandle cal = make_oracle_controller(env, solve_oracle(env, est_set()));
    const ControllerHandle dis = make_oracle_controller(env, solve_oracle(env, dest));
    const double gap = sim_accuracy(*cal, env, test_set()) - sim_accuracy(*dis, env, dtest);
    if (gap < 0.0) o.pass = false;
    mean_gap += gap / 6.0;
    o.detail += " " + fmt("%.4f", gap);
  }
  if (mean_gap < kCalibrationGapLow || mean_gap > kCalibrationGapHigh) o.pass = false;
  o.detail += ", mean " + fmt("%.4f", mean_gap);
  return o;
}

// 9. Instance-aware gain near mu = 2, convergence at mu = 3.
Outcome aware_vs_agnostic() {
  Outcome o{true, ""};
  const std::vector<double> acc = rho();
  double aware = 0.0, agnostic = 0.0;
  int cells = 0;
  for (const SweepCell& cell : sweep_cells(SweepGrid{})) {
    if (std::abs(cell.mu - 2.0) > kNearMuTwo) continue;
    const HarvestEnvironment env = cell_env(cell);
    const ControllerHandle oc = make_oracle_controller(env, solve_oracle(env, est_set()));
    const ControllerHandle mc =
        make_mms_controller(env, policy_iteration(build_mms_mdp(env, acc)).policy);
    aware += sim_accuracy(*oc, env, test_set());
    agnostic += sim_accuracy(*mc, env, test_set());
    ++cells;
  }
  aware /= cells;
  agnostic /= cells;
  if (aware - agnostic < kAwareGain) o.pass = false;

  const double rho3 = exit_accuracy(test_set(), 3);
  double worst = 0.0;
  int unconstrained = 0;
  SweepGrid g;
  g.pe_good = {1.0};
  g.pe_bad = {1.0};
  g.b_max = {20, 30};
  for (const SweepCell& cell : sweep_cells(g)) {
    const HarvestEnvironment env = cell_env(cell);
    const ControllerHandle cs[3] = {
        make_oracle_controller(env, solve_oracle(env, est_set())),
        make_mms_controller(env, policy_iteration(build_mms_mdp(env, acc)).policy),
        make_inc_iag_controller(env, policy_iteration(build_inc_iag_mdp(env, acc)).policy)};
    for (const ControllerHandle& c : cs) {
      worst = std::max(worst, std::abs(sim_accuracy(*c, env, test_set()) - rho3));
      ++unconstrained;
    }
  }
  if (worst > kUnconstrainedTol) o.pass = false;
  o.detail = std::to_string(cells) + " cells near mu=2: oracle " + fmt("%.4f", aware) + " vs MmS " +
             fmt("%.4f", agnostic) + "; mu=3: worst |acc - rho3| " + fmt("%.4f", worst) + " over " +
             std::to_string(unconstrained) + " runs";
  return o;
}

// 10. DQN gradients, exact toy problem, and the b_max = 3 regime.
Outcome dqn() {
  Outcome o{true, ""};

  // Central differences of the TD loss in double precision.
  Rng rng(5);
  Mlp<double> net = Mlp<double>::random({6, 9, 7, 3}, rng);
  Mlp<double> target = Mlp<double>::random({6, 9, 7, 3}, rng);
  Batch<double> batch;
  batch.x = Eigen::MatrixXd::Random(6, 8);
  batch.x_next = Eigen::MatrixXd::Random(6, 8);
  for (int j = 0; j < 8; ++j) {
    batch.action.push_back(j % 3);
    batch.reward.push_back(0.1 * j);
    batch.next_mask.push_back(j % 2 ? 0b111u : 0b011u);
    batch.terminal.push_back(j == 7 ? 1 : 0);
  }
  const TdLoss<double> l = td_loss(net, target, batch, 0.9);
  std::vector<double> analytic;
  for (int k = 0; k < net.layers(); ++k) {
    const Eigen::MatrixXd& gw = l.grad.weights[k];
    analytic.insert(analytic.end(), gw.data(), gw.data() + gw.size());
    const Eigen::VectorXd& gb = l.grad.biases[k];
    analytic.insert(analytic.end(), gb.data(), gb.data() + gb.size());
  }
  std::vector<double> p = net.flatten();
  double rel = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double h = 1e-6, keep = p[i];
    p[i] = keep + h;
    net.unflatten(p);
    const double up = td_loss(net, target, batch, 0.9).loss;
    p[i] = keep - h;
    net.unflatten(p);
    const double down = td_loss(net, target, batch, 0.9).loss;
    p[i] = keep;
    const double numeric = (up - down) / (2 * h);
    const double scale = std::max(std::abs(numeric), std::abs(analytic[i]));
    if (scale > 1e-7) rel = std::max(rel, std::abs(numeric - analytic[i]) / scale);
  }
  net.unflatten(p);
  if (rel >= kGradientRelTol) o.pass = false;

  // Exact toy problem.
  const testing::ToyProblem toy;
  TrainConfig cfg;
  cfg.total_steps = 100'000;
  cfg.eval_every = 0;
  cfg.seed = 1;
  const DqnPolicy toy_policy(toy.env, ControlMode::kIncremental,
                             train(toy.env, toy.dataset, cfg).network);
  const double optimum = toy.start_value(policy_iteration(toy.mdp).value);
  const double achieved = toy.start_value(evaluate_policy(toy.mdp, toy.policy_of(toy_policy)));
  if (achieved < kToyFraction * optimum) o.pass = false;

  // b_max = 3: ten training seeds paired against the IncIAg optimum.
  const HarvestEnvironment env = reference_env(3);
  const ControllerHandle inc =
      make_inc_iag_controller(env, policy_iteration(build_inc_iag_mdp(env, rho())).policy);
  std::vector<double> a, b;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    TrainConfig c;
    c.eval_every = 0;
    c.seed = seed;
    const ControllerHandle d =
        make_dqn_controller(env, DqnPolicy(env, ControlMode::kIncremental, train(env, est_set(), c).network));
    a.push_back(mean_ci(accuracies(simulate(*d, env, test_set(), 1, 5000, 1000 + seed))).mean);
    b.push_back(mean_ci(accuracies(simulate(*inc, env, test_set(), 1, 5000, 1000 + seed))).mean);
  }
  const PairedTest t = paired_t_test(a, b);
  if (!(t.mean_diff > 0.0 && t.p_value < kSignificance)) o.pass = false;
  o.detail = "gradient rel err " + fmt("%.2e", rel) + ", toy " + fmt("%.4f", achieved) + "/" +
             fmt("%.4f", optimum) + " = " + fmt("%.4f", achieved / optimum) +
             ", b_max=3 DQN-IncIAg " + fmt("%+.4f", t.mean_diff) + " p=" + fmt("%.2e", t.p_value);
  return o;
}

// 11. Random baseline below every informed controller.
Outcome baseline_ordering() {
  SweepGrid g;
  g.p_gg = {0.5, 0.9};
  g.p_bb = {0.3, 0.9};
  g.pe_good = {0.3, 0.8};
  g.pe_bad = {0.0, 0.3};
  g.b_max = {3, 5, 10};
  g.episodes = kSimEpisodes;
  g.epochs = kSimEpochs;
  SweepOptions opt;
  std::vector<SweepRow> rows = sweep(g, est_set(), test_set(), opt);

  // DQN controllers on the small-battery slice.
  SweepGrid small = g;
  small.b_max = {3};
  SweepOptions dq;
  dq.controllers = {ControllerKind::kRandomFeasible, ControllerKind::kIncIAwDQN,
                    ControllerKind::kOsIAwDQN};
  TrainConfig cfg;
  cfg.total_steps = 50'000;
  cfg.epsilon_decay_steps = 25'000;
  cfg.eval_every = 0;
  cfg.seed = 1;
  dq.dqn = cfg;
  const std::vector<SweepRow> dqn_rows = sweep(small, est_set(), test_set(), dq);

  auto check = [](const std::vector<SweepRow>& rs, std::string& detail) {
    std::map<std::string, std::vector<double>> per;
    for (const SweepRow& r : rs)
      per[r.controller].insert(per[r.controller].end(), r.episode_accuracy.begin(),
                               r.episode_accuracy.end());
    const std::vector<double>& base = per.at(kind_name(ControllerKind::kRandomFeasible));
    bool ok = true;
    for (const auto& [name, acc] : per) {
      if (name == kind_name(ControllerKind::kRandomFeasible)) continue;
      const PairedTest t = paired_t_test(acc, base);
      ok = ok && t.mean_diff > 0.0 && t.p_value < kSignificance;
      detail += " " + name + fmt(" %+.4f", t.mean_diff) + fmt(" (p=%.1e)", t.p_value);
    }
    return ok;
  };
  Outcome o{true, "vs random:"};
  o.pass = check(rows, o.detail);
  o.pass = check(dqn_rows, o.detail) && o.pass;
  return o;
}

// 12. Byte-identical CLI reruns.
Outcome reproducibility() {
  const fs::path dir = fs::temp_directory_path() / "ehinfer_acceptance_repro";
  fs::remove_all(dir);
  fs::create_directories(dir);
  auto at = [&](const std::string& f) { return (dir / f).string(); };
  write_json_file(at("env.json"), env_to_json(reference_env(5)));
  Json grid = {{"p_gg", {0.9}}, {"p_bb", {0.5}}, {"pe_good", {0.8}}, {"pe_bad", {0.0, 0.3}},
               {"b_max", {5}}, {"episodes", 2}, {"epochs", 300}};
  write_json_file(at("grid.json"), grid);
  Json tcfg = {{"total_steps", 3000}, {"learning_starts", 200}, {"eval_every", 1000},
               {"eval_epochs", 100}, {"target_sync", 200}};
  write_json_file(at("train.json"), tcfg);

  const std::vector<std::vector<std::string>> commands{
      {"gen-data", "--n", "1500", "--seed", "3", "--out", at("est.jsonl")},
      {"gen-data", "--n", "1500", "--seed", "4", "--out", at("test.jsonl")},
      {"gen-data", "--kind", "logits", "--n", "800", "--seed", "5", "--out", at("logits.jsonl")},
      {"solve", "--kind", "mms", "--env", at("env.json"), "--dataset", at("est.jsonl"), "--out", at("mms.json")},
      {"solve", "--kind", "inc-iag", "--env", at("env.json"), "--dataset", at("est.jsonl"), "--out", at("inc.json")},
      {"solve", "--kind", "oracle", "--env", at("env.json"), "--dataset", at("est.jsonl"), "--out", at("oracle.json")},
      {"train-dqn", "--env", at("env.json"), "--dataset", at("est.jsonl"), "--config", at("train.json"),
       "--seed", "6", "--out", at("dqn.json"), "--curve", at("curve.csv")},
      {"simulate", "--controller", "mms", "--env", at("env.json"), "--dataset", at("test.jsonl"),
       "--policy", at("mms.json"), "--episodes", "3", "--epochs", "400", "--seed", "7", "--out", at("sim_mms.csv")},
      {"simulate", "--controller", "oracle", "--env", at("env.json"), "--dataset", at("test.jsonl"),
       "--policy", at("oracle.json"), "--episodes", "3", "--epochs", "400", "--seed", "7", "--out", at("sim_oracle.csv")},
      {"simulate", "--controller", "inc-dqn", "--env", at("env.json"), "--dataset", at("test.jsonl"),
       "--policy", at("dqn.json"), "--episodes", "3", "--epochs", "400", "--seed", "7", "--out", at("sim_dqn.csv")},
      {"sweep", "--grid", at("grid.json"), "--est", at("est.jsonl"), "--test", at("test.jsonl"),
       "--seed", "8", "--out", at("sweep.csv"), "--groups", at("groups.csv")},
      {"exit-probs", "--controller", "inc-iag", "--env", at("env.json"), "--policy", at("inc.json"),
       "--out", at("eta_inc.csv")},
      {"exit-probs", "--controller", "oracle", "--env", at("env.json"), "--policy", at("oracle.json"),
       "--dataset", at("test.jsonl"), "--out", at("eta_oracle.csv")},
      {"exit-probs", "--controller", "random", "--env", at("env.json"), "--dataset", at("test.jsonl"),
       "--rollouts", "200", "--seed", "9", "--out", at("eta_random.csv")},
      {"calibrate", "--dataset", at("est.jsonl"), "--mode", "distort", "--tau", "0.5", "--out",
       at("distorted.jsonl"), "--reliability", at("rel.csv")},
      {"calibrate", "--dataset", at("logits.jsonl"), "--mode", "fit", "--out", at("scaled.jsonl")},
  };
  const std::vector<std::string> inputs{"env.json", "grid.json", "train.json"};

  auto run_all = [&](std::map<std::string, std::string>& files, std::string& failure) {
    for (const auto& cmd : commands) {
      std::ostringstream out, err;
      std::vector<std::string> argv{"ehinfer"};
      argv.insert(argv.end(), cmd.begin(), cmd.end());
      const int code = run_cli(argv, out, err);
      if (code != 0) {
        failure = cmd[0] + " exited " + std::to_string(code) + ": " + err.str();
        return false;
      }
    }
    for (const auto& e : fs::directory_iterator(dir)) {
      const std::string name = e.path().filename().string();
      if (std::find(inputs.begin(), inputs.end(), name) != inputs.end()) continue;
      files[name] = read_text_file(e.path().string());
    }
    return true;
  };

  std::map<std::string, std::string> first, second;
  std::string failure;
  if (!run_all(first, failure)) return {false, failure};
  for (const auto& [name, _] : first) fs::remove(dir / name);
  if (!run_all(second, failure)) return {false, failure};
  int differ = 0;
  for (const auto& [name, bytes] : first)
    if (!second.count(name) || second.at(name) != bytes) ++differ;
  fs::remove_all(dir);
  return {differ == 0 && first.size() == second.size(),
          std::to_string(commands.size()) + " commands, " + std::to_string(first.size()) +
              " artifacts, " + std::to_string(differ) + " differ"};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria{
      {1, "battery and kernel physics", 10, battery_kernels},
      {2, "energy rate", 1, energy_rate_rows},
      {3, "MmS monotone and superadditive", 30, mms_structure},
      {4, "incremental dominance", 60, incremental_dominance},
      {5, "confidence partition", 10, partition},
      {6, "empirical operator", 60, empirical_operator},
      {7, "exit probabilities", 60, exit_probabilities},
      {8, "calibration effect", 300, calibration},
      {9, "aware vs agnostic", 600, aware_vs_agnostic},
      {10, "DQN", 1200, dqn},
      {11, "baseline ordering", 600, baseline_ordering},
      {12, "reproducibility", 60, reproducibility},
  };
  int only = 0;
  for (int i = 1; i + 1 < argc; ++i)
    if (std::string(argv[i]) == "--only") only = std::stoi(argv[i + 1]);

  int failed = 0;
  for (const Criterion& c : criteria) {
    if (only != 0 && c.id != only) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs < c.budget_s;
    const bool pass = o.pass && in_time;
    failed += !pass;
    std::printf("%s criterion %d %s: %s%s (%.1f s, budget %.0f s)\n", pass ? "PASS" : "FAIL", c.id,
                c.name, o.detail.c_str(), in_time ? "" : " [over budget]", secs, c.budget_s);
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
