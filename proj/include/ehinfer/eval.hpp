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

#pragma once

// Controllers, long-run accuracy simulation, exit-selection probabilities
// and parameter sweeps.

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ehinfer/confidence.hpp"
#include "ehinfer/dqn.hpp"
#include "ehinfer/env.hpp"
#include "ehinfer/mdp.hpp"
#include "ehinfer/oracle.hpp"

namespace ehinfer {

enum class ControllerKind {
  kMmS,
  kOsIAwOracle,
  kIncIAgEE,
  kIncIAwDQN,
  kOsIAwDQN,
  kRandomFeasible,
  kFixedMode,
};

std::string kind_name(ControllerKind kind);
/// Accepts the names produced by kind_name; throws std::invalid_argument.
ControllerKind parse_kind(const std::string& name);

/// A decision rule over the epoch. One-shot controllers pick a mode at the
/// epoch start; incremental ones pick pause/proceed in every slot.
class Controller {
 public:
  virtual ~Controller() = default;

  virtual ControllerKind kind() const = 0;
  virtual std::string name() const { return kind_name(kind()); }
  virtual bool incremental() const = 0;
  int modes() const { return env_.modes(); }
  const HarvestEnvironment& env() const { return env_; }

  /// One-shot: mode for the epoch starting at s with confidences z.
  virtual int select_mode(EnvState s, const Eigen::Ref<const Eigen::RowVectorXd>& z, Rng& rng) const;
  /// Incremental: sub-action at (b, h, xi, tau) with revealed z^(xi).
  virtual int sub_action(const IncrementalIndex::State& x, double z, Rng& rng) const;

 protected:
  explicit Controller(const HarvestEnvironment& env) : env_(env) {}

 private:
  HarvestEnvironment env_;
};

using ControllerHandle = std::shared_ptr<const Controller>;

ControllerHandle make_mms_controller(const HarvestEnvironment& env, PolicyTable policy);
ControllerHandle make_oracle_controller(const HarvestEnvironment& env, OracleSolution solution);
ControllerHandle make_inc_iag_controller(const HarvestEnvironment& env, PolicyTable policy);
/// Wraps a trained network; the kind follows the policy's control mode.
ControllerHandle make_dqn_controller(const HarvestEnvironment& env, DqnPolicy policy);
ControllerHandle make_random_controller(const HarvestEnvironment& env);
/// Mode k, or the most expensive feasible mode below it when u(k) > b.
ControllerHandle make_fixed_controller(const HarvestEnvironment& env, int k);

struct EpisodeResult {
  double accuracy = 0.0;
  std::vector<long> histogram;  // selected mode counts, sums to epochs
  long epochs = 0;
  long energy = 0;    // packets consumed
  long overflow = 0;  // packets lost to the capacity clamp
  long outages = 0;   // epochs starting with b < u(1)
};

/// Runs `episodes` episodes of `epochs` epochs. Each epoch draws a record
/// with replacement and scores 1 iff the selected mode is correct. Episode e
/// uses streams derived from (seed, e), so controllers see the same
/// instances and arrival variates. Episodes start at b = 0 with h drawn from
/// the stationary distribution.
std::vector<EpisodeResult> simulate(const Controller& controller, const HarvestEnvironment& env,
                                    const ConfidenceDataset& dataset, int episodes, int epochs,
                                    std::uint64_t seed);

struct MeanCi {
  double mean = 0.0;
  double sd = 0.0;
  double low = 0.0;
  double high = 0.0;
};

/// Normal-approximation 95% interval of the mean.
MeanCi mean_ci(const std::vector<double>& x);
std::vector<double> accuracies(const std::vector<EpisodeResult>& r);

struct PairedTest {
  double mean_diff = 0.0;
  double t = 0.0;
  double p_value = 1.0;  // one-sided, H1: mean(a - b) > 0
  int n = 0;
};

PairedTest paired_t_test(const std::vector<double>& a, const std::vector<double>& b);

/// eta_k(b, h) of a deterministic incremental policy: the T-step product of
/// the intra-epoch chain augmented with K absorbing exit states. Rows are
/// epoch-start states env.index(b, h).
Eigen::MatrixXd exit_probability_matrix(const HarvestEnvironment& env, const PolicyTable& policy);

/// eta_k(b, h) of the oracle: fraction of records routed to region k.
Eigen::MatrixXd exit_probability_oracle(const OracleSolution& sol, const ConfidenceDataset& dataset);

/// One-hot rows for a one-shot instance-agnostic policy.
Eigen::MatrixXd exit_probability_mms(const HarvestEnvironment& env, const PolicyTable& policy);

/// Monte Carlo estimate over single-epoch rollouts from `start`.
Eigen::VectorXd exit_probability_mc(const Controller& controller, const HarvestEnvironment& env,
                                    const ConfidenceDataset& dataset, EnvState start, int rollouts,
                                    std::uint64_t seed);

struct SweepGrid {
  std::vector<double> p_gg{0.5, 0.7, 0.9};
  std::vector<double> p_bb{0.3, 0.5, 0.9};
  std::vector<double> pe_good{0.3, 0.7, 0.8, 1.0};
  std::vector<double> pe_bad{0.0, 0.2, 0.3, 0.5};
  std::vector<int> b_max{3, 5, 10, 20, 30};
  std::vector<std::uint64_t> seeds{1};
  std::vector<int> cost{0, 1, 2, 3};
  int slots = 3;
  double discount = 0.9;
  int episodes = 10;
  int epochs = 2000;

  void validate() const;
  long cells() const;
};

struct SweepCell {
  double p_gg = 0.0, p_bb = 0.0, pe_good = 0.0, pe_bad = 0.0;
  int b_max = 0;
  double mu = 0.0;
};

struct SweepRow {
  SweepCell cell;
  std::string controller;
  std::uint64_t seed = 0;
  MeanCi accuracy;
  std::vector<double> exit_fraction;
  std::vector<double> episode_accuracy;
};

struct SweepOptions {
  std::vector<ControllerKind> controllers{ControllerKind::kMmS, ControllerKind::kOsIAwOracle,
                                          ControllerKind::kIncIAgEE,
                                          ControllerKind::kRandomFeasible};
  int fixed_mode = 3;
  double oracle_epsilon = 1e-6;
  std::optional<TrainConfig> dqn;  // required for the DQN kinds
  int jobs = 1;
};

std::vector<SweepCell> sweep_cells(const SweepGrid& grid);

/// Solves and simulates every controller in every cell. Instance-agnostic
/// controllers use the accuracies of `est`; the oracle and DQNs are fitted
/// on `est`; simulation draws from `test`. Rows are ordered by cell, then
/// controller, then seed, regardless of `jobs`.
std::vector<SweepRow> sweep(const SweepGrid& grid, const ConfidenceDataset& est,
                            const ConfidenceDataset& test, const SweepOptions& options);

struct GroupStat {
  double mean = 0.0;
  long rows = 0;
};

/// Mean accuracy per (b_max, controller).
std::map<std::pair<int, std::string>, GroupStat> group_by_bmax(const std::vector<SweepRow>& rows);
/// Mean accuracy per (mu rounded to 2 decimals, controller).
std::map<std::pair<double, std::string>, GroupStat> group_by_mu(const std::vector<SweepRow>& rows);

}  // namespace ehinfer
