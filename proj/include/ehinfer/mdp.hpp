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

#include <Eigen/Dense>

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ehinfer/env.hpp"

namespace ehinfer {

struct Successor {
  int next = 0;
  double prob = 0.0;
};

/// A feasible action of a state: its reward and sparse successor row.
struct ActionEntry {
  int action = 0;
  double reward = 0.0;
  std::vector<Successor> successors;
};

/// Discrete discounted MDP. Each state lists only its feasible actions, in
/// increasing action order.
class FiniteMdp {
 public:
  FiniteMdp(int n_states, double discount);

  void add_action(int state, int action, double reward, std::vector<Successor> successors);

  int num_states() const { return static_cast<int>(states_.size()); }
  double discount() const { return discount_; }
  std::span<const ActionEntry> actions(int s) const { return states_[s]; }
  const ActionEntry* find(int s, int action) const;
  int max_action() const;

  /// Throws std::invalid_argument unless every state has at least one action,
  /// rows are stochastic within 1e-9 and rewards lie in [0,1].
  void validate() const;

 private:
  std::vector<std::vector<ActionEntry>> states_;
  double discount_;
};

/// Deterministic stationary policy: one action id per state.
struct PolicyTable {
  std::vector<int> action;
  bool operator==(const PolicyTable&) const = default;
};

/// q(s, a) for the feasible actions of each state, aligned with
/// FiniteMdp::actions(s).
struct QTable {
  std::vector<std::vector<double>> values;
};

struct SolveResult {
  Eigen::VectorXd value;
  PolicyTable policy;
  int iterations = 0;
  std::vector<double> residuals;  // sup-norm ||v_l - v_{l-1}|| per sweep (VI)
};

/// Ties within this margin go to the smallest action id.
inline constexpr double kTieTolerance = 1e-10;

QTable q_values(const FiniteMdp& mdp, const Eigen::VectorXd& v);
PolicyTable greedy_policy(const FiniteMdp& mdp, const Eigen::VectorXd& v,
                          double tie_tol = kTieTolerance);
double bellman_residual(const FiniteMdp& mdp, const Eigen::VectorXd& v);

/// Jacobi value iteration from v = 0 until ||T v - v||_inf <= eps; throws
/// NoConvergence after max_iter sweeps.
SolveResult value_iteration(const FiniteMdp& mdp, double eps, int max_iter = 10'000'000);

/// Exact evaluation of (I - gamma P_pi) v = r_pi. Dense LU up to
/// kDenseEvaluationLimit states, sparse LU beyond; throws SingularEvaluation.
Eigen::VectorXd evaluate_policy(const FiniteMdp& mdp, const PolicyTable& policy);
inline constexpr int kDenseEvaluationLimit = 2000;

/// Howard policy iteration from the all-cheapest policy; throws
/// NoConvergence if the policy still changes after max_iter rounds.
SolveResult policy_iteration(const FiniteMdp& mdp, int max_iter = 100'000);

/// One-shot instance-agnostic MDP over (b, h): reward rho[a], epoch kernel
/// transitions, discount gamma. State index equals env.index(b, h).
FiniteMdp build_mms_mdp(const HarvestEnvironment& env, std::span<const double> accuracy);

/// State layout of the incremental MDP over (b, h, xi, tau).
class IncrementalIndex {
 public:
  explicit IncrementalIndex(const HarvestEnvironment& env);

  struct State {
    int b = 0;
    int h = 0;
    int xi = 0;
    int tau = 0;
  };

  int size() const { return levels_ * envs_ * modes_ * slots_; }
  int index(const State& s) const { return ((s.b * envs_ + s.h) * modes_ + s.xi) * slots_ + s.tau; }
  State state(int index) const;
  int epoch_start(EnvState s) const { return index({s.b, s.h, 0, 0}); }

 private:
  int levels_, envs_, modes_, slots_;
};

enum SubAction : int { kPause = 0, kProceed = 1 };

/// Whether `proceed` is feasible at (b, xi).
bool can_proceed(const HarvestEnvironment& env, int b, int xi);

/// Incremental instance-agnostic MDP: sub-actions pause/proceed per slot,
/// reward rho[xi + alpha] on the last slot of each epoch, discount gamma_inc.
FiniteMdp build_inc_iag_mdp(const HarvestEnvironment& env, std::span<const double> accuracy);

struct MonotoneCheck {
  bool monotone = true;
  std::optional<int> violation_b;  // first b with pi(b+1) < pi(b)
  std::optional<int> violation_h;
};

/// pi(b+1) >= pi(b) for a policy listed by battery level.
MonotoneCheck check_monotone(std::span<const int> policy_by_level);

/// Same check across every environment state of an MmS policy.
MonotoneCheck check_monotone(const HarvestEnvironment& env, const PolicyTable& policy);

struct SuperadditiveCheck {
  bool superadditive = true;
  double worst_margin = 0.0;  // min over quadruples of the difference inequality
};

/// q is (b_max+1) x K with NaN marking infeasible cells. Checks
/// q(b2,a2) - q(b2,a1) >= q(b1,a2) - q(b1,a1) - tol for b2 >= b1, a2 >= a1,
/// a1, a2 feasible at b1.
SuperadditiveCheck check_superadditive(const Eigen::MatrixXd& q, double tol = 1e-9);

/// q_h(b, a) table of an MmS MDP for environment state h.
Eigen::MatrixXd mms_q_by_level(const HarvestEnvironment& env, const FiniteMdp& mdp,
                               const Eigen::VectorXd& v, int h);

/// Policy restricted to environment state h, listed by battery level.
std::vector<int> policy_by_level(const HarvestEnvironment& env, const PolicyTable& policy, int h);

/// min over (b, h) of V_inc(b, h, 0, 0) - gamma_inc^(T-1) V_mms(b, h).
double dominance_margin(const HarvestEnvironment& env, const Eigen::VectorXd& mms_value,
                        const Eigen::VectorXd& inc_value);

/// Value monotone nondecreasing in b for each h (within tol).
bool value_monotone_in_battery(const HarvestEnvironment& env, const Eigen::VectorXd& v,
                               double tol = 1e-9);

}  // namespace ehinfer
