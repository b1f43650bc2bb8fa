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

// One-shot instance-aware ("oracle") controller. For each (b, h) the optimal
// value is piecewise linear in the confidence vector z,
//
//   v(s, z) = max_{a feasible} z^(a) + gamma * P_a(s) . vbar,
//
// so the policy is a partition of the confidence cube into K polyhedra
// {z : M_j z >= F_j delta(s)} parameterized by K-1 thresholds
// delta_0i(s) = gamma (P_0(s) - P_i(s)) . vbar. vbar, the mean of v over z,
// is computed by iterating the empirical operator over an estimation set.

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

#include "ehinfer/confidence.hpp"
#include "ehinfer/env.hpp"

namespace ehinfer {

/// M_j in {0,+-1}^{(K-1) x K}, F_j in {0,+-1}^{(K-1) x (K-1)}. Row r of
/// block j compares mode j against mode i = r (r < j) or i = r + 1 (r >= j):
///   z_j - z_i >= delta_0j - delta_0i.
struct PartitionMatrices {
  std::vector<Eigen::MatrixXi> m;
  std::vector<Eigen::MatrixXi> f;

  int modes() const { return static_cast<int>(m.size()); }
  /// Mode compared against mode j in row r.
  static int other_mode(int j, int r) { return r < j ? r : r + 1; }
};

PartitionMatrices build_partition_matrices(int modes);

/// Epoch kernels of every mode, shared by the operator and the policy.
class OracleModel {
 public:
  explicit OracleModel(const HarvestEnvironment& env);

  const HarvestEnvironment& env() const { return env_; }
  int modes() const { return env_.modes(); }
  int num_states() const { return env_.num_states(); }

  /// gamma * P_a(s) . vbar per (s, a); -inf where a is infeasible.
  Eigen::MatrixXd continuation(const Eigen::VectorXd& v_bar) const;

  /// Number of feasible modes at state s (a prefix 0..n-1, costs are
  /// nondecreasing).
  int feasible_count(int s) const { return feasible_[s]; }

 private:
  HarvestEnvironment env_;
  std::vector<Eigen::MatrixXd> kernels_;
  std::vector<int> feasible_;
};

struct OracleSolution {
  Eigen::VectorXd v_bar;         // per env state
  Eigen::MatrixXd continuation;  // |S| x K, -inf for infeasible modes
  Eigen::MatrixXd delta;         // |S| x (K-1), +inf for infeasible modes
  PartitionMatrices matrices;
  double discount = 0.0;
  double epsilon = 0.0;
  int iterations = 0;
  std::vector<double> residuals;
  std::uint64_t env_fingerprint = 0;
  std::uint64_t dataset_fingerprint = 0;
};

/// (T vbar)(s) = mean_i max_{a feasible} [ z_i^(a) + gamma P_a(s) . vbar ].
Eigen::VectorXd approx_operator(const OracleModel& model, const Eigen::VectorXd& v_bar,
                                const ConfidenceDataset& dataset);

/// Iterates the empirical operator from vbar = 0 until the sup-norm change
/// is <= eps; throws NoConvergence after max_iter sweeps.
OracleSolution solve_oracle(const HarvestEnvironment& env, const ConfidenceDataset& dataset,
                            double eps = 1e-6, int max_iter = 1'000'000);

/// Rebuilds continuation and delta for a given vbar.
OracleSolution oracle_from_values(const HarvestEnvironment& env, Eigen::VectorXd v_bar);

/// Upper bound on the sweep count of solve_oracle for rewards in [0, r_max].
int oracle_iteration_bound(double gamma, double eps, double r_max = 1.0);

/// Greedy mode for (s, z): argmax over feasible a of z^(a) + continuation,
/// smallest index on ties.
int region_of(const Eigen::Ref<const Eigen::VectorXd>& z, int s, const OracleSolution& sol);

/// Membership test M_j z >= F_j delta(s) restricted to the rows of feasible
/// modes, with slack `tol`.
bool in_region(const Eigen::Ref<const Eigen::VectorXd>& z, int s, int j,
               const OracleSolution& sol, double tol = 1e-12);

/// q*(s, z, a) = z^(a) + continuation(s, a).
double oracle_q(const Eigen::Ref<const Eigen::VectorXd>& z, int s, int a, const OracleSolution& sol);

/// Callable (s, z) -> mode.
class OraclePolicy {
 public:
  OraclePolicy(const HarvestEnvironment& env, OracleSolution sol);
  int operator()(EnvState s, const Eigen::Ref<const Eigen::VectorXd>& z) const;
  const OracleSolution& solution() const { return sol_; }

 private:
  HarvestEnvironment env_;
  OracleSolution sol_;
};

}  // namespace ehinfer
