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

#include "ehinfer/oracle.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace ehinfer {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void fill_delta(OracleSolution& sol) {
  const Eigen::MatrixXd& w = sol.continuation;
  const int k = static_cast<int>(w.cols());
  sol.delta.setConstant(w.rows(), k - 1, kInf);
  for (Eigen::Index s = 0; s < w.rows(); ++s)
    for (int i = 1; i < k; ++i)
      if (std::isfinite(w(s, i))) sol.delta(s, i - 1) = w(s, 0) - w(s, i);
}

}  // namespace

PartitionMatrices build_partition_matrices(int modes) {
  if (modes < 2) throw std::invalid_argument("build_partition_matrices: need K >= 2");
  PartitionMatrices pm;
  const int r = modes - 1;
  for (int j = 0; j < modes; ++j) {
    Eigen::MatrixXi m = Eigen::MatrixXi::Zero(r, modes);
    Eigen::MatrixXi f = Eigen::MatrixXi::Zero(r, r);
    for (int row = 0; row < r; ++row) {
      const int i = PartitionMatrices::other_mode(j, row);
      m(row, j) = 1;
      m(row, i) = -1;
      // z_j - z_i >= delta_0j - delta_0i, delta_00 = 0.
      if (j >= 1) f(row, j - 1) += 1;
      if (i >= 1) f(row, i - 1) -= 1;
    }
    pm.m.push_back(std::move(m));
    pm.f.push_back(std::move(f));
  }
  return pm;
}

OracleModel::OracleModel(const HarvestEnvironment& env) : env_(env) {
  for (int a = 0; a < env_.modes(); ++a) kernels_.push_back(epoch_kernel(env_, a));
  feasible_.resize(env_.num_states());
  for (int s = 0; s < env_.num_states(); ++s) {
    int n = 0;
    while (n < env_.modes() && env_.feasible(env_.state(s).b, n)) ++n;
    feasible_[s] = n;
  }
}

Eigen::MatrixXd OracleModel::continuation(const Eigen::VectorXd& v_bar) const {
  if (v_bar.size() != num_states())
    throw DimensionMismatch("OracleModel::continuation: vbar has the wrong length");
  const double gamma = env_.epoch().discount;
  Eigen::MatrixXd w(num_states(), modes());
  for (int a = 0; a < modes(); ++a) w.col(a) = gamma * (kernels_[a] * v_bar);
  for (int s = 0; s < num_states(); ++s)
    for (int a = feasible_[s]; a < modes(); ++a) w(s, a) = -kInf;
  return w;
}

Eigen::VectorXd approx_operator(const OracleModel& model, const Eigen::VectorXd& v_bar,
                                const ConfidenceDataset& dataset) {
  if (dataset.size() == 0) throw EmptyDataset("approx_operator: empty estimation set");
  if (dataset.modes() != model.modes())
    throw DimensionMismatch("approx_operator: dataset and environment disagree on K");
  const Eigen::MatrixXd w = model.continuation(v_bar);
  const Eigen::MatrixXd& z = dataset.z();
  Eigen::VectorXd out(model.num_states());
  const Eigen::Index n = z.rows();
  for (int s = 0; s < model.num_states(); ++s) {
    const int nf = model.feasible_count(s);
    // Centered on w(s, 0) and summed with Neumaier compensation so the
    // residuals stay accurate near the stopping tolerance.
    const Eigen::RowVectorXd ws = w.row(s).head(nf).array() - w(s, 0);
    const Eigen::VectorXd best = (z.leftCols(nf).rowwise() + ws).rowwise().maxCoeff();
    double sum = 0.0, comp = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double t = sum + best(i);
      comp += std::abs(sum) >= std::abs(best(i)) ? (sum - t) + best(i) : (best(i) - t) + sum;
      sum = t;
    }
    out(s) = w(s, 0) + (sum + comp) / static_cast<double>(n);
  }
  return out;
}

OracleSolution oracle_from_values(const HarvestEnvironment& env, Eigen::VectorXd v_bar) {
  OracleModel model(env);
  OracleSolution sol;
  sol.continuation = model.continuation(v_bar);
  sol.v_bar = std::move(v_bar);
  sol.matrices = build_partition_matrices(env.modes());
  sol.discount = env.epoch().discount;
  sol.env_fingerprint = fingerprint(env);
  fill_delta(sol);
  return sol;
}

OracleSolution solve_oracle(const HarvestEnvironment& env, const ConfidenceDataset& dataset,
                            double eps, int max_iter) {
  if (!(eps > 0.0)) throw std::invalid_argument("solve_oracle: eps must be positive");
  OracleModel model(env);
  Eigen::VectorXd v = Eigen::VectorXd::Zero(env.num_states());
  std::vector<double> residuals;
  int it = 0;
  while (true) {
    Eigen::VectorXd next = approx_operator(model, v, dataset);
    const double r = (next - v).lpNorm<Eigen::Infinity>();
    v = std::move(next);
    residuals.push_back(r);
    ++it;
    if (r <= eps) break;
    if (it >= max_iter) throw NoConvergence("solve_oracle: no convergence within max_iter");
  }
  OracleSolution sol = oracle_from_values(env, std::move(v));
  sol.epsilon = eps;
  sol.iterations = it;
  sol.residuals = std::move(residuals);
  sol.dataset_fingerprint = dataset.fingerprint();
  return sol;
}

int oracle_iteration_bound(double gamma, double eps, double r_max) {
  if (gamma <= 0.0) return 2;
  return static_cast<int>(std::ceil(std::log(eps * (1.0 - gamma) / r_max) / std::log(gamma))) + 1;
}

int region_of(const Eigen::Ref<const Eigen::VectorXd>& z, int s, const OracleSolution& sol) {
  const Eigen::Index k = sol.continuation.cols();
  if (z.size() != k) throw DimensionMismatch("region_of: z has the wrong length");
  int best = 0;
  double best_q = z(0) + sol.continuation(s, 0);
  for (Eigen::Index a = 1; a < k; ++a) {
    const double w = sol.continuation(s, a);
    if (!std::isfinite(w)) break;
    const double q = z(a) + w;
    if (q > best_q) {
      best_q = q;
      best = static_cast<int>(a);
    }
  }
  return best;
}

bool in_region(const Eigen::Ref<const Eigen::VectorXd>& z, int s, int j, const OracleSolution& sol,
               double tol) {
  const Eigen::MatrixXi& m = sol.matrices.m[j];
  const Eigen::MatrixXi& f = sol.matrices.f[j];
  if (!std::isfinite(sol.continuation(s, j))) return false;
  // delta with delta_00 = 0 prepended; infeasible entries never multiply a
  // nonzero F coefficient on the rows kept below.
  for (Eigen::Index row = 0; row < m.rows(); ++row) {
    const int i = PartitionMatrices::other_mode(j, static_cast<int>(row));
    if (!std::isfinite(sol.continuation(s, i))) continue;
    double lhs = 0.0;
    for (Eigen::Index c = 0; c < m.cols(); ++c) lhs += m(row, c) * z(c);
    double rhs = 0.0;
    for (Eigen::Index c = 0; c < f.cols(); ++c)
      if (f(row, c) != 0) rhs += f(row, c) * sol.delta(s, c);
    if (lhs < rhs - tol) return false;
  }
  return true;
}

double oracle_q(const Eigen::Ref<const Eigen::VectorXd>& z, int s, int a, const OracleSolution& sol) {
  return z(a) + sol.continuation(s, a);
}

OraclePolicy::OraclePolicy(const HarvestEnvironment& env, OracleSolution sol)
    : env_(env), sol_(std::move(sol)) {
  if (sol_.continuation.rows() != env_.num_states() || sol_.continuation.cols() != env_.modes())
    throw DimensionMismatch("OraclePolicy: solution does not match the environment");
}

int OraclePolicy::operator()(EnvState s, const Eigen::Ref<const Eigen::VectorXd>& z) const {
  return region_of(z, env_.index(s), sol_);
}

}  // namespace ehinfer
