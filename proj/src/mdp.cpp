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

#include "ehinfer/mdp.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <cmath>
#include <limits>
#include <map>
#include <string>

namespace ehinfer {
namespace {

std::vector<Successor> row_successors(const Eigen::MatrixXd& kernel, int row) {
  std::vector<Successor> out;
  for (Eigen::Index j = 0; j < kernel.cols(); ++j)
    if (kernel(row, j) > 0.0) out.push_back({static_cast<int>(j), kernel(row, j)});
  return out;
}

double expectation(const std::vector<Successor>& succ, const Eigen::VectorXd& v) {
  double acc = 0.0;
  for (const Successor& s : succ) acc += s.prob * v(s.next);
  return acc;
}

double q_of(const FiniteMdp& mdp, const ActionEntry& a, const Eigen::VectorXd& v) {
  return a.reward + mdp.discount() * expectation(a.successors, v);
}

/// Index into actions(s) of the greedy choice; near-ties go to the first.
std::size_t greedy_slot(const FiniteMdp& mdp, int s, const Eigen::VectorXd& v, double tie_tol,
                        double* best_value = nullptr) {
  const auto acts = mdp.actions(s);
  std::size_t best = 0;
  double best_q = q_of(mdp, acts[0], v);
  for (std::size_t i = 1; i < acts.size(); ++i) {
    const double q = q_of(mdp, acts[i], v);
    if (q > best_q + tie_tol) {
      best_q = q;
      best = i;
    }
  }
  if (best_value) *best_value = best_q;
  return best;
}

}  // namespace

FiniteMdp::FiniteMdp(int n_states, double discount) : states_(n_states), discount_(discount) {
  if (n_states <= 0) throw std::invalid_argument("FiniteMdp: need at least one state");
  if (!(discount >= 0.0 && discount < 1.0))
    throw std::invalid_argument("FiniteMdp: discount must lie in [0,1)");
}

void FiniteMdp::add_action(int state, int action, double reward, std::vector<Successor> successors) {
  auto& acts = states_.at(state);
  if (!acts.empty() && acts.back().action >= action)
    throw std::invalid_argument("FiniteMdp: actions must be added in increasing order");
  acts.push_back({action, reward, std::move(successors)});
}

const ActionEntry* FiniteMdp::find(int s, int action) const {
  for (const ActionEntry& a : states_[s])
    if (a.action == action) return &a;
  return nullptr;
}

int FiniteMdp::max_action() const {
  int m = 0;
  for (const auto& acts : states_)
    for (const ActionEntry& a : acts) m = std::max(m, a.action);
  return m;
}

void FiniteMdp::validate() const {
  for (int s = 0; s < num_states(); ++s) {
    if (states_[s].empty())
      throw std::invalid_argument("FiniteMdp: state " + std::to_string(s) + " has no action");
    for (const ActionEntry& a : states_[s]) {
      if (!(a.reward >= 0.0 && a.reward <= 1.0))
        throw std::invalid_argument("FiniteMdp: reward outside [0,1]");
      double total = 0.0;
      for (const Successor& n : a.successors) {
        if (n.next < 0 || n.next >= num_states() || n.prob < 0.0)
          throw std::invalid_argument("FiniteMdp: bad successor");
        total += n.prob;
      }
      if (std::abs(total - 1.0) > 1e-9)
        throw std::invalid_argument("FiniteMdp: row of state " + std::to_string(s) +
                                    " does not sum to 1");
    }
  }
}

QTable q_values(const FiniteMdp& mdp, const Eigen::VectorXd& v) {
  QTable q;
  q.values.resize(mdp.num_states());
  for (int s = 0; s < mdp.num_states(); ++s)
    for (const ActionEntry& a : mdp.actions(s)) q.values[s].push_back(q_of(mdp, a, v));
  return q;
}

PolicyTable greedy_policy(const FiniteMdp& mdp, const Eigen::VectorXd& v, double tie_tol) {
  PolicyTable p;
  p.action.resize(mdp.num_states());
  for (int s = 0; s < mdp.num_states(); ++s)
    p.action[s] = mdp.actions(s)[greedy_slot(mdp, s, v, tie_tol)].action;
  return p;
}

double bellman_residual(const FiniteMdp& mdp, const Eigen::VectorXd& v) {
  double r = 0.0;
  for (int s = 0; s < mdp.num_states(); ++s) {
    double best = -std::numeric_limits<double>::infinity();
    for (const ActionEntry& a : mdp.actions(s)) best = std::max(best, q_of(mdp, a, v));
    r = std::max(r, std::abs(best - v(s)));
  }
  return r;
}

SolveResult value_iteration(const FiniteMdp& mdp, double eps, int max_iter) {
  if (!(eps > 0.0)) throw std::invalid_argument("value_iteration: eps must be positive");
  const int n = mdp.num_states();
  SolveResult out;
  Eigen::VectorXd v = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd next(n);
  for (int it = 1; it <= max_iter; ++it) {
    for (int s = 0; s < n; ++s) {
      double best = -std::numeric_limits<double>::infinity();
      for (const ActionEntry& a : mdp.actions(s)) best = std::max(best, q_of(mdp, a, v));
      next(s) = best;
    }
    const double res = (next - v).cwiseAbs().maxCoeff();
    v.swap(next);
    out.residuals.push_back(res);
    out.iterations = it;
    if (res <= eps) break;
    if (it == max_iter) throw NoConvergence("value_iteration: no convergence within max_iter");
  }
  out.value = std::move(v);
  out.policy = greedy_policy(mdp, out.value);
  return out;
}

Eigen::VectorXd evaluate_policy(const FiniteMdp& mdp, const PolicyTable& policy) {
  const int n = mdp.num_states();
  if (static_cast<int>(policy.action.size()) != n)
    throw std::invalid_argument("evaluate_policy: policy size mismatch");
  Eigen::VectorXd r(n);
  const double g = mdp.discount();
  std::vector<const ActionEntry*> chosen(n);
  for (int s = 0; s < n; ++s) {
    chosen[s] = mdp.find(s, policy.action[s]);
    if (!chosen[s]) throw InfeasibleAction("evaluate_policy: policy picks an infeasible action");
    r(s) = chosen[s]->reward;
  }
  Eigen::VectorXd v;
  if (n <= kDenseEvaluationLimit) {
    Eigen::MatrixXd a = Eigen::MatrixXd::Identity(n, n);
    for (int s = 0; s < n; ++s)
      for (const Successor& t : chosen[s]->successors) a(s, t.next) -= g * t.prob;
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(a);
    v = lu.solve(r);
    if (v.allFinite() && (a * v - r).cwiseAbs().maxCoeff() > 1e-8 * (1.0 + v.cwiseAbs().maxCoeff()))
      throw SingularEvaluation("evaluate_policy: singular system");
  } else {
    std::vector<Eigen::Triplet<double>> trip;
    for (int s = 0; s < n; ++s) {
      trip.emplace_back(s, s, 1.0);
      for (const Successor& t : chosen[s]->successors) trip.emplace_back(s, t.next, -g * t.prob);
    }
    Eigen::SparseMatrix<double> a(n, n);
    a.setFromTriplets(trip.begin(), trip.end());
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
    lu.compute(a);
    if (lu.info() != Eigen::Success) throw SingularEvaluation("evaluate_policy: factorization failed");
    v = lu.solve(r);
  }
  if (!v.allFinite()) throw SingularEvaluation("evaluate_policy: non-finite solution");
  return v;
}

SolveResult policy_iteration(const FiniteMdp& mdp, int max_iter) {
  const int n = mdp.num_states();
  PolicyTable pi;
  pi.action.resize(n);
  for (int s = 0; s < n; ++s) pi.action[s] = mdp.actions(s)[0].action;
  SolveResult out;
  Eigen::VectorXd v;
  for (int it = 1; it <= max_iter; ++it) {
    v = evaluate_policy(mdp, pi);
    out.iterations = it;
    bool changed = false;
    for (int s = 0; s < n; ++s) {
      const ActionEntry* cur = mdp.find(s, pi.action[s]);
      const double q_cur = q_of(mdp, *cur, v);
      double best_q;
      const std::size_t best = greedy_slot(mdp, s, v, kTieTolerance, &best_q);
      if (best_q > q_cur + kTieTolerance) {
        pi.action[s] = mdp.actions(s)[best].action;
        changed = true;
      }
    }
    if (!changed) break;
    if (it == max_iter) throw NoConvergence("policy_iteration: policy still changing at max_iter");
  }
  out.value = std::move(v);
  out.policy = greedy_policy(mdp, out.value);
  return out;
}

FiniteMdp build_mms_mdp(const HarvestEnvironment& env, std::span<const double> accuracy) {
  if (static_cast<int>(accuracy.size()) != env.modes())
    throw std::invalid_argument("build_mms_mdp: need one accuracy per mode");
  FiniteMdp mdp(env.num_states(), env.epoch().discount);
  std::vector<Eigen::MatrixXd> kernels;
  for (int a = 0; a < env.modes(); ++a) kernels.push_back(epoch_kernel(env, a));
  for (int s = 0; s < env.num_states(); ++s) {
    const EnvState st = env.state(s);
    for (int a = 0; a < env.modes(); ++a)
      if (env.feasible(st.b, a)) mdp.add_action(s, a, accuracy[a], row_successors(kernels[a], s));
  }
  return mdp;
}

IncrementalIndex::IncrementalIndex(const HarvestEnvironment& env)
    : levels_(env.b_max() + 1), envs_(env.env_states()), modes_(env.modes()), slots_(env.slots()) {}

IncrementalIndex::State IncrementalIndex::state(int index) const {
  State s;
  s.tau = index % slots_;
  index /= slots_;
  s.xi = index % modes_;
  index /= modes_;
  s.h = index % envs_;
  s.b = index / envs_;
  return s;
}

bool can_proceed(const HarvestEnvironment& env, int b, int xi) {
  return xi < env.modes() - 1 && env.battery().increment(xi) <= b;
}

FiniteMdp build_inc_iag_mdp(const HarvestEnvironment& env, std::span<const double> accuracy) {
  if (static_cast<int>(accuracy.size()) != env.modes())
    throw std::invalid_argument("build_inc_iag_mdp: need one accuracy per mode");
  const IncrementalIndex idx(env);
  FiniteMdp mdp(idx.size(), env.epoch().slot_discount());
  std::map<int, Eigen::MatrixXd> kernels;
  auto kernel = [&](int consumption) -> const Eigen::MatrixXd& {
    auto it = kernels.find(consumption);
    if (it == kernels.end()) it = kernels.emplace(consumption, slot_kernel(env, consumption)).first;
    return it->second;
  };
  const int last = env.slots() - 1;
  for (int i = 0; i < idx.size(); ++i) {
    const IncrementalIndex::State st = idx.state(i);
    const int row = env.index({st.b, st.h});
    for (int alpha : {kPause, kProceed}) {
      if (alpha == kProceed && !can_proceed(env, st.b, st.xi)) continue;
      const int consumption = alpha == kProceed ? env.battery().increment(st.xi) : 0;
      const Eigen::MatrixXd& k = kernel(consumption);
      const int xi_next = st.xi + alpha;
      const bool epoch_end = st.tau == last;
      std::vector<Successor> succ;
      for (Eigen::Index j = 0; j < k.cols(); ++j) {
        if (k(row, j) <= 0.0) continue;
        const EnvState nx = env.state(static_cast<int>(j));
        const IncrementalIndex::State ns =
            epoch_end ? IncrementalIndex::State{nx.b, nx.h, 0, 0}
                      : IncrementalIndex::State{nx.b, nx.h, xi_next, st.tau + 1};
        succ.push_back({idx.index(ns), k(row, j)});
      }
      mdp.add_action(i, alpha, epoch_end ? accuracy[xi_next] : 0.0, std::move(succ));
    }
  }
  return mdp;
}

MonotoneCheck check_monotone(std::span<const int> policy_by_level) {
  MonotoneCheck c;
  for (std::size_t b = 0; b + 1 < policy_by_level.size(); ++b) {
    if (policy_by_level[b + 1] < policy_by_level[b]) {
      c.monotone = false;
      c.violation_b = static_cast<int>(b);
      return c;
    }
  }
  return c;
}

std::vector<int> policy_by_level(const HarvestEnvironment& env, const PolicyTable& policy, int h) {
  std::vector<int> out(env.b_max() + 1);
  for (int b = 0; b <= env.b_max(); ++b) out[b] = policy.action[env.index({b, h})];
  return out;
}

MonotoneCheck check_monotone(const HarvestEnvironment& env, const PolicyTable& policy) {
  for (int h = 0; h < env.env_states(); ++h) {
    const std::vector<int> p = policy_by_level(env, policy, h);
    MonotoneCheck c = check_monotone(p);
    if (!c.monotone) {
      c.violation_h = h;
      return c;
    }
  }
  return {};
}

SuperadditiveCheck check_superadditive(const Eigen::MatrixXd& q, double tol) {
  SuperadditiveCheck c;
  c.worst_margin = std::numeric_limits<double>::infinity();
  const Eigen::Index nb = q.rows(), na = q.cols();
  for (Eigen::Index b1 = 0; b1 < nb; ++b1)
    for (Eigen::Index b2 = b1; b2 < nb; ++b2)
      for (Eigen::Index a1 = 0; a1 < na; ++a1) {
        if (std::isnan(q(b1, a1))) continue;
        for (Eigen::Index a2 = a1; a2 < na; ++a2) {
          if (std::isnan(q(b1, a2))) continue;
          const double margin = (q(b2, a2) - q(b2, a1)) - (q(b1, a2) - q(b1, a1));
          c.worst_margin = std::min(c.worst_margin, margin);
          if (margin < -tol) c.superadditive = false;
        }
      }
  if (std::isinf(c.worst_margin)) c.worst_margin = 0.0;
  return c;
}

Eigen::MatrixXd mms_q_by_level(const HarvestEnvironment& env, const FiniteMdp& mdp,
                               const Eigen::VectorXd& v, int h) {
  Eigen::MatrixXd q = Eigen::MatrixXd::Constant(env.b_max() + 1, env.modes(),
                                                std::numeric_limits<double>::quiet_NaN());
  for (int b = 0; b <= env.b_max(); ++b) {
    const int s = env.index({b, h});
    for (const ActionEntry& a : mdp.actions(s)) q(b, a.action) = q_of(mdp, a, v);
  }
  return q;
}

double dominance_margin(const HarvestEnvironment& env, const Eigen::VectorXd& mms_value,
                        const Eigen::VectorXd& inc_value) {
  const IncrementalIndex idx(env);
  const double scale = std::pow(env.epoch().slot_discount(), env.slots() - 1);
  double m = std::numeric_limits<double>::infinity();
  for (int s = 0; s < env.num_states(); ++s) {
    const EnvState st = env.state(s);
    m = std::min(m, inc_value(idx.epoch_start(st)) - scale * mms_value(s));
  }
  return m;
}

bool value_monotone_in_battery(const HarvestEnvironment& env, const Eigen::VectorXd& v, double tol) {
  for (int h = 0; h < env.env_states(); ++h)
    for (int b = 0; b < env.b_max(); ++b)
      if (v(env.index({b + 1, h})) < v(env.index({b, h})) - tol) return false;
  return true;
}

}  // namespace ehinfer
