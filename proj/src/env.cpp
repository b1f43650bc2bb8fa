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

#include "ehinfer/env.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace ehinfer {
namespace {

void check_stochastic_rows(const Eigen::MatrixXd& m, const char* what) {
  if (m.rows() == 0 || m.cols() == 0) throw std::invalid_argument(std::string(what) + ": empty");
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      const double p = m(i, j);
      if (!(p >= 0.0 && p <= 1.0))
        throw std::invalid_argument(std::string(what) + ": entry outside [0,1]");
    }
    if (std::abs(m.row(i).sum() - 1.0) > 1e-12)
      throw std::invalid_argument(std::string(what) + ": row " + std::to_string(i) +
                                  " does not sum to 1");
  }
}

double unit_uniform(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

int draw_index(const Eigen::Ref<const Eigen::RowVectorXd>& pmf, double u) {
  double acc = 0.0;
  const int last = static_cast<int>(pmf.size()) - 1;
  for (int i = 0; i < last; ++i) {
    acc += pmf(i);
    if (u < acc) return i;
  }
  return last;
}

bool strongly_connected(const Eigen::MatrixXd& p) {
  const int n = static_cast<int>(p.rows());
  auto reaches_all = [&](bool transpose) {
    std::vector<char> seen(n, 0);
    std::vector<int> stack{0};
    seen[0] = 1;
    while (!stack.empty()) {
      const int i = stack.back();
      stack.pop_back();
      for (int j = 0; j < n; ++j) {
        const double w = transpose ? p(j, i) : p(i, j);
        if (w > 0.0 && !seen[j]) {
          seen[j] = 1;
          stack.push_back(j);
        }
      }
    }
    return std::all_of(seen.begin(), seen.end(), [](char c) { return c != 0; });
  };
  return reaches_all(false) && reaches_all(true);
}

}  // namespace

HarvestChain::HarvestChain(std::vector<std::string> labels, Eigen::MatrixXd transition)
    : labels_(std::move(labels)), transition_(std::move(transition)) {
  if (labels_.empty()) throw std::invalid_argument("HarvestChain: no states");
  if (transition_.rows() != size() || transition_.cols() != size())
    throw std::invalid_argument("HarvestChain: transition must be |H| x |H|");
  check_stochastic_rows(transition_, "HarvestChain");
}

HarvestChain HarvestChain::two_state(double p_gg, double p_bb) {
  Eigen::MatrixXd p(2, 2);
  p << p_gg, 1.0 - p_gg, 1.0 - p_bb, p_bb;
  return HarvestChain({"G", "B"}, std::move(p));
}

ArrivalModel::ArrivalModel(Eigen::MatrixXd pmf) : pmf_(std::move(pmf)) {
  check_stochastic_rows(pmf_, "ArrivalModel");
}

ArrivalModel ArrivalModel::binary(const std::vector<double>& p_one) {
  Eigen::MatrixXd pmf(static_cast<Eigen::Index>(p_one.size()), 2);
  for (std::size_t h = 0; h < p_one.size(); ++h) {
    pmf(h, 0) = 1.0 - p_one[h];
    pmf(h, 1) = p_one[h];
  }
  return ArrivalModel(std::move(pmf));
}

double ArrivalModel::mean(int h) const {
  double m = 0.0;
  for (int e = 0; e <= e_max(); ++e) m += e * pmf_(h, e);
  return m;
}

void BatteryConfig::validate() const {
  if (b_max < 0) throw std::invalid_argument("BatteryConfig: negative b_max");
  if (cost.size() < 2) throw std::invalid_argument("BatteryConfig: need at least two modes");
  if (cost[0] != 0) throw std::invalid_argument("BatteryConfig: u(0) must be 0");
  for (std::size_t k = 1; k < cost.size(); ++k)
    if (cost[k] < cost[k - 1]) throw std::invalid_argument("BatteryConfig: costs must be nondecreasing");
}

double EpochConfig::slot_discount() const { return std::pow(discount, 1.0 / slots); }

HarvestEnvironment::HarvestEnvironment(HarvestChain chain, ArrivalModel arrivals,
                                       BatteryConfig battery, EpochConfig epoch,
                                       ArrivalConditioning conditioning)
    : chain_(std::move(chain)),
      arrivals_(std::move(arrivals)),
      battery_(std::move(battery)),
      epoch_(epoch),
      conditioning_(conditioning) {
  battery_.validate();
  if (arrivals_.states() != chain_.size())
    throw std::invalid_argument("HarvestEnvironment: arrival rows must match |H|");
  if (epoch_.slots < battery_.modes() - 1)
    throw std::invalid_argument("HarvestEnvironment: need T >= K-1");
  if (!(epoch_.discount >= 0.0 && epoch_.discount < 1.0))
    throw std::invalid_argument("HarvestEnvironment: discount must lie in [0,1)");
}

HarvestEnvironment two_state_environment(double p_gg, double p_bb, double pe_good,
                                         double pe_bad, int b_max, std::vector<int> cost,
                                         int slots, double discount) {
  return HarvestEnvironment(HarvestChain::two_state(p_gg, p_bb),
                            ArrivalModel::binary({pe_good, pe_bad}),
                            BatteryConfig{b_max, std::move(cost)}, EpochConfig{slots, discount});
}

std::uint64_t fingerprint(const HarvestEnvironment& env) {
  std::string text;
  auto put = [&text](double v) {
    text += format_number(v);
    text += ',';
  };
  for (const std::string& l : env.chain().labels()) text += l + ';';
  for (Eigen::Index i = 0; i < env.chain().transition().size(); ++i)
    put(env.chain().transition().data()[i]);
  put(static_cast<double>(env.arrivals().pmf().cols()));
  for (Eigen::Index i = 0; i < env.arrivals().pmf().size(); ++i) put(env.arrivals().pmf().data()[i]);
  put(env.b_max());
  for (int c : env.battery().cost) put(c);
  put(env.slots());
  put(env.epoch().discount);
  put(env.conditioning() == ArrivalConditioning::kNext ? 1.0 : 0.0);
  return fnv1a(text);
}

int battery_step(int b, int u, int e, int b_max) { return std::min(std::max(b - u + e, 0), b_max); }

Eigen::VectorXd stationary_distribution(const HarvestChain& chain, double tol, long max_iter) {
  const Eigen::MatrixXd& p = chain.transition();
  if (!strongly_connected(p)) throw NonErgodicChain("stationary_distribution: chain is reducible");
  Eigen::RowVectorXd pi = Eigen::RowVectorXd::Zero(chain.size());
  pi(0) = 1.0;
  for (long it = 0; it < max_iter; ++it) {
    Eigen::RowVectorXd next = pi * p;
    next /= next.sum();
    const double diff = (next - pi).cwiseAbs().maxCoeff();
    pi = std::move(next);
    if (diff <= tol) return pi.transpose();
  }
  throw NonErgodicChain("stationary_distribution: power iteration did not converge");
}

double energy_rate(const HarvestChain& chain, const ArrivalModel& arrivals, int slots) {
  const Eigen::VectorXd pi = stationary_distribution(chain);
  double per_slot = 0.0;
  for (int h = 0; h < chain.size(); ++h) per_slot += pi(h) * arrivals.mean(h);
  return slots * per_slot;
}

double energy_rate(const HarvestEnvironment& env) {
  return energy_rate(env.chain(), env.arrivals(), env.slots());
}

Eigen::MatrixXd slot_kernel(const HarvestEnvironment& env, int consumption) {
  if (consumption < 0) throw std::invalid_argument("slot_kernel: negative consumption");
  const int n = env.num_states();
  const int nh = env.env_states();
  const Eigen::MatrixXd& ph = env.chain().transition();
  const Eigen::MatrixXd& pe = env.arrivals().pmf();
  const bool next_cond = env.conditioning() == ArrivalConditioning::kNext;
  Eigen::MatrixXd k = Eigen::MatrixXd::Zero(n, n);
  for (int b = 0; b <= env.b_max(); ++b) {
    for (int h = 0; h < nh; ++h) {
      const int row = env.index({b, h});
      for (int h2 = 0; h2 < nh; ++h2) {
        const int he = next_cond ? h2 : h;
        for (int e = 0; e <= env.arrivals().e_max(); ++e) {
          const int b2 = battery_step(b, consumption, e, env.b_max());
          k(row, env.index({b2, h2})) += ph(h, h2) * pe(he, e);
        }
      }
    }
  }
  return k;
}

Eigen::MatrixXd epoch_kernel(const HarvestEnvironment& env, int mode) {
  if (mode < 0 || mode >= env.modes()) throw std::out_of_range("epoch_kernel: bad mode");
  Eigen::MatrixXd k = slot_kernel(env, env.battery().cost[mode]);
  if (env.slots() > 1) {
    const Eigen::MatrixXd idle = slot_kernel(env, 0);
    for (int t = 1; t < env.slots(); ++t) k = k * idle;
  }
  for (int s = 0; s < env.num_states(); ++s)
    if (!env.feasible(env.state(s).b, mode)) k.row(s).setZero();
  return k;
}

Eigen::RowVectorXd epoch_transition(const HarvestEnvironment& env, EnvState s, int mode) {
  if (!env.feasible(s.b, mode))
    throw InfeasibleAction("epoch_transition: mode " + std::to_string(mode) +
                           " costs more than b=" + std::to_string(s.b));
  return epoch_kernel(env, mode).row(env.index(s));
}

SlotOutcome sample_slot(Rng& rng, const HarvestEnvironment& env, EnvState s, int consumption) {
  const double u_e = unit_uniform(rng);
  const double u_h = unit_uniform(rng);
  const int h_next = draw_index(env.chain().transition().row(s.h), u_h);
  const int he = env.conditioning() == ArrivalConditioning::kNext ? h_next : s.h;
  const int e = draw_index(env.arrivals().pmf().row(he), u_e);
  const int raw = s.b - consumption + e;
  SlotOutcome out;
  out.harvested = e;
  out.overflow = std::max(raw - env.b_max(), 0);
  out.next = {battery_step(s.b, consumption, e, env.b_max()), h_next};
  return out;
}

}  // namespace ehinfer
