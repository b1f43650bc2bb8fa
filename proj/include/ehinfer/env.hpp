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

// Energy provision model: Markov-modulated packet arrivals feeding a finite
// battery, plus the exact slot and epoch transition kernels over (b, h).

#include <Eigen/Dense>

#include <string>
#include <vector>

#include "ehinfer/common.hpp"

namespace ehinfer {

/// Environment Markov chain. Rows of `transition` are P(h' | h).
class HarvestChain {
 public:
  HarvestChain(std::vector<std::string> labels, Eigen::MatrixXd transition);

  /// Good/Bad chain with self-transition probabilities p_gg and p_bb.
  static HarvestChain two_state(double p_gg, double p_bb);

  int size() const { return static_cast<int>(labels_.size()); }
  const std::vector<std::string>& labels() const { return labels_; }
  const Eigen::MatrixXd& transition() const { return transition_; }

 private:
  std::vector<std::string> labels_;
  Eigen::MatrixXd transition_;
};

/// State-conditioned arrival pmf over {0, ..., e_max} packets; one row per h.
class ArrivalModel {
 public:
  explicit ArrivalModel(Eigen::MatrixXd pmf);

  /// Binary {0,1} arrivals with P(e = 1 | h) = p_one[h].
  static ArrivalModel binary(const std::vector<double>& p_one);

  int states() const { return static_cast<int>(pmf_.rows()); }
  int e_max() const { return static_cast<int>(pmf_.cols()) - 1; }
  const Eigen::MatrixXd& pmf() const { return pmf_; }
  double mean(int h) const;

 private:
  Eigen::MatrixXd pmf_;
};

/// Battery capacity and cumulative per-mode costs u(0..K-1), u(0) = 0.
struct BatteryConfig {
  int b_max = 0;
  std::vector<int> cost;

  int modes() const { return static_cast<int>(cost.size()); }
  /// u(k+1) - u(k).
  int increment(int k) const { return cost[k + 1] - cost[k]; }
  void validate() const;
};

/// Decision epoch: `slots` (T) slots per input, epoch discount gamma.
struct EpochConfig {
  int slots = 1;
  double discount = 0.9;

  /// gamma_inc = gamma^(1/T), so that gamma_inc^T = gamma.
  double slot_discount() const;
};

/// Which environment state the arrival of a slot is drawn from.
enum class ArrivalConditioning {
  kCurrent,  // e_t ~ p(. | h_t)
  kNext,     // e_t ~ p(. | h_{t+1})
};

struct EnvState {
  int b = 0;
  int h = 0;
  friend bool operator==(const EnvState&, const EnvState&) = default;
};

class HarvestEnvironment {
 public:
  HarvestEnvironment(HarvestChain chain, ArrivalModel arrivals, BatteryConfig battery,
                     EpochConfig epoch,
                     ArrivalConditioning conditioning = ArrivalConditioning::kCurrent);

  const HarvestChain& chain() const { return chain_; }
  const ArrivalModel& arrivals() const { return arrivals_; }
  const BatteryConfig& battery() const { return battery_; }
  const EpochConfig& epoch() const { return epoch_; }
  ArrivalConditioning conditioning() const { return conditioning_; }

  int b_max() const { return battery_.b_max; }
  int modes() const { return battery_.modes(); }
  int slots() const { return epoch_.slots; }
  int env_states() const { return chain_.size(); }

  /// Number of (b, h) pairs.
  int num_states() const { return (battery_.b_max + 1) * chain_.size(); }
  int index(EnvState s) const { return s.b * chain_.size() + s.h; }
  EnvState state(int index) const { return {index / chain_.size(), index % chain_.size()}; }

  bool feasible(int b, int mode) const { return battery_.cost[mode] <= b; }

 private:
  HarvestChain chain_;
  ArrivalModel arrivals_;
  BatteryConfig battery_;
  EpochConfig epoch_;
  ArrivalConditioning conditioning_;
};

/// Two-state G/B environment with binary arrivals.
HarvestEnvironment two_state_environment(double p_gg, double p_bb, double pe_good,
                                         double pe_bad, int b_max, std::vector<int> cost,
                                         int slots, double discount);

/// Content hash of every parameter that affects the dynamics.
std::uint64_t fingerprint(const HarvestEnvironment& env);

/// b' = min(max(b - u + e, 0), b_max).
int battery_step(int b, int u, int e, int b_max);

/// Power iteration from the first basis vector. Throws NonErgodicChain when
/// the chain is reducible or does not converge within `max_iter`.
Eigen::VectorXd stationary_distribution(const HarvestChain& chain, double tol = 1e-12,
                                        long max_iter = 1'000'000);

/// Expected packets harvested per decision epoch of `slots` slots.
double energy_rate(const HarvestChain& chain, const ArrivalModel& arrivals, int slots);
double energy_rate(const HarvestEnvironment& env);

/// One-slot kernel over (b, h) when `consumption` packets are drawn.
Eigen::MatrixXd slot_kernel(const HarvestEnvironment& env, int consumption);

/// T-slot kernel for one-shot mode `mode`: u(mode) in the first slot, nothing
/// afterwards. Rows where the mode is infeasible are zero.
Eigen::MatrixXd epoch_kernel(const HarvestEnvironment& env, int mode);

/// Row of the epoch kernel for state `s`; throws InfeasibleAction if
/// u(mode) > b.
Eigen::RowVectorXd epoch_transition(const HarvestEnvironment& env, EnvState s, int mode);

struct SlotOutcome {
  EnvState next;
  int harvested = 0;
  int overflow = 0;  // packets lost to the capacity clamp
};

/// Draws e and h' for one slot. Always consumes exactly two variates from
/// `rng`, independent of the battery level.
SlotOutcome sample_slot(Rng& rng, const HarvestEnvironment& env, EnvState s, int consumption);

}  // namespace ehinfer
