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

#include "ehinfer/eval.hpp"

#include <Eigen/Sparse>
#include <boost/math/distributions/students_t.hpp>

#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <stdexcept>
#include <thread>

namespace ehinfer {
namespace {

double unit(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

class MmsController final : public Controller {
 public:
  MmsController(const HarvestEnvironment& env, PolicyTable p) : Controller(env), policy_(std::move(p)) {
    if (static_cast<int>(policy_.action.size()) != env.num_states())
      throw DimensionMismatch("MmS controller: policy size does not match the environment");
  }
  ControllerKind kind() const override { return ControllerKind::kMmS; }
  bool incremental() const override { return false; }
  int select_mode(EnvState s, const Eigen::Ref<const Eigen::RowVectorXd>&, Rng&) const override {
    return policy_.action[env().index(s)];
  }

 private:
  PolicyTable policy_;
};

class OracleController final : public Controller {
 public:
  OracleController(const HarvestEnvironment& env, OracleSolution sol)
      : Controller(env), policy_(env, std::move(sol)) {}
  ControllerKind kind() const override { return ControllerKind::kOsIAwOracle; }
  bool incremental() const override { return false; }
  int select_mode(EnvState s, const Eigen::Ref<const Eigen::RowVectorXd>& z, Rng&) const override {
    return policy_(s, z.transpose());
  }

 private:
  OraclePolicy policy_;
};

class IncIagController final : public Controller {
 public:
  IncIagController(const HarvestEnvironment& env, PolicyTable p)
      : Controller(env), index_(env), policy_(std::move(p)) {
    if (static_cast<int>(policy_.action.size()) != index_.size())
      throw DimensionMismatch("IncIAg controller: policy size does not match the environment");
  }
  ControllerKind kind() const override { return ControllerKind::kIncIAgEE; }
  bool incremental() const override { return true; }
  int sub_action(const IncrementalIndex::State& x, double, Rng&) const override {
    return policy_.action[index_.index(x)];
  }

 private:
  IncrementalIndex index_;
  PolicyTable policy_;
};

class DqnController final : public Controller {
 public:
  DqnController(const HarvestEnvironment& env, DqnPolicy p) : Controller(env), policy_(std::move(p)) {}
  ControllerKind kind() const override {
    return policy_.mode() == ControlMode::kIncremental ? ControllerKind::kIncIAwDQN
                                                       : ControllerKind::kOsIAwDQN;
  }
  bool incremental() const override { return policy_.mode() == ControlMode::kIncremental; }
  int select_mode(EnvState s, const Eigen::Ref<const Eigen::RowVectorXd>& z, Rng&) const override {
    return policy_.select_mode(s, z);
  }
  int sub_action(const IncrementalIndex::State& x, double z, Rng&) const override {
    return policy_.sub_action(x.b, x.h, x.xi, x.tau, z);
  }

 private:
  DqnPolicy policy_;
};

class RandomController final : public Controller {
 public:
  explicit RandomController(const HarvestEnvironment& env) : Controller(env) {}
  ControllerKind kind() const override { return ControllerKind::kRandomFeasible; }
  bool incremental() const override { return false; }
  int select_mode(EnvState s, const Eigen::Ref<const Eigen::RowVectorXd>&, Rng& rng) const override {
    int n = 0;
    while (n < modes() && env().feasible(s.b, n)) ++n;
    return std::uniform_int_distribution<int>(0, n - 1)(rng);
  }
};

class FixedController final : public Controller {
 public:
  FixedController(const HarvestEnvironment& env, int k) : Controller(env), k_(k) {
    if (k < 0 || k >= env.modes()) throw std::out_of_range("FixedMode: mode out of range");
  }
  ControllerKind kind() const override { return ControllerKind::kFixedMode; }
  std::string name() const override { return "FixedMode(" + std::to_string(k_) + ")"; }
  bool incremental() const override { return false; }
  int select_mode(EnvState s, const Eigen::Ref<const Eigen::RowVectorXd>&, Rng&) const override {
    int a = k_;
    while (a > 0 && !env().feasible(s.b, a)) --a;
    return a;
  }

 private:
  int k_;
};

struct EpochOutcome {
  EnvState next;
  int mode = 0;
  int energy = 0;
  int overflow = 0;
};

EpochOutcome run_epoch(const Controller& c, const HarvestEnvironment& env, EnvState s,
                       const Eigen::Ref<const Eigen::RowVectorXd>& z, Rng& env_rng, Rng& pol_rng) {
  EpochOutcome out;
  if (c.incremental()) {
    int xi = 0;
    for (int tau = 0; tau < env.slots(); ++tau) {
      const int a = c.sub_action({s.b, s.h, xi, tau}, z(xi), pol_rng);
      if (a == kProceed && !can_proceed(env, s.b, xi))
        throw InfeasibleAction(c.name() + ": proceed without energy");
      const int use = a == kProceed ? env.battery().increment(xi) : 0;
      xi += a == kProceed ? 1 : 0;
      const SlotOutcome o = sample_slot(env_rng, env, s, use);
      out.energy += use;
      out.overflow += o.overflow;
      s = o.next;
    }
    out.mode = xi;
  } else {
    const int a = c.select_mode(s, z, pol_rng);
    if (a < 0 || a >= env.modes() || !env.feasible(s.b, a))
      throw InfeasibleAction(c.name() + ": infeasible mode " + std::to_string(a));
    for (int tau = 0; tau < env.slots(); ++tau) {
      const int use = tau == 0 ? env.battery().cost[a] : 0;
      const SlotOutcome o = sample_slot(env_rng, env, s, use);
      out.energy += use;
      out.overflow += o.overflow;
      s = o.next;
    }
    out.mode = a;
  }
  out.next = s;
  return out;
}

void check_compatible(const Controller& c, const HarvestEnvironment& env, const ConfidenceDataset& ds) {
  if (c.modes() != ds.modes() || env.modes() != ds.modes())
    throw IncompatibleController(c.name() + ": controller has " + std::to_string(c.modes()) +
                                 " modes, dataset " + std::to_string(ds.modes()));
  if (fingerprint(c.env()) != fingerprint(env))
    throw IncompatibleController(c.name() + ": controller was built for another environment");
  if (ds.size() == 0) throw EmptyDataset("simulate: empty dataset");
}

}  // namespace

std::string kind_name(ControllerKind kind) {
  switch (kind) {
    case ControllerKind::kMmS: return "MmS";
    case ControllerKind::kOsIAwOracle: return "OsIAwOracle";
    case ControllerKind::kIncIAgEE: return "IncIAgEE";
    case ControllerKind::kIncIAwDQN: return "IncIAwDQN";
    case ControllerKind::kOsIAwDQN: return "OsIAwDQN";
    case ControllerKind::kRandomFeasible: return "RandomFeasible";
    case ControllerKind::kFixedMode: return "FixedMode";
  }
  return "unknown";
}

ControllerKind parse_kind(const std::string& name) {
  for (ControllerKind k : {ControllerKind::kMmS, ControllerKind::kOsIAwOracle, ControllerKind::kIncIAgEE,
                           ControllerKind::kIncIAwDQN, ControllerKind::kOsIAwDQN,
                           ControllerKind::kRandomFeasible, ControllerKind::kFixedMode})
    if (kind_name(k) == name) return k;
  throw std::invalid_argument("unknown controller kind: " + name);
}

int Controller::select_mode(EnvState, const Eigen::Ref<const Eigen::RowVectorXd>&, Rng&) const {
  throw std::logic_error(name() + " is not a one-shot controller");
}

int Controller::sub_action(const IncrementalIndex::State&, double, Rng&) const {
  throw std::logic_error(name() + " is not an incremental controller");
}

ControllerHandle make_mms_controller(const HarvestEnvironment& env, PolicyTable policy) {
  return std::make_shared<MmsController>(env, std::move(policy));
}
ControllerHandle make_oracle_controller(const HarvestEnvironment& env, OracleSolution solution) {
  return std::make_shared<OracleController>(env, std::move(solution));
}
ControllerHandle make_inc_iag_controller(const HarvestEnvironment& env, PolicyTable policy) {
  return std::make_shared<IncIagController>(env, std::move(policy));
}
ControllerHandle make_dqn_controller(const HarvestEnvironment& env, DqnPolicy policy) {
  return std::make_shared<DqnController>(env, std::move(policy));
}
ControllerHandle make_random_controller(const HarvestEnvironment& env) {
  return std::make_shared<RandomController>(env);
}
ControllerHandle make_fixed_controller(const HarvestEnvironment& env, int k) {
  return std::make_shared<FixedController>(env, k);
}

std::vector<EpisodeResult> simulate(const Controller& controller, const HarvestEnvironment& env,
                                    const ConfidenceDataset& dataset, int episodes, int epochs,
                                    std::uint64_t seed) {
  check_compatible(controller, env, dataset);
  if (episodes <= 0 || epochs <= 0) throw std::invalid_argument("simulate: need positive sizes");
  const Eigen::VectorXd pi = stationary_distribution(env.chain());
  const int threshold = env.battery().cost[1];
  std::uniform_int_distribution<int> pick(0, dataset.size() - 1);
  std::vector<EpisodeResult> out;
  for (int ep = 0; ep < episodes; ++ep) {
    const std::uint64_t es = derive_seed(seed, static_cast<std::uint64_t>(ep));
    Rng env_rng(derive_seed(es, 0));
    Rng inst_rng(derive_seed(es, 1));
    Rng pol_rng(derive_seed(es, 2));
    EnvState s{0, 0};
    {
      const double u = unit(env_rng);
      double acc = 0.0;
      s.h = env.env_states() - 1;
      for (int h = 0; h < env.env_states(); ++h) {
        acc += pi(h);
        if (u < acc) {
          s.h = h;
          break;
        }
      }
    }
    EpisodeResult r;
    r.histogram.assign(env.modes(), 0);
    long correct = 0;
    for (int n = 0; n < epochs; ++n) {
      const int rec = pick(inst_rng);
      if (s.b < threshold) ++r.outages;
      const EpochOutcome o = run_epoch(controller, env, s, dataset.z().row(rec), env_rng, pol_rng);
      ++r.histogram[o.mode];
      r.energy += o.energy;
      r.overflow += o.overflow;
      correct += dataset.correct(rec, o.mode) ? 1 : 0;
      s = o.next;
    }
    r.epochs = epochs;
    r.accuracy = static_cast<double>(correct) / epochs;
    out.push_back(std::move(r));
  }
  return out;
}

MeanCi mean_ci(const std::vector<double>& x) {
  MeanCi c;
  if (x.empty()) return c;
  const Eigen::Map<const Eigen::VectorXd> v(x.data(), static_cast<Eigen::Index>(x.size()));
  c.mean = v.mean();
  if (x.size() > 1) c.sd = std::sqrt((v.array() - c.mean).square().sum() / (x.size() - 1));
  const double half = 1.959963984540054 * c.sd / std::sqrt(static_cast<double>(x.size()));
  c.low = c.mean - half;
  c.high = c.mean + half;
  return c;
}

std::vector<double> accuracies(const std::vector<EpisodeResult>& r) {
  std::vector<double> a;
  a.reserve(r.size());
  for (const EpisodeResult& e : r) a.push_back(e.accuracy);
  return a;
}

PairedTest paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw DimensionMismatch("paired_t_test: unequal sample sizes");
  if (a.size() < 2) throw std::invalid_argument("paired_t_test: need at least two pairs");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  const MeanCi m = mean_ci(d);
  PairedTest t;
  t.n = static_cast<int>(d.size());
  t.mean_diff = m.mean;
  if (m.sd == 0.0) {
    t.t = m.mean > 0 ? INFINITY : (m.mean < 0 ? -INFINITY : 0.0);
    t.p_value = m.mean > 0 ? 0.0 : (m.mean < 0 ? 1.0 : 0.5);
    return t;
  }
  t.t = m.mean / (m.sd / std::sqrt(static_cast<double>(t.n)));
  const boost::math::students_t dist(t.n - 1);
  t.p_value = boost::math::cdf(boost::math::complement(dist, t.t));
  return t;
}

Eigen::MatrixXd exit_probability_matrix(const HarvestEnvironment& env, const PolicyTable& policy) {
  const IncrementalIndex idx(env);
  if (static_cast<int>(policy.action.size()) != idx.size())
    throw DimensionMismatch("exit_probability_matrix: policy does not match the incremental MDP");
  const int n = idx.size();
  const int k = env.modes();
  std::map<int, Eigen::MatrixXd> kernels;
  std::vector<Eigen::Triplet<double>> trip;
  for (int i = 0; i < n; ++i) {
    const IncrementalIndex::State st = idx.state(i);
    const int a = policy.action[i];
    if (a == kProceed && !can_proceed(env, st.b, st.xi))
      throw InfeasibleAction("exit_probability_matrix: policy proceeds without energy");
    const int use = a == kProceed ? env.battery().increment(st.xi) : 0;
    auto it = kernels.find(use);
    if (it == kernels.end()) it = kernels.emplace(use, slot_kernel(env, use)).first;
    const Eigen::MatrixXd& ker = it->second;
    const int row = env.index({st.b, st.h});
    const int xi2 = st.xi + (a == kProceed ? 1 : 0);
    for (Eigen::Index j = 0; j < ker.cols(); ++j) {
      if (ker(row, j) <= 0.0) continue;
      const EnvState nx = env.state(static_cast<int>(j));
      const int col = st.tau == env.slots() - 1 ? n + xi2 : idx.index({nx.b, nx.h, xi2, st.tau + 1});
      trip.emplace_back(i, col, ker(row, j));
    }
  }
  for (int e = 0; e < k; ++e) trip.emplace_back(n + e, n + e, 1.0);
  Eigen::SparseMatrix<double> p(n + k, n + k);
  p.setFromTriplets(trip.begin(), trip.end());

  const int ns = env.num_states();
  Eigen::MatrixXd r = Eigen::MatrixXd::Zero(ns, n + k);
  for (int s = 0; s < ns; ++s) r(s, idx.epoch_start(env.state(s))) = 1.0;
  for (int t = 0; t < env.slots(); ++t) r = (r * p).eval();
  return r.rightCols(k);
}

Eigen::MatrixXd exit_probability_oracle(const OracleSolution& sol, const ConfidenceDataset& dataset) {
  if (dataset.size() == 0) throw EmptyDataset("exit_probability_oracle: empty dataset");
  const Eigen::Index ns = sol.continuation.rows();
  const Eigen::Index k = sol.continuation.cols();
  if (dataset.modes() != k) throw DimensionMismatch("exit_probability_oracle: K mismatch");
  Eigen::MatrixXd eta = Eigen::MatrixXd::Zero(ns, k);
  for (Eigen::Index s = 0; s < ns; ++s) {
    for (int i = 0; i < dataset.size(); ++i)
      eta(s, region_of(dataset.z().row(i).transpose(), static_cast<int>(s), sol)) += 1.0;
  }
  return eta / dataset.size();
}

Eigen::MatrixXd exit_probability_mms(const HarvestEnvironment& env, const PolicyTable& policy) {
  if (static_cast<int>(policy.action.size()) != env.num_states())
    throw DimensionMismatch("exit_probability_mms: policy size mismatch");
  Eigen::MatrixXd eta = Eigen::MatrixXd::Zero(env.num_states(), env.modes());
  for (int s = 0; s < env.num_states(); ++s) eta(s, policy.action[s]) = 1.0;
  return eta;
}

Eigen::VectorXd exit_probability_mc(const Controller& controller, const HarvestEnvironment& env,
                                    const ConfidenceDataset& dataset, EnvState start, int rollouts,
                                    std::uint64_t seed) {
  check_compatible(controller, env, dataset);
  if (rollouts <= 0) throw std::invalid_argument("exit_probability_mc: need rollouts > 0");
  Rng env_rng(derive_seed(seed, 0));
  Rng inst_rng(derive_seed(seed, 1));
  Rng pol_rng(derive_seed(seed, 2));
  std::uniform_int_distribution<int> pick(0, dataset.size() - 1);
  Eigen::VectorXd eta = Eigen::VectorXd::Zero(env.modes());
  for (int i = 0; i < rollouts; ++i) {
    const int rec = pick(inst_rng);
    eta(run_epoch(controller, env, start, dataset.z().row(rec), env_rng, pol_rng).mode) += 1.0;
  }
  return eta / rollouts;
}

void SweepGrid::validate() const {
  if (p_gg.empty() || p_bb.empty() || pe_good.empty() || pe_bad.empty() || b_max.empty() ||
      seeds.empty())
    throw std::invalid_argument("SweepGrid: every list must be nonempty");
  if (episodes <= 0 || epochs <= 0) throw std::invalid_argument("SweepGrid: need positive sizes");
}

long SweepGrid::cells() const {
  return static_cast<long>(p_gg.size() * p_bb.size() * pe_good.size() * pe_bad.size() * b_max.size());
}

std::vector<SweepCell> sweep_cells(const SweepGrid& grid) {
  grid.validate();
  std::vector<SweepCell> cells;
  for (double gg : grid.p_gg)
    for (double bb : grid.p_bb)
      for (double eg : grid.pe_good)
        for (double eb : grid.pe_bad)
          for (int bm : grid.b_max) {
            SweepCell c{gg, bb, eg, eb, bm, 0.0};
            c.mu = energy_rate(HarvestChain::two_state(gg, bb), ArrivalModel::binary({eg, eb}),
                               grid.slots);
            cells.push_back(c);
          }
  return cells;
}

namespace {

std::vector<SweepRow> run_cell(const SweepGrid& grid, const SweepCell& cell,
                               const ConfidenceDataset& est, const ConfidenceDataset& test,
                               const SweepOptions& opt) {
  const HarvestEnvironment env = two_state_environment(cell.p_gg, cell.p_bb, cell.pe_good, cell.pe_bad,
                                                       cell.b_max, grid.cost, grid.slots, grid.discount);
  const std::vector<double> rho = exit_accuracies(est);
  std::vector<ControllerHandle> controllers;
  for (ControllerKind k : opt.controllers) {
    switch (k) {
      case ControllerKind::kMmS:
        controllers.push_back(make_mms_controller(env, policy_iteration(build_mms_mdp(env, rho)).policy));
        break;
      case ControllerKind::kIncIAgEE:
        controllers.push_back(
            make_inc_iag_controller(env, policy_iteration(build_inc_iag_mdp(env, rho)).policy));
        break;
      case ControllerKind::kOsIAwOracle:
        controllers.push_back(make_oracle_controller(env, solve_oracle(env, est, opt.oracle_epsilon)));
        break;
      case ControllerKind::kIncIAwDQN:
      case ControllerKind::kOsIAwDQN: {
        if (!opt.dqn) throw std::invalid_argument("sweep: DQN controllers need a TrainConfig");
        TrainConfig cfg = *opt.dqn;
        cfg.mode = k == ControllerKind::kIncIAwDQN ? ControlMode::kIncremental
                                                   : ControlMode::kOneShotOracle;
        TrainResult tr = train(env, est, cfg);
        controllers.push_back(make_dqn_controller(env, DqnPolicy(env, cfg.mode, std::move(tr.network))));
        break;
      }
      case ControllerKind::kRandomFeasible:
        controllers.push_back(make_random_controller(env));
        break;
      case ControllerKind::kFixedMode:
        controllers.push_back(make_fixed_controller(env, opt.fixed_mode));
        break;
    }
  }
  std::vector<SweepRow> rows;
  for (const ControllerHandle& c : controllers) {
    for (std::uint64_t seed : grid.seeds) {
      const std::vector<EpisodeResult> res = simulate(*c, env, test, grid.episodes, grid.epochs, seed);
      SweepRow row;
      row.cell = cell;
      row.controller = c->name();
      row.seed = seed;
      row.episode_accuracy = accuracies(res);
      row.accuracy = mean_ci(row.episode_accuracy);
      row.exit_fraction.assign(env.modes(), 0.0);
      long total = 0;
      for (const EpisodeResult& e : res) {
        for (int m = 0; m < env.modes(); ++m) row.exit_fraction[m] += e.histogram[m];
        total += e.epochs;
      }
      for (double& f : row.exit_fraction) f /= total;
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

}  // namespace

std::vector<SweepRow> sweep(const SweepGrid& grid, const ConfidenceDataset& est,
                            const ConfidenceDataset& test, const SweepOptions& options) {
  const std::vector<SweepCell> cells = sweep_cells(grid);
  std::vector<std::vector<SweepRow>> per_cell(cells.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= cells.size()) return;
      try {
        per_cell[i] = run_cell(grid, cells[i], est, test, options);
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const int jobs = std::max(1, options.jobs);
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  std::vector<SweepRow> rows;
  for (std::vector<SweepRow>& r : per_cell)
    for (SweepRow& row : r) rows.push_back(std::move(row));
  return rows;
}

std::map<std::pair<int, std::string>, GroupStat> group_by_bmax(const std::vector<SweepRow>& rows) {
  std::map<std::pair<int, std::string>, GroupStat> g;
  for (const SweepRow& r : rows) {
    GroupStat& s = g[{r.cell.b_max, r.controller}];
    s.mean += r.accuracy.mean;
    ++s.rows;
  }
  for (auto& [key, s] : g) s.mean /= s.rows;
  return g;
}

std::map<std::pair<double, std::string>, GroupStat> group_by_mu(const std::vector<SweepRow>& rows) {
  std::map<std::pair<double, std::string>, GroupStat> g;
  for (const SweepRow& r : rows) {
    GroupStat& s = g[{std::round(r.cell.mu * 100.0) / 100.0, r.controller}];
    s.mean += r.accuracy.mean;
    ++s.rows;
  }
  for (auto& [key, s] : g) s.mean /= s.rows;
  return g;
}

}  // namespace ehinfer
