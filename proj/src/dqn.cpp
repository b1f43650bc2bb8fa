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

#include "ehinfer/dqn.hpp"

#include <algorithm>
#include <bit>
#include <stdexcept>

#include "ehinfer/mdp.hpp"

namespace ehinfer {
namespace {

double unit(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

int random_feasible(Rng& rng, ActionMask mask) {
  const int n = std::popcount(mask);
  int k = std::uniform_int_distribution<int>(0, n - 1)(rng);
  for (int a = 0; a < 32; ++a) {
    if (!(mask >> a & 1u)) continue;
    if (k-- == 0) return a;
  }
  throw std::logic_error("random_feasible: empty mask");
}

// Position of the agent inside the epoch loop.
struct Cursor {
  EnvState s;
  int xi = 0;
  int tau = 0;
  int record = 0;
};

}  // namespace

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw std::invalid_argument("ReplayBuffer: zero capacity");
  items_.reserve(std::min<std::size_t>(capacity, 1 << 16));
}

void ReplayBuffer::push(Transition t) {
  if (items_.size() < capacity_) {
    items_.push_back(std::move(t));
  } else {
    items_[next_] = std::move(t);
  }
  next_ = (next_ + 1) % capacity_;
}

std::vector<std::size_t> ReplayBuffer::sample_indices(Rng& rng, std::size_t n) const {
  if (items_.empty()) throw EmptyDataset("ReplayBuffer: nothing stored");
  std::uniform_int_distribution<std::size_t> pick(0, items_.size() - 1);
  std::vector<std::size_t> out(n);
  for (std::size_t& i : out) i = pick(rng);
  return out;
}

StateEncoder::StateEncoder(const HarvestEnvironment& env, ControlMode mode)
    : mode_(mode),
      b_max_(env.b_max()),
      envs_(env.env_states()),
      modes_(env.modes()),
      slots_(env.slots()) {
  const int base = 1 + (b_max_ + 1) + envs_;
  if (mode_ == ControlMode::kIncremental) {
    dim_ = base + 3;
    actions_ = 2;
  } else {
    dim_ = base + modes_ - 1;
    actions_ = modes_;
  }
}

void StateEncoder::encode_incremental(int b, int h, int xi, int tau, double z, float* out) const {
  std::fill(out, out + dim_, 0.0f);
  out[0] = b_max_ > 0 ? static_cast<float>(b) / b_max_ : 0.0f;
  out[1 + b] = 1.0f;
  out[2 + b_max_ + h] = 1.0f;
  const int o = 2 + b_max_ + envs_;
  out[o] = static_cast<float>(xi) / (modes_ - 1);
  out[o + 1] = slots_ > 1 ? static_cast<float>(tau) / (slots_ - 1) : 0.0f;
  out[o + 2] = static_cast<float>(z);
}

void StateEncoder::encode_one_shot(int b, int h, const Eigen::Ref<const Eigen::RowVectorXd>& z,
                                   float* out) const {
  std::fill(out, out + dim_, 0.0f);
  out[0] = b_max_ > 0 ? static_cast<float>(b) / b_max_ : 0.0f;
  out[1 + b] = 1.0f;
  out[2 + b_max_ + h] = 1.0f;
  const int o = 2 + b_max_ + envs_;
  for (int k = 1; k < modes_; ++k) out[o + k - 1] = static_cast<float>(z(k));
}

ActionMask incremental_mask(const HarvestEnvironment& env, int b, int xi) {
  return can_proceed(env, b, xi) ? 0b11u : 0b01u;
}

ActionMask one_shot_mask(const HarvestEnvironment& env, int b) {
  ActionMask m = 0;
  for (int a = 0; a < env.modes(); ++a)
    if (env.feasible(b, a)) m |= 1u << a;
  return m;
}

void TrainConfig::validate() const {
  auto fail = [](const char* what) { throw std::invalid_argument(std::string("TrainConfig: ") + what); };
  if (hidden.empty()) fail("no hidden layers");
  for (int w : hidden)
    if (w <= 0) fail("hidden widths must be positive");
  if (!(learning_rate > 0.0)) fail("learning_rate must be positive");
  if (batch_size <= 0) fail("batch_size must be positive");
  if (buffer_capacity <= 0) fail("buffer_capacity must be positive");
  if (target_sync <= 0) fail("target_sync must be positive");
  if (!(epsilon_start >= 0.0 && epsilon_start <= 1.0)) fail("epsilon_start outside [0,1]");
  if (!(epsilon_end >= 0.0 && epsilon_end <= 1.0)) fail("epsilon_end outside [0,1]");
  if (epsilon_decay_steps < 0) fail("epsilon_decay_steps negative");
  if (total_steps < 0) fail("total_steps negative");
  if (learning_starts < 0) fail("learning_starts negative");
  if (train_every <= 0) fail("train_every must be positive");
  if (eval_every < 0) fail("eval_every negative");
  if (eval_epochs <= 0) fail("eval_epochs must be positive");
  if (reset_epochs <= 0) fail("reset_epochs must be positive");
}

double TrainConfig::epsilon_at(long step) const {
  if (epsilon_decay_steps == 0 || step >= epsilon_decay_steps) return epsilon_end;
  const double f = static_cast<double>(step) / epsilon_decay_steps;
  return epsilon_start + f * (epsilon_end - epsilon_start);
}

DqnPolicy::DqnPolicy(const HarvestEnvironment& env, ControlMode mode, Mlp<float> net)
    : env_(env), encoder_(env, mode), net_(std::move(net)) {
  if (net_.input_dim() != encoder_.dim() || net_.output_dim() != encoder_.actions())
    throw DimensionMismatch("DqnPolicy: network shape does not match the environment");
}

int DqnPolicy::act(const float* x, ActionMask mask) const {
  const Eigen::Map<const Eigen::VectorXf> in(x, encoder_.dim());
  const Eigen::VectorXf q = net_.forward(Eigen::MatrixXf(in));
  int best = -1;
  for (int a = 0; a < static_cast<int>(q.size()); ++a) {
    if (!(mask >> a & 1u)) continue;
    if (best < 0 || q(a) > q(best)) best = a;
  }
  return best;
}

int DqnPolicy::sub_action(int b, int h, int xi, int tau, double z) const {
  std::vector<float> x(encoder_.dim());
  encoder_.encode_incremental(b, h, xi, tau, z, x.data());
  return act(x.data(), incremental_mask(env_, b, xi));
}

int DqnPolicy::select_mode(EnvState s, const Eigen::Ref<const Eigen::RowVectorXd>& z) const {
  std::vector<float> x(encoder_.dim());
  encoder_.encode_one_shot(s.b, s.h, z, x.data());
  return act(x.data(), one_shot_mask(env_, s.b));
}

double greedy_accuracy(const DqnPolicy& policy, const HarvestEnvironment& env,
                       const ConfidenceDataset& dataset, int epochs, std::uint64_t seed) {
  if (dataset.size() == 0) throw EmptyDataset("greedy_accuracy: empty dataset");
  Rng env_rng(derive_seed(seed, 0));
  Rng inst_rng(derive_seed(seed, 1));
  std::uniform_int_distribution<int> pick(0, dataset.size() - 1);
  EnvState s{0, 0};
  long correct = 0;
  for (int n = 0; n < epochs; ++n) {
    const int r = pick(inst_rng);
    const Eigen::RowVectorXd z = dataset.z().row(r);
    int selected = 0;
    if (policy.mode() == ControlMode::kIncremental) {
      int xi = 0;
      for (int tau = 0; tau < env.slots(); ++tau) {
        const int a = policy.sub_action(s.b, s.h, xi, tau, z(xi));
        const int use = a == kProceed ? env.battery().increment(xi) : 0;
        xi += a;
        s = sample_slot(env_rng, env, s, use).next;
      }
      selected = xi;
    } else {
      selected = policy.select_mode(s, z);
      for (int tau = 0; tau < env.slots(); ++tau)
        s = sample_slot(env_rng, env, s, tau == 0 ? env.battery().cost[selected] : 0).next;
    }
    correct += dataset.correct(r, selected) ? 1 : 0;
  }
  return static_cast<double>(correct) / epochs;
}

TrainResult train(const HarvestEnvironment& env, const ConfidenceDataset& dataset,
                  const TrainConfig& config) {
  config.validate();
  if (dataset.size() == 0) throw EmptyDataset("train: empty dataset");
  if (dataset.modes() != env.modes())
    throw DimensionMismatch("train: dataset and environment disagree on K");
  if (env.modes() > 32) throw std::invalid_argument("train: at most 32 modes");

  const bool incremental = config.mode == ControlMode::kIncremental;
  const StateEncoder enc(env, config.mode);
  Rng env_rng(derive_seed(config.seed, 0));
  Rng inst_rng(derive_seed(config.seed, 1));
  Rng explore_rng(derive_seed(config.seed, 2));
  Rng replay_rng(derive_seed(config.seed, 3));
  Rng init_rng(derive_seed(config.seed, 4));
  const std::uint64_t eval_seed = derive_seed(config.seed, 5);

  std::vector<int> widths{enc.dim()};
  widths.insert(widths.end(), config.hidden.begin(), config.hidden.end());
  widths.push_back(enc.actions());
  Mlp<float> net = Mlp<float>::random(widths, init_rng);
  Mlp<float> target = net;
  Adam<float> opt(net, config.learning_rate);
  ReplayBuffer buffer(static_cast<std::size_t>(config.buffer_capacity));
  const float gamma = static_cast<float>(incremental ? env.epoch().slot_discount()
                                                     : env.epoch().discount);
  const Eigen::MatrixXd& z = dataset.z();
  std::uniform_int_distribution<int> pick(0, dataset.size() - 1);
  std::uniform_int_distribution<int> level(0, env.b_max());

  auto encode = [&](const Cursor& c, float* out) {
    if (incremental)
      enc.encode_incremental(c.s.b, c.s.h, c.xi, c.tau, z(c.record, c.xi), out);
    else
      enc.encode_one_shot(c.s.b, c.s.h, z.row(c.record), out);
  };
  auto mask_of = [&](const Cursor& c) {
    return incremental ? incremental_mask(env, c.s.b, c.xi) : one_shot_mask(env, c.s.b);
  };
  auto act_greedy = [&](const float* x, ActionMask mask) {
    const Eigen::Map<const Eigen::VectorXf> in(x, enc.dim());
    const Eigen::VectorXf q = net.forward(Eigen::MatrixXf(in));
    int best = -1;
    for (int a = 0; a < enc.actions(); ++a) {
      if (!(mask >> a & 1u)) continue;
      if (best < 0 || q(a) > q(best)) best = a;
    }
    return best;
  };

  TrainResult result;
  Cursor cur;
  cur.s = {level(env_rng), 0};
  cur.record = pick(inst_rng);
  long epochs_done = 0;
  double loss_sum = 0.0;
  long loss_count = 0;

  for (long step = 0; step < config.total_steps; ++step) {
    Transition t;
    t.x.resize(enc.dim());
    encode(cur, t.x.data());
    const ActionMask mask = mask_of(cur);
    const double eps = config.epsilon_at(step);
    const int a = unit(explore_rng) < eps ? random_feasible(explore_rng, mask)
                                          : act_greedy(t.x.data(), mask);
    t.action = a;

    Cursor next = cur;
    bool epoch_end = false;
    if (incremental) {
      const int use = a == kProceed ? env.battery().increment(cur.xi) : 0;
      next.s = sample_slot(env_rng, env, cur.s, use).next;
      next.xi = cur.xi + a;
      next.tau = cur.tau + 1;
      if (cur.tau == env.slots() - 1) {
        t.reward = static_cast<float>(z(cur.record, next.xi));
        epoch_end = true;
      }
    } else {
      for (int tau = 0; tau < env.slots(); ++tau)
        next.s = sample_slot(env_rng, env, next.s, tau == 0 ? env.battery().cost[a] : 0).next;
      t.reward = static_cast<float>(z(cur.record, a));
      epoch_end = true;
    }
    if (epoch_end) {
      ++epochs_done;
      next.xi = 0;
      next.tau = 0;
      next.record = pick(inst_rng);
      if (epochs_done % config.reset_epochs == 0) next.s.b = level(env_rng);
    }
    t.x_next.resize(enc.dim());
    encode(next, t.x_next.data());
    t.next_mask = mask_of(next);
    // Continuing task: epoch boundaries bootstrap.
    t.terminal = false;
    buffer.push(std::move(t));
    cur = next;

    const long ready = std::max<long>(config.learning_starts, config.batch_size);
    if (static_cast<long>(buffer.size()) >= ready && step % config.train_every == 0) {
      const Batch<float> batch = make_batch<float>(
          buffer, buffer.sample_indices(replay_rng, static_cast<std::size_t>(config.batch_size)));
      loss_sum += grad_step(net, target, opt, batch, gamma);
      ++loss_count;
      ++result.gradient_steps;
      if (result.gradient_steps % config.target_sync == 0) target = net;
    }

    if (config.eval_every > 0 && (step + 1) % config.eval_every == 0) {
      const DqnPolicy policy(env, config.mode, net);
      CurvePoint p;
      p.step = step + 1;
      p.accuracy = greedy_accuracy(policy, env, dataset, config.eval_epochs, eval_seed);
      p.loss = loss_count > 0 ? loss_sum / loss_count : 0.0;
      result.curve.push_back(p);
      loss_sum = 0.0;
      loss_count = 0;
    }
  }
  result.network = std::move(net);
  return result;
}

}  // namespace ehinfer
