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

// Deep Q-learning for the incremental instance-aware controller and its
// one-shot oracle counterpart. Dense Eigen MLP, Adam, uniform replay and a
// lagged target network.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "ehinfer/confidence.hpp"
#include "ehinfer/env.hpp"

namespace ehinfer {

template <typename Scalar>
struct MlpGradients {
  std::vector<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>> weights;
  std::vector<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>> biases;
};

/// Fully connected network, ReLU on hidden layers, identity output. Inputs
/// are column-major batches: one column per sample.
template <typename Scalar>
class Mlp {
 public:
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  struct Cache {
    std::vector<Matrix> inputs;  // input to each layer
    std::vector<Matrix> pre;     // pre-activation of each layer
  };

  Mlp() = default;

  /// Zero-initialized network with the given layer widths.
  explicit Mlp(std::vector<int> widths) : widths_(std::move(widths)) {
    if (widths_.size() < 2) throw std::invalid_argument("Mlp: need at least two widths");
    for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
      w_.push_back(Matrix::Zero(widths_[l + 1], widths_[l]));
      b_.push_back(Vector::Zero(widths_[l + 1]));
    }
  }

  /// He-uniform hidden layers, Glorot-uniform output layer, zero biases.
  static Mlp random(std::vector<int> widths, Rng& rng) {
    Mlp net(std::move(widths));
    for (int l = 0; l < net.layers(); ++l) {
      const double fan_in = net.widths_[l];
      const double fan_out = net.widths_[l + 1];
      const double limit = l + 1 < net.layers() ? std::sqrt(6.0 / fan_in)
                                                : std::sqrt(6.0 / (fan_in + fan_out));
      for (Eigen::Index i = 0; i < net.w_[l].size(); ++i) {
        const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
        net.w_[l].data()[i] = static_cast<Scalar>((2.0 * u - 1.0) * limit);
      }
    }
    return net;
  }

  int layers() const { return static_cast<int>(w_.size()); }
  const std::vector<int>& widths() const { return widths_; }
  int input_dim() const { return widths_.front(); }
  int output_dim() const { return widths_.back(); }

  Matrix& weight(int l) { return w_[l]; }
  const Matrix& weight(int l) const { return w_[l]; }
  Vector& bias(int l) { return b_[l]; }
  const Vector& bias(int l) const { return b_[l]; }

  long parameter_count() const {
    long n = 0;
    for (int l = 0; l < layers(); ++l) n += w_[l].size() + b_[l].size();
    return n;
  }

  /// Multiply-accumulates of one single-sample forward pass.
  long macs() const {
    long n = 0;
    for (int l = 0; l < layers(); ++l) n += w_[l].size();
    return n;
  }

  Matrix forward(const Matrix& x) const {
    check_input(x);
    Matrix a = x;
    for (int l = 0; l < layers(); ++l) {
      Matrix z = (w_[l] * a).colwise() + b_[l];
      if (l + 1 < layers()) z = z.cwiseMax(Scalar(0));
      a = std::move(z);
    }
    return a;
  }

  Matrix forward(const Matrix& x, Cache& cache) const {
    check_input(x);
    cache.inputs.assign(layers(), Matrix());
    cache.pre.assign(layers(), Matrix());
    Matrix a = x;
    for (int l = 0; l < layers(); ++l) {
      cache.inputs[l] = a;
      cache.pre[l] = (w_[l] * a).colwise() + b_[l];
      a = l + 1 < layers() ? Matrix(cache.pre[l].cwiseMax(Scalar(0))) : cache.pre[l];
    }
    return a;
  }

  /// Gradients of sum(grad_out .* output) with respect to every parameter.
  MlpGradients<Scalar> backward(const Cache& cache, const Matrix& grad_out) const {
    MlpGradients<Scalar> g;
    g.weights.resize(layers());
    g.biases.resize(layers());
    Matrix delta = grad_out;
    for (int l = layers() - 1; l >= 0; --l) {
      g.weights[l] = delta * cache.inputs[l].transpose();
      g.biases[l] = delta.rowwise().sum();
      if (l > 0) {
        Matrix back = w_[l].transpose() * delta;
        delta = back.cwiseProduct(
            (cache.pre[l - 1].array() > Scalar(0)).template cast<Scalar>().matrix());
      }
    }
    return g;
  }

  template <typename Other>
  Mlp<Other> cast() const {
    Mlp<Other> out(widths_);
    for (int l = 0; l < layers(); ++l) {
      out.weight(l) = w_[l].template cast<Other>();
      out.bias(l) = b_[l].template cast<Other>();
    }
    return out;
  }

  /// Parameters flattened layer by layer (weights column-major, then bias).
  std::vector<Scalar> flatten() const {
    std::vector<Scalar> p;
    p.reserve(parameter_count());
    for (int l = 0; l < layers(); ++l) {
      p.insert(p.end(), w_[l].data(), w_[l].data() + w_[l].size());
      p.insert(p.end(), b_[l].data(), b_[l].data() + b_[l].size());
    }
    return p;
  }

  void unflatten(const std::vector<Scalar>& p) {
    if (static_cast<long>(p.size()) != parameter_count())
      throw DimensionMismatch("Mlp::unflatten: wrong parameter count");
    std::size_t k = 0;
    for (int l = 0; l < layers(); ++l) {
      std::copy(p.begin() + k, p.begin() + k + w_[l].size(), w_[l].data());
      k += w_[l].size();
      std::copy(p.begin() + k, p.begin() + k + b_[l].size(), b_[l].data());
      k += b_[l].size();
    }
  }

 private:
  void check_input(const Matrix& x) const {
    if (x.rows() != input_dim())
      throw DimensionMismatch("Mlp::forward: expected input dimension " +
                              std::to_string(input_dim()) + ", got " + std::to_string(x.rows()));
  }

  std::vector<int> widths_;
  std::vector<Matrix> w_;
  std::vector<Vector> b_;
};

/// Adam with the usual constants (beta1 0.9, beta2 0.999, eps 1e-8).
template <typename Scalar>
class Adam {
 public:
  explicit Adam(const Mlp<Scalar>& net, double lr = 1e-4, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (int l = 0; l < net.layers(); ++l) {
      mw_.push_back(Mat::Zero(net.weight(l).rows(), net.weight(l).cols()));
      vw_.push_back(mw_.back());
      mb_.push_back(Vec::Zero(net.bias(l).size()));
      vb_.push_back(mb_.back());
    }
  }

  void step(Mlp<Scalar>& net, const MlpGradients<Scalar>& g) {
    ++t_;
    const Scalar c1 = static_cast<Scalar>(1.0 / (1.0 - std::pow(beta1_, t_)));
    const Scalar c2 = static_cast<Scalar>(1.0 / (1.0 - std::pow(beta2_, t_)));
    const Scalar b1 = static_cast<Scalar>(beta1_), b2 = static_cast<Scalar>(beta2_);
    const Scalar lr = static_cast<Scalar>(lr_), eps = static_cast<Scalar>(eps_);
    for (int l = 0; l < net.layers(); ++l) {
      update(net.weight(l), mw_[l], vw_[l], g.weights[l], b1, b2, c1, c2, lr, eps);
      update(net.bias(l), mb_[l], vb_[l], g.biases[l], b1, b2, c1, c2, lr, eps);
    }
  }

  long steps() const { return t_; }

 private:
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  template <typename P, typename S, typename G>
  static void update(P& p, S& m, S& v, const G& g, Scalar b1, Scalar b2, Scalar c1, Scalar c2,
                     Scalar lr, Scalar eps) {
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g.cwiseProduct(g);
    p.array() -= lr * (m.array() * c1) / ((v.array() * c2).sqrt() + eps);
  }

  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<Mat> mw_, vw_;
  std::vector<Vec> mb_, vb_;
};

/// Bit i set when action i is feasible.
using ActionMask = std::uint32_t;

inline int masked_argmax(const double* q, int n, ActionMask mask) {
  int best = -1;
  for (int a = 0; a < n; ++a) {
    if (!(mask >> a & 1u)) continue;
    if (best < 0 || q[a] > q[best]) best = a;
  }
  return best;
}

struct Transition {
  std::vector<float> x;
  int action = 0;
  float reward = 0.0f;
  std::vector<float> x_next;
  ActionMask next_mask = 1;
  bool terminal = false;
};

/// Fixed-capacity ring with uniform sampling.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);

  void push(Transition t);
  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  const Transition& at(std::size_t i) const { return items_[i]; }

  /// Indices drawn uniformly with replacement.
  std::vector<std::size_t> sample_indices(Rng& rng, std::size_t n) const;

 private:
  std::size_t capacity_;
  std::size_t next_ = 0;
  std::vector<Transition> items_;
};

/// Column-stacked minibatch.
template <typename Scalar>
struct Batch {
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> x, x_next;
  std::vector<int> action;
  std::vector<Scalar> reward;
  std::vector<ActionMask> next_mask;
  std::vector<std::uint8_t> terminal;

  int size() const { return static_cast<int>(action.size()); }
};

template <typename Scalar>
Batch<Scalar> make_batch(const ReplayBuffer& buffer, const std::vector<std::size_t>& idx) {
  Batch<Scalar> b;
  if (idx.empty()) throw EmptyDataset("make_batch: empty batch");
  const Eigen::Index d = static_cast<Eigen::Index>(buffer.at(idx[0]).x.size());
  const Eigen::Index n = static_cast<Eigen::Index>(idx.size());
  b.x.resize(d, n);
  b.x_next.resize(d, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const Transition& t = buffer.at(idx[j]);
    for (Eigen::Index i = 0; i < d; ++i) {
      b.x(i, j) = static_cast<Scalar>(t.x[i]);
      b.x_next(i, j) = static_cast<Scalar>(t.x_next[i]);
    }
    b.action.push_back(t.action);
    b.reward.push_back(static_cast<Scalar>(t.reward));
    b.next_mask.push_back(t.next_mask);
    b.terminal.push_back(t.terminal ? 1 : 0);
  }
  return b;
}

template <typename Scalar>
struct TdLoss {
  Scalar loss = 0;
  MlpGradients<Scalar> grad;
};

/// Mean squared TD error (r + gamma max_{a' feasible} q_target(x', a') -
/// q(x, a))^2 and its gradient; terminal transitions use target r.
template <typename Scalar>
TdLoss<Scalar> td_loss(const Mlp<Scalar>& net, const Mlp<Scalar>& target, const Batch<Scalar>& batch,
                       Scalar gamma) {
  using Matrix = typename Mlp<Scalar>::Matrix;
  const int n = batch.size();
  if (n == 0) throw EmptyDataset("td_loss: empty batch");
  const Matrix q_next = target.forward(batch.x_next);
  typename Mlp<Scalar>::Cache cache;
  const Matrix q = net.forward(batch.x, cache);
  Matrix grad = Matrix::Zero(q.rows(), q.cols());
  TdLoss<Scalar> out;
  for (int j = 0; j < n; ++j) {
    Scalar y = batch.reward[j];
    if (!batch.terminal[j]) {
      Scalar best = Scalar(0);
      bool any = false;
      for (Eigen::Index a = 0; a < q_next.rows(); ++a) {
        if (!(batch.next_mask[j] >> a & 1u)) continue;
        if (!any || q_next(a, j) > best) best = q_next(a, j);
        any = true;
      }
      y += gamma * best;
    }
    const Scalar err = q(batch.action[j], j) - y;
    out.loss += err * err;
    grad(batch.action[j], j) = Scalar(2) * err / Scalar(n);
  }
  out.loss /= Scalar(n);
  out.grad = net.backward(cache, grad);
  return out;
}

/// One Adam step on the TD loss; returns the loss before the update.
template <typename Scalar>
Scalar grad_step(Mlp<Scalar>& net, const Mlp<Scalar>& target, Adam<Scalar>& opt,
                 const Batch<Scalar>& batch, Scalar gamma) {
  TdLoss<Scalar> l = td_loss(net, target, batch, gamma);
  opt.step(net, l.grad);
  return l.loss;
}

enum class ControlMode {
  kIncremental,    // 2 sub-actions per slot, observes z^(xi)
  kOneShotOracle,  // K modes per epoch, observes z^(1..K-1)
};

/// Feature layout:
///   [b/b_max, onehot(b), onehot(h), xi/(K-1), tau/(T-1), z^(xi)]  incremental
///   [b/b_max, onehot(b), onehot(h), z^(1..K-1)]                  one-shot
class StateEncoder {
 public:
  StateEncoder(const HarvestEnvironment& env, ControlMode mode);

  ControlMode mode() const { return mode_; }
  int dim() const { return dim_; }
  int actions() const { return actions_; }

  void encode_incremental(int b, int h, int xi, int tau, double z, float* out) const;
  void encode_one_shot(int b, int h, const Eigen::Ref<const Eigen::RowVectorXd>& z,
                       float* out) const;

 private:
  ControlMode mode_;
  int b_max_, envs_, modes_, slots_;
  int dim_, actions_;
};

/// Feasible sub-actions at (b, xi): pause always, proceed per can_proceed.
ActionMask incremental_mask(const HarvestEnvironment& env, int b, int xi);
/// Feasible modes at battery level b.
ActionMask one_shot_mask(const HarvestEnvironment& env, int b);

struct TrainConfig {
  ControlMode mode = ControlMode::kIncremental;
  std::vector<int> hidden{64, 64};
  double learning_rate = 1e-4;
  int batch_size = 32;
  int buffer_capacity = 100'000;
  int target_sync = 1000;  // gradient steps
  double epsilon_start = 1.0;
  double epsilon_end = 0.05;
  long epsilon_decay_steps = 50'000;
  long total_steps = 300'000;
  long learning_starts = 1000;
  int train_every = 1;
  long eval_every = 10'000;  // 0 disables the learning curve
  int eval_epochs = 500;
  int reset_epochs = 500;  // training trajectory restarts at uniform b
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument on a nonpositive or out-of-range field.
  void validate() const;
  double epsilon_at(long step) const;
};

struct CurvePoint {
  long step = 0;
  double accuracy = 0.0;
  double loss = 0.0;
};

/// Greedy policy of a trained network.
class DqnPolicy {
 public:
  DqnPolicy(const HarvestEnvironment& env, ControlMode mode, Mlp<float> net);

  ControlMode mode() const { return encoder_.mode(); }
  const Mlp<float>& network() const { return net_; }
  const StateEncoder& encoder() const { return encoder_; }

  /// Incremental sub-action at (b, h, xi, tau) with the revealed z^(xi).
  int sub_action(int b, int h, int xi, int tau, double z) const;
  /// One-shot mode for (b, h) given the full confidence vector.
  int select_mode(EnvState s, const Eigen::Ref<const Eigen::RowVectorXd>& z) const;
  /// Masked argmax over an encoded state; ties go to the smaller index.
  int act(const float* x, ActionMask mask) const;

 private:
  HarvestEnvironment env_;
  StateEncoder encoder_;
  Mlp<float> net_;
};

struct TrainResult {
  Mlp<float> network;
  std::vector<CurvePoint> curve;
  long gradient_steps = 0;
};

/// Runs epsilon-greedy Q-learning against the sampled environment with
/// records drawn with replacement from `dataset`. Single-threaded and
/// reproducible bit for bit for a given config.
TrainResult train(const HarvestEnvironment& env, const ConfidenceDataset& dataset,
                  const TrainConfig& config);

/// Greedy accuracy over `epochs` epochs from b = 0 with a fixed seed.
double greedy_accuracy(const DqnPolicy& policy, const HarvestEnvironment& env,
                       const ConfidenceDataset& dataset, int epochs, std::uint64_t seed);

}  // namespace ehinfer
