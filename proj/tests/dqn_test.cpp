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


#include <doctest.h>

#include <cmath>
#include <map>

#include "ehinfer/dqn.hpp"
#include "ehinfer/mdp.hpp"
#include "toy_mdp.hpp"

using namespace ehinfer;

namespace {

HarvestEnvironment reference_env(int b_max) {
  return two_state_environment(0.9, 0.5, 0.8, 0.0, b_max, {0, 1, 2, 3}, 3, 0.9);
}

double numeric_rel_error(Mlp<double> net, const Eigen::MatrixXd& x, const Eigen::MatrixXd& w) {
  // Loss sum(w .* f(x)); gradient w.r.t. the output is w.
  Mlp<double>::Cache cache;
  net.forward(x, cache);
  const MlpGradients<double> g = net.backward(cache, w);
  std::vector<double> analytic;
  for (int l = 0; l < net.layers(); ++l) {
    analytic.insert(analytic.end(), g.weights[l].data(), g.weights[l].data() + g.weights[l].size());
    analytic.insert(analytic.end(), g.biases[l].data(), g.biases[l].data() + g.biases[l].size());
  }
  std::vector<double> p = net.flatten();
  double worst = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double keep = p[i], h = 1e-6;
    p[i] = keep + h;
    net.unflatten(p);
    const double up = (net.forward(x).array() * w.array()).sum();
    p[i] = keep - h;
    net.unflatten(p);
    const double down = (net.forward(x).array() * w.array()).sum();
    p[i] = keep;
    const double num = (up - down) / (2 * h);
    const double scale = std::max(std::abs(num), std::abs(analytic[i]));
    if (scale > 1e-8) worst = std::max(worst, std::abs(num - analytic[i]) / scale);
  }
  return worst;
}

}  // namespace

TEST_SUITE("dqn") {

TEST_CASE("zero network outputs zeros") {
  const Mlp<float> net({5, 4, 3});
  CHECK(net.forward(Eigen::MatrixXf::Random(5, 7)).cwiseAbs().maxCoeff() == 0.0f);
  CHECK(net.parameter_count() == 5 * 4 + 4 + 4 * 3 + 3);
  CHECK_THROWS_AS(net.forward(Eigen::MatrixXf::Zero(4, 1)), DimensionMismatch);
}

TEST_CASE("hand-computed forward pass") {
  Mlp<double> net({2, 2, 1});
  net.weight(0) << 1, -1, 2, 0.5;
  net.bias(0) << 0.0, -3.0;
  net.weight(1) << 2, 1;
  net.bias(1) << 0.5;
  Eigen::MatrixXd x(2, 1);
  x << 1.0, 2.0;
  // Hidden: relu(-1) = 0, relu(2 + 1 - 3) = 0 -> 0.5; second input flips it.
  CHECK(net.forward(x)(0, 0) == doctest::Approx(0.5));
  x << 2.0, 0.5;
  // Hidden: relu(1.5) = 1.5, relu(4.25 - 3) = 1.25 -> 3 + 1.25 + 0.5.
  CHECK(net.forward(x)(0, 0) == doctest::Approx(4.75));
}

TEST_CASE("gradients match central differences") {
  Rng rng(1);
  const Mlp<double> tiny = Mlp<double>::random({1, 1, 1}, rng);
  CHECK(tiny.parameter_count() == 4);
  Eigen::MatrixXd x1(1, 3);
  x1 << 0.3, -0.7, 1.1;
  Mlp<double> t = tiny;
  t.bias(0)(0) = 0.4;  // keep the hidden unit active for some inputs
  CHECK(numeric_rel_error(t, x1, Eigen::MatrixXd::Ones(1, 3)) < 1e-4);
  const Mlp<double> big = Mlp<double>::random({7, 16, 12, 4}, rng);
  CHECK(numeric_rel_error(big, Eigen::MatrixXd::Random(7, 5), Eigen::MatrixXd::Random(4, 5)) < 1e-4);
}

TEST_CASE("output is Lipschitz in the input") {
  Rng rng(2);
  const Mlp<double> net = Mlp<double>::random({6, 10, 10, 3}, rng);
  double bound = 1.0;
  for (int l = 0; l < net.layers(); ++l) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(net.weight(l));
    bound *= svd.singularValues()(0);
  }
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::MatrixXd x = Eigen::MatrixXd::Random(6, 1), d = 0.1 * Eigen::MatrixXd::Random(6, 1);
    CHECK((net.forward(x + d) - net.forward(x)).norm() <= bound * d.norm() + 1e-12);
  }
}

TEST_CASE("zero TD error leaves the weights unchanged") {
  Mlp<float> net({2, 3, 2});
  const Mlp<float> target = net;
  Adam<float> opt(net, 1e-3);
  ReplayBuffer buf(10);
  for (int i = 0; i < 4; ++i) buf.push({{0.1f * i, 1.0f}, i % 2, 0.0f, {1.0f, 0.0f}, 0b11u, false});
  const std::vector<float> before = net.flatten();
  const float loss = grad_step(net, target, opt, make_batch<float>(buf, {0, 1, 2, 3}), 0.9f);
  CHECK(loss == 0.0f);
  CHECK(net.flatten() == before);
}

TEST_CASE("repeated steps fit a single transition") {
  Rng rng(4);
  Mlp<double> net = Mlp<double>::random({3, 16, 2}, rng);
  Adam<double> opt(net, 1e-2);
  ReplayBuffer buf(1);
  buf.push({{0.5f, -0.2f, 1.0f}, 1, 0.7f, {0.0f, 0.0f, 0.0f}, 0b11u, true});
  const Batch<double> batch = make_batch<double>(buf, {0});
  const double first = td_loss(net, net, batch, 0.9).loss;
  for (int i = 0; i < 300; ++i) grad_step(net, net, opt, batch, 0.9);
  CHECK(td_loss(net, net, batch, 0.9).loss < 1e-4 * std::max(first, 1.0));
}

TEST_CASE("terminal transitions use the reward as target") {
  Mlp<double> net({1, 1});
  net.bias(0)(0) = 2.0;
  ReplayBuffer buf(2);
  buf.push({{0.0f}, 0, 1.0f, {0.0f}, 0b1u, true});
  const TdLoss<double> l = td_loss(net, net, make_batch<double>(buf, {0}), 0.5);
  CHECK(l.loss == doctest::Approx(1.0));
  buf.push({{0.0f}, 0, 1.0f, {0.0f}, 0b1u, false});
  // Bootstrapped: target 1 + 0.5 * 2 = 2, zero error.
  CHECK(td_loss(net, net, make_batch<double>(buf, {1}), 0.5).loss == doctest::Approx(0.0));
}

TEST_CASE("replay buffer is a bounded ring with uniform sampling") {
  ReplayBuffer buf(5);
  for (int i = 0; i < 12; ++i) buf.push({{static_cast<float>(i)}, 0, 0.0f, {0.0f}, 1u, false});
  CHECK(buf.size() == 5);
  float lowest = 100;
  for (std::size_t i = 0; i < buf.size(); ++i) lowest = std::min(lowest, buf.at(i).x[0]);
  CHECK(lowest == 7.0f);
  Rng rng(6);
  std::vector<double> count(5, 0.0);
  const int n = 50'000;
  for (std::size_t i : buf.sample_indices(rng, n)) count[i] += 1;
  double chi2 = 0.0;
  for (double c : count) chi2 += (c - n / 5.0) * (c - n / 5.0) / (n / 5.0);
  CHECK(chi2 < 18.47);  // 0.999 quantile, 4 degrees of freedom
}

TEST_CASE("exploration schedule") {
  TrainConfig c;
  CHECK(c.epsilon_at(0) == doctest::Approx(1.0));
  CHECK(c.epsilon_at(25'000) == doctest::Approx(0.525));
  CHECK(c.epsilon_at(1'000'000) == doctest::Approx(0.05));
  c.epsilon_end = c.epsilon_start = 0.3;
  for (long s : {0L, 10L, 90'000L}) CHECK(c.epsilon_at(s) == doctest::Approx(0.3));
  TrainConfig bad;
  bad.batch_size = 0;
  CHECK_THROWS(bad.validate());
  bad = TrainConfig{};
  bad.epsilon_start = 1.5;
  CHECK_THROWS(bad.validate());
}

TEST_CASE("masks follow battery feasibility") {
  const HarvestEnvironment env = reference_env(5);
  CHECK(incremental_mask(env, 0, 0) == 0b01u);
  CHECK(incremental_mask(env, 1, 0) == 0b11u);
  CHECK(incremental_mask(env, 5, 3) == 0b01u);
  CHECK(one_shot_mask(env, 0) == 0b0001u);
  CHECK(one_shot_mask(env, 2) == 0b0111u);
  const double q[3] = {5.0, 9.0, 1.0};
  CHECK(masked_argmax(q, 3, 0b101u) == 0);
  const double tie[2] = {1.0, 1.0};
  CHECK(masked_argmax(tie, 2, 0b11u) == 0);
}

TEST_CASE("masked policy never proposes an infeasible action") {
  const HarvestEnvironment env = reference_env(4);
  Rng rng(9);
  Mlp<float> net = Mlp<float>::random({StateEncoder(env, ControlMode::kIncremental).dim(), 8, 2}, rng);
  // Strongly favour proceeding.
  net.bias(1) << -10.0f, 10.0f;
  const DqnPolicy p(env, ControlMode::kIncremental, net);
  for (int b = 0; b <= 4; ++b)
    for (int xi = 0; xi < 4; ++xi) {
      const int a = p.sub_action(b, 0, xi, 0, 0.5);
      CHECK((a == kPause || can_proceed(env, b, xi)));
    }
}

TEST_CASE("encoder layout and network size") {
  const HarvestEnvironment env = reference_env(30);
  const StateEncoder inc(env, ControlMode::kIncremental);
  CHECK(inc.dim() == 1 + 31 + 2 + 3);
  CHECK(inc.actions() == 2);
  std::vector<float> x(inc.dim());
  inc.encode_incremental(15, 1, 2, 1, 0.7, x.data());
  CHECK(x[0] == doctest::Approx(0.5));
  CHECK(x[1 + 15] == 1.0f);
  CHECK(x[1 + 31 + 1] == 1.0f);
  CHECK(x[inc.dim() - 3] == doctest::Approx(2.0 / 3.0));
  CHECK(x[inc.dim() - 2] == doctest::Approx(0.5));
  CHECK(x[inc.dim() - 1] == doctest::Approx(0.7));
  const Mlp<float> net({inc.dim(), 64, 64, 2});
  CHECK(std::abs(net.macs() - 6600) <= 660);
  const StateEncoder os(env, ControlMode::kOneShotOracle);
  CHECK(os.actions() == 4);
  CHECK(os.dim() == 1 + 31 + 2 + 3);
}

TEST_CASE("training is reproducible bit for bit") {
  const HarvestEnvironment env = reference_env(3);
  const ConfidenceDataset ds = generate_synthetic(SyntheticSpec{}, 500, 3);
  TrainConfig c;
  c.total_steps = 3000;
  c.learning_starts = 200;
  c.eval_every = 1000;
  c.eval_epochs = 50;
  c.seed = 17;
  const TrainResult a = train(env, ds, c), b = train(env, ds, c);
  CHECK(a.network.flatten() == b.network.flatten());
  CHECK(a.curve.size() == 3);
  CHECK(a.gradient_steps == 2801);
  c.seed = 18;
  CHECK(train(env, ds, c).network.flatten() != a.network.flatten());
  c.total_steps = 0;
  CHECK(train(env, ds, c).gradient_steps == 0);
}

TEST_CASE("greedy DQN is near optimal on the exact toy problem") {
  const testing::ToyProblem toy;
  CHECK(toy.dataset.size() == 1000);
  CHECK(toy.mdp.num_states() == toy.size());
  toy.mdp.validate();
  TrainConfig c;
  c.total_steps = 60'000;
  c.epsilon_decay_steps = 30'000;
  c.eval_every = 0;
  c.seed = 2;
  const DqnPolicy p(toy.env, ControlMode::kIncremental, train(toy.env, toy.dataset, c).network);
  const double opt = toy.start_value(policy_iteration(toy.mdp).value);
  const double got = toy.start_value(evaluate_policy(toy.mdp, toy.policy_of(p)));
  CHECK(got <= opt + 1e-9);
  CHECK(got >= 0.95 * opt);
}

}  // TEST_SUITE
