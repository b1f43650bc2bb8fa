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

#include <filesystem>

#include "ehinfer/io.hpp"

using namespace ehinfer;

namespace {

HarvestEnvironment reference_env(int b_max) {
  return two_state_environment(0.9, 0.5, 0.8, 0.0, b_max, {0, 1, 2, 3}, 3, 0.9);
}

}  // namespace

TEST_SUITE("io") {

TEST_CASE("environment round trip keeps the fingerprint") {
  const HarvestEnvironment env = reference_env(7);
  const HarvestEnvironment back = env_from_json(env_to_json(env));
  CHECK(fingerprint(back) == fingerprint(env));
  CHECK(back.conditioning() == ArrivalConditioning::kCurrent);
  Json j = env_to_json(env);
  j["arrival_conditioning"] = "next";
  CHECK(env_from_json(j).conditioning() == ArrivalConditioning::kNext);
  j.erase("b_max");
  CHECK_THROWS_AS(env_from_json(j), InputError);
}

TEST_CASE("dataset JSON Lines round trip is exact") {
  const ConfidenceDataset ds = generate_synthetic(SyntheticSpec{}, 300, 2);
  const ConfidenceDataset back = dataset_from_jsonl(dataset_to_jsonl(ds));
  CHECK(back.n_classes() == 200);
  CHECK(back.fingerprint() == ds.fingerprint());
  CHECK((back.z() - ds.z()).cwiseAbs().maxCoeff() == 0.0);
  LogitSpec spec;
  const ConfidenceDataset lg = generate_logit_dataset(spec, 50, 3);
  const ConfidenceDataset lb = dataset_from_jsonl(dataset_to_jsonl(lg));
  CHECK(lb.has_logits());
  CHECK(lb.record(7).logits == lg.record(7).logits);
  CHECK(lb.record(7).label == lg.record(7).label);
  CHECK_THROWS_AS(dataset_from_jsonl("{\"z\": [0.5]}\n"), InputError);
  CHECK_THROWS(dataset_from_jsonl(""));
}

TEST_CASE("policy and oracle round trips") {
  const HarvestEnvironment env = reference_env(5);
  const ConfidenceDataset ds = generate_synthetic(SyntheticSpec{}, 500, 4);
  const SolveResult pi = policy_iteration(build_mms_mdp(env, exit_accuracies(ds)));
  const Json pj = policy_to_json("mms", env, pi.policy, pi.value);
  CHECK(policy_from_json(pj, env.num_states()) == pi.policy);
  CHECK_THROWS_AS(policy_from_json(pj, env.num_states() + 1), InputError);

  const OracleSolution sol = solve_oracle(env, ds, 1e-9);
  const OracleSolution back = oracle_from_json(oracle_to_json(sol, env), env);
  CHECK((back.v_bar - sol.v_bar).cwiseAbs().maxCoeff() == 0.0);
  for (int s = 0; s < env.num_states(); ++s)
    for (int i = 0; i < 20; ++i) CHECK(region_of(ds.z().row(i).transpose(), s, back) == region_of(ds.z().row(i).transpose(), s, sol));
  CHECK_THROWS_AS(oracle_from_json(oracle_to_json(sol, env), reference_env(6)), InputError);
}

TEST_CASE("checkpoint round trip is exact") {
  Rng rng(5);
  const Mlp<float> net = Mlp<float>::random({4, 6, 2}, rng);
  ControlMode mode = ControlMode::kIncremental;
  const Mlp<float> back = checkpoint_from_json(checkpoint_to_json(net, ControlMode::kOneShotOracle), &mode);
  CHECK(back.flatten() == net.flatten());
  CHECK(mode == ControlMode::kOneShotOracle);
  CHECK(parse_mode(mode_name(ControlMode::kIncremental)) == ControlMode::kIncremental);
  CHECK_THROWS(parse_mode("sideways"));
}

TEST_CASE("train config parsing validates") {
  const TrainConfig c = train_config_from_json(Json{{"total_steps", 10}, {"mode", "one-shot"}});
  CHECK(c.total_steps == 10);
  CHECK(c.mode == ControlMode::kOneShotOracle);
  CHECK(train_config_from_json(train_config_to_json(c)).total_steps == 10);
  CHECK_THROWS(train_config_from_json(Json{{"batch_size", -1}}).validate());
}

TEST_CASE("CSV outputs carry the header and full precision") {
  const std::string h = csv_header_comment(0xabcULL, 9);
  CHECK(h.rfind("# fingerprint=", 0) == 0);
  CHECK(h.find("seed=9") != std::string::npos);
  const HarvestEnvironment env = reference_env(2);
  Eigen::MatrixXd eta = Eigen::MatrixXd::Zero(env.num_states(), env.modes());
  eta.col(0).setConstant(1.0 / 3.0);
  eta.col(1).setConstant(2.0 / 3.0);
  const std::string csv = eta_csv(env, eta);
  CHECK(csv.rfind("b,h,k,eta", 0) == 0);
  CHECK(csv.find("0.333333333333") != std::string::npos);
  CHECK(format_number(1.0 / 3.0).size() >= 11);
}

TEST_CASE("file helpers") {
  const std::filesystem::path p = std::filesystem::temp_directory_path() / "ehinfer_io_test.json";
  write_json_file(p.string(), Json{{"a", 1}});
  CHECK(read_json_file(p.string())["a"] == 1);
  std::filesystem::remove(p);
  CHECK_THROWS_AS(read_json_file(p.string()), InputError);
}

}  // TEST_SUITE
