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

// On-disk formats: JSON for configs and solver artifacts, JSON Lines for
// datasets, CSV for tables. Doubles are written with round-trip precision.

#include <json.hpp>

#include <cstdint>
#include <string>
#include <vector>

#include "ehinfer/confidence.hpp"
#include "ehinfer/dqn.hpp"
#include "ehinfer/env.hpp"
#include "ehinfer/eval.hpp"
#include "ehinfer/mdp.hpp"
#include "ehinfer/oracle.hpp"

namespace ehinfer {

using Json = nlohmann::json;

/// Raised for malformed or missing input files.
class InputError : public Error {
 public:
  using Error::Error;
};

Json read_json_file(const std::string& path);
/// Writes `j.dump(2)` plus a trailing newline.
void write_json_file(const std::string& path, const Json& j);
std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

/// Keys: states, transition, arrivals, b_max, cost, slots, discount,
/// arrival_conditioning ("current" or "next", optional).
HarvestEnvironment env_from_json(const Json& j);
Json env_to_json(const HarvestEnvironment& env);

SyntheticSpec synthetic_spec_from_json(const Json& j);
Json synthetic_spec_to_json(const SyntheticSpec& spec);
LogitSpec logit_spec_from_json(const Json& j);
TrainConfig train_config_from_json(const Json& j);
Json train_config_to_json(const TrainConfig& c);
SweepGrid sweep_grid_from_json(const Json& j);

/// One record per line: {"z":[...],"correct":[...],"logits":[...],"label":n}.
std::string dataset_to_jsonl(const ConfidenceDataset& ds);
/// |Y| is recovered from z^(0) = 1/|Y|.
ConfidenceDataset dataset_from_jsonl(const std::string& text);
void write_dataset(const std::string& path, const ConfidenceDataset& ds);
ConfidenceDataset read_dataset(const std::string& path);

/// Policy over (b, h) or (b, h, xi, tau) with the optimal value.
Json policy_to_json(const std::string& kind, const HarvestEnvironment& env, const PolicyTable& policy,
                    const Eigen::VectorXd& value);
PolicyTable policy_from_json(const Json& j, int expected_states);

Json oracle_to_json(const OracleSolution& sol, const HarvestEnvironment& env);
/// Rebuilds the solution from vbar; throws InputError on a fingerprint
/// mismatch with `env`.
OracleSolution oracle_from_json(const Json& j, const HarvestEnvironment& env);

Json checkpoint_to_json(const Mlp<float>& net, ControlMode mode);
Mlp<float> checkpoint_from_json(const Json& j, ControlMode* mode = nullptr);

std::string mode_name(ControlMode mode);
ControlMode parse_mode(const std::string& name);

/// `# fingerprint=<hex> seed=<n>` header row.
std::string csv_header_comment(std::uint64_t fingerprint, std::uint64_t seed);
std::string reliability_csv(const CalibrationReport& report);
std::string sweep_csv(const std::vector<SweepRow>& rows, int modes);
/// Columns b,h,k,eta.
std::string eta_csv(const HarvestEnvironment& env, const Eigen::MatrixXd& eta);

}  // namespace ehinfer
