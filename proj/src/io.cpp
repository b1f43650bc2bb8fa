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

#include "ehinfer/io.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace ehinfer {
namespace {

template <typename T>
T get_or(const Json& j, const char* key, T fallback) {
  return j.contains(key) ? j.at(key).get<T>() : fallback;
}

Eigen::MatrixXd matrix_from_rows(const Json& rows, const char* what) {
  if (!rows.is_array() || rows.empty()) throw InputError(std::string(what) + ": expected rows");
  const std::size_t cols = rows[0].size();
  Eigen::MatrixXd m(rows.size(), cols);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != cols) throw InputError(std::string(what) + ": ragged rows");
    for (std::size_t j = 0; j < cols; ++j) m(i, j) = rows[i][j].get<double>();
  }
  return m;
}

Json rows_from_matrix(const Eigen::MatrixXd& m) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Json r = Json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write " + path);
  out << text;
  if (!out) throw InputError("write failed: " + path);
}

Json read_json_file(const std::string& path) {
  try {
    return Json::parse(read_text_file(path));
  } catch (const Json::exception& e) {
    throw InputError(path + ": " + e.what());
  }
}

void write_json_file(const std::string& path, const Json& j) { write_text_file(path, j.dump(2) + "\n"); }

HarvestEnvironment env_from_json(const Json& j) {
  try {
    std::vector<std::string> labels = j.at("states").get<std::vector<std::string>>();
    Eigen::MatrixXd p = matrix_from_rows(j.at("transition"), "transition");
    Eigen::MatrixXd pe = matrix_from_rows(j.at("arrivals"), "arrivals");
    BatteryConfig battery{j.at("b_max").get<int>(), j.at("cost").get<std::vector<int>>()};
    EpochConfig epoch{j.at("slots").get<int>(), j.at("discount").get<double>()};
    const std::string cond = get_or<std::string>(j, "arrival_conditioning", "current");
    if (cond != "current" && cond != "next")
      throw InputError("arrival_conditioning must be \"current\" or \"next\"");
    return HarvestEnvironment(HarvestChain(std::move(labels), std::move(p)), ArrivalModel(std::move(pe)),
                              std::move(battery), epoch,
                              cond == "next" ? ArrivalConditioning::kNext : ArrivalConditioning::kCurrent);
  } catch (const Json::exception& e) {
    throw InputError(std::string("environment: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw InputError(std::string("environment: ") + e.what());
  }
}

Json env_to_json(const HarvestEnvironment& env) {
  Json j;
  j["states"] = env.chain().labels();
  j["transition"] = rows_from_matrix(env.chain().transition());
  j["arrivals"] = rows_from_matrix(env.arrivals().pmf());
  j["b_max"] = env.b_max();
  j["cost"] = env.battery().cost;
  j["slots"] = env.slots();
  j["discount"] = env.epoch().discount;
  j["arrival_conditioning"] = env.conditioning() == ArrivalConditioning::kNext ? "next" : "current";
  return j;
}

SyntheticSpec synthetic_spec_from_json(const Json& j) {
  try {
    SyntheticSpec s;
    s.target_accuracy = get_or(j, "target_accuracy", s.target_accuracy);
    s.concentration = get_or(j, "concentration", std::vector<double>(s.target_accuracy.size(), 8.0));
    s.difficulty_correlation = get_or(j, "difficulty_correlation", s.difficulty_correlation);
    s.n_classes = get_or(j, "n_classes", s.n_classes);
    s.validate();
    return s;
  } catch (const Json::exception& e) {
    throw InputError(std::string("synthetic spec: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw InputError(std::string("synthetic spec: ") + e.what());
  }
}

Json synthetic_spec_to_json(const SyntheticSpec& spec) {
  return Json{{"target_accuracy", spec.target_accuracy},
              {"concentration", spec.concentration},
              {"difficulty_correlation", spec.difficulty_correlation},
              {"n_classes", spec.n_classes}};
}

LogitSpec logit_spec_from_json(const Json& j) {
  try {
    LogitSpec s;
    s.modes = get_or(j, "modes", s.modes);
    s.n_classes = get_or(j, "n_classes", s.n_classes);
    s.logit_scale = get_or(j, "logit_scale", s.logit_scale);
    s.shallow_noise = get_or(j, "shallow_noise", s.shallow_noise);
    s.sharpen = get_or(j, "sharpen", s.sharpen);
    return s;
  } catch (const Json::exception& e) {
    throw InputError(std::string("logit spec: ") + e.what());
  }
}

TrainConfig train_config_from_json(const Json& j) {
  try {
    TrainConfig c;
    if (j.contains("mode")) c.mode = parse_mode(j.at("mode").get<std::string>());
    c.hidden = get_or(j, "hidden", c.hidden);
    c.learning_rate = get_or(j, "learning_rate", c.learning_rate);
    c.batch_size = get_or(j, "batch_size", c.batch_size);
    c.buffer_capacity = get_or(j, "buffer_capacity", c.buffer_capacity);
    c.target_sync = get_or(j, "target_sync", c.target_sync);
    c.epsilon_start = get_or(j, "epsilon_start", c.epsilon_start);
    c.epsilon_end = get_or(j, "epsilon_end", c.epsilon_end);
    c.epsilon_decay_steps = get_or(j, "epsilon_decay_steps", c.epsilon_decay_steps);
    c.total_steps = get_or(j, "total_steps", c.total_steps);
    c.learning_starts = get_or(j, "learning_starts", c.learning_starts);
    c.train_every = get_or(j, "train_every", c.train_every);
    c.eval_every = get_or(j, "eval_every", c.eval_every);
    c.eval_epochs = get_or(j, "eval_epochs", c.eval_epochs);
    c.reset_epochs = get_or(j, "reset_epochs", c.reset_epochs);
    c.seed = get_or(j, "seed", c.seed);
    return c;
  } catch (const Json::exception& e) {
    throw InputError(std::string("train config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw InputError(std::string("train config: ") + e.what());
  }
}

Json train_config_to_json(const TrainConfig& c) {
  return Json{{"mode", mode_name(c.mode)},
              {"hidden", c.hidden},
              {"learning_rate", c.learning_rate},
              {"batch_size", c.batch_size},
              {"buffer_capacity", c.buffer_capacity},
              {"target_sync", c.target_sync},
              {"epsilon_start", c.epsilon_start},
              {"epsilon_end", c.epsilon_end},
              {"epsilon_decay_steps", c.epsilon_decay_steps},
              {"total_steps", c.total_steps},
              {"learning_starts", c.learning_starts},
              {"train_every", c.train_every},
              {"eval_every", c.eval_every},
              {"eval_epochs", c.eval_epochs},
              {"reset_epochs", c.reset_epochs},
              {"seed", c.seed}};
}

SweepGrid sweep_grid_from_json(const Json& j) {
  try {
    SweepGrid g;
    g.p_gg = get_or(j, "p_gg", g.p_gg);
    g.p_bb = get_or(j, "p_bb", g.p_bb);
    g.pe_good = get_or(j, "pe_good", g.pe_good);
    g.pe_bad = get_or(j, "pe_bad", g.pe_bad);
    g.b_max = get_or(j, "b_max", g.b_max);
    g.seeds = get_or(j, "seeds", g.seeds);
    g.cost = get_or(j, "cost", g.cost);
    g.slots = get_or(j, "slots", g.slots);
    g.discount = get_or(j, "discount", g.discount);
    g.episodes = get_or(j, "episodes", g.episodes);
    g.epochs = get_or(j, "epochs", g.epochs);
    g.validate();
    return g;
  } catch (const Json::exception& e) {
    throw InputError(std::string("sweep grid: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw InputError(std::string("sweep grid: ") + e.what());
  }
}

std::string dataset_to_jsonl(const ConfidenceDataset& ds) {
  std::string out;
  for (const ConfidenceRecord& r : ds.records()) {
    Json j;
    j["z"] = r.z;
    std::vector<int> c(r.correct.begin(), r.correct.end());
    j["correct"] = c;
    if (!r.logits.empty()) j["logits"] = r.logits;
    if (r.label) j["label"] = *r.label;
    out += j.dump();
    out += '\n';
  }
  return out;
}

ConfidenceDataset dataset_from_jsonl(const std::string& text) {
  std::vector<ConfidenceRecord> records;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  int n_classes = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const Json j = Json::parse(line);
      ConfidenceRecord r;
      r.z = j.at("z").get<std::vector<double>>();
      for (int c : j.at("correct").get<std::vector<int>>()) r.correct.push_back(c != 0 ? 1 : 0);
      if (j.contains("logits")) r.logits = j.at("logits").get<std::vector<std::vector<double>>>();
      if (j.contains("label")) r.label = j.at("label").get<int>();
      if (r.z.empty() || !(r.z[0] > 0.0)) throw InputError("z^(0) must be 1/|Y| > 0");
      if (n_classes == 0) n_classes = static_cast<int>(std::lround(1.0 / r.z[0]));
      records.push_back(std::move(r));
    } catch (const Json::exception& e) {
      throw InputError("dataset line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (records.empty()) throw EmptyDataset("dataset has no records");
  try {
    return ConfidenceDataset(std::move(records), n_classes);
  } catch (const std::invalid_argument& e) {
    throw InputError(std::string("dataset: ") + e.what());
  }
}

void write_dataset(const std::string& path, const ConfidenceDataset& ds) {
  write_text_file(path, dataset_to_jsonl(ds));
}

ConfidenceDataset read_dataset(const std::string& path) { return dataset_from_jsonl(read_text_file(path)); }

Json policy_to_json(const std::string& kind, const HarvestEnvironment& env, const PolicyTable& policy,
                    const Eigen::VectorXd& value) {
  Json j;
  j["kind"] = kind;
  j["env_fingerprint"] = hex64(fingerprint(env));
  Json states = Json::array();
  const bool inc = kind == "inc-iag";
  const IncrementalIndex idx(env);
  for (std::size_t i = 0; i < policy.action.size(); ++i) {
    Json s;
    if (inc) {
      const IncrementalIndex::State st = idx.state(static_cast<int>(i));
      s["b"] = st.b;
      s["h"] = st.h;
      s["xi"] = st.xi;
      s["tau"] = st.tau;
    } else {
      const EnvState st = env.state(static_cast<int>(i));
      s["b"] = st.b;
      s["h"] = st.h;
    }
    s["action"] = policy.action[i];
    s["value"] = value(static_cast<Eigen::Index>(i));
    states.push_back(std::move(s));
  }
  j["states"] = std::move(states);
  return j;
}

PolicyTable policy_from_json(const Json& j, int expected_states) {
  try {
    PolicyTable p;
    for (const Json& s : j.at("states")) p.action.push_back(s.at("action").get<int>());
    if (static_cast<int>(p.action.size()) != expected_states)
      throw InputError("policy has " + std::to_string(p.action.size()) + " states, expected " +
                       std::to_string(expected_states));
    return p;
  } catch (const Json::exception& e) {
    throw InputError(std::string("policy: ") + e.what());
  }
}

Json oracle_to_json(const OracleSolution& sol, const HarvestEnvironment& env) {
  Json j;
  j["kind"] = "oracle";
  j["discount"] = sol.discount;
  j["epsilon"] = sol.epsilon;
  j["iterations"] = sol.iterations;
  j["env_fingerprint"] = hex64(sol.env_fingerprint);
  j["dataset_fingerprint"] = hex64(sol.dataset_fingerprint);
  Json states = Json::array();
  for (int s = 0; s < env.num_states(); ++s) {
    const EnvState st = env.state(s);
    Json d = Json::array();
    for (Eigen::Index i = 0; i < sol.delta.cols(); ++i) {
      const double v = sol.delta(s, i);
      if (std::isfinite(v))
        d.push_back(v);
      else
        d.push_back(nullptr);
    }
    states.push_back(Json{{"b", st.b}, {"h", st.h}, {"v_bar", sol.v_bar(s)}, {"delta", d}});
  }
  j["states"] = std::move(states);
  return j;
}

OracleSolution oracle_from_json(const Json& j, const HarvestEnvironment& env) {
  try {
    if (j.at("env_fingerprint").get<std::string>() != hex64(fingerprint(env)))
      throw InputError("oracle solution was computed for a different environment");
    const Json& states = j.at("states");
    if (static_cast<int>(states.size()) != env.num_states())
      throw InputError("oracle solution has the wrong number of states");
    Eigen::VectorXd v(env.num_states());
    for (int s = 0; s < env.num_states(); ++s) v(s) = states[s].at("v_bar").get<double>();
    OracleSolution sol = oracle_from_values(env, std::move(v));
    sol.epsilon = j.at("epsilon").get<double>();
    sol.iterations = j.at("iterations").get<int>();
    sol.dataset_fingerprint = std::stoull(j.at("dataset_fingerprint").get<std::string>(), nullptr, 16);
    return sol;
  } catch (const Json::exception& e) {
    throw InputError(std::string("oracle solution: ") + e.what());
  }
}

std::string mode_name(ControlMode mode) {
  return mode == ControlMode::kIncremental ? "incremental" : "one-shot";
}

ControlMode parse_mode(const std::string& name) {
  if (name == "incremental") return ControlMode::kIncremental;
  if (name == "one-shot") return ControlMode::kOneShotOracle;
  throw std::invalid_argument("unknown control mode: " + name);
}

Json checkpoint_to_json(const Mlp<float>& net, ControlMode mode) {
  Json j;
  j["mode"] = mode_name(mode);
  j["widths"] = net.widths();
  Json layers = Json::array();
  for (int l = 0; l < net.layers(); ++l) {
    const Eigen::MatrixXf& w = net.weight(l);
    std::vector<float> row_major;
    row_major.reserve(w.size());
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) row_major.push_back(w(r, c));
    std::vector<float> bias(net.bias(l).data(), net.bias(l).data() + net.bias(l).size());
    layers.push_back(Json{{"rows", w.rows()}, {"cols", w.cols()}, {"weights", row_major}, {"bias", bias}});
  }
  j["layers"] = std::move(layers);
  return j;
}

Mlp<float> checkpoint_from_json(const Json& j, ControlMode* mode) {
  try {
    if (mode) *mode = parse_mode(j.at("mode").get<std::string>());
    Mlp<float> net(j.at("widths").get<std::vector<int>>());
    const Json& layers = j.at("layers");
    if (static_cast<int>(layers.size()) != net.layers()) throw InputError("checkpoint: layer count");
    for (int l = 0; l < net.layers(); ++l) {
      const std::vector<float> w = layers[l].at("weights").get<std::vector<float>>();
      const std::vector<float> b = layers[l].at("bias").get<std::vector<float>>();
      Eigen::MatrixXf& mw = net.weight(l);
      if (static_cast<Eigen::Index>(w.size()) != mw.size() || static_cast<Eigen::Index>(b.size()) != net.bias(l).size())
        throw InputError("checkpoint: layer " + std::to_string(l) + " has the wrong shape");
      for (Eigen::Index r = 0; r < mw.rows(); ++r)
        for (Eigen::Index c = 0; c < mw.cols(); ++c) mw(r, c) = w[r * mw.cols() + c];
      for (std::size_t i = 0; i < b.size(); ++i) net.bias(l)(i) = b[i];
    }
    return net;
  } catch (const Json::exception& e) {
    throw InputError(std::string("checkpoint: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw InputError(std::string("checkpoint: ") + e.what());
  }
}

std::string csv_header_comment(std::uint64_t fp, std::uint64_t seed) {
  return "# fingerprint=" + hex64(fp) + " seed=" + std::to_string(seed) + "\n";
}

std::string reliability_csv(const CalibrationReport& report) {
  std::string out = "lower,upper,mean_confidence,accuracy,count\n";
  for (const ReliabilityBin& b : report.bins)
    out += format_number(b.lower) + "," + format_number(b.upper) + "," + format_number(b.mean_confidence) +
           "," + format_number(b.accuracy) + "," + std::to_string(b.count) + "\n";
  return out;
}

std::string sweep_csv(const std::vector<SweepRow>& rows, int modes) {
  std::string out = "p_gg,p_bb,pe_good,pe_bad,b_max,mu,controller,seed,accuracy,ci_low,ci_high";
  for (int k = 0; k < modes; ++k) out += ",exit_hist_" + std::to_string(k);
  out += "\n";
  for (const SweepRow& r : rows) {
    out += format_number(r.cell.p_gg) + "," + format_number(r.cell.p_bb) + "," +
           format_number(r.cell.pe_good) + "," + format_number(r.cell.pe_bad) + "," +
           std::to_string(r.cell.b_max) + "," + format_number(r.cell.mu) + "," + r.controller + "," +
           std::to_string(r.seed) + "," + format_number(r.accuracy.mean) + "," +
           format_number(r.accuracy.low) + "," + format_number(r.accuracy.high);
    for (double f : r.exit_fraction) out += "," + format_number(f);
    out += "\n";
  }
  return out;
}

std::string eta_csv(const HarvestEnvironment& env, const Eigen::MatrixXd& eta) {
  std::string out = "b,h,k,eta\n";
  for (int s = 0; s < env.num_states(); ++s) {
    const EnvState st = env.state(s);
    for (Eigen::Index k = 0; k < eta.cols(); ++k)
      out += std::to_string(st.b) + "," + env.chain().labels()[st.h] + "," + std::to_string(k) + "," +
             format_number(eta(s, k)) + "\n";
  }
  return out;
}

}  // namespace ehinfer
