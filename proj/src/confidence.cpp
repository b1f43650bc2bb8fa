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

#include "ehinfer/confidence.hpp"

#include <boost/math/distributions/beta.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <string>

namespace ehinfer {
namespace {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double unit_uniform(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

std::uint64_t bits_of(double v) {
  std::uint64_t u;
  std::memcpy(&u, &v, sizeof u);
  return u;
}

/// log-sum-exp of logits / t and the logit of `label`.
double log_softmax_at(const std::vector<double>& logits, int label, double t) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double l : logits) mx = std::max(mx, l / t);
  double s = 0.0;
  for (double l : logits) s += std::exp(l / t - mx);
  return logits[label] / t - mx - std::log(s);
}

double max_softmax(const std::vector<double>& logits, double t) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double l : logits) mx = std::max(mx, l / t);
  double s = 0.0;
  for (double l : logits) s += std::exp(l / t - mx);
  return 1.0 / s;
}

int argmax(const std::vector<double>& v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

ConfidenceDataset::ConfidenceDataset(std::vector<ConfidenceRecord> records, int n_classes)
    : records_(std::move(records)), n_classes_(n_classes) {
  if (records_.empty()) throw EmptyDataset("ConfidenceDataset: no records");
  if (n_classes_ < 2) throw std::invalid_argument("ConfidenceDataset: need at least 2 classes");
  const std::size_t k = records_.front().z.size();
  if (k < 2) throw std::invalid_argument("ConfidenceDataset: need at least 2 modes");
  const double chance = 1.0 / n_classes_;
  has_logits_ = true;
  z_.resize(static_cast<Eigen::Index>(records_.size()), static_cast<Eigen::Index>(k));
  for (std::size_t i = 0; i < records_.size(); ++i) {
    const ConfidenceRecord& r = records_[i];
    if (r.z.size() != k || r.correct.size() != k)
      throw std::invalid_argument("ConfidenceDataset: record " + std::to_string(i) +
                                  " has inconsistent length");
    if (r.z[0] != chance)
      throw std::invalid_argument("ConfidenceDataset: z[0] must equal 1/|Y|");
    for (std::size_t j = 0; j < k; ++j) {
      if (!(r.z[j] >= 0.0 && r.z[j] <= 1.0))
        throw std::invalid_argument("ConfidenceDataset: confidence outside [0,1]");
      if (r.correct[j] > 1) throw std::invalid_argument("ConfidenceDataset: correct bit not 0/1");
      z_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = r.z[j];
    }
    if (!r.logits.empty() && r.logits.size() != k)
      throw std::invalid_argument("ConfidenceDataset: logits need one entry per mode");
    if (r.logits.empty() || !r.label) has_logits_ = false;
  }
}

std::uint64_t ConfidenceDataset::fingerprint() const {
  std::uint64_t acc = static_cast<std::uint64_t>(n_classes_) * 0x9e3779b97f4a7c15ULL;
  for (const ConfidenceRecord& r : records_) {
    std::uint64_t h = 0;
    for (std::size_t j = 0; j < r.z.size(); ++j)
      h = mix_seed(h ^ bits_of(r.z[j]) ^ (static_cast<std::uint64_t>(r.correct[j]) << j));
    acc += mix_seed(h);
  }
  return mix_seed(acc);
}

void SyntheticSpec::validate() const {
  if (target_accuracy.empty()) throw std::invalid_argument("SyntheticSpec: no exits");
  if (concentration.size() != target_accuracy.size())
    throw std::invalid_argument("SyntheticSpec: one concentration per exit");
  for (std::size_t k = 0; k < target_accuracy.size(); ++k) {
    if (!(target_accuracy[k] > 0.0 && target_accuracy[k] < 1.0))
      throw std::invalid_argument("SyntheticSpec: accuracies must lie in (0,1)");
    if (k > 0 && target_accuracy[k] < target_accuracy[k - 1])
      throw std::invalid_argument("SyntheticSpec: accuracies must be nondecreasing");
    if (!(concentration[k] > 0.0)) throw std::invalid_argument("SyntheticSpec: concentration <= 0");
  }
  if (!(difficulty_correlation >= 0.0 && difficulty_correlation <= 1.0))
    throw std::invalid_argument("SyntheticSpec: correlation must lie in [0,1]");
  if (n_classes < 2) throw std::invalid_argument("SyntheticSpec: need at least 2 classes");
}

ConfidenceDataset generate_synthetic(const SyntheticSpec& spec, int n, std::uint64_t seed) {
  spec.validate();
  if (n <= 0) throw EmptyDataset("generate_synthetic: n must be positive");
  const int exits = static_cast<int>(spec.target_accuracy.size());
  std::vector<boost::math::beta_distribution<double>> marginals;
  for (int k = 0; k < exits; ++k) {
    const double m = spec.target_accuracy[k];
    const double c = spec.concentration[k];
    marginals.emplace_back(m * c, (1.0 - m) * c);
  }
  const double shared = std::sqrt(spec.difficulty_correlation);
  const double own = std::sqrt(1.0 - spec.difficulty_correlation);
  const double chance = 1.0 / spec.n_classes;

  Rng rng(seed);
  std::normal_distribution<double> gauss;
  std::vector<ConfidenceRecord> records(static_cast<std::size_t>(n));
  for (ConfidenceRecord& r : records) {
    r.z.resize(exits + 1);
    r.correct.resize(exits + 1);
    r.z[0] = chance;
    r.correct[0] = unit_uniform(rng) < chance ? 1 : 0;
    const double difficulty = gauss(rng);
    for (int k = 0; k < exits; ++k) {
      const double latent = shared * difficulty + own * gauss(rng);
      double u = normal_cdf(latent);
      u = std::clamp(u, 1e-15, 1.0 - 1e-15);
      const double z = boost::math::quantile(marginals[k], u);
      r.z[k + 1] = z;
      r.correct[k + 1] = unit_uniform(rng) < z ? 1 : 0;
    }
  }
  return ConfidenceDataset(std::move(records), spec.n_classes);
}

ConfidenceDataset generate_logit_dataset(const LogitSpec& spec, int n, std::uint64_t seed) {
  if (n <= 0) throw EmptyDataset("generate_logit_dataset: n must be positive");
  if (spec.modes < 2 || spec.n_classes < 2)
    throw std::invalid_argument("generate_logit_dataset: need >= 2 modes and classes");
  Rng rng(seed);
  std::normal_distribution<double> gauss;
  const int classes = spec.n_classes;
  const double chance = 1.0 / classes;
  std::vector<ConfidenceRecord> records(static_cast<std::size_t>(n));
  std::vector<double> g(classes), p(classes);
  for (ConfidenceRecord& r : records) {
    for (double& x : g) x = spec.logit_scale * gauss(rng);
    const double mx = *std::max_element(g.begin(), g.end());
    double s = 0.0;
    for (int c = 0; c < classes; ++c) s += (p[c] = std::exp(g[c] - mx));
    const double u = unit_uniform(rng) * s;
    double acc = 0.0;
    int label = classes - 1;
    for (int c = 0; c < classes; ++c) {
      acc += p[c];
      if (u < acc) {
        label = c;
        break;
      }
    }
    r.label = label;
    r.z.assign(spec.modes, chance);
    r.correct.assign(spec.modes, 0);
    r.logits.assign(spec.modes, {});
    r.correct[0] = unit_uniform(rng) < chance ? 1 : 0;
    for (int k = 1; k < spec.modes; ++k) {
      const double noise =
          spec.modes > 2 ? spec.shallow_noise * (spec.modes - 1 - k) / (spec.modes - 2) : 0.0;
      std::vector<double>& l = r.logits[k];
      l.resize(classes);
      for (int c = 0; c < classes; ++c) l[c] = spec.sharpen * (g[c] + noise * gauss(rng));
      r.z[k] = max_softmax(l, 1.0);
      r.correct[k] = argmax(l) == label ? 1 : 0;
    }
  }
  return ConfidenceDataset(std::move(records), classes);
}

double exit_accuracy(const ConfidenceDataset& ds, int k) {
  if (k < 0 || k >= ds.modes()) throw std::out_of_range("exit_accuracy: bad mode");
  long hits = 0;
  for (int i = 0; i < ds.size(); ++i) hits += ds.correct(i, k) ? 1 : 0;
  return static_cast<double>(hits) / ds.size();
}

std::vector<double> exit_accuracies(const ConfidenceDataset& ds) {
  std::vector<double> rho(ds.modes());
  for (int k = 0; k < ds.modes(); ++k) rho[k] = exit_accuracy(ds, k);
  return rho;
}

double mean_confidence(const ConfidenceDataset& ds, int k) { return ds.z().col(k).mean(); }

CalibrationReport reliability(const ConfidenceDataset& ds, int n_bins, std::optional<int> mode) {
  if (n_bins <= 0) throw std::invalid_argument("reliability: need at least one bin");
  CalibrationReport rep;
  rep.bins.resize(n_bins);
  std::vector<double> conf_sum(n_bins, 0.0), hit_sum(n_bins, 0.0);
  const int first = mode ? *mode : 1;
  const int last = mode ? *mode : ds.modes() - 1;
  long total = 0;
  for (int i = 0; i < ds.size(); ++i) {
    for (int k = first; k <= last; ++k) {
      const double z = ds.z()(i, k);
      const int b = std::min(static_cast<int>(z * n_bins), n_bins - 1);
      conf_sum[b] += z;
      hit_sum[b] += ds.correct(i, k) ? 1.0 : 0.0;
      ++rep.bins[b].count;
      ++total;
    }
  }
  for (int b = 0; b < n_bins; ++b) {
    ReliabilityBin& bin = rep.bins[b];
    bin.lower = static_cast<double>(b) / n_bins;
    bin.upper = static_cast<double>(b + 1) / n_bins;
    if (bin.count > 0) {
      bin.mean_confidence = conf_sum[b] / bin.count;
      bin.accuracy = hit_sum[b] / bin.count;
      rep.ece += static_cast<double>(bin.count) / total *
                 std::abs(bin.accuracy - bin.mean_confidence);
    }
  }
  return rep;
}

double label_nll(const ConfidenceDataset& ds, double temperature) {
  if (!ds.has_logits()) throw MissingLogits("label_nll: dataset has no logits/labels");
  double total = 0.0;
  long count = 0;
  for (const ConfidenceRecord& r : ds.records()) {
    for (int k = 1; k < ds.modes(); ++k) {
      total -= log_softmax_at(r.logits[k], *r.label, temperature);
      ++count;
    }
  }
  return total / count;
}

TemperatureFit temperature_scale(const ConfidenceDataset& ds, double lo, double hi) {
  if (!ds.has_logits()) throw MissingLogits("temperature_scale: dataset has no logits/labels");
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  double fc = label_nll(ds, c), fd = label_nll(ds, d);
  while (b - a > 1e-7) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = label_nll(ds, c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = label_nll(ds, d);
    }
  }
  const double t = 0.5 * (a + b);
  std::vector<ConfidenceRecord> records = ds.records();
  for (ConfidenceRecord& r : records)
    for (int k = 1; k < ds.modes(); ++k) r.z[k] = max_softmax(r.logits[k], t);
  TemperatureFit fit{t, label_nll(ds, 1.0), label_nll(ds, t),
                     ConfidenceDataset(std::move(records), ds.n_classes())};
  return fit;
}

ConfidenceDataset distort_calibration(const ConfidenceDataset& ds, double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("distort_calibration: tau must be positive");
  std::vector<ConfidenceRecord> records = ds.records();
  for (ConfidenceRecord& r : records) {
    r.logits.clear();
    if (tau == 1.0) continue;
    for (int k = 1; k < ds.modes(); ++k) {
      const double z = std::clamp(r.z[k], 1e-12, 1.0 - 1e-12);
      const double logit = std::log(z / (1.0 - z));
      r.z[k] = 1.0 / (1.0 + std::exp(-logit / tau));
    }
  }
  return ConfidenceDataset(std::move(records), ds.n_classes());
}

}  // namespace ehinfer
