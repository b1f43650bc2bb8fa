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

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <vector>

#include "ehinfer/common.hpp"

namespace ehinfer {

/// One input instance: per-mode correctness likelihoods and correctness bits.
/// Exit 0 is the random predictor, so z[0] == 1 / n_classes.
struct ConfidenceRecord {
  std::vector<double> z;
  std::vector<std::uint8_t> correct;
  std::vector<std::vector<double>> logits;  // empty, or one vector per mode (mode 0 empty)
  std::optional<int> label;
};

/// Immutable set of records with a common mode count K. Confidences are kept
/// as an n x K matrix for the solvers.
class ConfidenceDataset {
 public:
  ConfidenceDataset(std::vector<ConfidenceRecord> records, int n_classes);

  int size() const { return static_cast<int>(records_.size()); }
  int modes() const { return static_cast<int>(z_.cols()); }
  int n_classes() const { return n_classes_; }
  double chance() const { return 1.0 / n_classes_; }
  bool has_logits() const { return has_logits_; }

  const Eigen::MatrixXd& z() const { return z_; }
  const ConfidenceRecord& record(int i) const { return records_[i]; }
  const std::vector<ConfidenceRecord>& records() const { return records_; }
  bool correct(int i, int k) const { return records_[i].correct[k] != 0; }

  /// Order-independent content hash.
  std::uint64_t fingerprint() const;

 private:
  std::vector<ConfidenceRecord> records_;
  Eigen::MatrixXd z_;
  int n_classes_;
  bool has_logits_ = false;
};

/// Calibrated synthetic generator. Exit k >= 1 draws z ~ Beta with mean
/// target_accuracy[k-1]; exits are coupled through a Gaussian copula with
/// pairwise latent correlation `difficulty_correlation`; correct ~ Bernoulli(z).
struct SyntheticSpec {
  std::vector<double> target_accuracy{0.53, 0.69, 0.83};
  std::vector<double> concentration{8.0, 8.0, 8.0};
  double difficulty_correlation = 0.6;
  int n_classes = 200;

  int modes() const { return static_cast<int>(target_accuracy.size()) + 1; }
  void validate() const;
};

ConfidenceDataset generate_synthetic(const SyntheticSpec& spec, int n, std::uint64_t seed);

/// Records carrying raw logits. A latent logit vector g ~ N(0, scale^2 I)
/// fixes the label distribution softmax(g); exit k observes
/// g + noise_k with noise std shrinking to 0 at the last exit, so the last
/// exit is calibrated at temperature 1 and earlier exits are overconfident.
struct LogitSpec {
  int modes = 2;
  int n_classes = 20;
  double logit_scale = 2.5;
  double shallow_noise = 1.0;
  /// Multiplies every emitted logit (1 = calibrated last exit).
  double sharpen = 1.0;
};

ConfidenceDataset generate_logit_dataset(const LogitSpec& spec, int n, std::uint64_t seed);

/// rho^(k): fraction of records correct at mode k.
double exit_accuracy(const ConfidenceDataset& ds, int k);
std::vector<double> exit_accuracies(const ConfidenceDataset& ds);
double mean_confidence(const ConfidenceDataset& ds, int k);

struct ReliabilityBin {
  double lower = 0.0;
  double upper = 0.0;
  double mean_confidence = 0.0;
  double accuracy = 0.0;
  long count = 0;
};

struct CalibrationReport {
  std::vector<ReliabilityBin> bins;
  double ece = 0.0;
  std::optional<double> temperature;
};

/// Reliability diagram pooled over modes 1..K-1 (or a single mode when
/// `mode` is given).
CalibrationReport reliability(const ConfidenceDataset& ds, int n_bins = 10,
                              std::optional<int> mode = std::nullopt);

struct TemperatureFit {
  double temperature = 1.0;
  double nll_unit = 0.0;  // at temperature 1
  double nll_fit = 0.0;
  ConfidenceDataset dataset;
};

/// Mean negative log-likelihood of the labels under softmax(logits / t),
/// pooled over modes 1..K-1.
double label_nll(const ConfidenceDataset& ds, double temperature);

/// Golden-section search for the temperature on [0.05, 20]. Throws
/// MissingLogits without logits and labels.
TemperatureFit temperature_scale(const ConfidenceDataset& ds, double lo = 0.05, double hi = 20.0);

/// z <- sigmoid(logit(z) / tau) for modes >= 1; correctness bits kept,
/// logits dropped. tau < 1 makes the model overconfident.
ConfidenceDataset distort_calibration(const ConfidenceDataset& ds, double tau);

}  // namespace ehinfer
