#pragma once

#include <vector>

#include "avsep/model/network.hpp"

namespace avsep::train {

// Ground truth for one sequence: clean magnitude and unit phase.
struct SpectralTarget {
  Mat magnitude;
  Mat cos;
  Mat sin;

  static SpectralTarget from(const dsp::Spectrogram& s) { return {s.magnitude, s.phase_cos, s.phase_sin}; }
};

// total = magnitude_l1 - phase_term. Both terms are means over the T x F
// cells; for a batch they are further averaged over sequences.
struct LossBreakdown {
  double total = 0.0;
  double magnitude_l1 = 0.0;
  double phase_term = 0.0;
  std::vector<double> per_sample;
};

struct SampleLoss {
  double total = 0.0;
  double magnitude_l1 = 0.0;
  double phase_term = 0.0;
  model::OutputGrad grad;  // d total / d prediction
};

// mean|M - M*| - mean(M* (cos cos* + sin sin*)).
SampleLoss magnitude_phase_loss(const model::NetworkOutput& pred, const SpectralTarget& gt);

// Per-sample losses averaged; gradients are scaled by 1 / batch size.
LossBreakdown batch_loss(const std::vector<model::NetworkOutput>& pred, const std::vector<SpectralTarget>& gt,
                         std::vector<model::OutputGrad>* grads);

// The value reached by a perfect prediction: -mean(M*).
double loss_minimum(const SpectralTarget& gt);

struct PitResult {
  double loss = 0.0;
  std::vector<int> permutation;  // reference i is matched with prediction permutation[i]
  std::vector<Mat> grads;        // d loss / d pred, in prediction order
};

// Minimum over all assignments of the mean per-source magnitude L1.
PitResult pit_loss(const std::vector<Mat>& pred, const std::vector<Mat>& gt);

}  // namespace avsep::train
