#include "avsep/train/loss.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace avsep::train {

namespace {

Real sign(Real x) { return x > 0 ? Real(1) : x < 0 ? Real(-1) : Real(0); }

}  // namespace

SampleLoss magnitude_phase_loss(const model::NetworkOutput& pred, const SpectralTarget& gt) {
  const Eigen::Index T = gt.magnitude.rows(), F = gt.magnitude.cols();
  auto same = [&](const Mat& m, const char* what) {
    require_shape(m.rows() == T && m.cols() == F, std::string("loss: ") + what + " is " + std::to_string(m.rows()) +
                                                      "x" + std::to_string(m.cols()) + ", target is " +
                                                      std::to_string(T) + "x" + std::to_string(F));
  };
  same(pred.enhanced_magnitude, "predicted magnitude");
  same(pred.phase_cos, "predicted phase");
  same(pred.phase_sin, "predicted phase");
  same(gt.cos, "target phase");
  same(gt.sin, "target phase");
  require(T * F > 0, "loss: empty spectrogram");
  const Mat norm = gt.cos.cwiseAbs2() + gt.sin.cwiseAbs2();
  require((norm.array() - 1).abs().maxCoeff() <= 1e-6, "loss: target phase is not unit norm");

  const Real inv = Real(1) / static_cast<Real>(T * F);
  const Mat diff = pred.enhanced_magnitude - gt.magnitude;
  SampleLoss out;
  out.magnitude_l1 = static_cast<double>(diff.cwiseAbs().sum() * inv);
  const Mat inner = pred.phase_cos.cwiseProduct(gt.cos) + pred.phase_sin.cwiseProduct(gt.sin);
  out.phase_term = static_cast<double>(gt.magnitude.cwiseProduct(inner).sum() * inv);
  out.total = out.magnitude_l1 - out.phase_term;
  out.grad.d_magnitude = diff.unaryExpr(&sign) * inv;
  out.grad.d_cos = -gt.magnitude.cwiseProduct(gt.cos) * inv;
  out.grad.d_sin = -gt.magnitude.cwiseProduct(gt.sin) * inv;
  return out;
}

LossBreakdown batch_loss(const std::vector<model::NetworkOutput>& pred, const std::vector<SpectralTarget>& gt,
                         std::vector<model::OutputGrad>* grads) {
  require(!pred.empty(), "loss: empty batch");
  require_shape(pred.size() == gt.size(), "loss: prediction and target batch sizes differ");
  LossBreakdown b;
  if (grads) grads->clear();
  const double n = static_cast<double>(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    SampleLoss s = magnitude_phase_loss(pred[i], gt[i]);
    b.per_sample.push_back(s.total);
    b.total += s.total / n;
    b.magnitude_l1 += s.magnitude_l1 / n;
    b.phase_term += s.phase_term / n;
    if (grads) {
      const Real k = static_cast<Real>(1.0 / n);
      grads->push_back({s.grad.d_magnitude * k, s.grad.d_cos * k, s.grad.d_sin * k});
    }
  }
  return b;
}

double loss_minimum(const SpectralTarget& gt) { return -static_cast<double>(gt.magnitude.mean()); }

PitResult pit_loss(const std::vector<Mat>& pred, const std::vector<Mat>& gt) {
  require(pred.size() == gt.size(), "pit_loss: " + std::to_string(pred.size()) + " predictions for " +
                                        std::to_string(gt.size()) + " references");
  require(pred.size() >= 2 && pred.size() <= 3, "pit_loss: source count must be 2 or 3");
  const std::size_t n = gt.size();
  for (std::size_t i = 0; i < n; ++i)
    require_shape(pred[i].rows() == gt[0].rows() && pred[i].cols() == gt[0].cols() &&
                      gt[i].rows() == gt[0].rows() && gt[i].cols() == gt[0].cols(),
                  "pit_loss: all sources must share one shape");

  // pairwise[i][j] = mean |pred j - ref i|
  std::vector<std::vector<double>> pairwise(n, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) pairwise[i][j] = static_cast<double>((pred[j] - gt[i]).cwiseAbs().mean());

  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  PitResult best;
  best.loss = INFINITY;
  do {
    double l = 0;
    for (std::size_t i = 0; i < n; ++i) l += pairwise[i][static_cast<std::size_t>(perm[i])];
    l /= static_cast<double>(n);
    if (l < best.loss) {
      best.loss = l;
      best.permutation = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));

  const Real k = Real(1) / static_cast<Real>(static_cast<Eigen::Index>(n) * gt[0].size());
  best.grads.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = static_cast<std::size_t>(best.permutation[i]);
    best.grads[j] = (pred[j] - gt[i]).unaryExpr(&sign) * k;
  }
  return best;
}

}  // namespace avsep::train
