#pragma once

#include <random>
#include <span>
#include <string>
#include <vector>

#include "avsep/matrix.hpp"

namespace avsep::nn {

using Rng = std::mt19937_64;

// A batch is a list of independent sequences (each T_i x C).
using Batch = std::vector<Mat>;

enum class Mode { Train, Eval };

struct Param {
  std::string name;
  Mat value;
  Mat grad;
  // Buffers (batch-norm running statistics) are serialised but never
  // touched by the optimiser.
  bool trainable = true;

  Param() = default;
  Param(std::string n, Eigen::Index rows, Eigen::Index cols, bool train = true)
      : name(std::move(n)), value(Mat::Zero(rows, cols)), grad(Mat::Zero(rows, cols)), trainable(train) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
  Eigen::Index size() const { return value.size(); }
};

// Fan-in scaled uniform: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
void init_uniform(Param& p, int fan_in, Rng& rng);

// Non-owning view over a model's parameters, in a fixed order.
class ParamSet {
public:
  ParamSet() = default;
  explicit ParamSet(std::vector<Param*> params) : params_(std::move(params)) {}

  void add(Param& p) { params_.push_back(&p); }
  void append(const ParamSet& other);
  const std::vector<Param*>& items() const { return params_; }
  std::size_t count() const { return params_.size(); }
  Eigen::Index total_size() const;

  ParamSet trainable() const;
  void zero_grad();
  std::vector<double> flat_values() const;
  std::vector<double> flat_grads() const;
  void assign(std::span<const double> flat);
  double grad_norm() const;
  Param* find(const std::string& name) const;

private:
  std::vector<Param*> params_;
};

void check_finite(const Batch& b, const std::string& layer);
void check_finite(const Mat& m, const std::string& layer);

}  // namespace avsep::nn
