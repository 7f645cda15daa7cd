#include "avsep/nn/param.hpp"

#include <cmath>

namespace avsep::nn {

void init_uniform(Param& p, int fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max(fan_in, 1)));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = static_cast<Real>(dist(rng));
}

void ParamSet::append(const ParamSet& other) {
  params_.insert(params_.end(), other.params_.begin(), other.params_.end());
}

Eigen::Index ParamSet::total_size() const {
  Eigen::Index n = 0;
  for (const Param* p : params_) n += p->size();
  return n;
}

ParamSet ParamSet::trainable() const {
  ParamSet out;
  for (Param* p : params_)
    if (p->trainable) out.add(*p);
  return out;
}

void ParamSet::zero_grad() {
  for (Param* p : params_) p->zero_grad();
}

std::vector<double> ParamSet::flat_values() const {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(total_size()));
  for (const Param* p : params_)
    for (Eigen::Index i = 0; i < p->size(); ++i) out.push_back(p->value.data()[i]);
  return out;
}

std::vector<double> ParamSet::flat_grads() const {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(total_size()));
  for (const Param* p : params_) {
    if (p->grad.size() != p->value.size()) {
      out.insert(out.end(), static_cast<std::size_t>(p->size()), 0.0);
      continue;
    }
    for (Eigen::Index i = 0; i < p->size(); ++i) out.push_back(p->grad.data()[i]);
  }
  return out;
}

void ParamSet::assign(std::span<const double> flat) {
  require(static_cast<Eigen::Index>(flat.size()) == total_size(), "ParamSet::assign: size mismatch");
  std::size_t k = 0;
  for (Param* p : params_)
    for (Eigen::Index i = 0; i < p->size(); ++i) p->value.data()[i] = static_cast<Real>(flat[k++]);
}

double ParamSet::grad_norm() const {
  double acc = 0.0;
  for (const Param* p : params_)
    if (p->grad.size() == p->value.size()) acc += static_cast<double>(p->grad.squaredNorm());
  return std::sqrt(acc);
}

Param* ParamSet::find(const std::string& name) const {
  for (Param* p : params_)
    if (p->name == name) return p;
  return nullptr;
}

void check_finite(const Mat& m, const std::string& layer) {
  if (!m.allFinite()) throw NonFinite("non-finite activation in layer " + layer);
}

void check_finite(const Batch& b, const std::string& layer) {
  for (const Mat& m : b) check_finite(m, layer);
}

}  // namespace avsep::nn
