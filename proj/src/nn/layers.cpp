#include "avsep/nn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace avsep::nn {

namespace {

struct ShiftRange {
  Eigen::Index y0 = 0, x0 = 0, n = 0;
};

// Rows t of y pair with rows t + d of x wherever both exist.
ShiftRange shift_range(Eigen::Index ty, Eigen::Index tx, Eigen::Index d) {
  ShiftRange r;
  r.y0 = std::max<Eigen::Index>(0, -d);
  const Eigen::Index y1 = std::min<Eigen::Index>(ty, tx - d);
  r.n = std::max<Eigen::Index>(0, y1 - r.y0);
  r.x0 = r.y0 + d;
  return r;
}

// y(t) += x(t + d) * w
template <typename W>
void shift_gemm(Mat& y, const Mat& x, const W& w, Eigen::Index d) {
  const auto r = shift_range(y.rows(), x.rows(), d);
  if (r.n > 0) y.middleRows(r.y0, r.n).noalias() += x.middleRows(r.x0, r.n) * w;
}

// Backward of shift_gemm: dx(t + d) += dy(t) * w^T ; dw += x(t + d)^T dy(t)
template <typename W, typename DW>
void shift_gemm_backward(const Mat& dy, const Mat& x, const W& w, Eigen::Index d, Mat& dx, DW&& dw) {
  const auto r = shift_range(dy.rows(), x.rows(), d);
  if (r.n <= 0) return;
  dx.middleRows(r.x0, r.n).noalias() += dy.middleRows(r.y0, r.n) * w.transpose();
  dw.noalias() += x.middleRows(r.x0, r.n).transpose() * dy.middleRows(r.y0, r.n);
}

Mat circular_pad(const Mat& x, int pad) {
  const Eigen::Index t = x.rows();
  Mat out(t + 2 * pad, x.cols());
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    Eigen::Index src = ((i - pad) % t + t) % t;
    out.row(i) = x.row(src);
  }
  return out;
}

Mat circular_fold(const Mat& dpad, Eigen::Index t, int pad) {
  Mat dx = Mat::Zero(t, dpad.cols());
  for (Eigen::Index i = 0; i < dpad.rows(); ++i) {
    Eigen::Index src = ((i - pad) % t + t) % t;
    dx.row(src) += dpad.row(i);
  }
  return dx;
}

}  // namespace

// ---------------------------------------------------------------- Linear

Linear::Linear(const std::string& name, int in, int out, bool bias, Rng& rng)
    : weight_(name + ".weight", in, out), bias_(name + ".bias", 1, bias ? out : 0), has_bias_(bias) {
  init_uniform(weight_, in, rng);
}

Batch Linear::forward(const Batch& x, Mode) {
  x_ = x;
  Batch y;
  y.reserve(x.size());
  for (const Mat& xi : x) {
    require_shape(xi.cols() == weight_.value.rows(), "Linear " + weight_.name + ": expected " +
                                                         std::to_string(weight_.value.rows()) + " input channels, got " +
                                                         std::to_string(xi.cols()));
    Mat yi = xi * weight_.value;
    if (has_bias_) yi.rowwise() += bias_.value.row(0);
    y.push_back(std::move(yi));
  }
  return y;
}

Batch Linear::backward(const Batch& dy) {
  Batch dx;
  dx.reserve(dy.size());
  for (std::size_t i = 0; i < dy.size(); ++i) {
    weight_.grad.noalias() += x_[i].transpose() * dy[i];
    if (has_bias_) bias_.grad += dy[i].colwise().sum();
    dx.push_back(dy[i] * weight_.value.transpose());
  }
  return dx;
}

void Linear::collect(ParamSet& ps) {
  ps.add(weight_);
  if (has_bias_) ps.add(bias_);
}

// ------------------------------------------------------- DepthwiseConv1d

DepthwiseConv1d::DepthwiseConv1d(const std::string& name, int channels, int kernel, int padding, Rng& rng)
    : weight_(name + ".weight", kernel, channels), kernel_(kernel), padding_(padding) {
  init_uniform(weight_, kernel, rng);
}

Batch DepthwiseConv1d::forward(const Batch& x, Mode) {
  x_ = x;
  Batch y;
  y.reserve(x.size());
  for (const Mat& xi : x) {
    require_shape(xi.cols() == weight_.value.cols(), "DepthwiseConv1d " + weight_.name + ": channel mismatch");
    const Eigen::Index ty = output_length(xi.rows());
    require_shape(ty > 0, "DepthwiseConv1d " + weight_.name + ": input too short");
    Mat yi = Mat::Zero(ty, xi.cols());
    for (int k = 0; k < kernel_; ++k) {
      const auto r = shift_range(ty, xi.rows(), k - padding_);
      if (r.n > 0)
        yi.middleRows(r.y0, r.n).array() +=
            xi.middleRows(r.x0, r.n).array().rowwise() * weight_.value.row(k).array();
    }
    y.push_back(std::move(yi));
  }
  return y;
}

Batch DepthwiseConv1d::backward(const Batch& dy) {
  Batch dx;
  dx.reserve(dy.size());
  for (std::size_t i = 0; i < dy.size(); ++i) {
    const Mat& xi = x_[i];
    Mat dxi = Mat::Zero(xi.rows(), xi.cols());
    for (int k = 0; k < kernel_; ++k) {
      const auto r = shift_range(dy[i].rows(), xi.rows(), k - padding_);
      if (r.n <= 0) continue;
      dxi.middleRows(r.x0, r.n).array() +=
          dy[i].middleRows(r.y0, r.n).array().rowwise() * weight_.value.row(k).array();
      weight_.grad.row(k) +=
          (xi.middleRows(r.x0, r.n).array() * dy[i].middleRows(r.y0, r.n).array()).colwise().sum().matrix();
    }
    dx.push_back(std::move(dxi));
  }
  return dx;
}

void DepthwiseConv1d::collect(ParamSet& ps) { ps.add(weight_); }

// ---------------------------------------------------------------- Conv1d

Conv1d::Conv1d(const std::string& name, int in, int out, int kernel, int padding, bool bias, Rng& rng,
               PadMode pad_mode)
    : weight_(name + ".weight", kernel * in, out),
      bias_(name + ".bias", 1, bias ? out : 0),
      in_(in),
      kernel_(kernel),
      padding_(padding),
      has_bias_(bias),
      pad_mode_(pad_mode) {
  init_uniform(weight_, kernel * in, rng);
}

Batch Conv1d::forward(const Batch& x, Mode) {
  x_.clear();
  x_.reserve(x.size());
  Batch y;
  y.reserve(x.size());
  for (const Mat& xi : x) {
    require_shape(xi.cols() == in_, "Conv1d " + weight_.name + ": expected " + std::to_string(in_) +
                                        " input channels, got " + std::to_string(xi.cols()));
    require_shape(xi.rows() > 0, "Conv1d " + weight_.name + ": empty input");
    // circular mode convolves a wrapped copy with no further padding
    Mat src = pad_mode_ == PadMode::Circular ? circular_pad(xi, padding_) : xi;
    const int pad = pad_mode_ == PadMode::Circular ? 0 : padding_;
    const Eigen::Index ty = src.rows() + 2 * pad - kernel_ + 1;
    require_shape(ty > 0, "Conv1d " + weight_.name + ": input too short");
    Mat yi = Mat::Zero(ty, weight_.value.cols());
    for (int k = 0; k < kernel_; ++k) shift_gemm(yi, src, weight_.value.middleRows(k * in_, in_), k - pad);
    if (has_bias_) yi.rowwise() += bias_.value.row(0);
    y.push_back(std::move(yi));
    x_.push_back(std::move(src));
  }
  return y;
}

Batch Conv1d::backward(const Batch& dy) {
  Batch dx;
  dx.reserve(dy.size());
  const int pad = pad_mode_ == PadMode::Circular ? 0 : padding_;
  for (std::size_t i = 0; i < dy.size(); ++i) {
    const Mat& src = x_[i];
    Mat dsrc = Mat::Zero(src.rows(), src.cols());
    for (int k = 0; k < kernel_; ++k)
      shift_gemm_backward(dy[i], src, weight_.value.middleRows(k * in_, in_), k - pad, dsrc,
                          weight_.grad.middleRows(k * in_, in_));
    if (has_bias_) bias_.grad += dy[i].colwise().sum();
    if (pad_mode_ == PadMode::Circular)
      dx.push_back(circular_fold(dsrc, src.rows() - 2 * padding_, padding_));
    else
      dx.push_back(std::move(dsrc));
  }
  return dx;
}

void Conv1d::collect(ParamSet& ps) {
  ps.add(weight_);
  if (has_bias_) ps.add(bias_);
}

// ------------------------------------------------------- ConvTranspose1d

ConvTranspose1d::ConvTranspose1d(const std::string& name, int in, int out, int kernel, int padding, Rng& rng)
    : weight_(name + ".weight", kernel * in, out), in_(in), kernel_(kernel), padding_(padding) {
  // only about half the taps see a non-stuffed sample
  init_uniform(weight_, std::max(1, (kernel * in) / 2), rng);
}

// Output row 2j + parity reads stuffed row 2j + parity + k - P, which is
// real only when parity + k - P is even; it then holds x(j + (parity + k - P) / 2).
Batch ConvTranspose1d::forward(const Batch& x, Mode) {
  x_ = x;
  Batch y;
  y.reserve(x.size());
  const Eigen::Index out = weight_.value.cols();
  for (const Mat& xi : x) {
    require_shape(xi.cols() == in_, "ConvTranspose1d " + weight_.name + ": channel mismatch");
    require_shape(xi.rows() > 0, "ConvTranspose1d " + weight_.name + ": empty input");
    const Eigen::Index t = xi.rows();
    Mat half[2] = {Mat::Zero(t, out), Mat::Zero(t, out)};
    for (int parity = 0; parity < 2; ++parity)
      for (int k = 0; k < kernel_; ++k) {
        const int off = parity + k - padding_;
        if (((off % 2) + 2) % 2 != 0) continue;
        shift_gemm(half[parity], xi, weight_.value.middleRows(k * in_, in_), off / 2);
      }
    Mat yi(2 * t, out);
    for (Eigen::Index j = 0; j < t; ++j) {
      yi.row(2 * j) = half[0].row(j);
      yi.row(2 * j + 1) = half[1].row(j);
    }
    y.push_back(std::move(yi));
  }
  return y;
}

Batch ConvTranspose1d::backward(const Batch& dy) {
  Batch dx;
  dx.reserve(dy.size());
  for (std::size_t i = 0; i < dy.size(); ++i) {
    const Mat& xi = x_[i];
    const Eigen::Index t = xi.rows();
    Mat half[2] = {Mat(t, dy[i].cols()), Mat(t, dy[i].cols())};
    for (Eigen::Index j = 0; j < t; ++j) {
      half[0].row(j) = dy[i].row(2 * j);
      half[1].row(j) = dy[i].row(2 * j + 1);
    }
    Mat dxi = Mat::Zero(t, in_);
    for (int parity = 0; parity < 2; ++parity)
      for (int k = 0; k < kernel_; ++k) {
        const int off = parity + k - padding_;
        if (((off % 2) + 2) % 2 != 0) continue;
        shift_gemm_backward(half[parity], xi, weight_.value.middleRows(k * in_, in_), off / 2, dxi,
                            weight_.grad.middleRows(k * in_, in_));
      }
    dx.push_back(std::move(dxi));
  }
  return dx;
}

void ConvTranspose1d::collect(ParamSet& ps) { ps.add(weight_); }

// ----------------------------------------------------------- BatchNorm1d

BatchNorm1d::BatchNorm1d(const std::string& name, int channels, double momentum, double eps)
    : gamma_(name + ".gamma", 1, channels),
      beta_(name + ".beta", 1, channels),
      running_mean_(name + ".running_mean", 1, channels, false),
      running_var_(name + ".running_var", 1, channels, false),
      momentum_(momentum),
      eps_(eps) {
  gamma_.value.setOnes();
  running_var_.value.setOnes();
}

Batch BatchNorm1d::forward(const Batch& x, Mode mode) {
  last_mode_ = mode;
  const Eigen::Index c = gamma_.value.cols();
  for (const Mat& xi : x) require_shape(xi.cols() == c, "BatchNorm1d " + gamma_.name + ": channel mismatch");

  RowVec mean, var;
  if (mode == Mode::Train) {
    Eigen::Index n = 0;
    mean = RowVec::Zero(c);
    for (const Mat& xi : x) {
      mean += xi.colwise().sum();
      n += xi.rows();
    }
    require(n > 0, "BatchNorm1d: empty batch");
    mean /= static_cast<Real>(n);
    var = RowVec::Zero(c);
    for (const Mat& xi : x) var += (xi.rowwise() - mean).array().square().colwise().sum().matrix();
    var /= static_cast<Real>(n);
    const Real unbias = n > 1 ? static_cast<Real>(n) / static_cast<Real>(n - 1) : Real(1);
    running_mean_.value = momentum_ * running_mean_.value + (1 - momentum_) * mean;
    running_var_.value = momentum_ * running_var_.value + (1 - momentum_) * (var * unbias);
  } else {
    mean = running_mean_.value;
    var = running_var_.value;
  }
  inv_std_ = (var.array() + eps_).rsqrt().matrix();

  xhat_.clear();
  Batch y;
  y.reserve(x.size());
  for (const Mat& xi : x) {
    Mat xh = ((xi.rowwise() - mean).array().rowwise() * inv_std_.array()).matrix();
    Mat yi = (xh.array().rowwise() * gamma_.value.row(0).array()).matrix();
    yi.rowwise() += beta_.value.row(0);
    xhat_.push_back(std::move(xh));
    y.push_back(std::move(yi));
  }
  return y;
}

Batch BatchNorm1d::backward(const Batch& dy) {
  const Eigen::Index c = gamma_.value.cols();
  RowVec sum_dy = RowVec::Zero(c), sum_dy_xhat = RowVec::Zero(c);
  Eigen::Index n = 0;
  for (std::size_t i = 0; i < dy.size(); ++i) {
    sum_dy += dy[i].colwise().sum();
    sum_dy_xhat += (dy[i].array() * xhat_[i].array()).colwise().sum().matrix();
    n += dy[i].rows();
  }
  gamma_.grad += sum_dy_xhat;
  beta_.grad += sum_dy;

  const RowVec g_inv = (gamma_.value.array() * inv_std_.array()).matrix();
  Batch dx;
  dx.reserve(dy.size());
  for (std::size_t i = 0; i < dy.size(); ++i) {
    if (last_mode_ == Mode::Eval) {
      dx.push_back((dy[i].array().rowwise() * g_inv.array()).matrix());
      continue;
    }
    // dx = gamma/sigma * (dy - mean(dy) - xhat * mean(dy * xhat))
    const Real inv_n = Real(1) / static_cast<Real>(n);
    Mat centred = dy[i].rowwise() - sum_dy * inv_n;
    centred -= (xhat_[i].array().rowwise() * (sum_dy_xhat * inv_n).array()).matrix();
    dx.push_back((centred.array().rowwise() * g_inv.array()).matrix());
  }
  return dx;
}

void BatchNorm1d::collect(ParamSet& ps) {
  ps.add(gamma_);
  ps.add(beta_);
  ps.add(running_mean_);
  ps.add(running_var_);
}

// ----------------------------------------------------------- activations

Batch Relu::forward(const Batch& x, Mode) {
  y_.clear();
  for (const Mat& xi : x) y_.push_back(xi.cwiseMax(Real(0)));
  return y_;
}

Batch Relu::backward(const Batch& dy) {
  Batch dx;
  dx.reserve(dy.size());
  for (std::size_t i = 0; i < dy.size(); ++i)
    dx.push_back((y_[i].array() > Real(0)).select(dy[i], Real(0)));
  return dx;
}

Real sigmoid_open(Real x) {
  constexpr Real lo = std::numeric_limits<Real>::min();
  const Real hi = std::nextafter(Real(1), Real(0));
  Real s = x >= 0 ? Real(1) / (Real(1) + std::exp(-x)) : std::exp(x) / (Real(1) + std::exp(x));
  return std::clamp(s, lo, hi);
}

Batch Sigmoid::forward(const Batch& x, Mode) {
  y_.clear();
  for (const Mat& xi : x) y_.push_back(xi.unaryExpr([](Real v) { return sigmoid_open(v); }));
  return y_;
}

Batch Sigmoid::backward(const Batch& dy) {
  Batch dx;
  dx.reserve(dy.size());
  for (std::size_t i = 0; i < dy.size(); ++i)
    dx.push_back((dy[i].array() * y_[i].array() * (Real(1) - y_[i].array())).matrix());
  return dx;
}

// ------------------------------------------------------- SeparableConv1d

SeparableConv1d::SeparableConv1d(const std::string& name, int in, int out, int kernel, int padding, Rng& rng)
    : depthwise_(name + ".depthwise", in, kernel, padding, rng), pointwise_(name + ".pointwise", in, out, false, rng) {}

Batch SeparableConv1d::forward(const Batch& x, Mode mode) {
  return pointwise_.forward(depthwise_.forward(x, mode), mode);
}

Batch SeparableConv1d::backward(const Batch& dy) { return depthwise_.backward(pointwise_.backward(dy)); }

void SeparableConv1d::collect(ParamSet& ps) {
  depthwise_.collect(ps);
  pointwise_.collect(ps);
}

// -------------------------------------------------------------- upsample

Batch upsample_nearest(const Batch& x, int factor) {
  Batch y;
  y.reserve(x.size());
  for (const Mat& xi : x) {
    Mat yi(xi.rows() * factor, xi.cols());
    for (Eigen::Index t = 0; t < xi.rows(); ++t)
      for (int r = 0; r < factor; ++r) yi.row(t * factor + r) = xi.row(t);
    y.push_back(std::move(yi));
  }
  return y;
}

Batch upsample_nearest_backward(const Batch& dy, int factor) {
  Batch dx;
  dx.reserve(dy.size());
  for (const Mat& di : dy) {
    Mat dxi = Mat::Zero(di.rows() / factor, di.cols());
    for (Eigen::Index t = 0; t < dxi.rows(); ++t)
      for (int r = 0; r < factor; ++r) dxi.row(t) += di.row(t * factor + r);
    dx.push_back(std::move(dxi));
  }
  return dx;
}

}  // namespace avsep::nn
