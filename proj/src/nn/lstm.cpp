#include "avsep/nn/lstm.hpp"

#include <cmath>

namespace avsep::nn {

namespace {

Real logistic(Real v) { return v >= 0 ? Real(1) / (Real(1) + std::exp(-v)) : std::exp(v) / (Real(1) + std::exp(v)); }

Mat reversed_rows(const Mat& m) { return m.colwise().reverse(); }

}  // namespace

Lstm::Lstm(const std::string& name, int in, int hidden, Rng& rng)
    : wx_(name + ".wx", in, 4 * hidden), wh_(name + ".wh", hidden, 4 * hidden), b_(name + ".bias", 1, 4 * hidden),
      hidden_(hidden) {
  init_uniform(wx_, hidden, rng);
  init_uniform(wh_, hidden, rng);
}

Batch Lstm::forward(const Batch& x, bool reverse) {
  reverse_ = reverse;
  traces_.clear();
  traces_.reserve(x.size());
  const Eigen::Index H = hidden_;
  Batch out;
  out.reserve(x.size());
  for (const Mat& xin : x) {
    require_shape(xin.cols() == wx_.value.rows(), "Lstm " + wx_.name + ": input width mismatch");
    require(xin.rows() > 0, "Lstm " + wx_.name + ": empty sequence");
    Trace tr;
    tr.x = reverse ? reversed_rows(xin) : xin;
    const Eigen::Index T = tr.x.rows();
    tr.gates = tr.x * wx_.value;
    tr.gates.rowwise() += b_.value.row(0);
    tr.cell.resize(T, H);
    tr.tanh_cell.resize(T, H);
    tr.hidden.resize(T, H);
    RowVec h_prev = RowVec::Zero(H), c_prev = RowVec::Zero(H);
    for (Eigen::Index t = 0; t < T; ++t) {
      RowVec a = tr.gates.row(t);
      a.noalias() += h_prev * wh_.value;
      for (Eigen::Index j = 0; j < H; ++j) {
        a(j) = logistic(a(j));
        a(H + j) = logistic(a(H + j));
        a(2 * H + j) = std::tanh(a(2 * H + j));
        a(3 * H + j) = logistic(a(3 * H + j));
      }
      tr.gates.row(t) = a;
      RowVec c = a.segment(H, H).cwiseProduct(c_prev) + a.segment(0, H).cwiseProduct(a.segment(2 * H, H));
      RowVec tc = c.array().tanh().matrix();
      RowVec h = a.segment(3 * H, H).cwiseProduct(tc);
      tr.cell.row(t) = c;
      tr.tanh_cell.row(t) = tc;
      tr.hidden.row(t) = h;
      h_prev = h;
      c_prev = c;
    }
    out.push_back(reverse ? reversed_rows(tr.hidden) : tr.hidden);
    traces_.push_back(std::move(tr));
  }
  return out;
}

Batch Lstm::backward(const Batch& dy) {
  const Eigen::Index H = hidden_;
  Batch dx;
  dx.reserve(dy.size());
  for (std::size_t s = 0; s < dy.size(); ++s) {
    const Trace& tr = traces_[s];
    const Mat dh_out = reverse_ ? reversed_rows(dy[s]) : dy[s];
    const Eigen::Index T = tr.x.rows();
    Mat da(T, 4 * H);
    RowVec dh_next = RowVec::Zero(H), dc_next = RowVec::Zero(H);
    for (Eigen::Index t = T - 1; t >= 0; --t) {
      const auto g = tr.gates.row(t);
      RowVec dh = dh_out.row(t) + dh_next;
      RowVec c_prev = t > 0 ? RowVec(tr.cell.row(t - 1)) : RowVec::Zero(H);
      RowVec tc = tr.tanh_cell.row(t);
      RowVec dc = dc_next + (dh.array() * g.segment(3 * H, H).array() * (Real(1) - tc.array().square())).matrix();
      for (Eigen::Index j = 0; j < H; ++j) {
        const Real i = g(j), f = g(H + j), gg = g(2 * H + j), o = g(3 * H + j);
        da(t, j) = dc(j) * gg * i * (1 - i);
        da(t, H + j) = dc(j) * c_prev(j) * f * (1 - f);
        da(t, 2 * H + j) = dc(j) * i * (1 - gg * gg);
        da(t, 3 * H + j) = dh(j) * tc(j) * o * (1 - o);
      }
      dc_next = dc.cwiseProduct(g.segment(H, H));
      dh_next.noalias() = da.row(t) * wh_.value.transpose();
    }
    if (T > 1) wh_.grad.noalias() += tr.hidden.topRows(T - 1).transpose() * da.bottomRows(T - 1);
    wx_.grad.noalias() += tr.x.transpose() * da;
    b_.grad += da.colwise().sum();
    Mat dxi = da * wx_.value.transpose();
    dx.push_back(reverse_ ? reversed_rows(dxi) : dxi);
  }
  return dx;
}

void Lstm::collect(ParamSet& ps) {
  ps.add(wx_);
  ps.add(wh_);
  ps.add(b_);
}

Blstm::Blstm(const std::string& name, int in, int hidden, Rng& rng)
    : fwd_(name + ".fwd", in, hidden, rng), bwd_(name + ".bwd", in, hidden, rng) {}

Batch Blstm::forward(const Batch& x, Mode) {
  Batch f = fwd_.forward(x, false);
  Batch b = bwd_.forward(x, true);
  Batch out;
  out.reserve(x.size());
  const Eigen::Index H = fwd_.hidden();
  for (std::size_t i = 0; i < x.size(); ++i) {
    Mat o(f[i].rows(), 2 * H);
    o.leftCols(H) = f[i];
    o.rightCols(H) = b[i];
    out.push_back(std::move(o));
  }
  return out;
}

Batch Blstm::backward(const Batch& dy) {
  const Eigen::Index H = fwd_.hidden();
  Batch df, db;
  df.reserve(dy.size());
  db.reserve(dy.size());
  for (const Mat& d : dy) {
    df.push_back(d.leftCols(H));
    db.push_back(d.rightCols(H));
  }
  Batch dx = fwd_.backward(df);
  Batch dxb = bwd_.backward(db);
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dxb[i];
  return dx;
}

void Blstm::collect(ParamSet& ps) {
  fwd_.collect(ps);
  bwd_.collect(ps);
}

}  // namespace avsep::nn
