#pragma once

#include <string>

#include "avsep/nn/param.hpp"

namespace avsep::nn {

// Single-direction LSTM, gate order [input, forget, cell, output].
class Lstm {
public:
  Lstm() = default;
  Lstm(const std::string& name, int in, int hidden, Rng& rng);

  // Runs over each sequence; when `reverse` the sequence is consumed from
  // the last step to the first and the output is kept in input order.
  Batch forward(const Batch& x, bool reverse);
  Batch backward(const Batch& dy);
  void collect(ParamSet& ps);

  int hidden() const { return hidden_; }
  Param& input_weight() { return wx_; }
  Param& recurrent_weight() { return wh_; }
  Param& bias() { return b_; }

private:
  struct Trace {
    Mat x;      // T x in, processing order
    Mat gates;  // T x 4H, post-activation
    Mat cell;   // T x H
    Mat tanh_cell;
    Mat hidden;
  };

  Param wx_;  // in x 4H
  Param wh_;  // H x 4H
  Param b_;   // 1 x 4H
  int hidden_ = 0;
  bool reverse_ = false;
  std::vector<Trace> traces_;
};

// Forward and backward LSTMs over the same input, outputs concatenated
// per step as [forward | backward] (T x 2H).
class Blstm {
public:
  Blstm() = default;
  Blstm(const std::string& name, int in, int hidden, Rng& rng);

  Batch forward(const Batch& x, Mode mode);
  Batch backward(const Batch& dy);
  void collect(ParamSet& ps);

  int hidden() const { return fwd_.hidden(); }
  Lstm& forward_lstm() { return fwd_; }
  Lstm& backward_lstm() { return bwd_; }

private:
  Lstm fwd_;
  Lstm bwd_;
};

}  // namespace avsep::nn
