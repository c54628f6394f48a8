#pragma once

// Scalar-loop seq2seq forward pass. Reads the model's tensors element by
// element and recomputes everything with plain loops and libm.

#include <cmath>
#include <cstddef>
#include <vector>

#include "smartcast/lstm.hpp"

namespace oracle {

using Vec = std::vector<double>;

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

struct CellOut {
  Vec h;
  Vec c;
};

inline CellOut lstm_cell(const smartcast::lstm::LstmLayerParams& p, const Vec& x, const Vec& h_prev,
                         const Vec& c_prev) {
  const std::size_t n = static_cast<std::size_t>(p.U.cols());
  const std::size_t d = static_cast<std::size_t>(p.W.cols());
  Vec pre(4 * n);
  for (std::size_t r = 0; r < 4 * n; ++r) {
    double s = p.b(static_cast<Eigen::Index>(r));
    for (std::size_t k = 0; k < d; ++k) s += p.W(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) * x[k];
    for (std::size_t k = 0; k < n; ++k) {
      s += p.U(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) * h_prev[k];
    }
    pre[r] = s;
  }
  CellOut out{Vec(n), Vec(n)};
  for (std::size_t j = 0; j < n; ++j) {
    const double i = sigmoid(pre[j]);
    const double f = sigmoid(pre[n + j]);
    const double o = sigmoid(pre[2 * n + j]);
    const double g = std::tanh(pre[3 * n + j]);
    out.c[j] = f * c_prev[j] + i * g;
    out.h[j] = o * std::tanh(out.c[j]);
  }
  return out;
}

inline Vec dense(const smartcast::lstm::DenseParams& p, const Vec& x) {
  Vec y(static_cast<std::size_t>(p.weight.rows()));
  for (std::size_t r = 0; r < y.size(); ++r) {
    double s = p.bias(static_cast<Eigen::Index>(r));
    for (std::size_t k = 0; k < x.size(); ++k) {
      s += p.weight(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) * x[k];
    }
    y[r] = s;
  }
  return y;
}

// `sequence` is steps x input_dim, already in model units.
inline Vec seq2seq_forward(const smartcast::lstm::Seq2SeqModel& model, const smartcast::lstm::Matrix& sequence) {
  const auto& arch = model.architecture();
  const auto& p = model.params();
  const auto ne = static_cast<std::size_t>(arch.encoder_hidden);
  const auto nd = static_cast<std::size_t>(arch.decoder_hidden);

  Vec h(ne, 0.0), c(ne, 0.0);
  for (Eigen::Index t = 0; t < sequence.rows(); ++t) {
    Vec x(static_cast<std::size_t>(sequence.cols()));
    for (Eigen::Index k = 0; k < sequence.cols(); ++k) x[static_cast<std::size_t>(k)] = sequence(t, k);
    auto s = lstm_cell(p.encoder, x, h, c);
    h = std::move(s.h);
    c = std::move(s.c);
  }

  const Vec bridge = h;
  Vec hd(nd, 0.0), cd(nd, 0.0);
  Vec out;
  for (int step = 0; step < arch.horizon; ++step) {
    auto s = lstm_cell(p.decoder, bridge, hd, cd);
    hd = std::move(s.h);
    cd = std::move(s.c);
    const Vec y = dense(p.head_out, dense(p.head_hidden, hd));
    out.push_back(y[0]);
  }
  if (arch.residual) {
    const double last = sequence(sequence.rows() - 1, static_cast<Eigen::Index>(model.target_feature()));
    for (double& v : out) v += last;
  }
  return out;
}

}  // namespace oracle
