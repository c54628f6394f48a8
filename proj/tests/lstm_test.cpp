#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "oracles/lstm_oracle.hpp"
#include "smartcast/error.hpp"
#include "smartcast/lstm.hpp"

namespace lstm = smartcast::lstm;
namespace ts = smartcast::timeseries;

namespace {

lstm::Architecture toy(int d, int n, int head, int horizon, bool residual = false) {
  return {d, n, n, head, horizon, residual};
}

lstm::Matrix random_sequence(Eigen::Index steps, Eigen::Index d, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  lstm::Matrix m(steps, d);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

lstm::Vector random_vector(Eigen::Index n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  lstm::Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = g(rng);
  return v;
}

std::vector<double> flat(const lstm::Seq2SeqParams& p) {
  std::vector<double> out;
  p.for_each_tensor([&](std::string_view, std::span<const double> t) { out.insert(out.end(), t.begin(), t.end()); });
  return out;
}

// Perturbs every parameter so biases and gates are all exercised.
void jiggle(lstm::Seq2SeqModel& model, std::uint64_t seed, double sd) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, sd);
  model.mutable_params().for_each_tensor([&](std::string_view, std::span<double> t) {
    for (double& v : t) v += n(rng);
  });
}

lstm::SequenceBatch single(const lstm::Matrix& seq) {
  lstm::SequenceBatch b;
  for (Eigen::Index t = 0; t < seq.rows(); ++t) b.push_back(seq.row(t).transpose());
  return b;
}

}  // namespace

TEST(Init, SameSeedIsBitIdentical) {
  const auto arch = toy(4, 7, 5, 3);
  EXPECT_EQ(flat(lstm::init_params(arch, 9).params()), flat(lstm::init_params(arch, 9).params()));
  EXPECT_NE(flat(lstm::init_params(arch, 9).params()), flat(lstm::init_params(arch, 10).params()));
}

TEST(Init, ForgetBiasOneOtherBiasesZeroAndGlorotBound) {
  const auto m = lstm::init_params(toy(4, 6, 5, 2), 1);
  for (const auto* layer : {&m.params().encoder, &m.params().decoder}) {
    EXPECT_TRUE((layer->gate_b(lstm::Gate::forget).array() == 1.0).all());
    for (auto g : {lstm::Gate::input, lstm::Gate::output, lstm::Gate::cell}) {
      EXPECT_TRUE((layer->gate_b(g).array() == 0.0).all());
    }
    const double n = static_cast<double>(layer->hidden_dim());
    const double w_bound = std::sqrt(6.0 / (static_cast<double>(layer->input_dim()) + n));
    const double u_bound = std::sqrt(6.0 / (n + n));
    EXPECT_LE(layer->W.cwiseAbs().maxCoeff(), w_bound);
    EXPECT_LE(layer->U.cwiseAbs().maxCoeff(), u_bound);
  }
  EXPECT_TRUE((m.params().head_out.bias.array() == 0.0).all());
}

TEST(Cell, ZeroParamsGiveZeroState) {
  lstm::LstmLayerParams p(3, 4);
  p.W.setZero();
  p.U.setZero();
  p.b.setZero();
  const auto s = lstm::lstm_cell_forward(p, random_vector(3, 1), random_vector(4, 2), lstm::Vector::Zero(4));
  EXPECT_TRUE(s.h.isZero(0.0));
  EXPECT_TRUE(s.c.isZero(0.0));
}

TEST(Cell, LargeCellBiasSaturates) {
  lstm::LstmLayerParams p(2, 3);
  p.W.setZero();
  p.U.setZero();
  p.b.setZero();
  p.gate_b(lstm::Gate::cell).setConstant(5.0);
  const auto s = lstm::lstm_cell_forward(p, lstm::Vector::Zero(2), lstm::Vector::Zero(3), lstm::Vector::Zero(3));
  for (Eigen::Index j = 0; j < 3; ++j) EXPECT_NEAR(s.c(j), 0.5 * std::tanh(5.0), 1e-15);
}

TEST(Cell, MatchesScalarOracle) {
  const auto m = lstm::init_params(toy(5, 6, 3, 1), 42);
  auto p = m.params().encoder;
  p.b = random_vector(p.b.size(), 43);
  const auto x = random_vector(5, 44), h = random_vector(6, 45), c = random_vector(6, 46);
  const auto got = lstm::lstm_cell_forward(p, x, h, c);
  const auto want = oracle::lstm_cell(p, {x.data(), x.data() + x.size()}, {h.data(), h.data() + h.size()},
                                      {c.data(), c.data() + c.size()});
  for (std::size_t j = 0; j < 6; ++j) {
    EXPECT_NEAR(got.h(static_cast<Eigen::Index>(j)), want.h[j], 1e-12);
    EXPECT_NEAR(got.c(static_cast<Eigen::Index>(j)), want.c[j], 1e-12);
  }
}

TEST(Cell, HiddenStateStrictlyBounded) {
  // |c| stays well under 19, where tanh is still representably below 1.
  auto m = lstm::init_params(toy(3, 8, 2, 1), 5);
  jiggle(m, 6, 1.0);
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n(0.0, 3.0);
  for (int trial = 0; trial < 200; ++trial) {
    lstm::Vector x(3), h(8), c(8);
    for (auto* v : {&x, &h, &c}) {
      for (Eigen::Index i = 0; i < v->size(); ++i) (*v)(i) = n(rng);
    }
    h = h.array().tanh();
    c = c.cwiseMax(-10.0).cwiseMin(10.0);
    const auto s = lstm::lstm_cell_forward(m.params().encoder, x, h, c);
    EXPECT_LT(s.h.cwiseAbs().maxCoeff(), 1.0);
  }
}

TEST(Cell, SaturatedHiddenStateStaysFiniteAndBounded) {
  auto m = lstm::init_params(toy(3, 8, 2, 1), 5);
  jiggle(m, 6, 3.0);
  std::mt19937_64 rng(7);
  std::normal_distribution<double> big(0.0, 100.0);
  for (int trial = 0; trial < 200; ++trial) {
    lstm::Vector x(3), h(8), c(8);
    for (auto* v : {&x, &h, &c}) {
      for (Eigen::Index i = 0; i < v->size(); ++i) (*v)(i) = big(rng);
    }
    h = h.array().tanh();
    const auto s = lstm::lstm_cell_forward(m.params().encoder, x, h, c);
    EXPECT_TRUE(s.h.allFinite());
    EXPECT_LE(s.h.cwiseAbs().maxCoeff(), 1.0);
  }
}

TEST(Forward, ZeroModelPredictsZero) {
  lstm::Seq2SeqModel m(toy(4, 5, 3, 14));
  m.mutable_params().set_zero();
  const auto y = lstm::seq2seq_forward(m, random_sequence(30, 4, 1, 10.0));
  ASSERT_EQ(y.size(), 14);
  EXPECT_TRUE(y.isZero(0.0));
}

TEST(Forward, HorizonOneGivesScalar) {
  const auto m = lstm::init_params(lstm::Architecture::index(), 3);
  EXPECT_EQ(lstm::seq2seq_forward(m, random_sequence(5, 2, 2)).size(), 1);
}

TEST(Forward, MatchesScalarOracleBothArchitectures) {
  for (const auto& arch : {lstm::Architecture::soil(), lstm::Architecture::index()}) {
    auto m = lstm::init_params(arch, 17);
    jiggle(m, 18, 0.05);
    const auto seq = random_sequence(arch.horizon == 1 ? 5 : 30, arch.input_dim, 19);
    const auto got = lstm::seq2seq_forward(m, seq);
    const auto want = oracle::seq2seq_forward(m, seq);
    ASSERT_EQ(static_cast<std::size_t>(got.size()), want.size());
    for (std::size_t k = 0; k < want.size(); ++k) EXPECT_NEAR(got(static_cast<Eigen::Index>(k)), want[k], 1e-12);
  }
}

TEST(Forward, ResidualAddsLastTargetInput) {
  lstm::Seq2SeqModel m(toy(4, 5, 3, 6, true));
  m.mutable_params().set_zero();
  m.set_target_feature(2);
  const auto seq = random_sequence(9, 4, 4);
  const auto y = lstm::seq2seq_forward(m, seq);
  for (Eigen::Index k = 0; k < y.size(); ++k) EXPECT_EQ(y(k), seq(8, 2));

  auto r = lstm::init_params(toy(4, 5, 3, 6, true), 8);
  jiggle(r, 9, 0.1);
  const auto got = lstm::seq2seq_forward(r, seq);
  const auto want = oracle::seq2seq_forward(r, seq);
  for (std::size_t k = 0; k < want.size(); ++k) EXPECT_NEAR(got(static_cast<Eigen::Index>(k)), want[k], 1e-12);
}

TEST(Forward, BatchEqualsPerSample) {
  const auto m = lstm::init_params(toy(3, 6, 4, 4), 21);
  std::vector<lstm::Matrix> seqs;
  for (std::uint64_t s = 0; s < 5; ++s) seqs.push_back(random_sequence(7, 3, 100 + s));
  lstm::SequenceBatch batch(7, lstm::BatchMatrix(3, 5));
  for (int b = 0; b < 5; ++b) {
    for (int t = 0; t < 7; ++t) batch[static_cast<std::size_t>(t)].col(b) = seqs[static_cast<std::size_t>(b)].row(t).transpose();
  }
  const auto out = lstm::seq2seq_forward(m, batch);
  for (int b = 0; b < 5; ++b) {
    const auto one = lstm::seq2seq_forward(m, seqs[static_cast<std::size_t>(b)]);
    EXPECT_LT((out.col(b) - one).cwiseAbs().maxCoeff(), 1e-14);
  }
}

TEST(Backward, ZeroGradientAtMinimum) {
  auto m = lstm::init_params(toy(4, 5, 3, 4), 2);
  jiggle(m, 3, 0.1);
  lstm::ForwardCache cache;
  const auto pred = lstm::seq2seq_forward(m, single(random_sequence(6, 4, 5)), &cache);
  const auto r = lstm::backward(m, cache, pred, lstm::Loss::mse);
  EXPECT_EQ(r.loss, 0.0);
  for (double g : flat(r.grads)) EXPECT_EQ(g, 0.0);
}

TEST(Backward, HeadOutBiasIsScaledResidualSum) {
  const auto m = lstm::init_params(toy(4, 5, 3, 4), 2);
  lstm::ForwardCache cache;
  const auto pred = lstm::seq2seq_forward(m, single(random_sequence(6, 4, 5)), &cache);
  const lstm::BatchMatrix target = random_vector(4, 6);
  const auto r = lstm::backward(m, cache, target, lstm::Loss::mse);
  EXPECT_NEAR(r.grads.head_out.bias(0), 2.0 / 4.0 * (pred - target).sum(), 1e-14);
}

TEST(Backward, StaleCacheRejected) {
  auto m = lstm::init_params(toy(2, 3, 2, 2), 1);
  lstm::ForwardCache cache;
  lstm::seq2seq_forward(m, single(random_sequence(4, 2, 1)), &cache);
  m.mutable_params().head_out.bias(0) += 1.0;
  EXPECT_THROW(lstm::backward(m, cache, lstm::BatchMatrix::Zero(2, 1), lstm::Loss::mse), std::logic_error);
}

TEST(GradientCheck, TinyModelFullSweep) {
  auto m = lstm::init_params(toy(4, 3, 3, 2), 12);
  jiggle(m, 13, 0.1);
  const auto report = lstm::gradient_check(m, random_sequence(4, 4, 14), random_vector(2, 15));
  EXPECT_TRUE(report.passed) << report.worst_tensor << " " << report.max_rel_error;
  EXPECT_LT(report.max_rel_error, 1e-4);
  EXPECT_EQ(report.coordinates_checked, m.params().parameter_count());
}

TEST(GradientCheck, ResidualAndMaeModelsPass) {
  auto m = lstm::init_params(toy(3, 4, 3, 3, true), 22);
  m.set_target_feature(1);
  const auto input = random_sequence(5, 3, 23);
  const auto target = random_vector(3, 24);
  EXPECT_TRUE(lstm::gradient_check(m, input, target).passed);
  lstm::GradientCheckOptions mae;
  mae.loss = lstm::Loss::mae;
  EXPECT_TRUE(lstm::gradient_check(m, input, target, mae).passed);
}

TEST(GradientCheck, CorruptedEntryIsReported) {
  const auto m = lstm::init_params(toy(4, 3, 3, 2), 12);
  const auto input = random_sequence(4, 4, 14);
  const lstm::Vector target = random_vector(2, 15);
  lstm::ForwardCache cache;
  lstm::seq2seq_forward(m, single(input), &cache);
  auto grads = lstm::backward(m, cache, target, lstm::Loss::mse).grads;
  grads.decoder.gate_U(lstm::Gate::output)(1, 2) *= 2.0;
  const auto report = lstm::gradient_check(m, input, target, grads);
  EXPECT_FALSE(report.passed);
  EXPECT_EQ(report.worst_tensor, "decoder.U_o");
  EXPECT_EQ(report.worst_index, 1u * 3u + 2u);
}

TEST(GradientCheck, ZeroEpsilonIsInvalid) {
  const auto m = lstm::init_params(toy(2, 2, 2, 1), 1);
  lstm::GradientCheckOptions opt;
  opt.epsilon = 0.0;
  EXPECT_THROW(lstm::gradient_check(m, random_sequence(3, 2, 1), random_vector(1, 2), opt), std::invalid_argument);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  std::vector<double> p{1.0, -2.0, 0.5}, g{0.3, -7.0, 1e-3};
  lstm::AdamState st;
  lstm::TrainConfig cfg;
  const auto before = p;
  lstm::adam_step(p, g, st, cfg);
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double expect = cfg.learning_rate * std::abs(g[i]) / (std::abs(g[i]) + cfg.adam_epsilon);
    EXPECT_NEAR(std::abs(p[i] - before[i]), expect, 1e-15);
    EXPECT_NEAR(std::abs(p[i] - before[i]), cfg.learning_rate, 1e-7);
  }
}

TEST(Adam, ZeroGradientLeavesParams) {
  std::vector<double> p{1.0, 2.0}, g{0.0, 0.0};
  lstm::AdamState st;
  lstm::adam_step(p, g, st, {});
  EXPECT_EQ(p, (std::vector<double>{1.0, 2.0}));
}

TEST(Adam, TwoStepsMatchHandComputedMoments) {
  lstm::TrainConfig cfg;
  cfg.learning_rate = 0.1;
  std::vector<double> p{0.5, -1.0};
  const std::vector<double> g1{0.2, -0.4}, g2{-0.1, 0.3};
  lstm::AdamState st;
  lstm::adam_step(p, g1, st, cfg);
  lstm::adam_step(p, g2, st, cfg);

  const double b1 = 0.9, b2 = 0.999, eps = 1e-8, lr = 0.1;
  double q[2] = {0.5, -1.0};
  for (int i = 0; i < 2; ++i) {
    double m = (1 - b1) * g1[i], v = (1 - b2) * g1[i] * g1[i];
    q[i] -= lr * (m / (1 - b1)) / (std::sqrt(v / (1 - b2)) + eps);
    m = b1 * m + (1 - b1) * g2[i];
    v = b2 * v + (1 - b2) * g2[i] * g2[i];
    q[i] -= lr * (m / (1 - b1 * b1)) / (std::sqrt(v / (1 - b2 * b2)) + eps);
    EXPECT_NEAR(p[static_cast<std::size_t>(i)], q[i], 1e-12);
  }
  EXPECT_EQ(st.step, 2u);
}

TEST(Adam, NonFiniteGradientAbortsUntouched) {
  std::vector<double> p{1.0, 2.0}, g{0.1, std::nan("")};
  lstm::AdamState st;
  EXPECT_THROW(lstm::adam_step(p, g, st, {}), smartcast::NumericError);
  EXPECT_EQ(p, (std::vector<double>{1.0, 2.0}));
  EXPECT_EQ(st.step, 0u);
}

namespace {

ts::WindowSet sine_windows(std::size_t n, std::size_t len, std::size_t horizon, double phase_step) {
  ts::WindowSet ws;
  ws.input_length = len;
  ws.n_features = 1;
  ws.horizon = horizon;
  for (std::size_t i = 0; i < n; ++i) {
    const double p0 = phase_step * static_cast<double>(i);
    for (std::size_t t = 0; t < len; ++t) ws.inputs.push_back(std::sin(p0 + 0.3 * static_cast<double>(t)));
    for (std::size_t h = 0; h < horizon; ++h) ws.targets.push_back(std::sin(p0 + 0.3 * static_cast<double>(len + h)));
    const long d = static_cast<long>(i);
    ws.spans.push_back({d, d + static_cast<long>(len) - 1, d + static_cast<long>(len),
                        d + static_cast<long>(len + horizon) - 1});
  }
  return ws;
}

}  // namespace

TEST(Train, ZeroEpochsLeaveModelUnchanged) {
  auto m = lstm::init_params(toy(1, 4, 3, 2), 1);
  const auto before = flat(m.params());
  lstm::TrainConfig cfg;
  cfg.epochs = 0;
  const auto r = lstm::train(m, sine_windows(8, 5, 2, 0.7), {}, cfg);
  EXPECT_TRUE(r.history.empty());
  EXPECT_EQ(flat(m.params()), before);
}

TEST(Train, MemorizesSingleSample) {
  auto m = lstm::init_params(toy(1, 8, 6, 3), 2);
  const auto ws = sine_windows(1, 6, 3, 0.0);
  lstm::TrainConfig cfg;
  cfg.epochs = 500;
  cfg.batch_size = 1;
  const auto r = lstm::train(m, ws, {}, cfg);
  ASSERT_EQ(r.history.size(), 500u);
  EXPECT_LT(lstm::evaluate(m, ws, lstm::Loss::mse), 1e-3);
}

TEST(Train, DeterministicAndBeatsPersistenceOnSine) {
  const auto all = sine_windows(160, 10, 4, 0.37);
  const auto split = ts::chrono_split(all, 0.25);
  lstm::TrainConfig cfg;
  cfg.epochs = 40;
  cfg.batch_size = 16;
  cfg.seed = 5;
  auto a = lstm::init_params(toy(1, 10, 8, 4), 3);
  auto b = lstm::init_params(toy(1, 10, 8, 4), 3);
  lstm::train(a, split.train, {}, cfg);
  lstm::train(b, split.train, {}, cfg);
  EXPECT_EQ(flat(a.params()), flat(b.params()));

  const auto pred = lstm::predict_windows(a, split.test);
  std::vector<double> persistence;
  for (std::size_t i = 0; i < split.test.size(); ++i) {
    for (std::size_t h = 0; h < 4; ++h) persistence.push_back(split.test.input(i).back());
  }
  EXPECT_LT(lstm::rmse(pred, split.test.targets), lstm::rmse(persistence, split.test.targets));
}

TEST(Train, KeepsBestValidationEpoch) {
  const auto split = ts::chrono_split(sine_windows(80, 8, 2, 0.41), 0.25);
  auto m = lstm::init_params(toy(1, 6, 4, 2), 4);
  lstm::TrainConfig cfg;
  cfg.epochs = 15;
  const auto r = lstm::train(m, split.train, split.test, cfg);
  double best = r.history.front().val_loss;
  for (const auto& e : r.history) best = std::min(best, e.val_loss);
  EXPECT_EQ(r.history[r.best_epoch - r.history.front().epoch].val_loss, best);
  EXPECT_NEAR(lstm::evaluate(m, split.test, lstm::Loss::mse), best, 1e-12);
}

TEST(Predict, IdentityScalerEqualsForward) {
  const auto m = lstm::init_params(toy(4, 5, 3, 14), 8);
  const auto seq = random_sequence(30, 4, 9);
  EXPECT_EQ(lstm::predict(m, seq), lstm::seq2seq_forward(m, seq));
}

TEST(Predict, ScalerMeanThirtyStdTen) {
  lstm::Seq2SeqModel m(toy(4, 5, 3, 14));
  m.mutable_params().set_zero();
  m.set_scaler(ts::Scaler({30.0, 1.0, 2.0, 3.0}, {10.0, 1.0, 1.0, 1.0}));
  const auto y = lstm::predict(m, random_sequence(30, 4, 1));
  for (Eigen::Index k = 0; k < y.size(); ++k) EXPECT_EQ(y(k), 30.0);
}

TEST(Predict, ScaleUnscaleRoundTrip) {
  const ts::Scaler sc({12.5, 0.0, 0.0, 0.0}, {3.25, 1.0, 1.0, 1.0});
  const auto v = random_vector(200, 77);
  for (Eigen::Index i = 0; i < v.size(); ++i) EXPECT_NEAR(sc.apply(0, sc.invert(0, v(i))), v(i), 1e-12);
}

TEST(Metrics, ExamplesAndOracle) {
  const std::vector<double> a{1.0, 2.0}, same{1.0, 2.0}, off{4.0, -2.0};
  EXPECT_EQ(lstm::rmse(a, same), 0.0);
  EXPECT_EQ(lstm::mae(a, same), 0.0);
  EXPECT_DOUBLE_EQ(lstm::rmse(off, a), std::sqrt(12.5));
  EXPECT_DOUBLE_EQ(lstm::mae(off, a), 3.5);
  EXPECT_THROW(lstm::rmse(std::vector<double>{}, std::vector<double>{}), std::invalid_argument);

  std::mt19937_64 rng(1);
  std::normal_distribution<double> n;
  std::vector<double> p(57), t(57);
  double ss = 0, sa = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = n(rng);
    t[i] = n(rng);
    ss += (p[i] - t[i]) * (p[i] - t[i]);
    sa += std::abs(p[i] - t[i]);
  }
  EXPECT_NEAR(lstm::rmse(p, t), std::sqrt(ss / 57.0), 1e-14);
  EXPECT_NEAR(lstm::mae(p, t), sa / 57.0, 1e-14);
}

TEST(Checkpoint, RoundTripIsExact) {
  auto m = lstm::init_params(toy(4, 5, 3, 7, true), 31);
  jiggle(m, 32, 0.2);
  m.set_scaler(ts::Scaler({1.0, 2.0, 3.0, 4.0}, {0.5, 0.25, 2.0, 8.0}));
  m.set_target_feature(0);
  lstm::TrainConfig cfg;
  cfg.epochs = 17;
  cfg.loss = lstm::Loss::mae;
  std::stringstream buf;
  lstm::write_checkpoint(buf, m, &cfg);
  EXPECT_EQ(buf.str().substr(0, lstm::kCheckpointMagic.size()), lstm::kCheckpointMagic);
  const auto ck = lstm::read_checkpoint(buf);
  EXPECT_EQ(ck.model.architecture(), m.architecture());
  EXPECT_TRUE(ck.model.architecture().residual);
  EXPECT_EQ(ck.model.scaler(), m.scaler());
  EXPECT_EQ(flat(ck.model.params()), flat(m.params()));
  ASSERT_TRUE(ck.config.has_value());
  EXPECT_EQ(*ck.config, cfg);
}

TEST(Checkpoint, BadMagicAndTruncationRejected) {
  std::stringstream bad("NOTMAGIC{}\n");
  EXPECT_THROW(lstm::read_checkpoint(bad), smartcast::DataError);

  std::stringstream buf;
  lstm::write_checkpoint(buf, lstm::init_params(toy(2, 3, 2, 1), 1));
  std::string s = buf.str();
  s.resize(s.size() - 8);
  std::stringstream cut(s);
  EXPECT_THROW(lstm::read_checkpoint(cut), smartcast::DataError);
}
