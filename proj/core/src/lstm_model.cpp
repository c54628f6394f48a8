#include <atomic>
#include <cmath>
#include <random>
#include <stdexcept>

#include "smartcast/error.hpp"
#include "smartcast/lstm.hpp"

namespace smartcast::lstm {

namespace {

std::atomic<std::uint64_t> g_next_uid{1};

constexpr std::string_view kGateSuffix[kGateCount] = {"i", "f", "o", "g"};

template <typename Params, typename Fn>
void visit_layer(Params& layer, std::string_view prefix, Fn&& fn) {
  const auto n = static_cast<std::size_t>(layer.hidden_dim());
  const auto d = static_cast<std::size_t>(layer.input_dim());
  std::string name;
  for (int g = 0; g < kGateCount; ++g) {
    name = std::string(prefix) + ".W_" + std::string(kGateSuffix[g]);
    fn(name, std::span(layer.W.data() + g * n * d, n * d));
  }
  for (int g = 0; g < kGateCount; ++g) {
    name = std::string(prefix) + ".U_" + std::string(kGateSuffix[g]);
    fn(name, std::span(layer.U.data() + g * n * n, n * n));
  }
  for (int g = 0; g < kGateCount; ++g) {
    name = std::string(prefix) + ".b_" + std::string(kGateSuffix[g]);
    fn(name, std::span(layer.b.data() + g * n, n));
  }
}

template <typename Params, typename Fn>
void visit_dense(Params& dense, std::string_view prefix, Fn&& fn) {
  fn(std::string(prefix) + ".weight", std::span(dense.weight.data(), static_cast<std::size_t>(dense.weight.size())));
  fn(std::string(prefix) + ".bias", std::span(dense.bias.data(), static_cast<std::size_t>(dense.bias.size())));
}

template <typename Params, typename Fn>
void visit_all(Params& p, Fn&& fn) {
  visit_layer(p.encoder, "encoder", fn);
  visit_layer(p.decoder, "decoder", fn);
  visit_dense(p.head_hidden, "head_hidden", fn);
  visit_dense(p.head_out, "head_out", fn);
}

const Architecture& validated(const Architecture& arch) {
  arch.validate();
  return arch;
}

// Uniform double in [0, 1) from the top 53 bits; independent of the standard
// library's distribution implementations.
double unit_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

void fill_glorot(std::span<double> block, double fan_in, double fan_out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  for (double& w : block) w = (2.0 * unit_uniform(rng) - 1.0) * limit;
}

template <typename Derived>
auto sigmoid(const Eigen::ArrayBase<Derived>& z) {
  return (1.0 + (-z).exp()).inverse();
}

// Eigen vectorizes exp for doubles but not tanh.
template <typename Derived>
auto fast_tanh(const Eigen::ArrayBase<Derived>& z) {
  return 2.0 * (1.0 + (-2.0 * z).exp()).inverse() - 1.0;
}

void layer_step(const LstmLayerParams& p, const BatchMatrix& x, const BatchMatrix* h_prev, const BatchMatrix* c_prev,
                BatchMatrix& gates, BatchMatrix& c, BatchMatrix& tanh_c, BatchMatrix& h) {
  const Eigen::Index n = p.hidden_dim();
  gates.noalias() = p.W * x;
  if (h_prev != nullptr) gates.noalias() += p.U * *h_prev;
  gates.colwise() += p.b;
  gates.topRows(3 * n) = sigmoid(gates.topRows(3 * n).array()).matrix();
  gates.bottomRows(n) = fast_tanh(gates.bottomRows(n).array()).matrix();

  const auto i = gates.middleRows(0, n).array();
  const auto f = gates.middleRows(n, n).array();
  const auto g = gates.middleRows(3 * n, n).array();
  if (c_prev != nullptr) {
    c = (f * c_prev->array() + i * g).matrix();
  } else {
    c = (i * g).matrix();
  }
  tanh_c = fast_tanh(c.array()).matrix();
  h = (gates.middleRows(2 * n, n).array() * tanh_c.array()).matrix();
}

void layer_forward(const LstmLayerParams& p, const SequenceBatch& inputs, LayerCache& cache) {
  const std::size_t steps = inputs.size();
  cache.gates.resize(steps);
  cache.c.resize(steps);
  cache.tanh_c.resize(steps);
  cache.h.resize(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    const BatchMatrix* h_prev = t > 0 ? &cache.h[t - 1] : nullptr;
    const BatchMatrix* c_prev = t > 0 ? &cache.c[t - 1] : nullptr;
    layer_step(p, inputs[t], h_prev, c_prev, cache.gates[t], cache.c[t], cache.tanh_c[t], cache.h[t]);
  }
}

// BPTT through one layer. `dh_ext[t]` is the gradient arriving at h_t from
// above (empty entries mean zero). `input_at(t)` gives x_t. When `dx` is not
// null it receives dL/dx_t per step.
template <typename InputAt>
void layer_backward(const LstmLayerParams& p, const LayerCache& cache, InputAt&& input_at,
                    const std::vector<BatchMatrix>& dh_ext, LstmLayerParams& grad, std::vector<BatchMatrix>* dx) {
  const Eigen::Index n = p.hidden_dim();
  const std::size_t steps = cache.h.size();
  const Eigen::Index batch = cache.h.front().cols();

  BatchMatrix dh_next = BatchMatrix::Zero(n, batch);
  BatchMatrix dc_next = BatchMatrix::Zero(n, batch);
  BatchMatrix dz(4 * n, batch);
  BatchMatrix dc(n, batch);
  if (dx != nullptr) dx->assign(steps, BatchMatrix());

  for (std::size_t tt = steps; tt-- > 0;) {
    BatchMatrix dh = dh_next;
    if (tt < dh_ext.size() && dh_ext[tt].size() > 0) dh += dh_ext[tt];

    const auto& gates = cache.gates[tt];
    const auto i = gates.middleRows(0, n).array();
    const auto f = gates.middleRows(n, n).array();
    const auto o = gates.middleRows(2 * n, n).array();
    const auto g = gates.middleRows(3 * n, n).array();
    const auto tc = cache.tanh_c[tt].array();

    dc = (dc_next.array() + dh.array() * o * (1.0 - tc * tc)).matrix();
    dz.middleRows(0, n) = (dc.array() * g * i * (1.0 - i)).matrix();
    if (tt > 0) {
      dz.middleRows(n, n) = (dc.array() * cache.c[tt - 1].array() * f * (1.0 - f)).matrix();
    } else {
      dz.middleRows(n, n).setZero();
    }
    dz.middleRows(2 * n, n) = (dh.array() * tc * o * (1.0 - o)).matrix();
    dz.middleRows(3 * n, n) = (dc.array() * i * (1.0 - g * g)).matrix();

    grad.W.noalias() += dz * input_at(tt).transpose();
    grad.b += dz.rowwise().sum();
    if (tt > 0) {
      grad.U.noalias() += dz * cache.h[tt - 1].transpose();
      dh_next.noalias() = p.U.transpose() * dz;
    }
    if (dx != nullptr) (*dx)[tt].noalias() = p.W.transpose() * dz;
    dc_next = (dc.array() * f).matrix();
  }
}

}  // namespace

LstmLayerParams::LstmLayerParams(Eigen::Index input_dim, Eigen::Index hidden_dim)
    : W(Matrix::Zero(kGateCount * hidden_dim, input_dim)),
      U(Matrix::Zero(kGateCount * hidden_dim, hidden_dim)),
      b(Vector::Zero(kGateCount * hidden_dim)) {}

DenseParams::DenseParams(Eigen::Index in_dim, Eigen::Index out_dim)
    : weight(Matrix::Zero(out_dim, in_dim)), bias(Vector::Zero(out_dim)) {}

void Architecture::validate() const {
  if (input_dim <= 0 || encoder_hidden <= 0 || decoder_hidden <= 0 || head_hidden <= 0 || horizon <= 0) {
    throw std::invalid_argument("architecture dimensions must all be positive");
  }
}

Seq2SeqParams::Seq2SeqParams(const Architecture& arch)
    : encoder(arch.input_dim, arch.encoder_hidden),
      decoder(arch.encoder_hidden, arch.decoder_hidden),
      head_hidden(arch.decoder_hidden, arch.head_hidden),
      head_out(arch.head_hidden, 1) {}

void Seq2SeqParams::for_each_tensor(const std::function<void(std::string_view, std::span<double>)>& fn) {
  visit_all(*this, fn);
}

void Seq2SeqParams::for_each_tensor(const std::function<void(std::string_view, std::span<const double>)>& fn) const {
  visit_all(*this, [&](std::string_view name, std::span<const double> data) { fn(name, data); });
}

std::size_t Seq2SeqParams::parameter_count() const {
  std::size_t total = 0;
  for_each_tensor([&](std::string_view, std::span<const double> t) { total += t.size(); });
  return total;
}

void Seq2SeqParams::set_zero() {
  for_each_tensor([](std::string_view, std::span<double> t) { std::fill(t.begin(), t.end(), 0.0); });
}

Seq2SeqModel::Seq2SeqModel() : uid_(g_next_uid++) {}

Seq2SeqModel::Seq2SeqModel(const Architecture& arch)
    : arch_(validated(arch)),
      params_(arch_),
      scaler_(timeseries::Scaler::identity(static_cast<std::size_t>(arch_.input_dim))),
      uid_(g_next_uid++) {}

Seq2SeqModel::Seq2SeqModel(const Seq2SeqModel& other)
    : arch_(other.arch_),
      params_(other.params_),
      scaler_(other.scaler_),
      target_feature_(other.target_feature_),
      uid_(g_next_uid++) {}

Seq2SeqModel& Seq2SeqModel::operator=(const Seq2SeqModel& other) {
  if (this != &other) {
    arch_ = other.arch_;
    params_ = other.params_;
    scaler_ = other.scaler_;
    target_feature_ = other.target_feature_;
    ++generation_;
  }
  return *this;
}

void Seq2SeqModel::set_scaler(timeseries::Scaler scaler) {
  if (scaler.size() != static_cast<std::size_t>(arch_.input_dim)) {
    throw std::invalid_argument("scaler feature count does not match model input_dim");
  }
  scaler_ = std::move(scaler);
}

void Seq2SeqModel::set_target_feature(std::size_t feature) {
  if (feature >= static_cast<std::size_t>(arch_.input_dim)) throw std::invalid_argument("target feature out of range");
  target_feature_ = feature;
}

Seq2SeqModel init_params(const Architecture& arch, std::uint64_t seed) {
  Seq2SeqModel model(arch);
  std::mt19937_64 rng(seed);
  auto& p = model.mutable_params();

  const auto init_layer = [&](LstmLayerParams& layer) {
    const auto d = static_cast<double>(layer.input_dim());
    const auto n = static_cast<double>(layer.hidden_dim());
    for (int g = 0; g < kGateCount; ++g) {
      auto block = layer.gate_W(static_cast<Gate>(g));
      fill_glorot(std::span(block.data(), static_cast<std::size_t>(block.size())), d, n, rng);
    }
    for (int g = 0; g < kGateCount; ++g) {
      auto block = layer.gate_U(static_cast<Gate>(g));
      fill_glorot(std::span(block.data(), static_cast<std::size_t>(block.size())), n, n, rng);
    }
    layer.b.setZero();
    layer.gate_b(Gate::forget).setOnes();
  };
  const auto init_dense = [&](DenseParams& dense) {
    fill_glorot(std::span(dense.weight.data(), static_cast<std::size_t>(dense.weight.size())),
                static_cast<double>(dense.weight.cols()), static_cast<double>(dense.weight.rows()), rng);
    dense.bias.setZero();
  };
  init_layer(p.encoder);
  init_layer(p.decoder);
  init_dense(p.head_hidden);
  init_dense(p.head_out);
  return model;
}

CellState lstm_cell_forward(const LstmLayerParams& params, const Vector& x, const Vector& h_prev, const Vector& c_prev) {
  const Eigen::Index n = params.hidden_dim();
  if (x.size() != params.input_dim() || h_prev.size() != n || c_prev.size() != n) {
    throw std::invalid_argument("lstm_cell_forward: shape mismatch");
  }
  BatchMatrix gates;
  BatchMatrix c;
  BatchMatrix tanh_c;
  BatchMatrix h;
  const BatchMatrix xb = x;
  const BatchMatrix hb = h_prev;
  const BatchMatrix cb = c_prev;
  layer_step(params, xb, &hb, &cb, gates, c, tanh_c, h);
  return {h.col(0), c.col(0)};
}

BatchMatrix seq2seq_forward(const Seq2SeqModel& model, const SequenceBatch& inputs, ForwardCache* cache) {
  const Architecture& arch = model.architecture();
  const Seq2SeqParams& p = model.params();
  if (inputs.empty()) throw std::invalid_argument("seq2seq_forward: empty input sequence");
  const Eigen::Index batch = inputs.front().cols();
  for (const auto& x : inputs) {
    if (x.rows() != arch.input_dim || x.cols() != batch) throw std::invalid_argument("seq2seq_forward: shape mismatch");
    if (!x.allFinite()) throw std::invalid_argument("seq2seq_forward: non-finite input");
  }

  ForwardCache local;
  ForwardCache& fc = cache != nullptr ? *cache : local;
  fc.model_uid = model.uid();
  fc.model_generation = model.generation();
  fc.inputs = inputs;

  layer_forward(p.encoder, inputs, fc.encoder);
  const SequenceBatch bridge(static_cast<std::size_t>(arch.horizon), fc.encoder.h.back());
  layer_forward(p.decoder, bridge, fc.decoder);

  fc.head_hidden.resize(static_cast<std::size_t>(arch.horizon));
  fc.output.resize(arch.horizon, batch);
  for (int t = 0; t < arch.horizon; ++t) {
    auto& a = fc.head_hidden[static_cast<std::size_t>(t)];
    a.noalias() = p.head_hidden.weight * fc.decoder.h[static_cast<std::size_t>(t)];
    a.colwise() += p.head_hidden.bias;
    fc.output.row(t).noalias() = p.head_out.weight * a;
    fc.output.row(t).array() += p.head_out.bias(0);
  }
  if (arch.residual) {
    const auto last = inputs.back().row(static_cast<Eigen::Index>(model.target_feature()));
    fc.output.rowwise() += last;
  }
  return fc.output;
}

Vector seq2seq_forward(const Seq2SeqModel& model, const Matrix& sequence) {
  SequenceBatch inputs(static_cast<std::size_t>(sequence.rows()));
  for (Eigen::Index t = 0; t < sequence.rows(); ++t) inputs[static_cast<std::size_t>(t)] = sequence.row(t).transpose();
  return seq2seq_forward(model, inputs).col(0);
}

std::string_view to_string(Loss loss) { return loss == Loss::mse ? "mse" : "mae"; }

Loss loss_from_string(std::string_view name) {
  if (name == "mse") return Loss::mse;
  if (name == "mae") return Loss::mae;
  throw ConfigError("unknown loss '" + std::string(name) + "', expected mse or mae");
}

double loss_value(const BatchMatrix& prediction, const BatchMatrix& target, Loss loss) {
  if (prediction.rows() != target.rows() || prediction.cols() != target.cols() || prediction.size() == 0) {
    throw std::invalid_argument("loss_value: shape mismatch");
  }
  const auto diff = (prediction - target).array();
  const double total = loss == Loss::mse ? diff.square().sum() : diff.abs().sum();
  return total / static_cast<double>(prediction.size());
}

BackwardResult backward(const Seq2SeqModel& model, const ForwardCache& cache, const BatchMatrix& target, Loss loss) {
  if (cache.model_uid != model.uid() || cache.model_generation != model.generation()) {
    throw std::logic_error("backward: stale forward cache (model changed since forward pass)");
  }
  const Architecture& arch = model.architecture();
  const Seq2SeqParams& p = model.params();
  if (target.rows() != arch.horizon || target.cols() != cache.output.cols()) {
    throw std::invalid_argument("backward: target shape mismatch");
  }

  BackwardResult result{Seq2SeqParams(arch), loss_value(cache.output, target, loss)};
  Seq2SeqParams& grad = result.grads;

  const double scale = 1.0 / static_cast<double>(cache.output.size());
  BatchMatrix dy;
  if (loss == Loss::mse) {
    dy = (2.0 * scale) * (cache.output - target);
  } else {
    dy = (cache.output - target).unaryExpr([scale](double d) { return d > 0.0 ? scale : (d < 0.0 ? -scale : 0.0); });
  }

  const auto horizon = static_cast<std::size_t>(arch.horizon);
  std::vector<BatchMatrix> dh_dec(horizon);
  BatchMatrix da;
  for (std::size_t t = 0; t < horizon; ++t) {
    const auto dyt = dy.row(static_cast<Eigen::Index>(t));
    grad.head_out.weight.noalias() += dyt * cache.head_hidden[t].transpose();
    grad.head_out.bias(0) += dyt.sum();
    da.noalias() = p.head_out.weight.transpose() * dyt;
    grad.head_hidden.weight.noalias() += da * cache.decoder.h[t].transpose();
    grad.head_hidden.bias += da.rowwise().sum();
    dh_dec[t].noalias() = p.head_hidden.weight.transpose() * da;
  }

  const BatchMatrix& bridge = cache.encoder.h.back();
  std::vector<BatchMatrix> dbridge;
  layer_backward(
      p.decoder, cache.decoder, [&](std::size_t) -> const BatchMatrix& { return bridge; }, dh_dec, grad.decoder,
      &dbridge);

  std::vector<BatchMatrix> dh_enc(cache.encoder.h.size());
  BatchMatrix& last = dh_enc.back();
  last = dbridge.front();
  for (std::size_t t = 1; t < dbridge.size(); ++t) last += dbridge[t];
  layer_backward(
      p.encoder, cache.encoder, [&](std::size_t t) -> const BatchMatrix& { return cache.inputs[t]; }, dh_enc,
      grad.encoder, nullptr);
  return result;
}

SequenceBatch make_batch(const timeseries::WindowSet& windows, std::span<const std::size_t> indices) {
  const auto steps = windows.input_length;
  const auto nf = windows.n_features;
  SequenceBatch batch(steps, BatchMatrix(static_cast<Eigen::Index>(nf), static_cast<Eigen::Index>(indices.size())));
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const auto in = windows.input(indices[b]);
    for (std::size_t t = 0; t < steps; ++t) {
      for (std::size_t f = 0; f < nf; ++f) {
        batch[t](static_cast<Eigen::Index>(f), static_cast<Eigen::Index>(b)) = in[t * nf + f];
      }
    }
  }
  return batch;
}

BatchMatrix make_targets(const timeseries::WindowSet& windows, std::span<const std::size_t> indices) {
  BatchMatrix targets(static_cast<Eigen::Index>(windows.horizon), static_cast<Eigen::Index>(indices.size()));
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const auto tg = windows.target(indices[b]);
    for (std::size_t h = 0; h < windows.horizon; ++h) {
      targets(static_cast<Eigen::Index>(h), static_cast<Eigen::Index>(b)) = tg[h];
    }
  }
  return targets;
}

}  // namespace smartcast::lstm
