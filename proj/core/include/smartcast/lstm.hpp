#pragma once

#include <Eigen/Core>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "smartcast/timeseries.hpp"

namespace smartcast::lstm {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
// One column per sample.
using BatchMatrix = Eigen::MatrixXd;
// One matrix (input_dim x batch) per time step.
using SequenceBatch = std::vector<BatchMatrix>;

enum class Gate : int { input = 0, forget = 1, output = 2, cell = 3 };
inline constexpr int kGateCount = 4;

// LSTM layer parameters. The four gate blocks are stacked by row in the order
// input, forget, output, cell, so `W` is (4n x d), `U` is (4n x n), `b` is 4n.
// Row-major storage keeps each gate block contiguous.
struct LstmLayerParams {
  Matrix W;
  Matrix U;
  Vector b;

  LstmLayerParams() = default;
  LstmLayerParams(Eigen::Index input_dim, Eigen::Index hidden_dim);

  Eigen::Index input_dim() const { return W.cols(); }
  Eigen::Index hidden_dim() const { return U.cols(); }

  auto gate_W(Gate g) { return W.middleRows(static_cast<int>(g) * hidden_dim(), hidden_dim()); }
  auto gate_W(Gate g) const { return W.middleRows(static_cast<int>(g) * hidden_dim(), hidden_dim()); }
  auto gate_U(Gate g) { return U.middleRows(static_cast<int>(g) * hidden_dim(), hidden_dim()); }
  auto gate_U(Gate g) const { return U.middleRows(static_cast<int>(g) * hidden_dim(), hidden_dim()); }
  auto gate_b(Gate g) { return b.segment(static_cast<int>(g) * hidden_dim(), hidden_dim()); }
  auto gate_b(Gate g) const { return b.segment(static_cast<int>(g) * hidden_dim(), hidden_dim()); }
};

// Affine layer with linear activation.
struct DenseParams {
  Matrix weight;  // out x in
  Vector bias;    // out

  DenseParams() = default;
  DenseParams(Eigen::Index in_dim, Eigen::Index out_dim);
};

struct Architecture {
  int input_dim = 0;
  int encoder_hidden = 0;
  int decoder_hidden = 0;
  int head_hidden = 0;
  int horizon = 0;
  // Adds the last scaled input of the target feature to every output step,
  // so the network learns the change from the last observation.
  bool residual = false;

  // Soil moisture: 4 features in, 200/200 LSTM units, 100-unit dense head, 14 days out.
  static Architecture soil(int input_dim = static_cast<int>(timeseries::kFeatureCount)) {
    return {input_dim, 200, 200, 100, static_cast<int>(timeseries::kDefaultHorizon)};
  }
  // Vegetation index: (value, days-to-target) in, 50/50 LSTM units, 20-unit head, 1 step out.
  static Architecture index() { return {2, 50, 50, 20, 1}; }

  void validate() const;

  friend bool operator==(const Architecture&, const Architecture&) = default;
};

// All trainable tensors of an encoder-decoder. Gradients and Adam moments use
// the same type.
struct Seq2SeqParams {
  LstmLayerParams encoder;
  LstmLayerParams decoder;
  DenseParams head_hidden;
  DenseParams head_out;

  Seq2SeqParams() = default;
  explicit Seq2SeqParams(const Architecture& arch);

  // Visits every tensor in checkpoint order: encoder W_i..W_g, U_i..U_g,
  // b_i..b_g; decoder likewise; head_hidden weight, bias; head_out weight, bias.
  void for_each_tensor(const std::function<void(std::string_view, std::span<double>)>& fn);
  void for_each_tensor(const std::function<void(std::string_view, std::span<const double>)>& fn) const;

  std::size_t parameter_count() const;
  void set_zero();
};

class Seq2SeqModel {
 public:
  Seq2SeqModel();
  explicit Seq2SeqModel(const Architecture& arch);
  Seq2SeqModel(const Seq2SeqModel& other);
  Seq2SeqModel& operator=(const Seq2SeqModel& other);
  Seq2SeqModel(Seq2SeqModel&&) noexcept = default;
  Seq2SeqModel& operator=(Seq2SeqModel&&) noexcept = default;

  const Architecture& architecture() const { return arch_; }
  const Seq2SeqParams& params() const { return params_; }
  // Any mutable access invalidates forward caches taken before it.
  Seq2SeqParams& mutable_params() {
    ++generation_;
    return params_;
  }

  // Maps model inputs to scaled units and the target feature back.
  const timeseries::Scaler& scaler() const { return scaler_; }
  void set_scaler(timeseries::Scaler scaler);
  std::size_t target_feature() const { return target_feature_; }
  void set_target_feature(std::size_t feature);

  std::uint64_t uid() const { return uid_; }
  std::uint64_t generation() const { return generation_; }

 private:
  Architecture arch_;
  Seq2SeqParams params_;
  timeseries::Scaler scaler_;
  std::size_t target_feature_ = 0;
  std::uint64_t uid_;
  std::uint64_t generation_ = 0;
};

// Glorot-uniform weights in +-sqrt(6 / (fan_in + fan_out)) per gate block,
// zero biases except the forget gate, which starts at 1.
Seq2SeqModel init_params(const Architecture& arch, std::uint64_t seed);

struct CellState {
  Vector h;
  Vector c;
};

CellState lstm_cell_forward(const LstmLayerParams& params, const Vector& x, const Vector& h_prev,
                            const Vector& c_prev);

struct LayerCache {
  std::vector<BatchMatrix> gates;  // post-activation, 4n x B
  std::vector<BatchMatrix> c;
  std::vector<BatchMatrix> tanh_c;
  std::vector<BatchMatrix> h;
};

struct ForwardCache {
  std::uint64_t model_uid = 0;
  std::uint64_t model_generation = 0;
  SequenceBatch inputs;
  LayerCache encoder;
  LayerCache decoder;
  std::vector<BatchMatrix> head_hidden;  // per decoder step, head_hidden x B
  BatchMatrix output;                    // horizon x B
};

// Encoder consumes all steps from a zero state; its final hidden state is fed
// as the decoder input at every horizon step (decoder state starts at zero);
// each decoder output goes through the two dense layers. Returns horizon x B.
// Residual models add the last input of the target feature to every row.
BatchMatrix seq2seq_forward(const Seq2SeqModel& model, const SequenceBatch& inputs, ForwardCache* cache = nullptr);

// Single sample: `sequence` is (steps x input_dim), result has horizon entries.
Vector seq2seq_forward(const Seq2SeqModel& model, const Matrix& sequence);

enum class Loss { mse, mae };

std::string_view to_string(Loss loss);
Loss loss_from_string(std::string_view name);

// Mean over the batch of the per-sample mean over horizon steps.
double loss_value(const BatchMatrix& prediction, const BatchMatrix& target, Loss loss);

struct BackwardResult {
  Seq2SeqParams grads;
  double loss = 0.0;
};

// Exact gradients of loss_value w.r.t. every parameter. Throws std::logic_error
// if `cache` was not produced by this model in its current state.
BackwardResult backward(const Seq2SeqModel& model, const ForwardCache& cache, const BatchMatrix& target, Loss loss);

SequenceBatch make_batch(const timeseries::WindowSet& windows, std::span<const std::size_t> indices);
BatchMatrix make_targets(const timeseries::WindowSet& windows, std::span<const std::size_t> indices);

struct GradientCheckOptions {
  double epsilon = 1e-5;
  double tolerance = 1e-4;
  // 0 sweeps every coordinate; otherwise this many random coordinates per tensor.
  std::size_t coordinates_per_tensor = 0;
  std::uint64_t seed = 0;
  Loss loss = Loss::mse;
};

struct TensorCheck {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

struct GradientCheckReport {
  double max_rel_error = 0.0;
  std::string worst_tensor;
  std::size_t worst_index = 0;
  std::size_t coordinates_checked = 0;
  bool passed = true;
  std::vector<TensorCheck> tensors;
};

// Compares analytic gradients against (L(theta+eps) - L(theta-eps)) / 2eps.
// Failures are reported, not thrown; epsilon <= 0 is std::invalid_argument.
GradientCheckReport gradient_check(const Seq2SeqModel& model, const Matrix& input, const Vector& target,
                                   const GradientCheckOptions& options = {});
// Same, against caller-supplied gradients (used to exercise fault detection).
GradientCheckReport gradient_check(const Seq2SeqModel& model, const Matrix& input, const Vector& target,
                                   const Seq2SeqParams& analytic, const GradientCheckOptions& options = {});

struct TrainConfig {
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::size_t epochs = 60;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  Loss loss = Loss::mse;

  void validate() const;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct AdamState {
  std::uint64_t step = 0;
  std::vector<double> m;
  std::vector<double> v;
};

// Bias-corrected Adam over a flat parameter vector. Throws NumericError
// before touching anything if a gradient is not finite.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               const TrainConfig& config);
void adam_step(Seq2SeqModel& model, const Seq2SeqParams& grads, AdamState& state, const TrainConfig& config);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
};

// Mini-batch training on pre-scaled windows. Shuffles with a fixed-seed
// generator; keeps the parameters of the epoch with the lowest validation loss
// (training loss when `val` is empty). Throws NumericError on divergence.
TrainResult train(Seq2SeqModel& model, const timeseries::WindowSet& train_set, const timeseries::WindowSet& val_set,
                  const TrainConfig& config, const std::function<void(const EpochRecord&)>& on_epoch = {});

double evaluate(const Seq2SeqModel& model, const timeseries::WindowSet& windows, Loss loss);

// Forward pass over raw inputs in original units: the model scaler is applied
// to the inputs and inverted on the target feature of the outputs.
Vector predict(const Seq2SeqModel& model, const Matrix& raw_sequence);

// Predictions for every window of an already-scaled set, in original units.
// Row-major [sample][horizon step].
std::vector<double> predict_windows(const Seq2SeqModel& model, const timeseries::WindowSet& scaled_windows);

double rmse(std::span<const double> prediction, std::span<const double> target);
double mae(std::span<const double> prediction, std::span<const double> target);

inline constexpr std::string_view kCheckpointMagic = "SMLSTM1\n";

struct Checkpoint {
  Seq2SeqModel model;
  std::optional<TrainConfig> config;
};

// Binary checkpoint: magic, one line of JSON header, then parameters as
// little-endian float64 in Seq2SeqParams::for_each_tensor order.
void write_checkpoint(std::ostream& out, const Seq2SeqModel& model, const TrainConfig* config = nullptr);
void save_checkpoint(const std::filesystem::path& path, const Seq2SeqModel& model, const TrainConfig* config = nullptr);
Checkpoint read_checkpoint(std::istream& in);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace smartcast::lstm
