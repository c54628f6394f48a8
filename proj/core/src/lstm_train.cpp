#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "smartcast/error.hpp"
#include "smartcast/lstm.hpp"

namespace smartcast::lstm {

namespace {

// Below this magnitude gradients are compared on an absolute scale; central
// differences at eps=1e-5 carry roughly 1e-11 of round-off.
constexpr double kRelErrorFloor = 1e-6;
constexpr std::size_t kEvalBatch = 256;

SequenceBatch to_sequence(const Matrix& sequence) {
  SequenceBatch inputs(static_cast<std::size_t>(sequence.rows()));
  for (Eigen::Index t = 0; t < sequence.rows(); ++t) inputs[static_cast<std::size_t>(t)] = sequence.row(t).transpose();
  return inputs;
}

std::vector<std::span<double>> tensor_spans(Seq2SeqParams& params, std::vector<std::string>* names = nullptr) {
  std::vector<std::span<double>> spans;
  params.for_each_tensor([&](std::string_view name, std::span<double> t) {
    spans.push_back(t);
    if (names != nullptr) names->emplace_back(name);
  });
  return spans;
}

// Fisher-Yates with raw generator output, so the permutation does not depend
// on the standard library's distribution implementation.
void shuffle_indices(std::vector<std::size_t>& idx, std::mt19937_64& rng) {
  for (std::size_t i = idx.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(idx[i - 1], idx[j]);
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be > 0");
  if (!(adam_beta1 > 0.0 && adam_beta1 < 1.0)) throw ConfigError("adam_beta1 must lie in (0, 1)");
  if (!(adam_beta2 > 0.0 && adam_beta2 < 1.0)) throw ConfigError("adam_beta2 must lie in (0, 1)");
  if (!(adam_epsilon > 0.0)) throw ConfigError("adam_epsilon must be > 0");
  if (batch_size == 0) throw ConfigError("batch_size must be > 0");
}

GradientCheckReport gradient_check(const Seq2SeqModel& model, const Matrix& input, const Vector& target,
                                   const GradientCheckOptions& options) {
  if (!(options.epsilon > 0.0)) throw std::invalid_argument("gradient_check: epsilon must be > 0");
  ForwardCache cache;
  seq2seq_forward(model, to_sequence(input), &cache);
  const BatchMatrix tgt = target;
  const BackwardResult analytic = backward(model, cache, tgt, options.loss);
  return gradient_check(model, input, target, analytic.grads, options);
}

GradientCheckReport gradient_check(const Seq2SeqModel& model, const Matrix& input, const Vector& target,
                                   const Seq2SeqParams& analytic, const GradientCheckOptions& options) {
  if (!(options.epsilon > 0.0)) throw std::invalid_argument("gradient_check: epsilon must be > 0");
  if (target.size() != model.architecture().horizon) throw std::invalid_argument("gradient_check: target length");

  const SequenceBatch inputs = to_sequence(input);
  const BatchMatrix tgt = target;
  Seq2SeqModel probe = model;
  std::vector<std::string> names;
  const auto probe_spans = tensor_spans(probe.mutable_params(), &names);
  std::vector<std::span<const double>> grad_spans;
  analytic.for_each_tensor([&](std::string_view, std::span<const double> t) { grad_spans.push_back(t); });
  if (grad_spans.size() != probe_spans.size()) throw std::invalid_argument("gradient_check: gradient shape mismatch");

  const auto loss_at = [&] { return loss_value(seq2seq_forward(probe, inputs), tgt, options.loss); };

  std::mt19937_64 rng(options.seed);
  GradientCheckReport report;
  report.worst_index = 0;
  for (std::size_t k = 0; k < probe_spans.size(); ++k) {
    const auto theta = probe_spans[k];
    if (grad_spans[k].size() != theta.size()) throw std::invalid_argument("gradient_check: gradient shape mismatch");

    std::vector<std::size_t> coords(theta.size());
    std::iota(coords.begin(), coords.end(), 0);
    if (options.coordinates_per_tensor > 0 && options.coordinates_per_tensor < coords.size()) {
      shuffle_indices(coords, rng);
      coords.resize(options.coordinates_per_tensor);
      std::sort(coords.begin(), coords.end());
    }

    TensorCheck tc{names[k], 0.0, coords.empty() ? 0 : coords.front(), coords.size()};
    for (std::size_t idx : coords) {
      const double saved = theta[idx];
      theta[idx] = saved + options.epsilon;
      const double up = loss_at();
      theta[idx] = saved - options.epsilon;
      const double down = loss_at();
      theta[idx] = saved;

      const double numeric = (up - down) / (2.0 * options.epsilon);
      const double a = grad_spans[k][idx];
      const double denom = std::max({std::abs(a), std::abs(numeric), kRelErrorFloor});
      double rel = std::abs(a - numeric) / denom;
      if (!std::isfinite(rel)) rel = std::numeric_limits<double>::infinity();
      if (rel > tc.max_rel_error) {
        tc.max_rel_error = rel;
        tc.worst_index = idx;
      }
    }
    report.coordinates_checked += coords.size();
    if (report.worst_tensor.empty() || tc.max_rel_error > report.max_rel_error) {
      report.max_rel_error = tc.max_rel_error;
      report.worst_tensor = tc.name;
      report.worst_index = tc.worst_index;
    }
    report.tensors.push_back(std::move(tc));
  }
  report.passed = report.max_rel_error < options.tolerance;
  return report;
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, const TrainConfig& config) {
  if (params.size() != grads.size()) throw std::invalid_argument("adam_step: params/grads size mismatch");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads[i])) {
      throw NumericError("adam_step: non-finite gradient at coordinate " + std::to_string(i) + " (step " +
                         std::to_string(state.step + 1) + ")");
    }
  }
  if (state.m.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw std::invalid_argument("adam_step: optimizer state does not match parameter count");
  }

  ++state.step;
  const double b1 = config.adam_beta1;
  const double b2 = config.adam_beta2;
  const double correction1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double correction2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
    state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
    const double m_hat = state.m[i] / correction1;
    const double v_hat = state.v[i] / correction2;
    params[i] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.adam_epsilon);
  }
}

void adam_step(Seq2SeqModel& model, const Seq2SeqParams& grads, AdamState& state, const TrainConfig& config) {
  // Flatten in canonical tensor order so one state vector covers the model.
  std::vector<double> flat_grads;
  flat_grads.reserve(grads.parameter_count());
  std::vector<std::string> bad;
  grads.for_each_tensor([&](std::string_view name, std::span<const double> t) {
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (!std::isfinite(t[i]) && bad.empty()) bad.push_back(std::string(name) + "[" + std::to_string(i) + "]");
    }
    flat_grads.insert(flat_grads.end(), t.begin(), t.end());
  });
  if (!bad.empty()) {
    throw NumericError("adam_step: non-finite gradient in " + bad.front() + " (step " + std::to_string(state.step + 1) +
                       ")");
  }

  std::vector<double> flat;
  flat.reserve(flat_grads.size());
  model.params().for_each_tensor(
      [&](std::string_view, std::span<const double> t) { flat.insert(flat.end(), t.begin(), t.end()); });
  adam_step(std::span<double>(flat), std::span<const double>(flat_grads), state, config);

  std::size_t offset = 0;
  model.mutable_params().for_each_tensor([&](std::string_view, std::span<double> t) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(offset), t.size(), t.begin());
    offset += t.size();
  });
}

double evaluate(const Seq2SeqModel& model, const timeseries::WindowSet& windows, Loss loss) {
  if (windows.empty()) throw std::invalid_argument("evaluate: empty window set");
  double total = 0.0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < windows.size(); start += kEvalBatch) {
    const std::size_t end = std::min(windows.size(), start + kEvalBatch);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const BatchMatrix pred = seq2seq_forward(model, make_batch(windows, idx));
    total += loss_value(pred, make_targets(windows, idx), loss) * static_cast<double>(idx.size());
  }
  return total / static_cast<double>(windows.size());
}

TrainResult train(Seq2SeqModel& model, const timeseries::WindowSet& train_set, const timeseries::WindowSet& val_set,
                  const TrainConfig& config, const std::function<void(const EpochRecord&)>& on_epoch) {
  config.validate();
  const Architecture& arch = model.architecture();
  if (train_set.empty()) throw DataError("train: empty training set");
  if (train_set.n_features != static_cast<std::size_t>(arch.input_dim) ||
      train_set.horizon != static_cast<std::size_t>(arch.horizon)) {
    throw std::invalid_argument("train: window shape does not match model architecture");
  }

  TrainResult result;
  if (config.epochs == 0) return result;

  std::mt19937_64 rng(config.seed);
  AdamState adam;
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  Seq2SeqParams best = model.params();
  double best_loss = std::numeric_limits<double>::infinity();
  ForwardCache cache;
  std::vector<std::size_t> batch_idx;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    shuffle_indices(order, rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      batch_idx.assign(order.begin() + static_cast<std::ptrdiff_t>(start), order.begin() + static_cast<std::ptrdiff_t>(end));
      seq2seq_forward(model, make_batch(train_set, batch_idx), &cache);
      const BackwardResult br = backward(model, cache, make_targets(train_set, batch_idx), config.loss);
      if (!std::isfinite(br.loss)) {
        throw NumericError("training diverged at epoch " + std::to_string(epoch) + ": loss is not finite");
      }
      epoch_loss += br.loss * static_cast<double>(batch_idx.size());
      adam_step(model, br.grads, adam, config);
    }

    EpochRecord rec{epoch, epoch_loss / static_cast<double>(train_set.size()), 0.0};
    rec.val_loss = val_set.empty() ? evaluate(model, train_set, config.loss) : evaluate(model, val_set, config.loss);
    if (!std::isfinite(rec.val_loss)) {
      throw NumericError("training diverged at epoch " + std::to_string(epoch) + ": validation loss is not finite");
    }
    if (rec.val_loss < best_loss) {
      best_loss = rec.val_loss;
      best = model.params();
      result.best_epoch = epoch;
    }
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  model.mutable_params() = best;
  return result;
}

Vector predict(const Seq2SeqModel& model, const Matrix& raw_sequence) {
  const auto& scaler = model.scaler();
  if (raw_sequence.cols() != model.architecture().input_dim) throw std::invalid_argument("predict: shape mismatch");
  Matrix scaled = raw_sequence;
  for (Eigen::Index t = 0; t < scaled.rows(); ++t) {
    for (Eigen::Index f = 0; f < scaled.cols(); ++f) scaled(t, f) = scaler.apply(static_cast<std::size_t>(f), scaled(t, f));
  }
  Vector out = seq2seq_forward(model, scaled);
  for (Eigen::Index h = 0; h < out.size(); ++h) out(h) = scaler.invert(model.target_feature(), out(h));
  return out;
}

std::vector<double> predict_windows(const Seq2SeqModel& model, const timeseries::WindowSet& scaled_windows) {
  const auto horizon = static_cast<std::size_t>(model.architecture().horizon);
  std::vector<double> out;
  out.reserve(scaled_windows.size() * horizon);
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < scaled_windows.size(); start += kEvalBatch) {
    const std::size_t end = std::min(scaled_windows.size(), start + kEvalBatch);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const BatchMatrix pred = seq2seq_forward(model, make_batch(scaled_windows, idx));
    for (Eigen::Index b = 0; b < pred.cols(); ++b) {
      for (Eigen::Index h = 0; h < pred.rows(); ++h) out.push_back(model.scaler().invert(model.target_feature(), pred(h, b)));
    }
  }
  return out;
}

double rmse(std::span<const double> prediction, std::span<const double> target) {
  if (prediction.empty() || prediction.size() != target.size()) throw std::invalid_argument("rmse: need equal non-empty inputs");
  double ss = 0.0;
  for (std::size_t i = 0; i < prediction.size(); ++i) ss += (prediction[i] - target[i]) * (prediction[i] - target[i]);
  return std::sqrt(ss / static_cast<double>(prediction.size()));
}

double mae(std::span<const double> prediction, std::span<const double> target) {
  if (prediction.empty() || prediction.size() != target.size()) throw std::invalid_argument("mae: need equal non-empty inputs");
  double s = 0.0;
  for (std::size_t i = 0; i < prediction.size(); ++i) s += std::abs(prediction[i] - target[i]);
  return s / static_cast<double>(prediction.size());
}

}  // namespace smartcast::lstm
