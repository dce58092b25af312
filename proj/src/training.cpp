#include "effnet/training.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <numeric>

#include "effnet/model_zoo.hpp"

namespace effnet {

void validate_train_config(const TrainConfig& cfg) {
  if (!(cfg.learning_rate > 0.0) || !std::isfinite(cfg.learning_rate)) {
    throw ArgumentError("learning_rate must be a positive finite number");
  }
  if (cfg.batch_size == 0) throw ArgumentError("batch_size must be positive");
  if (cfg.max_epochs == 0) throw ArgumentError("max_epochs must be positive");
  if (!(cfg.adam_beta1 > 0.0 && cfg.adam_beta1 < 1.0)) {
    throw ArgumentError("adam_beta1 must lie in (0, 1)");
  }
  if (!(cfg.adam_beta2 > 0.0 && cfg.adam_beta2 < 1.0)) {
    throw ArgumentError("adam_beta2 must lie in (0, 1)");
  }
  if (!(cfg.adam_epsilon > 0.0)) throw ArgumentError("adam_epsilon must be positive");
}

template <typename T>
LossResult<T> cross_entropy(const BasicTensor<T>& pred, const BasicTensor<T>& target) {
  if (pred.rank() != 2 || pred.shape() != target.shape()) {
    throw ShapeError("cross_entropy", "pred " + shape_string(pred.shape()) + " vs target " +
                                          shape_string(target.shape()));
  }
  const std::size_t n = pred.extent(0), c = pred.extent(1);
  if (n == 0) throw ShapeError("cross_entropy", "empty batch");
  LossResult<T> out;
  out.logits_grad = BasicTensor<T>(pred.shape());
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      const std::size_t k = i * c + j;
      if (target[k] != T(0)) {
        const double p = std::max(static_cast<double>(pred[k]), 1e-12);
        total -= static_cast<double>(target[k]) * std::log(p);
      }
      out.logits_grad[k] = (pred[k] - target[k]) / static_cast<T>(n);
    }
  }
  out.loss = total / static_cast<double>(n);
  return out;
}

template LossResult<float> cross_entropy(const BasicTensor<float>&, const BasicTensor<float>&);
template LossResult<double> cross_entropy(const BasicTensor<double>&, const BasicTensor<double>&);

template <typename T>
void adam_step(BasicParameterSet<T>& params, const BasicParameterSet<T>& grads,
               BasicAdamState<T>& state, const TrainConfig& cfg) {
  if (grads.size() != params.size() || state.m.size() != params.size() ||
      state.v.size() != params.size()) {
    throw ShapeError("adam_step", "parameter, gradient and moment sets differ in size");
  }
  for (const auto& g : grads) {
    if (g.value.shape() != params.at(g.name).shape() ||
        state.m.at(g.name).shape() != g.value.shape() ||
        state.v.at(g.name).shape() != g.value.shape()) {
      throw ShapeError("adam_step", "shape mismatch for '" + g.name + "'");
    }
    for (T x : g.value.values()) {
      if (!std::isfinite(static_cast<double>(x))) {
        throw NumericError("non-finite gradient in '" + g.name + "' at step " +
                           std::to_string(state.t + 1));
      }
    }
  }
  state.t += 1;
  const double t = static_cast<double>(state.t);
  // Update arithmetic runs in double; only the stored moments and
  // parameters take the tensor precision.
  const double b1 = cfg.adam_beta1;
  const double b2 = cfg.adam_beta2;
  const double bc1 = 1.0 - std::pow(b1, t);
  const double bc2 = 1.0 - std::pow(b2, t);
  const double lr = cfg.learning_rate;
  const double eps = cfg.adam_epsilon;
  for (auto& p : params) {
    const auto g = grads.at(p.name).data();
    auto m = state.m.at(p.name).data();
    auto v = state.v.at(p.name).data();
    auto w = p.value.data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = static_cast<double>(g[i]);
      const double mi = b1 * static_cast<double>(m[i]) + (1.0 - b1) * gi;
      const double vi = b2 * static_cast<double>(v[i]) + (1.0 - b2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double step = lr * (mi / bc1) / (std::sqrt(vi / bc2) + eps);
      w[i] = static_cast<T>(static_cast<double>(w[i]) - step);
    }
  }
}

template void adam_step(ParameterSet&, const ParameterSet&, BasicAdamState<float>&,
                        const TrainConfig&);
template void adam_step(ParameterSet64&, const ParameterSet64&, BasicAdamState<double>&,
                        const TrainConfig&);

TrainState init_train_state(const ArchitectureSpec& arch, const TrainConfig& cfg) {
  validate_train_config(cfg);
  validate_architecture(arch);
  TrainState s;
  s.params = init_params<float>(arch, derive_seed(cfg.seed, 1));
  s.adam = AdamState::zeros_like(s.params);
  s.rng = Rng(derive_seed(cfg.seed, 2));
  return s;
}

namespace {

bool ends_in_softmax(const ArchitectureSpec& arch) {
  return !arch.layers.empty() && arch.layers.back().kind == LayerKind::Softmax;
}

Tensor one_hot_batch(const std::vector<std::size_t>& labels, std::span<const std::size_t> idx,
                     std::size_t num_classes) {
  Tensor t({idx.size(), num_classes});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const std::size_t label = labels.at(idx[i]);
    if (label >= num_classes) throw ArgumentError("label index out of range for the model");
    t[i * num_classes + label] = 1.0f;
  }
  return t;
}

void check_dataset(const LabeledImages& data, const ArchitectureSpec& arch, const char* what) {
  if (data.size() == 0) throw ArgumentError(std::string(what) + " set is empty");
  if (data.labels.size() != data.images.size()) {
    throw ArgumentError(std::string(what) + " set has mismatched image and label counts");
  }
  const Shape want{arch.input.height, arch.input.width, arch.input.channels};
  for (const auto& img : data.images) {
    if (img.shape() != want) {
      throw ShapeError(what, "image " + shape_string(img.shape()) + " does not match model input " +
                                 shape_string(want));
    }
  }
}

// One optimization step on the given batch; returns the batch loss.
double train_batch(const ArchitectureSpec& arch, const Tensor& batch, const Tensor& targets,
                   const TrainConfig& cfg, TrainState& state) {
  ForwardPass<float> pass = forward(arch, state.params, batch, Mode::Train, &state.rng);
  const bool fused = ends_in_softmax(arch);
  const Tensor probs = fused ? pass.output : softmax(pass.output);
  LossResult<float> loss = cross_entropy(probs, targets);
  if (!std::isfinite(loss.loss)) {
    throw NumericError("non-finite training loss at epoch " + std::to_string(state.epoch + 1));
  }
  const std::size_t depth = fused ? arch.layers.size() - 1 : arch.layers.size();
  BackwardPass<float> back = backward(arch, state.params, pass, loss.logits_grad, depth);
  adam_step(state.params, back.grads, state.adam, cfg);
  return loss.loss;
}

} // namespace

std::vector<std::size_t> predict_labels(const ArchitectureSpec& arch, const ParameterSet& params,
                                        const std::vector<Tensor>& images, std::size_t batch_size) {
  if (batch_size == 0) throw ArgumentError("batch_size must be positive");
  std::vector<std::size_t> out;
  out.reserve(images.size());
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < images.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, images.size() - start);
    idx.resize(n);
    std::iota(idx.begin(), idx.end(), start);
    const Tensor probs = predict(arch, params, stack_batch(images, idx));
    const std::size_t c = probs.extent(1);
    for (std::size_t i = 0; i < n; ++i) {
      const float* row = probs.data().data() + i * c;
      out.push_back(static_cast<std::size_t>(std::max_element(row, row + c) - row));
    }
  }
  return out;
}

double dataset_loss(const ArchitectureSpec& arch, const ParameterSet& params,
                    const LabeledImages& data, std::size_t batch_size) {
  if (data.size() == 0) throw ArgumentError("dataset_loss: empty dataset");
  double total = 0.0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, data.size() - start);
    idx.resize(n);
    std::iota(idx.begin(), idx.end(), start);
    const Tensor probs = predict(arch, params, stack_batch(data.images, idx));
    total += cross_entropy(probs, one_hot_batch(data.labels, idx, probs.extent(1))).loss *
             static_cast<double>(n);
  }
  return total / static_cast<double>(data.size());
}

void train(const ArchitectureSpec& arch, const LabeledImages& train_set,
           const LabeledImages& val_set, const TrainConfig& cfg, const AugmentConfig& augment_cfg,
           TrainState& state, const TrainHooks& hooks) {
  validate_train_config(cfg);
  validate_augment(augment_cfg);
  check_dataset(train_set, arch, "training");
  check_dataset(val_set, arch, "validation");
  const std::size_t n = train_set.size();

  std::vector<std::size_t> order(n);
  std::vector<Tensor> augmented;
  while (!state.stopped && state.epoch < cfg.max_epochs) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    state.rng.shuffle(std::span<std::size_t>(order));

    double loss_sum = 0.0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t bs = std::min(cfg.batch_size, n - start);
      const std::span<const std::size_t> idx(order.data() + start, bs);
      Tensor batch;
      if (augment_cfg.enabled) {
        augmented.clear();
        for (std::size_t i : idx) augmented.push_back(augment(train_set.images[i], augment_cfg, state.rng));
        std::vector<std::size_t> local(bs);
        std::iota(local.begin(), local.end(), std::size_t{0});
        batch = stack_batch(augmented, local);
      } else {
        batch = stack_batch(train_set.images, idx);
      }
      const Tensor targets = one_hot_batch(train_set.labels, idx, arch.num_classes);
      loss_sum += train_batch(arch, batch, targets, cfg, state) * static_cast<double>(bs);
    }

    EpochRecord rec;
    rec.epoch = state.epoch + 1;
    rec.train_loss = loss_sum / static_cast<double>(n);
    const auto predicted = predict_labels(arch, state.params, val_set.images, cfg.batch_size);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i) correct += predicted[i] == val_set.labels[i];
    rec.val_accuracy = static_cast<double>(correct) / static_cast<double>(val_set.size());
    rec.eval_loss = cfg.track_eval_loss ? dataset_loss(arch, state.params, train_set, cfg.batch_size)
                                        : std::numeric_limits<double>::quiet_NaN();

    state.epoch = rec.epoch;
    state.history.push_back(rec);
    if (rec.val_accuracy > state.best_val_accuracy) {
      state.best_val_accuracy = rec.val_accuracy;
      state.best_epoch = rec.epoch;
      state.best_params = state.params;
      state.stale_epochs = 0;
    } else if (++state.stale_epochs > cfg.early_stop_patience) {
      state.stopped = true;
    }
    if (hooks.on_epoch_end && !hooks.on_epoch_end(state)) return;
  }
  if (cfg.track_eval_loss) check_loss_monotonic(state);
}

std::size_t check_loss_monotonic(TrainState& state) {
  std::size_t increases = 0;
  const auto& h = state.history;
  for (std::size_t i = 5; i < h.size(); ++i) {
    if (std::isnan(h[i].eval_loss) || std::isnan(h[i - 1].eval_loss)) continue;
    if (h[i].eval_loss > h[i - 1].eval_loss) {
      ++increases;
      std::string msg = "training-set loss rose at epoch " + std::to_string(h[i].epoch);
      if (std::find(state.warnings.begin(), state.warnings.end(), msg) == state.warnings.end()) {
        state.warnings.push_back(std::move(msg));
      }
    }
  }
  return increases;
}

namespace {

void append_number(std::string& out, double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  out.append(buf, res.ptr);
}

} // namespace

std::string history_csv(const std::vector<EpochRecord>& history) {
  std::string out = "epoch,train_loss,val_accuracy\n";
  for (const auto& r : history) {
    out += std::to_string(r.epoch);
    out += ',';
    append_number(out, r.train_loss);
    out += ',';
    append_number(out, r.val_accuracy);
    out += '\n';
  }
  return out;
}

} // namespace effnet
