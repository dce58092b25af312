#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "effnet/architecture.hpp"
#include "effnet/dataset.hpp"
#include "effnet/image.hpp"
#include "effnet/network.hpp"
#include "effnet/random.hpp"

namespace effnet {

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 8;
  std::size_t max_epochs = 30;
  std::size_t early_stop_patience = 5;
  std::uint64_t seed = 0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  // Per-epoch loss over the whole training set in Infer mode, used for the
  // monotonicity warning. Costs one extra forward pass per epoch.
  bool track_eval_loss = false;
};

void validate_train_config(const TrainConfig& cfg);

template <typename T> struct BasicAdamState {
  BasicParameterSet<T> m;
  BasicParameterSet<T> v;
  std::uint64_t t = 0;

  static BasicAdamState zeros_like(const BasicParameterSet<T>& params) {
    return {params.zeros_like(), params.zeros_like(), 0};
  }
  bool operator==(const BasicAdamState&) const = default;
};

using AdamState = BasicAdamState<float>;

template <typename T> struct LossResult {
  double loss = 0.0;
  // Gradient of the loss with respect to the pre-softmax logits,
  // (pred - target) / N.
  BasicTensor<T> logits_grad;
};

// Mean over the batch of -log(max(pred[target], 1e-12)). pred and target are
// [N, C]; target rows are one-hot.
template <typename T>
LossResult<T> cross_entropy(const BasicTensor<T>& pred, const BasicTensor<T>& target);

// One Adam step with bias correction. Throws NumericError naming the tensor
// if any gradient entry is not finite; nothing is updated in that case.
template <typename T>
void adam_step(BasicParameterSet<T>& params, const BasicParameterSet<T>& grads,
               BasicAdamState<T>& state, const TrainConfig& cfg);

struct EpochRecord {
  std::size_t epoch = 0; // 1-based
  double train_loss = 0.0;
  double val_accuracy = 0.0;
  double eval_loss = 0.0; // NaN unless TrainConfig::track_eval_loss
  bool operator==(const EpochRecord&) const = default;
};

// Everything needed to continue a run exactly where it left off.
struct TrainState {
  ParameterSet params;
  ParameterSet best_params; // empty until the first epoch completes
  AdamState adam;
  Rng rng;
  std::size_t epoch = 0; // completed epochs
  double best_val_accuracy = -1.0;
  std::size_t best_epoch = 0;
  std::size_t stale_epochs = 0;
  bool stopped = false;
  std::vector<EpochRecord> history;
  std::vector<std::string> warnings;

  // Parameters to use for inference: the best-validation set if any.
  const ParameterSet& inference_params() const { return best_params.empty() ? params : best_params; }
};

// Parameters from init_params(arch, derive_seed(seed, 1)); the training
// stream (shuffles, augmentation, dropout) is Rng(derive_seed(seed, 2)).
TrainState init_train_state(const ArchitectureSpec& arch, const TrainConfig& cfg);

struct TrainHooks {
  // Called after every epoch; returning false pauses training (the state can
  // be checkpointed and resumed later).
  std::function<bool(const TrainState&)> on_epoch_end;
};

// Runs epochs from state.epoch + 1 until max_epochs or early stopping.
// Each epoch shuffles the training order, augments each sample, and takes
// one Adam step per batch (the last batch may be short). Validation accuracy
// decides early stopping: the run stops once it has failed to improve
// (strictly) for more than `early_stop_patience` consecutive epochs, so
// patience 0 stops at the first non-improving epoch.
void train(const ArchitectureSpec& arch, const LabeledImages& train_set,
           const LabeledImages& val_set, const TrainConfig& cfg, const AugmentConfig& augment,
           TrainState& state, const TrainHooks& hooks = {});

// Argmax predictions in Infer mode, evaluated in chunks of `batch_size`.
std::vector<std::size_t> predict_labels(const ArchitectureSpec& arch, const ParameterSet& params,
                                        const std::vector<Tensor>& images, std::size_t batch_size);

// Mean cross-entropy over a dataset in Infer mode.
double dataset_loss(const ArchitectureSpec& arch, const ParameterSet& params,
                    const LabeledImages& data, std::size_t batch_size);

// Appends a warning for every epoch after the fifth whose eval_loss
// exceeds the previous epoch's. Returns the number of increases found.
std::size_t check_loss_monotonic(TrainState& state);

// "epoch,train_loss,val_accuracy" with shortest round-trip number formatting.
std::string history_csv(const std::vector<EpochRecord>& history);

struct Checkpoint {
  ArchitectureSpec arch;
  std::vector<std::string> classes;
  PreprocessConfig preprocess;
  TrainState state;
};

// Binary layout, all integers little-endian:
//   "EFNC" u32 version(=1)
//   u64 len + architecture JSON
//   u64 completed epochs
//   tensor table: u64 count, then per tensor
//     u32 name_len + name, u32 rank, rank x u64 extents, f32 data row-major
//     (parameters, then the best-validation copy under "best/<name>")
//   u64 Adam timestep, tensor table of "m/<name>" and "v/<name>"
//   u64 len + RNG state text
//   u64 len + metadata JSON (classes, preprocessing, early-stopping state,
//     history, warnings)
// Load verifies magic and version and throws FormatError on truncation or
// inconsistent content.
inline constexpr std::uint32_t kCheckpointVersion = 1;
void save_checkpoint(const std::string& path, const Checkpoint& checkpoint);
std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::string& path);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& source);

} // namespace effnet
