#pragma once

#include <ostream>

#include "mapfdt/dt/model.hpp"

namespace mapfdt::dt {

struct TrainConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.01;  // decoupled; applied to >=2-d tensors only
  double grad_clip = 1.0;      // global norm; <= 0 disables
  int batch_size = 32;
  int64_t max_steps = 2000;
  int warmup_steps = 100;
  double stop_accuracy = -1.0;  // stop once a full-corpus pass reaches this
  int log_every = 25;
  bool deterministic = true;

  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);
};

template <class T>
struct TrainState {
  DTModel<T> model;
  std::vector<std::vector<T>> adam_m;  // aligned with model.params().tensors
  std::vector<std::vector<T>> adam_v;
  int64_t step = 0;
  Rng rng;
  double running_loss = 0.0;      // EMA, alpha
  double running_accuracy = 0.0;

  explicit TrainState(DTModel<T> m, uint64_t seed);
  static TrainState fresh(const DTConfig& config, uint64_t seed);
};

struct StepStats {
  double loss = 0.0;
  double accuracy = 0.0;
  double grad_norm = 0.0;
  double lr = 0.0;
  int real_positions = 0;
  bool applied = false;  // false for zero-weight (all padded) batches
};

struct NanLossError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// One optimizer update: masked cross-entropy, global grad-norm clip, AdamW.
// Zero-weight batches report loss 0 and change nothing.
template <class T>
StepStats train_step(TrainState<T>& state, const TokenBatch& batch, const TrainConfig& config);

struct TrainRunResult {
  int64_t steps = 0;
  double final_loss = 0.0;
  double final_accuracy = 0.0;   // last full-corpus accuracy when measured
  bool reached_stop_accuracy = false;
};

// Epoch loop over chunks with deterministic shuffling from state.rng.
// csv_log, when given, receives "step,loss,accuracy,grad_norm" lines.
template <class T>
TrainRunResult train_on_chunks(TrainState<T>& state, std::span<const TrajectoryChunk> chunks,
                               const TrainConfig& config, std::ostream* csv_log = nullptr);

// Forward-only action accuracy over a chunk set.
template <class T>
double evaluate_accuracy(DTModel<T>& model, std::span<const TrajectoryChunk> chunks,
                         int batch_size = 64);

}  // namespace mapfdt::dt
