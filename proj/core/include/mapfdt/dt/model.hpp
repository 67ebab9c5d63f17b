#pragma once

#include <memory>
#include <span>

#include "mapfdt/dataset.hpp"
#include "mapfdt/dt/config.hpp"
#include "mapfdt/dt/tensor.hpp"
#include "mapfdt/env.hpp"
#include "mapfdt/util/rng.hpp"

namespace mapfdt::dt {

// One training batch of (rtg, obs, action) triples with per-slot masks.
// Padded slots must be zero; the model additionally zeroes their embeddings,
// excludes them from attention, and gives them zero loss weight.
struct TokenBatch {
  int batch = 0;
  int context = 0;
  std::vector<double> rtg;
  std::vector<Observation> obs;
  std::vector<uint8_t> actions;
  std::vector<int> timesteps;
  std::vector<uint8_t> mask;

  static TokenBatch from_chunks(std::span<const TrajectoryChunk> chunks);
  size_t slots() const { return size_t(batch) * size_t(context); }
};

// Decision-transformer policy network: a convolutional observation encoder
// feeding a decoder-only transformer over the interleaved token stream
// (R_1, o_1, a_1, R_2, ...). Action logits are read at each observation
// position. Forward and backward passes are written out explicitly so the
// analytic gradients can be verified against finite differences.
template <class T>
class DTModel {
 public:
  explicit DTModel(DTConfig config);
  DTModel(const DTModel& other);
  DTModel(DTModel&&) noexcept;
  DTModel& operator=(const DTModel& other);
  DTModel& operator=(DTModel&&) noexcept;
  ~DTModel();

  // fresh seeded initialization (normal 0.02 weights, zero biases, unit gains)
  static DTModel initialized(const DTConfig& config);

  const DTConfig& config() const { return config_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }

  struct Output {
    std::vector<T> logits;  // batch x context x vocab, zeros past the padded tail
    double loss = 0.0;      // masked mean cross-entropy; 0 when no real slots
    double accuracy = 0.0;
    int real_positions = 0;
  };

  // Inference/verification pass; gradients untouched. Uses its own scratch
  // space, so concurrent calls on one model are safe.
  Output forward(const TokenBatch& batch, bool capture_attention = false) const;
  // Adds dLoss/dParam into every tensor's gradient buffer. Reuses a member
  // workspace across steps; callers need exclusive ownership while training.
  Output forward_backward(const TokenBatch& batch);

  // Observation encoder output (embedding vector of length embed_dim).
  std::vector<T> encode_obs(const Observation& obs) const;

  // Next action from the most recent <= K transitions. The last slot carries
  // the current rtg and observation; its action field is ignored. Greedy
  // argmax unless sample is set (then seeded softmax sampling at the given
  // temperature via rng).
  Action predict_action(std::span<const Transition> history, bool sample = false,
                        Rng* rng = nullptr, double temperature = 1.0) const;

  // Same, with per-slot observation embeddings precomputed via encode_obs
  // (policy hot path avoids re-encoding the whole window each step).
  struct CachedSlot {
    const T* obs_embed = nullptr;
    double rtg = 0.0;
    uint8_t action = 0;
    int timestep = 0;
  };
  Action predict_action_cached(std::span<const CachedSlot> history, bool sample = false,
                               Rng* rng = nullptr, double temperature = 1.0) const;

  // Attention weights of the last forward(capture_attention=true) call:
  // layers x batch x heads x seq x seq, flattened.
  const std::vector<T>& attention_record() const { return attention_record_; }


  int64_t param_count() const { return params_.param_count(); }

 private:
  struct Workspace;

  void init_params(Rng& rng);
  Output run(const TokenBatch& batch, bool backward, bool capture_attention, Workspace& ws);
  std::vector<T> action_logits_for_history(std::span<const CachedSlot> slots) const;

  DTConfig config_;
  ParamStore<T> params_;
  std::unique_ptr<Workspace> ws_;
  std::vector<T> attention_record_;
};

using DTModelF = DTModel<float>;
using DTModelD = DTModel<double>;

}  // namespace mapfdt::dt
