#include "mapfdt/dt/trainer.hpp"

#include <cmath>
#include <nlohmann/json.hpp>

namespace mapfdt::dt {

using nlohmann::json;

std::string TrainConfig::to_json() const {
  json j;
  j["lr"] = lr;
  j["beta1"] = beta1;
  j["beta2"] = beta2;
  j["adam_eps"] = adam_eps;
  j["weight_decay"] = weight_decay;
  j["grad_clip"] = grad_clip;
  j["batch_size"] = batch_size;
  j["max_steps"] = max_steps;
  j["warmup_steps"] = warmup_steps;
  j["stop_accuracy"] = stop_accuracy;
  j["log_every"] = log_every;
  j["deterministic"] = deterministic;
  return j.dump(2);
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  json j = json::parse(text);
  TrainConfig c;
  c.lr = j.value("lr", c.lr);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.adam_eps = j.value("adam_eps", c.adam_eps);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.max_steps = j.value("max_steps", c.max_steps);
  c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
  c.stop_accuracy = j.value("stop_accuracy", c.stop_accuracy);
  c.log_every = j.value("log_every", c.log_every);
  c.deterministic = j.value("deterministic", c.deterministic);
  return c;
}

template <class T>
TrainState<T>::TrainState(DTModel<T> m, uint64_t seed) : model(std::move(m)), rng(seed) {
  for (const Tensor<T>& t : model.params().tensors) {
    adam_m.emplace_back(t.size(), T(0));
    adam_v.emplace_back(t.size(), T(0));
  }
}

template <class T>
TrainState<T> TrainState<T>::fresh(const DTConfig& config, uint64_t seed) {
  return TrainState(DTModel<T>::initialized(config), seed);
}

template <class T>
StepStats train_step(TrainState<T>& state, const TokenBatch& batch, const TrainConfig& config) {
  StepStats stats;
  auto& params = state.model.params();
  params.zero_grads();

  typename DTModel<T>::Output out;
  try {
    out = state.model.forward_backward(batch);
  } catch (const std::runtime_error& e) {
    throw NanLossError(std::string("train_step aborted at step ") + std::to_string(state.step) +
                       ": " + e.what());
  }
  stats.loss = out.loss;
  stats.accuracy = out.accuracy;
  stats.real_positions = out.real_positions;
  if (out.real_positions == 0) return stats;  // zero-weight batch: no update

  // global gradient norm in double, for clipping and diagnostics
  double norm_sq = 0.0;
  for (const Tensor<T>& t : params.tensors)
    for (const T& g : t.g) norm_sq += double(g) * double(g);
  stats.grad_norm = std::sqrt(norm_sq);
  if (!std::isfinite(stats.grad_norm))
    throw NanLossError("train_step: non-finite gradient norm at step " +
                       std::to_string(state.step) + " (loss " + std::to_string(out.loss) + ")");
  double clip_scale = 1.0;
  if (config.grad_clip > 0 && stats.grad_norm > config.grad_clip)
    clip_scale = config.grad_clip / stats.grad_norm;

  state.step += 1;
  double lr = config.lr;
  if (config.warmup_steps > 0 && state.step < config.warmup_steps)
    lr = config.lr * double(state.step) / config.warmup_steps;
  stats.lr = lr;

  const double bc1 = 1.0 - std::pow(config.beta1, double(state.step));
  const double bc2 = 1.0 - std::pow(config.beta2, double(state.step));
  for (size_t ti = 0; ti < params.tensors.size(); ++ti) {
    Tensor<T>& t = params.tensors[ti];
    const bool decay = t.shape.size() >= 2;  // matrices, embeddings, conv kernels
    T* m = state.adam_m[ti].data();
    T* v = state.adam_v[ti].data();
    for (size_t i = 0; i < t.v.size(); ++i) {
      const double g = double(t.g[i]) * clip_scale;
      const double mi = config.beta1 * double(m[i]) + (1.0 - config.beta1) * g;
      const double vi = config.beta2 * double(v[i]) + (1.0 - config.beta2) * g * g;
      m[i] = T(mi);
      v[i] = T(vi);
      double update = (mi / bc1) / (std::sqrt(vi / bc2) + config.adam_eps);
      if (decay && config.weight_decay > 0) update += config.weight_decay * double(t.v[i]);
      t.v[i] = T(double(t.v[i]) - lr * update);
    }
  }
  stats.applied = true;

  const double alpha = 0.02;
  state.running_loss = (state.step == 1) ? stats.loss
                                         : (1 - alpha) * state.running_loss + alpha * stats.loss;
  state.running_accuracy = (state.step == 1)
                               ? stats.accuracy
                               : (1 - alpha) * state.running_accuracy + alpha * stats.accuracy;
  return stats;
}

template <class T>
double evaluate_accuracy(DTModel<T>& model, std::span<const TrajectoryChunk> chunks,
                         int batch_size) {
  int64_t correct_weighted = 0;
  int64_t total = 0;
  for (size_t begin = 0; begin < chunks.size(); begin += size_t(batch_size)) {
    size_t end = std::min(chunks.size(), begin + size_t(batch_size));
    TokenBatch batch = TokenBatch::from_chunks(chunks.subspan(begin, end - begin));
    auto out = model.forward(batch);
    correct_weighted += int64_t(std::llround(out.accuracy * out.real_positions));
    total += out.real_positions;
  }
  return total == 0 ? 0.0 : double(correct_weighted) / double(total);
}

template <class T>
TrainRunResult train_on_chunks(TrainState<T>& state, std::span<const TrajectoryChunk> chunks,
                               const TrainConfig& config, std::ostream* csv_log) {
  TrainRunResult result;
  if (chunks.empty()) return result;
  if (csv_log) (*csv_log) << "step,loss,accuracy,grad_norm,lr\n";

  std::vector<size_t> order(chunks.size());
  std::vector<TrajectoryChunk> batch_buf;
  while (state.step < config.max_steps) {
    // fresh identity before each shuffle so a resumed run sees the same
    // permutation as the uninterrupted one
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    state.rng.shuffle(order);
    for (size_t begin = 0; begin < order.size() && state.step < config.max_steps;
         begin += size_t(config.batch_size)) {
      size_t end = std::min(order.size(), begin + size_t(config.batch_size));
      batch_buf.clear();
      for (size_t i = begin; i < end; ++i) batch_buf.push_back(chunks[order[i]]);
      TokenBatch batch = TokenBatch::from_chunks(batch_buf);
      StepStats stats = train_step(state, batch, config);
      result.final_loss = stats.loss;
      if (csv_log && (state.step % config.log_every == 0 || state.step == 1))
        (*csv_log) << state.step << ',' << stats.loss << ',' << stats.accuracy << ','
                   << stats.grad_norm << ',' << stats.lr << '\n';
    }
    if (config.stop_accuracy > 0) {
      double acc = evaluate_accuracy(state.model, chunks, config.batch_size);
      result.final_accuracy = acc;
      if (acc >= config.stop_accuracy) {
        result.reached_stop_accuracy = true;
        break;
      }
    }
  }
  if (config.stop_accuracy <= 0)
    result.final_accuracy = evaluate_accuracy(state.model, chunks, config.batch_size);
  result.steps = state.step;
  return result;
}

template struct TrainState<float>;
template struct TrainState<double>;
template StepStats train_step<float>(TrainState<float>&, const TokenBatch&, const TrainConfig&);
template StepStats train_step<double>(TrainState<double>&, const TokenBatch&, const TrainConfig&);
template double evaluate_accuracy<float>(DTModel<float>&, std::span<const TrajectoryChunk>, int);
template double evaluate_accuracy<double>(DTModel<double>&, std::span<const TrajectoryChunk>,
                                          int);
template TrainRunResult train_on_chunks<float>(TrainState<float>&,
                                               std::span<const TrajectoryChunk>,
                                               const TrainConfig&, std::ostream*);
template TrainRunResult train_on_chunks<double>(TrainState<double>&,
                                                std::span<const TrajectoryChunk>,
                                                const TrainConfig&, std::ostream*);

}  // namespace mapfdt::dt
