#include "mapfdt/dt/model.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace mapfdt::dt {

namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using CMapMat = Eigen::Map<const RowMat<T>>;
template <class T>
using StridedMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <class T>
using CStridedMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

constexpr double kLnEps = 1e-5;
constexpr int kObsPixels = Observation::kSize * Observation::kSize;  // 100
constexpr int kPooledPixels = 25;

template <class T>
inline T gelu(T x) {
  return x * T(0.5) * (T(1) + std::erf(x * T(M_SQRT1_2)));
}

template <class T>
inline T gelu_grad(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x * T(M_SQRT1_2)));
  const T pdf = T(0.3989422804014327) * std::exp(T(-0.5) * x * x);
  return cdf + x * pdf;
}

// y = layernorm(x) * g + b, row-wise; caches mean and reciprocal stddev
template <class T>
void layernorm_forward(const T* x, const T* g, const T* b, T* y, T* mean, T* rstd, int rows,
                       int d) {
  for (int r = 0; r < rows; ++r) {
    const T* xr = x + size_t(r) * d;
    T* yr = y + size_t(r) * d;
    T m = 0;
    for (int j = 0; j < d; ++j) m += xr[j];
    m /= T(d);
    T var = 0;
    for (int j = 0; j < d; ++j) {
      T c = xr[j] - m;
      var += c * c;
    }
    var /= T(d);
    T rs = T(1) / std::sqrt(var + T(kLnEps));
    mean[r] = m;
    rstd[r] = rs;
    for (int j = 0; j < d; ++j) yr[j] = (xr[j] - m) * rs * g[j] + b[j];
  }
}

// adds into dx, dg, db
template <class T>
void layernorm_backward(const T* x, const T* g, const T* mean, const T* rstd, const T* dy, T* dx,
                        T* dg, T* db, int rows, int d) {
  for (int r = 0; r < rows; ++r) {
    const T* xr = x + size_t(r) * d;
    const T* dyr = dy + size_t(r) * d;
    T* dxr = dx + size_t(r) * d;
    const T m = mean[r], rs = rstd[r];
    T mean_dxhat = 0, mean_dxhat_xhat = 0;
    for (int j = 0; j < d; ++j) {
      const T xhat = (xr[j] - m) * rs;
      const T dxhat = dyr[j] * g[j];
      mean_dxhat += dxhat;
      mean_dxhat_xhat += dxhat * xhat;
      dg[j] += dyr[j] * xhat;
      db[j] += dyr[j];
    }
    mean_dxhat /= T(d);
    mean_dxhat_xhat /= T(d);
    for (int j = 0; j < d; ++j) {
      const T xhat = (xr[j] - m) * rs;
      const T dxhat = dyr[j] * g[j];
      dxr[j] += rs * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
    }
  }
}

template <class T>
void add_bias_rows(T* y, const T* b, int rows, int cols) {
  for (int r = 0; r < rows; ++r) {
    T* yr = y + size_t(r) * cols;
    for (int j = 0; j < cols; ++j) yr[j] += b[j];
  }
}

template <class T>
void bias_grad_rows(const T* dy, T* db, int rows, int cols) {
  for (int r = 0; r < rows; ++r) {
    const T* dyr = dy + size_t(r) * cols;
    for (int j = 0; j < cols; ++j) db[j] += dyr[j];
  }
}

}  // namespace

TokenBatch TokenBatch::from_chunks(std::span<const TrajectoryChunk> chunks) {
  TokenBatch batch;
  if (chunks.empty()) return batch;
  batch.batch = int(chunks.size());
  batch.context = int(chunks.front().slots.size());
  const size_t n = batch.slots();
  batch.rtg.assign(n, 0.0);
  batch.obs.assign(n, Observation{});
  batch.actions.assign(n, 0);
  batch.timesteps.assign(n, 0);
  batch.mask.assign(n, 0);
  for (size_t b = 0; b < chunks.size(); ++b) {
    const TrajectoryChunk& chunk = chunks[b];
    if (int(chunk.slots.size()) != batch.context)
      throw std::invalid_argument("TokenBatch: chunks disagree on context length");
    for (int k = 0; k < batch.context; ++k) {
      size_t idx = b * size_t(batch.context) + size_t(k);
      const Transition& tr = chunk.slots[size_t(k)];
      batch.rtg[idx] = tr.rtg;
      batch.obs[idx] = tr.obs;
      batch.actions[idx] = tr.action;
      batch.timesteps[idx] = tr.timestep;
      batch.mask[idx] = chunk.mask[size_t(k)];
    }
  }
  return batch;
}

// ---------------------------------------------------------------------------
// workspace

template <class T>
struct DTModel<T>::Workspace {
  int B = 0, K = 0, Keff = 0, S = 0, n_real = 0;
  std::vector<int> real_slots;    // flat slot index (b*K + k) per real token
  std::vector<int> slot_to_real;  // flat slot index -> real index or -1
  std::vector<uint8_t> tok_real;  // B*S

  // observation encoder
  std::vector<T> col1, pre1, act1, col2, pre2, act2, pooled, obs_emb;
  // transformer stream
  std::vector<std::vector<T>> xs;    // layers+1 of [B*S, d]
  std::vector<std::vector<T>> xmid;  // per layer [B*S, d]
  struct LayerCache {
    std::vector<T> ln1_out, ln1_mean, ln1_rstd;
    std::vector<T> qkv, probs, ctx;
    std::vector<T> ln2_out, ln2_mean, ln2_rstd;
    std::vector<T> mlp_pre, mlp_act;
  };
  std::vector<LayerCache> layers;
  // head
  std::vector<T> obs_rows, hln_out, hln_mean, hln_rstd;

  // backward scratch
  std::vector<T> dx, dxmid, dln, dqkv, dctx, dmlp_pre, dmlp_act;
  std::vector<T> dobs_rows, dhln, dlogits;
  std::vector<T> dobs_emb, dpooled, dact2, dpre2w, dcol2, dact1, dpre1w;

  void resize(const DTConfig& cfg, int batch, int keff, int real, bool backward) {
    const int d = cfg.embed_dim;
    B = batch;
    Keff = keff;
    S = 3 * keff;
    n_real = real;
    const size_t rows = size_t(B) * size_t(S);
    const int c1 = cfg.conv_channels1, c2 = cfg.conv_channels2;
    const size_t px = size_t(n_real) * kObsPixels;

    col1.assign(px * 36, T(0));
    pre1.assign(px * c1, T(0));
    act1.assign(px * c1, T(0));
    col2.assign(px * 9 * c1, T(0));
    pre2.assign(px * c2, T(0));
    act2.assign(px * c2, T(0));
    pooled.assign(size_t(n_real) * kPooledPixels * c2, T(0));
    obs_emb.assign(size_t(n_real) * d, T(0));

    xs.resize(size_t(cfg.layers) + 1);
    for (auto& x : xs) x.assign(rows * d, T(0));
    xmid.resize(size_t(cfg.layers));
    for (auto& x : xmid) x.assign(rows * d, T(0));
    layers.resize(size_t(cfg.layers));
    for (auto& lc : layers) {
      lc.ln1_out.assign(rows * d, T(0));
      lc.ln1_mean.assign(rows, T(0));
      lc.ln1_rstd.assign(rows, T(0));
      lc.qkv.assign(rows * 3 * d, T(0));
      lc.probs.assign(size_t(B) * cfg.heads * S * S, T(0));
      lc.ctx.assign(rows * d, T(0));
      lc.ln2_out.assign(rows * d, T(0));
      lc.ln2_mean.assign(rows, T(0));
      lc.ln2_rstd.assign(rows, T(0));
      lc.mlp_pre.assign(rows * 4 * d, T(0));
      lc.mlp_act.assign(rows * 4 * d, T(0));
    }
    const size_t head_rows = size_t(B) * size_t(Keff);
    obs_rows.assign(head_rows * d, T(0));
    hln_out.assign(head_rows * d, T(0));
    hln_mean.assign(head_rows, T(0));
    hln_rstd.assign(head_rows, T(0));

    if (backward) {
      dx.assign(rows * d, T(0));
      dxmid.assign(rows * d, T(0));
      dln.assign(rows * d, T(0));
      dqkv.assign(rows * 3 * d, T(0));
      dctx.assign(rows * d, T(0));
      dmlp_pre.assign(rows * 4 * d, T(0));
      dmlp_act.assign(rows * 4 * d, T(0));
      dobs_rows.assign(head_rows * d, T(0));
      dhln.assign(head_rows * d, T(0));
      dlogits.assign(head_rows * cfg.action_vocab, T(0));
      dobs_emb.assign(size_t(n_real) * d, T(0));
      dpooled.assign(size_t(n_real) * kPooledPixels * c2, T(0));
      dact2.assign(px * c2, T(0));
      dpre2w.assign(px * c2, T(0));
      dcol2.assign(px * 9 * c1, T(0));
      dact1.assign(px * c1, T(0));
      dpre1w.assign(px * c1, T(0));
    }
  }
};

// ---------------------------------------------------------------------------
// construction / initialization

template <class T>
DTModel<T>::DTModel(DTConfig config) : config_(std::move(config)), ws_(new Workspace) {
  config_.validate();
  const int d = config_.embed_dim;
  const int c1 = config_.conv_channels1, c2 = config_.conv_channels2;
  params_.add("enc.conv1.w", {3, 3, 4, c1});
  params_.add("enc.conv1.b", {c1});
  params_.add("enc.conv2.w", {3, 3, c1, c2});
  params_.add("enc.conv2.b", {c2});
  params_.add("enc.fc.w", {kPooledPixels * c2, d});
  params_.add("enc.fc.b", {d});
  params_.add("embed.rtg.w", {1, d});
  params_.add("embed.rtg.b", {d});
  params_.add("embed.action.w", {config_.action_vocab, d});
  params_.add("embed.time.w", {config_.max_timestep, d});
  for (int l = 0; l < config_.layers; ++l) {
    const std::string p = "block" + std::to_string(l) + ".";
    params_.add(p + "ln1.g", {d});
    params_.add(p + "ln1.b", {d});
    params_.add(p + "attn.wqkv", {d, 3 * d});
    params_.add(p + "attn.bqkv", {3 * d});
    params_.add(p + "attn.wo", {d, d});
    params_.add(p + "attn.bo", {d});
    params_.add(p + "ln2.g", {d});
    params_.add(p + "ln2.b", {d});
    params_.add(p + "mlp.w1", {d, 4 * d});
    params_.add(p + "mlp.b1", {4 * d});
    params_.add(p + "mlp.w2", {4 * d, d});
    params_.add(p + "mlp.b2", {d});
  }
  params_.add("final_ln.g", {d});
  params_.add("final_ln.b", {d});
  params_.add("head.w", {d, config_.action_vocab});
  params_.add("head.b", {config_.action_vocab});

  if (params_.param_count() != config_.param_count())
    throw std::logic_error("DTModel: parameter layout disagrees with DTConfig::param_count");
}

template <class T>
DTModel<T>::DTModel(const DTModel& other)
    : config_(other.config_), params_(other.params_), ws_(new Workspace),
      attention_record_(other.attention_record_) {}

template <class T>
DTModel<T>::DTModel(DTModel&&) noexcept = default;

template <class T>
DTModel<T>& DTModel<T>::operator=(const DTModel& other) {
  if (this != &other) {
    config_ = other.config_;
    params_ = other.params_;
    ws_.reset(new Workspace);
    attention_record_ = other.attention_record_;
  }
  return *this;
}

template <class T>
DTModel<T>& DTModel<T>::operator=(DTModel&&) noexcept = default;

template <class T>
DTModel<T>::~DTModel() = default;

template <class T>
void DTModel<T>::init_params(Rng& rng) {
  for (Tensor<T>& t : params_.tensors) {
    const bool is_gain = t.name.ends_with("ln1.g") || t.name.ends_with("ln2.g") ||
                         t.name.ends_with("final_ln.g");
    const bool is_bias = t.name.ends_with(".b") || t.name.ends_with(".b1") ||
                         t.name.ends_with(".b2") || t.name.ends_with(".bqkv") ||
                         t.name.ends_with(".bo");
    if (is_gain) {
      std::fill(t.v.begin(), t.v.end(), T(1));
    } else if (is_bias) {
      std::fill(t.v.begin(), t.v.end(), T(0));
    } else if (t.name == "embed.time.w") {
      // zero so that timesteps beyond any training episode's length read as
      // "no time signal" instead of an untrained random vector
      std::fill(t.v.begin(), t.v.end(), T(0));
    } else {
      for (T& x : t.v) x = T(rng.normal() * 0.02);
    }
  }
}

template <class T>
DTModel<T> DTModel<T>::initialized(const DTConfig& config) {
  DTModel model(config);
  Rng rng(config.param_seed);
  model.init_params(rng);
  return model;
}

// ---------------------------------------------------------------------------
// observation encoder

namespace {

// gathers the 3x3 neighborhood (zero padded) of every pixel of every token
template <class T, class PixelFn>
void build_im2col(T* col, int n_tokens, int channels, PixelFn pixel) {
#pragma omp parallel for schedule(static)
  for (int tok = 0; tok < n_tokens; ++tok) {
    T* base = col + size_t(tok) * kObsPixels * 9 * channels;
    for (int pr = 0; pr < Observation::kSize; ++pr) {
      for (int pc = 0; pc < Observation::kSize; ++pc) {
        T* row = base + size_t(pr * Observation::kSize + pc) * 9 * channels;
        int w = 0;
        for (int kr = -1; kr <= 1; ++kr) {
          for (int kc = -1; kc <= 1; ++kc) {
            const int r = pr + kr, c = pc + kc;
            const bool inside =
                r >= 0 && r < Observation::kSize && c >= 0 && c < Observation::kSize;
            for (int ch = 0; ch < channels; ++ch)
              row[w * channels + ch] = inside ? pixel(tok, ch, r, c) : T(0);
            ++w;
          }
        }
      }
    }
  }
}

// scatter the im2col gradient back onto the source feature map
template <class T>
void col2im_accumulate(const T* dcol, T* dsrc, int n_tokens, int channels) {
#pragma omp parallel for schedule(static)
  for (int tok = 0; tok < n_tokens; ++tok) {
    const T* base = dcol + size_t(tok) * kObsPixels * 9 * channels;
    T* dst = dsrc + size_t(tok) * kObsPixels * channels;
    for (int pr = 0; pr < Observation::kSize; ++pr) {
      for (int pc = 0; pc < Observation::kSize; ++pc) {
        const T* row = base + size_t(pr * Observation::kSize + pc) * 9 * channels;
        int w = 0;
        for (int kr = -1; kr <= 1; ++kr) {
          for (int kc = -1; kc <= 1; ++kc) {
            const int r = pr + kr, c = pc + kc;
            if (r >= 0 && r < Observation::kSize && c >= 0 && c < Observation::kSize) {
              T* cell = dst + size_t(r * Observation::kSize + c) * channels;
              for (int ch = 0; ch < channels; ++ch) cell[ch] += row[w * channels + ch];
            }
            ++w;
          }
        }
      }
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// forward / backward

template <class T>
typename DTModel<T>::Output DTModel<T>::run(const TokenBatch& batch, bool backward,
                                            bool capture_attention, Workspace& ws_ref) {
  const int B = batch.batch;
  const int K = batch.context;
  const int d = config_.embed_dim;
  const int H = config_.heads;
  const int hd = d / H;
  const int vocab = config_.action_vocab;
  const int c1 = config_.conv_channels1, c2 = config_.conv_channels2;
  if (K > config_.context)
    throw std::invalid_argument("DTModel: batch context exceeds configured context length");
  if (batch.rtg.size() != batch.slots() || batch.obs.size() != batch.slots() ||
      batch.actions.size() != batch.slots() || batch.mask.size() != batch.slots() ||
      batch.timesteps.size() != batch.slots())
    throw std::invalid_argument("DTModel: inconsistent batch field sizes");

  Output out;
  out.logits.assign(size_t(B) * K * vocab, T(0));

  // effective context: slots past the last real one (in every row) are skipped
  int keff = 0;
  for (int b = 0; b < B; ++b)
    for (int k = 0; k < K; ++k)
      if (batch.mask[size_t(b) * K + k]) keff = std::max(keff, k + 1);
  if (keff == 0) return out;

  Workspace& ws = ws_ref;
  int n_real = 0;
  {
    std::vector<int> real_slots;
    std::vector<int> slot_to_real(size_t(B) * K, -1);
    for (int b = 0; b < B; ++b)
      for (int k = 0; k < keff; ++k)
        if (batch.mask[size_t(b) * K + k]) {
          slot_to_real[size_t(b) * K + k] = int(real_slots.size());
          real_slots.push_back(b * K + k);
        }
    n_real = int(real_slots.size());
    ws.resize(config_, B, keff, n_real, backward);
    ws.K = K;
    ws.real_slots = std::move(real_slots);
    ws.slot_to_real = std::move(slot_to_real);
  }
  const int S = ws.S;
  ws.tok_real.assign(size_t(B) * S, 0);
  for (int b = 0; b < B; ++b)
    for (int k = 0; k < ws.Keff; ++k)
      if (batch.mask[size_t(b) * K + k])
        for (int j = 0; j < 3; ++j) ws.tok_real[size_t(b) * S + 3 * k + j] = 1;

  // --- observation encoder over real slots
  build_im2col<T>(ws.col1.data(), n_real, 4, [&](int tok, int ch, int r, int c) {
    return T(batch.obs[size_t(ws.real_slots[size_t(tok)])].at(ch, r, c));
  });
  const size_t px = size_t(n_real) * kObsPixels;
  {
    CMapMat<T> col(ws.col1.data(), Eigen::Index(px), 36);
    CMapMat<T> w(params_.at("enc.conv1.w").v.data(), 36, c1);
    MapMat<T> pre(ws.pre1.data(), Eigen::Index(px), c1);
    pre.noalias() = col * w;
    add_bias_rows(ws.pre1.data(), params_.at("enc.conv1.b").v.data(), int(px), c1);
    for (size_t i = 0; i < ws.pre1.size(); ++i) ws.act1[i] = gelu(ws.pre1[i]);
  }
  build_im2col<T>(ws.col2.data(), n_real, c1, [&](int tok, int ch, int r, int c) {
    return ws.act1[(size_t(tok) * kObsPixels + size_t(r * Observation::kSize + c)) * c1 + ch];
  });
  {
    CMapMat<T> col(ws.col2.data(), Eigen::Index(px), 9 * c1);
    CMapMat<T> w(params_.at("enc.conv2.w").v.data(), 9 * c1, c2);
    MapMat<T> pre(ws.pre2.data(), Eigen::Index(px), c2);
    pre.noalias() = col * w;
    add_bias_rows(ws.pre2.data(), params_.at("enc.conv2.b").v.data(), int(px), c2);
    for (size_t i = 0; i < ws.pre2.size(); ++i) ws.act2[i] = gelu(ws.pre2[i]);
  }
  // 2x2 average pooling, 10x10 -> 5x5
#pragma omp parallel for schedule(static)
  for (int tok = 0; tok < n_real; ++tok) {
    for (int pr = 0; pr < 5; ++pr) {
      for (int pc = 0; pc < 5; ++pc) {
        T* dst = ws.pooled.data() + (size_t(tok) * kPooledPixels + size_t(pr * 5 + pc)) * c2;
        const size_t r0 = size_t(tok) * kObsPixels;
        const int p00 = 2 * pr * 10 + 2 * pc;
        for (int ch = 0; ch < c2; ++ch) {
          dst[ch] = T(0.25) * (ws.act2[(r0 + p00) * c2 + ch] + ws.act2[(r0 + p00 + 1) * c2 + ch] +
                               ws.act2[(r0 + p00 + 10) * c2 + ch] +
                               ws.act2[(r0 + p00 + 11) * c2 + ch]);
        }
      }
    }
  }
  {
    CMapMat<T> pooled(ws.pooled.data(), n_real, kPooledPixels * c2);
    CMapMat<T> w(params_.at("enc.fc.w").v.data(), kPooledPixels * c2, d);
    MapMat<T> emb(ws.obs_emb.data(), n_real, d);
    emb.noalias() = pooled * w;
    add_bias_rows(ws.obs_emb.data(), params_.at("enc.fc.b").v.data(), n_real, d);
  }

  // --- token embeddings
  {
    const T* w_rtg = params_.at("embed.rtg.w").v.data();
    const T* b_rtg = params_.at("embed.rtg.b").v.data();
    const T* w_act = params_.at("embed.action.w").v.data();
    const T* w_time = params_.at("embed.time.w").v.data();
    T* x0 = ws.xs[0].data();
#pragma omp parallel for schedule(static)
    for (int tok = 0; tok < n_real; ++tok) {
      const int slot = ws.real_slots[size_t(tok)];
      const int b = slot / K, k = slot % K;
      const int t_idx = std::clamp(batch.timesteps[size_t(slot)], 0, config_.max_timestep - 1);
      const T rtg = T(batch.rtg[size_t(slot)]);
      const uint8_t action = batch.actions[size_t(slot)];
      T* base = x0 + (size_t(b) * S + size_t(3 * k)) * d;
      const T* time = w_time + size_t(t_idx) * d;
      const T* act = w_act + size_t(action) * d;
      const T* obs = ws.obs_emb.data() + size_t(tok) * d;
      for (int j = 0; j < d; ++j) {
        base[j] = rtg * w_rtg[j] + b_rtg[j] + time[j];
        base[d + j] = obs[j] + time[j];
        base[2 * d + j] = act[j] + time[j];
      }
    }
  }

  // --- transformer blocks
  const size_t rows = size_t(B) * S;
  std::vector<T>* attention_sink = capture_attention ? &attention_record_ : nullptr;
  if (attention_sink) attention_sink->clear();

  for (int l = 0; l < config_.layers; ++l) {
    auto& lc = ws.layers[size_t(l)];
    const std::string p = "block" + std::to_string(l) + ".";
    const T* x_in = ws.xs[size_t(l)].data();

    layernorm_forward(x_in, params_.at(p + "ln1.g").v.data(), params_.at(p + "ln1.b").v.data(),
                      lc.ln1_out.data(), lc.ln1_mean.data(), lc.ln1_rstd.data(), int(rows), d);
    {
      CMapMat<T> a(lc.ln1_out.data(), Eigen::Index(rows), d);
      CMapMat<T> w(params_.at(p + "attn.wqkv").v.data(), d, 3 * d);
      MapMat<T> qkv(lc.qkv.data(), Eigen::Index(rows), 3 * d);
      qkv.noalias() = a * w;
      add_bias_rows(lc.qkv.data(), params_.at(p + "attn.bqkv").v.data(), int(rows), 3 * d);
    }
    // causal masked attention per (batch row, head); disjoint outputs
    const T scale = T(1) / std::sqrt(T(hd));
#pragma omp parallel for collapse(2) schedule(static)
    for (int b = 0; b < B; ++b) {
      for (int h = 0; h < H; ++h) {
        const T* qkv = lc.qkv.data() + size_t(b) * S * 3 * d;
        T* probs = lc.probs.data() + (size_t(b) * H + h) * S * S;
        T* ctx = lc.ctx.data() + size_t(b) * S * d;
        const uint8_t* real = ws.tok_real.data() + size_t(b) * S;
        for (int i = 0; i < S; ++i) {
          const T* qi = qkv + size_t(i) * 3 * d + size_t(h) * hd;
          T* pi = probs + size_t(i) * S;
          T maxv = std::numeric_limits<T>::lowest();
          for (int j = 0; j <= i; ++j) {
            if (!real[j]) continue;
            const T* kj = qkv + size_t(j) * 3 * d + d + size_t(h) * hd;
            T s = 0;
            for (int e = 0; e < hd; ++e) s += qi[e] * kj[e];
            s *= scale;
            pi[j] = s;
            maxv = std::max(maxv, s);
          }
          T* ci = ctx + size_t(i) * d + size_t(h) * hd;
          std::fill(ci, ci + hd, T(0));
          if (maxv == std::numeric_limits<T>::lowest()) {
            std::fill(pi, pi + S, T(0));
            continue;
          }
          T denom = 0;
          for (int j = 0; j <= i; ++j) {
            if (!real[j]) {
              pi[j] = 0;
              continue;
            }
            pi[j] = std::exp(pi[j] - maxv);
            denom += pi[j];
          }
          for (int j = i + 1; j < S; ++j) pi[j] = 0;
          const T inv = T(1) / denom;
          for (int j = 0; j <= i; ++j) {
            if (!real[j]) continue;
            pi[j] *= inv;
            const T* vj = qkv + size_t(j) * 3 * d + 2 * d + size_t(h) * hd;
            for (int e = 0; e < hd; ++e) ci[e] += pi[j] * vj[e];
          }
        }
      }
    }
    if (attention_sink)
      attention_sink->insert(attention_sink->end(), lc.probs.begin(), lc.probs.end());

    // output projection + residual -> xmid
    {
      CMapMat<T> ctx(lc.ctx.data(), Eigen::Index(rows), d);
      CMapMat<T> wo(params_.at(p + "attn.wo").v.data(), d, d);
      MapMat<T> xm(ws.xmid[size_t(l)].data(), Eigen::Index(rows), d);
      xm.noalias() = ctx * wo;
      add_bias_rows(ws.xmid[size_t(l)].data(), params_.at(p + "attn.bo").v.data(), int(rows), d);
      CMapMat<T> xi(x_in, Eigen::Index(rows), d);
      xm += xi;
    }

    const T* x_mid = ws.xmid[size_t(l)].data();
    layernorm_forward(x_mid, params_.at(p + "ln2.g").v.data(), params_.at(p + "ln2.b").v.data(),
                      lc.ln2_out.data(), lc.ln2_mean.data(), lc.ln2_rstd.data(), int(rows), d);
    {
      CMapMat<T> a(lc.ln2_out.data(), Eigen::Index(rows), d);
      CMapMat<T> w1(params_.at(p + "mlp.w1").v.data(), d, 4 * d);
      MapMat<T> pre(lc.mlp_pre.data(), Eigen::Index(rows), 4 * d);
      pre.noalias() = a * w1;
      add_bias_rows(lc.mlp_pre.data(), params_.at(p + "mlp.b1").v.data(), int(rows), 4 * d);
      for (size_t i = 0; i < lc.mlp_pre.size(); ++i) lc.mlp_act[i] = gelu(lc.mlp_pre[i]);
      CMapMat<T> act(lc.mlp_act.data(), Eigen::Index(rows), 4 * d);
      CMapMat<T> w2(params_.at(p + "mlp.w2").v.data(), 4 * d, d);
      MapMat<T> xo(ws.xs[size_t(l) + 1].data(), Eigen::Index(rows), d);
      xo.noalias() = act * w2;
      add_bias_rows(ws.xs[size_t(l) + 1].data(), params_.at(p + "mlp.b2").v.data(), int(rows), d);
      CMapMat<T> xm(x_mid, Eigen::Index(rows), d);
      xo += xm;
    }
  }

  // --- head: final layernorm + linear at observation positions
  const T* x_final = ws.xs[size_t(config_.layers)].data();
  const size_t head_rows = size_t(B) * size_t(ws.Keff);
#pragma omp parallel for collapse(2) schedule(static)
  for (int b = 0; b < B; ++b)
    for (int k = 0; k < ws.Keff; ++k) {
      const T* src = x_final + (size_t(b) * S + size_t(3 * k + 1)) * d;
      T* dst = ws.obs_rows.data() + (size_t(b) * ws.Keff + k) * d;
      std::copy(src, src + d, dst);
    }
  layernorm_forward(ws.obs_rows.data(), params_.at("final_ln.g").v.data(),
                    params_.at("final_ln.b").v.data(), ws.hln_out.data(), ws.hln_mean.data(),
                    ws.hln_rstd.data(), int(head_rows), d);
  {
    CMapMat<T> a(ws.hln_out.data(), Eigen::Index(head_rows), d);
    CMapMat<T> w(params_.at("head.w").v.data(), d, vocab);
    RowMat<T> head_logits = a * w;  // head_rows x vocab
    const T* hb = params_.at("head.b").v.data();
    for (int b = 0; b < B; ++b)
      for (int k = 0; k < ws.Keff; ++k) {
        T* dst = out.logits.data() + (size_t(b) * K + k) * vocab;
        const T* src = head_logits.data() + (size_t(b) * ws.Keff + k) * vocab;
        for (int j = 0; j < vocab; ++j) dst[j] = src[j] + hb[j];
      }
  }

  // --- masked cross-entropy over action targets
  double loss_sum = 0.0;
  int correct = 0;
  std::vector<T>* dlogits = backward ? &ws.dlogits : nullptr;
  if (dlogits) std::fill(dlogits->begin(), dlogits->end(), T(0));
  for (int b = 0; b < B; ++b) {
    for (int k = 0; k < ws.Keff; ++k) {
      if (!batch.mask[size_t(b) * K + k]) continue;
      const T* lg = out.logits.data() + (size_t(b) * K + k) * vocab;
      const int target = batch.actions[size_t(b) * K + k];
      T maxv = lg[0];
      int argmax = 0;
      for (int j = 1; j < vocab; ++j)
        if (lg[j] > maxv) {
          maxv = lg[j];
          argmax = j;
        }
      double denom = 0.0;
      for (int j = 0; j < vocab; ++j) denom += std::exp(double(lg[j] - maxv));
      const double logprob = double(lg[target] - maxv) - std::log(denom);
      loss_sum -= logprob;
      correct += (argmax == target) ? 1 : 0;
      ++out.real_positions;
      if (dlogits) {
        T* dl = dlogits->data() + (size_t(b) * ws.Keff + k) * vocab;
        for (int j = 0; j < vocab; ++j) {
          const double p = std::exp(double(lg[j] - maxv)) / denom;
          dl[j] = T(p - (j == target ? 1.0 : 0.0));
        }
      }
    }
  }
  if (out.real_positions > 0) {
    out.loss = loss_sum / out.real_positions;
    out.accuracy = double(correct) / out.real_positions;
  }
  if (!std::isfinite(out.loss))
    throw std::runtime_error("DTModel: non-finite loss (real positions: " +
                             std::to_string(out.real_positions) + ")");
  if (!backward || out.real_positions == 0) return out;

  // =========================================================================
  // backward
  const T inv_count = T(1.0 / out.real_positions);
  for (T& v : ws.dlogits) v *= inv_count;

  // head backward
  std::fill(ws.dhln.begin(), ws.dhln.end(), T(0));
  {
    CMapMat<T> dl(ws.dlogits.data(), Eigen::Index(head_rows), vocab);
    CMapMat<T> a(ws.hln_out.data(), Eigen::Index(head_rows), d);
    MapMat<T> dw(params_.at("head.w").g.data(), d, vocab);
    dw.noalias() += a.transpose() * dl;
    bias_grad_rows(ws.dlogits.data(), params_.at("head.b").g.data(), int(head_rows), vocab);
    CMapMat<T> w(params_.at("head.w").v.data(), d, vocab);
    MapMat<T> dhln(ws.dhln.data(), Eigen::Index(head_rows), d);
    dhln.noalias() = dl * w.transpose();
  }
  std::fill(ws.dobs_rows.begin(), ws.dobs_rows.end(), T(0));
  layernorm_backward(ws.obs_rows.data(), params_.at("final_ln.g").v.data(), ws.hln_mean.data(),
                     ws.hln_rstd.data(), ws.dhln.data(), ws.dobs_rows.data(),
                     params_.at("final_ln.g").g.data(), params_.at("final_ln.b").g.data(),
                     int(head_rows), d);
  // scatter into the stream gradient
  std::fill(ws.dx.begin(), ws.dx.end(), T(0));
#pragma omp parallel for collapse(2) schedule(static)
  for (int b = 0; b < B; ++b)
    for (int k = 0; k < ws.Keff; ++k) {
      const T* src = ws.dobs_rows.data() + (size_t(b) * ws.Keff + k) * d;
      T* dst = ws.dx.data() + (size_t(b) * S + size_t(3 * k + 1)) * d;
      std::copy(src, src + d, dst);
    }

  // blocks in reverse
  for (int l = config_.layers - 1; l >= 0; --l) {
    auto& lc = ws.layers[size_t(l)];
    const std::string p = "block" + std::to_string(l) + ".";
    const T* x_in = ws.xs[size_t(l)].data();
    const T* x_mid = ws.xmid[size_t(l)].data();

    // mlp backward: dx is the gradient at x_out
    {
      CMapMat<T> dxo(ws.dx.data(), Eigen::Index(rows), d);
      CMapMat<T> act(lc.mlp_act.data(), Eigen::Index(rows), 4 * d);
      MapMat<T> dw2(params_.at(p + "mlp.w2").g.data(), 4 * d, d);
      dw2.noalias() += act.transpose() * dxo;
      bias_grad_rows(ws.dx.data(), params_.at(p + "mlp.b2").g.data(), int(rows), d);
      CMapMat<T> w2(params_.at(p + "mlp.w2").v.data(), 4 * d, d);
      MapMat<T> dact(ws.dmlp_act.data(), Eigen::Index(rows), 4 * d);
      dact.noalias() = dxo * w2.transpose();
    }
    for (size_t i = 0; i < ws.dmlp_act.size(); ++i)
      ws.dmlp_pre[i] = ws.dmlp_act[i] * gelu_grad(lc.mlp_pre[i]);
    {
      CMapMat<T> dpre(ws.dmlp_pre.data(), Eigen::Index(rows), 4 * d);
      CMapMat<T> a(lc.ln2_out.data(), Eigen::Index(rows), d);
      MapMat<T> dw1(params_.at(p + "mlp.w1").g.data(), d, 4 * d);
      dw1.noalias() += a.transpose() * dpre;
      bias_grad_rows(ws.dmlp_pre.data(), params_.at(p + "mlp.b1").g.data(), int(rows), 4 * d);
      CMapMat<T> w1(params_.at(p + "mlp.w1").v.data(), d, 4 * d);
      MapMat<T> dln(ws.dln.data(), Eigen::Index(rows), d);
      dln.noalias() = dpre * w1.transpose();
    }
    // dxmid = dx (residual) + ln2 backward(dln)
    ws.dxmid = ws.dx;
    layernorm_backward(x_mid, params_.at(p + "ln2.g").v.data(), lc.ln2_mean.data(),
                       lc.ln2_rstd.data(), ws.dln.data(), ws.dxmid.data(),
                       params_.at(p + "ln2.g").g.data(), params_.at(p + "ln2.b").g.data(),
                       int(rows), d);

    // attention backward: dxmid is the gradient at xmid = x_in + proj(ctx)
    std::fill(ws.dctx.begin(), ws.dctx.end(), T(0));
    {
      CMapMat<T> dxm(ws.dxmid.data(), Eigen::Index(rows), d);
      CMapMat<T> ctx(lc.ctx.data(), Eigen::Index(rows), d);
      MapMat<T> dwo(params_.at(p + "attn.wo").g.data(), d, d);
      dwo.noalias() += ctx.transpose() * dxm;
      bias_grad_rows(ws.dxmid.data(), params_.at(p + "attn.bo").g.data(), int(rows), d);
      CMapMat<T> wo(params_.at(p + "attn.wo").v.data(), d, d);
      MapMat<T> dctx(ws.dctx.data(), Eigen::Index(rows), d);
      dctx.noalias() = dxm * wo.transpose();
    }
    std::fill(ws.dqkv.begin(), ws.dqkv.end(), T(0));
    const T scale = T(1) / std::sqrt(T(hd));
#pragma omp parallel for collapse(2) schedule(static)
    for (int b = 0; b < B; ++b) {
      for (int h = 0; h < H; ++h) {
        const T* qkv = lc.qkv.data() + size_t(b) * S * 3 * d;
        T* dqkv = ws.dqkv.data() + size_t(b) * S * 3 * d;
        const T* probs = lc.probs.data() + (size_t(b) * H + h) * S * S;
        const T* dctx = ws.dctx.data() + size_t(b) * S * d;
        const uint8_t* real = ws.tok_real.data() + size_t(b) * S;
        std::vector<T> dp_buf(size_t(S), T(0));
        T* dp = dp_buf.data();
        for (int i = 0; i < S; ++i) {
          const T* pi = probs + size_t(i) * S;
          const T* dci = dctx + size_t(i) * d + size_t(h) * hd;
          T dot = 0;  // sum_l p_il * dp_il for the softmax jacobian
          for (int j = 0; j <= i; ++j) {
            if (!real[j] || pi[j] == T(0)) {
              dp[j] = 0;
              continue;
            }
            const T* vj = qkv + size_t(j) * 3 * d + 2 * d + size_t(h) * hd;
            T s = 0;
            for (int e = 0; e < hd; ++e) s += dci[e] * vj[e];
            dp[j] = s;
            dot += pi[j] * s;
          }
          const T* qi = qkv + size_t(i) * 3 * d + size_t(h) * hd;
          T* dqi = dqkv + size_t(i) * 3 * d + size_t(h) * hd;
          for (int j = 0; j <= i; ++j) {
            if (!real[j] || pi[j] == T(0)) continue;
            const T ds = pi[j] * (dp[j] - dot) * scale;
            const T* kj = qkv + size_t(j) * 3 * d + d + size_t(h) * hd;
            T* dkj = dqkv + size_t(j) * 3 * d + d + size_t(h) * hd;
            T* dvj = dqkv + size_t(j) * 3 * d + 2 * d + size_t(h) * hd;
            for (int e = 0; e < hd; ++e) {
              dqi[e] += ds * kj[e];
              dkj[e] += ds * qi[e];
              dvj[e] += pi[j] * dci[e];
            }
          }
        }
      }
    }
    {
      CMapMat<T> dqkv(ws.dqkv.data(), Eigen::Index(rows), 3 * d);
      CMapMat<T> a(lc.ln1_out.data(), Eigen::Index(rows), d);
      MapMat<T> dw(params_.at(p + "attn.wqkv").g.data(), d, 3 * d);
      dw.noalias() += a.transpose() * dqkv;
      bias_grad_rows(ws.dqkv.data(), params_.at(p + "attn.bqkv").g.data(), int(rows), 3 * d);
      CMapMat<T> w(params_.at(p + "attn.wqkv").v.data(), d, 3 * d);
      MapMat<T> dln(ws.dln.data(), Eigen::Index(rows), d);
      dln.noalias() = dqkv * w.transpose();
    }
    // dx_in = dxmid (residual) + ln1 backward(dln)
    ws.dx = ws.dxmid;
    layernorm_backward(x_in, params_.at(p + "ln1.g").v.data(), lc.ln1_mean.data(),
                       lc.ln1_rstd.data(), ws.dln.data(), ws.dx.data(),
                       params_.at(p + "ln1.g").g.data(), params_.at(p + "ln1.b").g.data(),
                       int(rows), d);
  }

  // embedding backward
  {
    T* dw_rtg = params_.at("embed.rtg.w").g.data();
    T* db_rtg = params_.at("embed.rtg.b").g.data();
    T* dw_act = params_.at("embed.action.w").g.data();
    T* dw_time = params_.at("embed.time.w").g.data();
    std::fill(ws.dobs_emb.begin(), ws.dobs_emb.end(), T(0));
    for (int tok = 0; tok < n_real; ++tok) {
      const int slot = ws.real_slots[size_t(tok)];
      const int b = slot / K, k = slot % K;
      const int t_idx = std::clamp(batch.timesteps[size_t(slot)], 0, config_.max_timestep - 1);
      const T rtg = T(batch.rtg[size_t(slot)]);
      const uint8_t action = batch.actions[size_t(slot)];
      const T* g0 = ws.dx.data() + (size_t(b) * S + size_t(3 * k)) * d;
      T* dtime = dw_time + size_t(t_idx) * d;
      T* dact = dw_act + size_t(action) * d;
      T* dobs = ws.dobs_emb.data() + size_t(tok) * d;
      for (int j = 0; j < d; ++j) {
        dtime[j] += g0[j] + g0[d + j] + g0[2 * d + j];
        dw_rtg[j] += rtg * g0[j];
        db_rtg[j] += g0[j];
        dact[j] += g0[2 * d + j];
        dobs[j] = g0[d + j];
      }
    }
  }

  // encoder backward
  {
    CMapMat<T> demb(ws.dobs_emb.data(), n_real, d);
    CMapMat<T> pooled(ws.pooled.data(), n_real, kPooledPixels * c2);
    MapMat<T> dwfc(params_.at("enc.fc.w").g.data(), kPooledPixels * c2, d);
    dwfc.noalias() += pooled.transpose() * demb;
    bias_grad_rows(ws.dobs_emb.data(), params_.at("enc.fc.b").g.data(), n_real, d);
    CMapMat<T> wfc(params_.at("enc.fc.w").v.data(), kPooledPixels * c2, d);
    MapMat<T> dpooled(ws.dpooled.data(), n_real, kPooledPixels * c2);
    dpooled.noalias() = demb * wfc.transpose();
  }
  std::fill(ws.dact2.begin(), ws.dact2.end(), T(0));
#pragma omp parallel for schedule(static)
  for (int tok = 0; tok < n_real; ++tok) {
    for (int pr = 0; pr < 5; ++pr) {
      for (int pc = 0; pc < 5; ++pc) {
        const T* src = ws.dpooled.data() + (size_t(tok) * kPooledPixels + size_t(pr * 5 + pc)) * c2;
        const size_t r0 = size_t(tok) * kObsPixels;
        const int p00 = 2 * pr * 10 + 2 * pc;
        for (int ch = 0; ch < c2; ++ch) {
          const T grad = T(0.25) * src[ch];
          ws.dact2[(r0 + p00) * c2 + ch] += grad;
          ws.dact2[(r0 + p00 + 1) * c2 + ch] += grad;
          ws.dact2[(r0 + p00 + 10) * c2 + ch] += grad;
          ws.dact2[(r0 + p00 + 11) * c2 + ch] += grad;
        }
      }
    }
  }
  for (size_t i = 0; i < ws.dact2.size(); ++i) ws.dpre2w[i] = ws.dact2[i] * gelu_grad(ws.pre2[i]);
  {
    CMapMat<T> dpre(ws.dpre2w.data(), Eigen::Index(px), c2);
    CMapMat<T> col(ws.col2.data(), Eigen::Index(px), 9 * c1);
    MapMat<T> dw(params_.at("enc.conv2.w").g.data(), 9 * c1, c2);
    dw.noalias() += col.transpose() * dpre;
    bias_grad_rows(ws.dpre2w.data(), params_.at("enc.conv2.b").g.data(), int(px), c2);
    CMapMat<T> w(params_.at("enc.conv2.w").v.data(), 9 * c1, c2);
    MapMat<T> dcol(ws.dcol2.data(), Eigen::Index(px), 9 * c1);
    dcol.noalias() = dpre * w.transpose();
  }
  std::fill(ws.dact1.begin(), ws.dact1.end(), T(0));
  col2im_accumulate(ws.dcol2.data(), ws.dact1.data(), n_real, c1);
  for (size_t i = 0; i < ws.dact1.size(); ++i) ws.dpre1w[i] = ws.dact1[i] * gelu_grad(ws.pre1[i]);
  {
    CMapMat<T> dpre(ws.dpre1w.data(), Eigen::Index(px), c1);
    CMapMat<T> col(ws.col1.data(), Eigen::Index(px), 36);
    MapMat<T> dw(params_.at("enc.conv1.w").g.data(), 36, c1);
    dw.noalias() += col.transpose() * dpre;
    bias_grad_rows(ws.dpre1w.data(), params_.at("enc.conv1.b").g.data(), int(px), c1);
  }
  return out;
}

template <class T>
typename DTModel<T>::Output DTModel<T>::forward(const TokenBatch& batch,
                                                bool capture_attention) const {
  // the no-grad path only reads params; its scratch space is local, so
  // concurrent forwards are safe (capture_attention writes the shared record
  // and is for single-threaded inspection)
  Workspace local;
  return const_cast<DTModel*>(this)->run(batch, /*backward=*/false, capture_attention, local);
}

template <class T>
typename DTModel<T>::Output DTModel<T>::forward_backward(const TokenBatch& batch) {
  return run(batch, /*backward=*/true, /*capture_attention=*/false, *ws_);
}

// ---------------------------------------------------------------------------
// inference

template <class T>
std::vector<T> DTModel<T>::encode_obs(const Observation& obs) const {
  // single-token pass through the conv stack
  const int d = config_.embed_dim;
  const int c1 = config_.conv_channels1, c2 = config_.conv_channels2;
  std::vector<T> col1(size_t(kObsPixels) * 36), pre1(size_t(kObsPixels) * c1);
  build_im2col<T>(col1.data(), 1, 4,
                  [&](int, int ch, int r, int c) { return T(obs.at(ch, r, c)); });
  {
    CMapMat<T> col(col1.data(), kObsPixels, 36);
    CMapMat<T> w(params_.at("enc.conv1.w").v.data(), 36, c1);
    MapMat<T> pre(pre1.data(), kObsPixels, c1);
    pre.noalias() = col * w;
    add_bias_rows(pre1.data(), params_.at("enc.conv1.b").v.data(), kObsPixels, c1);
    for (T& x : pre1) x = gelu(x);
  }
  std::vector<T> col2(size_t(kObsPixels) * 9 * c1), act2(size_t(kObsPixels) * c2);
  build_im2col<T>(col2.data(), 1, c1, [&](int, int ch, int r, int c) {
    return pre1[size_t(r * Observation::kSize + c) * c1 + ch];
  });
  {
    CMapMat<T> col(col2.data(), kObsPixels, 9 * c1);
    CMapMat<T> w(params_.at("enc.conv2.w").v.data(), 9 * c1, c2);
    MapMat<T> act(act2.data(), kObsPixels, c2);
    act.noalias() = col * w;
    add_bias_rows(act2.data(), params_.at("enc.conv2.b").v.data(), kObsPixels, c2);
    for (T& x : act2) x = gelu(x);
  }
  std::vector<T> pooled(size_t(kPooledPixels) * c2);
  for (int pr = 0; pr < 5; ++pr)
    for (int pc = 0; pc < 5; ++pc) {
      const int p00 = 2 * pr * 10 + 2 * pc;
      for (int ch = 0; ch < c2; ++ch)
        pooled[size_t(pr * 5 + pc) * c2 + ch] =
            T(0.25) * (act2[size_t(p00) * c2 + ch] + act2[size_t(p00 + 1) * c2 + ch] +
                       act2[size_t(p00 + 10) * c2 + ch] + act2[size_t(p00 + 11) * c2 + ch]);
    }
  std::vector<T> emb(static_cast<size_t>(d));
  {
    CMapMat<T> p(pooled.data(), 1, kPooledPixels * c2);
    CMapMat<T> w(params_.at("enc.fc.w").v.data(), kPooledPixels * c2, d);
    MapMat<T> e(emb.data(), 1, d);
    e.noalias() = p * w;
    add_bias_rows(emb.data(), params_.at("enc.fc.b").v.data(), 1, d);
  }
  return emb;
}

template <class T>
std::vector<T> DTModel<T>::action_logits_for_history(std::span<const CachedSlot> slots) const {
  const int d = config_.embed_dim;
  const int H = config_.heads;
  const int hd = d / H;
  const int L = config_.layers;
  const int Keff = int(slots.size());
  const int S = 3 * Keff;

  std::vector<T> x(size_t(S) * d, T(0));
  {
    const T* w_rtg = params_.at("embed.rtg.w").v.data();
    const T* b_rtg = params_.at("embed.rtg.b").v.data();
    const T* w_act = params_.at("embed.action.w").v.data();
    const T* w_time = params_.at("embed.time.w").v.data();
    for (int k = 0; k < Keff; ++k) {
      const CachedSlot& slot = slots[size_t(k)];
      const int t_idx = std::clamp(slot.timestep, 0, config_.max_timestep - 1);
      const T* time = w_time + size_t(t_idx) * d;
      const T* act = w_act + size_t(slot.action) * d;
      T* base = x.data() + size_t(3 * k) * d;
      for (int j = 0; j < d; ++j) {
        base[j] = T(slot.rtg) * w_rtg[j] + b_rtg[j] + time[j];
        base[d + j] = slot.obs_embed[j] + time[j];
        base[2 * d + j] = act[j] + time[j];
      }
    }
  }

  std::vector<T> ln_out(size_t(S) * d), mean(static_cast<size_t>(S)), rstd(static_cast<size_t>(S));
  std::vector<T> qkv(size_t(S) * 3 * d), ctx(size_t(S) * d), xmid(size_t(S) * d);
  std::vector<T> mlp_pre(size_t(S) * 4 * d);
  std::vector<T> prow(static_cast<size_t>(S));
  const T scale = T(1) / std::sqrt(T(hd));

  for (int l = 0; l < L; ++l) {
    const std::string p = "block" + std::to_string(l) + ".";
    layernorm_forward(x.data(), params_.at(p + "ln1.g").v.data(),
                      params_.at(p + "ln1.b").v.data(), ln_out.data(), mean.data(), rstd.data(),
                      S, d);
    {
      CMapMat<T> a(ln_out.data(), S, d);
      CMapMat<T> w(params_.at(p + "attn.wqkv").v.data(), d, 3 * d);
      MapMat<T> q(qkv.data(), S, 3 * d);
      q.noalias() = a * w;
      add_bias_rows(qkv.data(), params_.at(p + "attn.bqkv").v.data(), S, 3 * d);
    }
    for (int h = 0; h < H; ++h) {
      for (int i = 0; i < S; ++i) {
        const T* qi = qkv.data() + size_t(i) * 3 * d + size_t(h) * hd;
        T maxv = std::numeric_limits<T>::lowest();
        for (int j = 0; j <= i; ++j) {
          const T* kj = qkv.data() + size_t(j) * 3 * d + d + size_t(h) * hd;
          T s = 0;
          for (int e = 0; e < hd; ++e) s += qi[e] * kj[e];
          s *= scale;
          prow[size_t(j)] = s;
          maxv = std::max(maxv, s);
        }
        T denom = 0;
        for (int j = 0; j <= i; ++j) {
          prow[size_t(j)] = std::exp(prow[size_t(j)] - maxv);
          denom += prow[size_t(j)];
        }
        const T inv = T(1) / denom;
        T* ci = ctx.data() + size_t(i) * d + size_t(h) * hd;
        std::fill(ci, ci + hd, T(0));
        for (int j = 0; j <= i; ++j) {
          const T* vj = qkv.data() + size_t(j) * 3 * d + 2 * d + size_t(h) * hd;
          const T pj = prow[size_t(j)] * inv;
          for (int e = 0; e < hd; ++e) ci[e] += pj * vj[e];
        }
      }
    }
    {
      CMapMat<T> c(ctx.data(), S, d);
      CMapMat<T> wo(params_.at(p + "attn.wo").v.data(), d, d);
      MapMat<T> xm(xmid.data(), S, d);
      xm.noalias() = c * wo;
      add_bias_rows(xmid.data(), params_.at(p + "attn.bo").v.data(), S, d);
      CMapMat<T> xi(x.data(), S, d);
      xm += xi;
    }
    layernorm_forward(xmid.data(), params_.at(p + "ln2.g").v.data(),
                      params_.at(p + "ln2.b").v.data(), ln_out.data(), mean.data(), rstd.data(),
                      S, d);
    {
      CMapMat<T> a(ln_out.data(), S, d);
      CMapMat<T> w1(params_.at(p + "mlp.w1").v.data(), d, 4 * d);
      MapMat<T> pre(mlp_pre.data(), S, 4 * d);
      pre.noalias() = a * w1;
      add_bias_rows(mlp_pre.data(), params_.at(p + "mlp.b1").v.data(), S, 4 * d);
      for (T& v : mlp_pre) v = gelu(v);
      CMapMat<T> act(mlp_pre.data(), S, 4 * d);
      CMapMat<T> w2(params_.at(p + "mlp.w2").v.data(), 4 * d, d);
      MapMat<T> xo(x.data(), S, d);
      xo.noalias() = act * w2;
      add_bias_rows(x.data(), params_.at(p + "mlp.b2").v.data(), S, d);
      CMapMat<T> xm(xmid.data(), S, d);
      xo += xm;
    }
  }

  // final layernorm + head at the last observation position
  const int pos = 3 * (Keff - 1) + 1;
  std::vector<T> row(x.begin() + size_t(pos) * d, x.begin() + size_t(pos + 1) * d);
  std::vector<T> out_row(static_cast<size_t>(d)), m1(1), r1(1);
  layernorm_forward(row.data(), params_.at("final_ln.g").v.data(),
                    params_.at("final_ln.b").v.data(), out_row.data(), m1.data(), r1.data(), 1, d);
  std::vector<T> logits(static_cast<size_t>(config_.action_vocab));
  {
    CMapMat<T> a(out_row.data(), 1, d);
    CMapMat<T> w(params_.at("head.w").v.data(), d, config_.action_vocab);
    MapMat<T> lg(logits.data(), 1, config_.action_vocab);
    lg.noalias() = a * w;
    add_bias_rows(logits.data(), params_.at("head.b").v.data(), 1, config_.action_vocab);
  }
  return logits;
}

template <class T>
Action DTModel<T>::predict_action_cached(std::span<const CachedSlot> history, bool sample,
                                         Rng* rng, double temperature) const {
  if (history.empty()) throw std::invalid_argument("predict_action: empty history");
  // only the last K slots participate
  std::span<const CachedSlot> window = history;
  if (int(window.size()) > config_.context)
    window = window.subspan(window.size() - size_t(config_.context));
  std::vector<T> logits = action_logits_for_history(window);

  if (sample) {
    if (!rng) throw std::invalid_argument("predict_action: sampling requires an rng");
    if (temperature <= 0) throw std::invalid_argument("predict_action: temperature must be > 0");
    T maxv = *std::max_element(logits.begin(), logits.end());
    std::vector<double> probs(logits.size());
    double denom = 0;
    for (size_t j = 0; j < logits.size(); ++j) {
      probs[j] = std::exp(double(logits[j] - maxv) / temperature);
      denom += probs[j];
    }
    double u = rng->uniform01() * denom;
    for (size_t j = 0; j < probs.size(); ++j) {
      u -= probs[j];
      if (u <= 0) return Action(j);
    }
    return Action(probs.size() - 1);
  }
  int argmax = 0;
  for (size_t j = 1; j < logits.size(); ++j)
    if (logits[j] > logits[size_t(argmax)]) argmax = int(j);
  return Action(argmax);
}

template <class T>
Action DTModel<T>::predict_action(std::span<const Transition> history, bool sample,
                                  Rng* rng, double temperature) const {
  if (history.empty()) throw std::invalid_argument("predict_action: empty history");
  std::span<const Transition> window = history;
  if (int(window.size()) > config_.context)
    window = window.subspan(window.size() - size_t(config_.context));
  std::vector<std::vector<T>> embeds;
  embeds.reserve(window.size());
  std::vector<CachedSlot> slots(window.size());
  for (size_t k = 0; k < window.size(); ++k) {
    embeds.push_back(encode_obs(window[k].obs));
    slots[k] = CachedSlot{embeds.back().data(), window[k].rtg, window[k].action,
                          window[k].timestep};
  }
  return predict_action_cached(slots, sample, rng, temperature);
}

template class DTModel<float>;
template class DTModel<double>;

}  // namespace mapfdt::dt
