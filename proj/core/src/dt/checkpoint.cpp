#include "mapfdt/dt/checkpoint.hpp"

#include <cstring>

#include "mapfdt/util/binio.hpp"
#include "mapfdt/util/hash.hpp"

namespace mapfdt::dt {

namespace {

constexpr char kMagic[12] = {'M', 'A', 'P', 'F', 'D', 'T', 'C', 'K', 'P', 'T', '0', '1'};
constexpr uint32_t kVersion = 1;

void put_str(std::string& out, const std::string& s) {
  put_u64(out, s.size());
  out += s;
}

std::string get_str(ByteReader& r) { return r.bytes(r.u64()); }

template <class T>
void put_scalar_array(std::string& out, const std::vector<T>& v) {
  if constexpr (sizeof(T) == 4) {
    for (T x : v) put_f32(out, float(x));
  } else {
    for (T x : v) put_f64(out, double(x));
  }
}

template <class T>
void get_scalar_array(ByteReader& r, std::vector<T>& v) {
  if constexpr (sizeof(T) == 4) {
    for (T& x : v) x = T(r.f32());
  } else {
    for (T& x : v) x = T(r.f64());
  }
}

}  // namespace

template <class T>
void save_checkpoint(const TrainState<T>& state, const std::string& path) {
  std::string payload;
  put_u8(payload, uint8_t(sizeof(T)));
  put_u64(payload, uint64_t(state.step));
  put_f64(payload, state.running_loss);
  put_f64(payload, state.running_accuracy);
  put_str(payload, state.rng.serialize());
  put_str(payload, state.model.config().to_json());
  const auto& tensors = state.model.params().tensors;
  put_u32(payload, uint32_t(tensors.size()));
  for (size_t ti = 0; ti < tensors.size(); ++ti) {
    const Tensor<T>& t = tensors[ti];
    put_str(payload, t.name);
    put_u32(payload, uint32_t(t.shape.size()));
    for (int dim : t.shape) put_u32(payload, uint32_t(dim));
    put_scalar_array(payload, t.v);
    put_scalar_array(payload, state.adam_m[ti]);
    put_scalar_array(payload, state.adam_v[ti]);
  }

  std::string bytes;
  bytes.append(kMagic, sizeof(kMagic));
  put_u32(bytes, kVersion);
  put_u64(bytes, payload.size());
  bytes += payload;
  put_u32(bytes, crc32(payload.data(), payload.size()));
  write_file_bytes(path, bytes);
}

int checkpoint_dtype(const std::string& path) {
  std::string bytes = read_file_bytes(path);
  ByteReader r(bytes);
  if (std::memcmp(r.take(sizeof(kMagic)), kMagic, sizeof(kMagic)) != 0)
    throw CheckpointError("not a checkpoint file: " + path);
  if (r.u32() != kVersion) throw CheckpointError("unsupported checkpoint version");
  r.u64();  // payload length
  return r.u8();
}

template <class T>
TrainState<T> load_checkpoint(const std::string& path,
                              const std::optional<DTConfig>& expected_config) {
  std::string bytes = read_file_bytes(path);
  ByteReader r(bytes);
  if (std::memcmp(r.take(sizeof(kMagic)), kMagic, sizeof(kMagic)) != 0)
    throw CheckpointError("not a checkpoint file: " + path);
  if (r.u32() != kVersion) throw CheckpointError("unsupported checkpoint version");
  const uint64_t payload_len = r.u64();
  if (r.remaining() < payload_len + 4) throw CheckpointError("truncated checkpoint: " + path);
  const uint8_t* payload = r.take(payload_len);
  const uint32_t stored_crc = r.u32();
  if (crc32(payload, payload_len) != stored_crc)
    throw CheckpointError("checkpoint checksum mismatch (corrupt file): " + path);

  ByteReader p(payload, payload_len);
  const int dtype = p.u8();
  if (dtype != int(sizeof(T)))
    throw CheckpointError("checkpoint precision is " + std::to_string(dtype * 8) +
                          "-bit, loader expects " + std::to_string(sizeof(T) * 8) + "-bit");
  const uint64_t step = p.u64();
  const double running_loss = p.f64();
  const double running_accuracy = p.f64();
  Rng rng = Rng::deserialize(get_str(p));
  DTConfig config = DTConfig::from_json(get_str(p));
  if (expected_config && !(config == *expected_config))
    throw CheckpointError("checkpoint config does not match the expected DTConfig (stored: " +
                          config.to_json() + ")");

  TrainState<T> state{DTModel<T>(config), 0};
  state.step = int64_t(step);
  state.running_loss = running_loss;
  state.running_accuracy = running_accuracy;
  state.rng = rng;

  auto& tensors = state.model.params().tensors;
  const uint32_t count = p.u32();
  if (count != tensors.size())
    throw CheckpointError("checkpoint tensor count mismatch: stored " + std::to_string(count) +
                          ", model has " + std::to_string(tensors.size()));
  for (size_t ti = 0; ti < tensors.size(); ++ti) {
    Tensor<T>& t = tensors[ti];
    const std::string name = get_str(p);
    if (name != t.name)
      throw CheckpointError("checkpoint tensor order mismatch at " + name + " (expected " +
                            t.name + ")");
    const uint32_t ndim = p.u32();
    std::vector<int> shape(ndim);
    for (auto& dim : shape) dim = int(p.u32());
    if (shape != t.shape)
      throw CheckpointError("shape mismatch for tensor " + name);
    get_scalar_array(p, t.v);
    get_scalar_array(p, state.adam_m[ti]);
    get_scalar_array(p, state.adam_v[ti]);
  }
  if (p.remaining() != 0) throw CheckpointError("trailing bytes in checkpoint payload");
  return state;
}

template void save_checkpoint<float>(const TrainState<float>&, const std::string&);
template void save_checkpoint<double>(const TrainState<double>&, const std::string&);
template TrainState<float> load_checkpoint<float>(const std::string&,
                                                  const std::optional<DTConfig>&);
template TrainState<double> load_checkpoint<double>(const std::string&,
                                                    const std::optional<DTConfig>&);

}  // namespace mapfdt::dt
