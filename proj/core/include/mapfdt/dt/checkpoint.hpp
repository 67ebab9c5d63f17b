#pragma once

#include <optional>

#include "mapfdt/dt/trainer.hpp"

namespace mapfdt::dt {

// Versioned binary checkpoint: config, parameter tensors, Adam moments, step
// counter, and RNG state, guarded by a CRC32. A save -> load -> save cycle is
// byte-identical.
struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

template <class T>
void save_checkpoint(const TrainState<T>& state, const std::string& path);

// expected_config, when given, must match the stored config exactly; a
// mismatch raises CheckpointError naming the first differing tensor shape.
template <class T>
TrainState<T> load_checkpoint(const std::string& path,
                              const std::optional<DTConfig>& expected_config = std::nullopt);

// Stored scalar width in bytes (4 or 8) without loading tensors.
int checkpoint_dtype(const std::string& path);

}  // namespace mapfdt::dt
