#pragma once

#include <cstdint>
#include <string>

namespace mapfdt::dt {

struct DTConfig {
  int context = 50;        // K: (rtg, obs, action) triples attended over
  int embed_dim = 128;
  int layers = 3;
  int heads = 4;
  int action_vocab = 5;
  int max_timestep = 512;  // timestep embedding table size; larger steps clamp
  double dropout = 0.0;
  int conv_channels1 = 16;
  int conv_channels2 = 128;
  uint64_t param_seed = 0;

  // throws std::invalid_argument on inconsistent settings
  void validate() const;

  // analytic learnable-parameter count for this configuration
  int64_t param_count() const;

  std::string to_json() const;
  static DTConfig from_json(const std::string& text);

  bool operator==(const DTConfig&) const = default;
};

}  // namespace mapfdt::dt
