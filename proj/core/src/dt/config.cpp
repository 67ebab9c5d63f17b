#include "mapfdt/dt/config.hpp"

#include <nlohmann/json.hpp>
#include <stdexcept>

namespace mapfdt::dt {

void DTConfig::validate() const {
  if (context < 1) throw std::invalid_argument("DTConfig: context must be >= 1");
  if (embed_dim < 1 || layers < 1 || heads < 1)
    throw std::invalid_argument("DTConfig: embed_dim, layers, heads must be positive");
  if (embed_dim % heads != 0)
    throw std::invalid_argument("DTConfig: embed_dim must be divisible by heads");
  if (action_vocab != 5) throw std::invalid_argument("DTConfig: action vocab is fixed at 5");
  if (max_timestep < 1) throw std::invalid_argument("DTConfig: max_timestep must be >= 1");
  if (dropout < 0.0 || dropout >= 1.0)
    throw std::invalid_argument("DTConfig: dropout must be in [0, 1)");
  if (conv_channels1 < 1 || conv_channels2 < 1)
    throw std::invalid_argument("DTConfig: conv channels must be positive");
}

int64_t DTConfig::param_count() const {
  const int64_t d = embed_dim;
  const int64_t c1 = conv_channels1, c2 = conv_channels2;
  int64_t total = 0;
  total += c1 * 4 * 9 + c1;        // conv1
  total += c2 * c1 * 9 + c2;       // conv2
  total += c2 * 25 * d + d;        // obs projection after 2x2 pooling of 10x10
  total += d + d;                  // rtg scale + bias
  total += int64_t(action_vocab) * d;
  total += int64_t(max_timestep) * d;
  const int64_t per_block = (d * 3 * d + 3 * d)  // qkv
                            + (d * d + d)        // attn out
                            + 4 * d              // two layernorms
                            + (d * 4 * d + 4 * d) + (4 * d * d + d);  // mlp
  total += int64_t(layers) * per_block;
  total += 2 * d;                  // final layernorm
  total += d * action_vocab + action_vocab;  // head
  return total;
}

using nlohmann::json;

std::string DTConfig::to_json() const {
  json j;
  j["context"] = context;
  j["embed_dim"] = embed_dim;
  j["layers"] = layers;
  j["heads"] = heads;
  j["action_vocab"] = action_vocab;
  j["max_timestep"] = max_timestep;
  j["dropout"] = dropout;
  j["conv_channels1"] = conv_channels1;
  j["conv_channels2"] = conv_channels2;
  j["param_seed"] = param_seed;
  return j.dump(2);
}

DTConfig DTConfig::from_json(const std::string& text) {
  json j = json::parse(text);
  DTConfig c;
  c.context = j.value("context", c.context);
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.layers = j.value("layers", c.layers);
  c.heads = j.value("heads", c.heads);
  c.action_vocab = j.value("action_vocab", c.action_vocab);
  c.max_timestep = j.value("max_timestep", c.max_timestep);
  c.dropout = j.value("dropout", c.dropout);
  c.conv_channels1 = j.value("conv_channels1", c.conv_channels1);
  c.conv_channels2 = j.value("conv_channels2", c.conv_channels2);
  c.param_seed = j.value("param_seed", c.param_seed);
  c.validate();
  return c;
}

}  // namespace mapfdt::dt
