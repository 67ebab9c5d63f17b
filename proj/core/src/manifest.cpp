#include "mapfdt/manifest.hpp"

#include <nlohmann/json.hpp>

#include "mapfdt/util/binio.hpp"
#include "mapfdt/util/hash.hpp"

namespace mapfdt {

using nlohmann::json;

void RunManifest::add_input(const std::string& path) {
  inputs.emplace_back(path, Sha256::of_file(path));
}

void RunManifest::add_output(const std::string& path) {
  outputs.emplace_back(path, Sha256::of_file(path));
}

std::string RunManifest::to_json() const {
  json j;
  j["command"] = command;
  j["seed"] = seed;
  j["config"] = json::parse(config_json.empty() ? "{}" : config_json);
  json in = json::object(), out = json::object();
  for (const auto& [path, hash] : inputs) in[path] = hash;
  for (const auto& [path, hash] : outputs) out[path] = hash;
  j["inputs"] = std::move(in);
  j["outputs"] = std::move(out);
  return j.dump(2) + "\n";
}

void RunManifest::save_for(const std::string& artifact_path) const {
  write_file_bytes(artifact_path + ".manifest.json", to_json());
}

}  // namespace mapfdt
