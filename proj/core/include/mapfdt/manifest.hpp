#pragma once

#include <string>
#include <utility>
#include <vector>

namespace mapfdt {

// Reproducibility record written next to every artifact a CLI run produces:
// the exact configuration plus content hashes of all inputs and outputs.
struct RunManifest {
  std::string command;
  std::string config_json = "{}";
  uint64_t seed = 0;
  std::vector<std::pair<std::string, std::string>> inputs;   // path, sha256
  std::vector<std::pair<std::string, std::string>> outputs;  // path, sha256

  void add_input(const std::string& path);
  void add_output(const std::string& path);
  std::string to_json() const;
  // writes <artifact_path>.manifest.json
  void save_for(const std::string& artifact_path) const;
};

}  // namespace mapfdt
