#pragma once

#include <json.hpp>
#include <string>
#include <vector>

#include "aft/io.hpp"
#include "aft/pyramid.hpp"
#include "aft/version.hpp"

namespace aft {

/// Record of one tool invocation, written next to its outputs. Contains only
/// inputs that determine the result (no timestamps, no host details), so two
/// identical runs produce byte-identical manifests.
struct RunManifest {
  std::string command;
  std::string precision;
  NeckConfig config;
  std::string input;
  std::vector<std::pair<std::string, Dims>> outputs;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["tool"] = "aft";
    j["version"] = kVersion;
    j["command"] = command;
    j["precision"] = precision;
    j["config"] = config_to_json(config);
    j["input"] = input;
    j["outputs"] = nlohmann::ordered_json::array();
    for (const auto& [name, dims] : outputs)
      j["outputs"].push_back(
          {{"file", name},
           {"dims", {dims.n, dims.c, dims.h, dims.w}}});
    return j;
  }

  void write(const std::string& path) const {
    detail::write_file_atomic(path, to_json().dump(2) + "\n");
  }
};

}  // namespace aft
