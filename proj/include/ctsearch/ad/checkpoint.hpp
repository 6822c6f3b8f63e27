#pragma once

// Checkpoint layout: <base>.json holds {"header": {...}, "tensors": {name: shape, ...}}
// and <base>.bin holds the little-endian float64 values of each tensor,
// concatenated in manifest order.

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctsearch/ad/tensor.hpp"

namespace ctsearch::ad {

inline void save_checkpoint(const std::filesystem::path& base, const std::vector<const Parameter*>& params,
                            const nlohmann::json& header = nlohmann::json::object()) {
  nlohmann::ordered_json manifest;
  manifest["header"] = header;
  manifest["tensors"] = nlohmann::ordered_json::object();
  std::filesystem::path json_path = base, bin_path = base;
  json_path += ".json";
  bin_path += ".bin";
  std::ofstream bin(bin_path, std::ios::binary);
  if (!bin) throw Error("cannot write " + bin_path.string());
  for (const Parameter* p : params) {
    if (manifest["tensors"].contains(p->name)) throw Error("duplicate tensor name " + p->name);
    manifest["tensors"][p->name] = p->value.shape();
    bin.write(reinterpret_cast<const char*>(p->value.data()),
              static_cast<std::streamsize>(p->value.size() * sizeof(double)));
  }
  std::ofstream js(json_path);
  if (!js) throw Error("cannot write " + json_path.string());
  js << manifest.dump(2) << "\n";
}

inline nlohmann::json read_checkpoint_header(const std::filesystem::path& base) {
  std::filesystem::path json_path = base;
  json_path += ".json";
  std::ifstream js(json_path);
  if (!js) throw Error("cannot read " + json_path.string());
  return nlohmann::json::parse(js).at("header");
}

/// Loads values into `params`, matching by name; shapes must agree.
inline nlohmann::json load_checkpoint(const std::filesystem::path& base, const std::vector<Parameter*>& params) {
  std::filesystem::path json_path = base, bin_path = base;
  json_path += ".json";
  bin_path += ".bin";
  std::ifstream js(json_path);
  if (!js) throw Error("cannot read " + json_path.string());
  const auto manifest = nlohmann::ordered_json::parse(js);
  std::ifstream bin(bin_path, std::ios::binary);
  if (!bin) throw Error("cannot read " + bin_path.string());
  std::size_t found = 0;
  for (const auto& [name, shape_json] : manifest.at("tensors").items()) {
    const auto shape = shape_json.get<Shape>();
    Tensor t(shape);
    bin.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!bin) throw Error("checkpoint blob truncated at tensor " + name);
    for (Parameter* p : params) {
      if (p->name != name) continue;
      if (p->value.shape() != shape) {
        throw Error("checkpoint tensor " + name + " has shape " + shape_string(shape) + ", model expects " +
                    shape_string(p->value.shape()));
      }
      p->value = std::move(t);
      ++found;
      break;
    }
  }
  if (found != params.size()) {
    throw Error("checkpoint provides " + std::to_string(found) + " of " + std::to_string(params.size()) +
                " tensors");
  }
  return nlohmann::json::parse(manifest.at("header").dump());
}

}  // namespace ctsearch::ad
