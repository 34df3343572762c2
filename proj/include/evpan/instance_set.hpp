#pragma once

// Instance predictions on disk: one JSON document per image listing bboxes,
// classes, and probabilities, with each mask stored as a separate tensor
// file referenced by a path relative to the JSON's directory.
//
// {
//   "image_id": "scene_000",
//   "height": 64,
//   "width": 64,
//   "instances": [
//     {"bbox": [x0, y0, x1, y1], "class_id": 3, "class_prob": 0.9,
//      "mask": "scene_000_mask_00.upst"}
//   ]
// }

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "evpan/core.hpp"
#include "evpan/fusion.hpp"
#include "evpan/grid.hpp"
#include "evpan/tensor_file.hpp"

namespace evpan {

struct InstanceSetFile {
  std::string image_id;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<InstancePrediction> instances;
};

// Writes the JSON document and one mask tensor per instance
// ("<json stem>_mask_NN.upst") next to it.
inline void write_instance_set(const std::string& path, const InstanceSetFile& set) {
  const std::filesystem::path json_path(path);
  const std::string stem = json_path.stem().string();

  nlohmann::json doc;
  doc["image_id"] = set.image_id;
  doc["height"] = set.height;
  doc["width"] = set.width;
  doc["instances"] = nlohmann::json::array();
  for (std::size_t i = 0; i < set.instances.size(); ++i) {
    const InstancePrediction& inst = set.instances[i];
    inst.bbox.require_within(set.height, set.width, "instance set write");
    if (!(inst.class_prob >= 0.0 && inst.class_prob <= 1.0))
      throw ValidationError("instance set write: class_prob out of [0,1] in " + path);
    std::ostringstream mask_name;
    mask_name << stem << "_mask_" << std::setw(2) << std::setfill('0') << i << ".upst";
    write_dense_grid((json_path.parent_path() / mask_name.str()).string(), inst.mask_logits,
                     Dtype::kF64);
    nlohmann::json entry;
    entry["bbox"] = {inst.bbox.x0, inst.bbox.y0, inst.bbox.x1, inst.bbox.y1};
    entry["class_id"] = inst.class_id;
    entry["class_prob"] = inst.class_prob;
    entry["mask"] = mask_name.str();
    doc["instances"].push_back(std::move(entry));
  }

  std::ofstream file(path, std::ios::trunc);
  if (!file) throw IoError("instance set write: cannot open " + path);
  file << doc.dump(2) << "\n";
  if (!file) throw IoError("instance set write: write failed for " + path);
}

inline InstanceSetFile read_instance_set(const std::string& path) {
  std::ifstream file(path);
  if (!file) throw IoError("instance set read: cannot open " + path);
  nlohmann::json doc;
  try {
    file >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("instance set read: failed to parse " + path + ": " + e.what());
  }

  InstanceSetFile set;
  try {
    set.image_id = doc.at("image_id").get<std::string>();
    set.height = doc.at("height").get<std::size_t>();
    set.width = doc.at("width").get<std::size_t>();
    const std::filesystem::path base = std::filesystem::path(path).parent_path();
    for (const nlohmann::json& entry : doc.at("instances")) {
      const auto& bbox = entry.at("bbox");
      if (!bbox.is_array() || bbox.size() != 4)
        throw IoError("instance set read: bbox must be [x0,y0,x1,y1] in " + path);
      InstancePrediction inst;
      inst.bbox = BBox(bbox[0].get<std::size_t>(), bbox[1].get<std::size_t>(),
                       bbox[2].get<std::size_t>(), bbox[3].get<std::size_t>());
      inst.class_id = entry.at("class_id").get<std::uint32_t>();
      inst.class_prob = entry.at("class_prob").get<double>();
      if (!(inst.class_prob >= 0.0 && inst.class_prob <= 1.0))
        throw ValidationError("instance set read: class_prob out of [0,1] in " + path);
      inst.bbox.require_within(set.height, set.width, "instance set read");
      inst.mask_logits =
          read_dense_grid((base / entry.at("mask").get<std::string>()).string());
      if (inst.mask_logits.channels != 1)
        throw ValidationError("instance set read: mask must be single-channel in " + path);
      set.instances.push_back(std::move(inst));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError("instance set read: malformed document " + path + ": " + e.what());
  }
  return set;
}

}  // namespace evpan
