#pragma once

#include <string>
#include <vector>

#include "sed/synthdata.hpp"
#include "sed/trainer.hpp"

namespace sed {

// Dataset manifest: one {scene_id, seed, split} record per scene plus the
// generating config. Scenes are regenerated from seeds on load; exported
// image files are an optional convenience, not the canonical storage.
struct SceneRecord {
  uint64_t scene_id = 0;
  uint64_t seed = 0;
  std::string split;  // labeled | unlabeled | test
};

struct DatasetManifest {
  DatasetConfig config;
  std::vector<SceneRecord> scenes;

  int count(const std::string& split) const;
  void save(const std::string& path) const;
  static DatasetManifest load(const std::string& path);
};

DatasetManifest build_manifest(const Dataset& ds, const DatasetConfig& cfg);

// Regenerates the split scenes named by the manifest (bitwise identical to
// the original generation).
std::vector<Scene> scenes_from_manifest(const DatasetManifest& m, const std::string& split);

TrainerData trainer_data_from_manifest(const DatasetManifest& m, bool with_eval = true);

// Minimal .npy (v1.0, <f8, C order) writer for scene export.
void write_npy(const std::string& path, const Image& img);

void export_scene_files(const std::string& dir, const DatasetManifest& m);

}  // namespace sed
