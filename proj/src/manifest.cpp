#include "sed/manifest.hpp"

#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace sed {

namespace {

using nlohmann::json;

json dataset_cfg_to_json(const DatasetConfig& c) {
  return {{"image_size", c.image_size},
          {"num_train_scenes", c.num_train_scenes},
          {"num_test_scenes", c.num_test_scenes},
          {"labeled_fraction", c.labeled_fraction},
          {"max_objects", c.max_objects},
          {"min_object_size", c.min_object_size},
          {"max_object_size", c.max_object_size},
          {"max_clutter", c.max_clutter},
          {"noise_amplitude", c.noise_amplitude},
          {"master_seed", c.master_seed}};
}

DatasetConfig dataset_cfg_from_json(const json& j) {
  DatasetConfig c;
  c.image_size = j.at("image_size");
  c.num_train_scenes = j.at("num_train_scenes");
  c.num_test_scenes = j.at("num_test_scenes");
  c.labeled_fraction = j.at("labeled_fraction");
  c.max_objects = j.at("max_objects");
  c.min_object_size = j.at("min_object_size");
  c.max_object_size = j.at("max_object_size");
  c.max_clutter = j.at("max_clutter");
  c.noise_amplitude = j.at("noise_amplitude");
  c.master_seed = j.at("master_seed");
  return c;
}

}  // namespace

int DatasetManifest::count(const std::string& split) const {
  int n = 0;
  for (const SceneRecord& r : scenes)
    if (r.split == split) ++n;
  return n;
}

void DatasetManifest::save(const std::string& path) const {
  json j = {{"schema_version", 1}, {"dataset", dataset_cfg_to_json(config)}};
  j["counts"] = {{"labeled", count("labeled")}, {"unlabeled", count("unlabeled")}, {"test", count("test")}};
  json arr = json::array();
  for (const SceneRecord& r : scenes)
    arr.push_back({{"scene_id", r.scene_id}, {"seed", r.seed}, {"split", r.split}});
  j["scenes"] = std::move(arr);
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("manifest: cannot write " + path);
  f << j.dump(2) << "\n";
}

DatasetManifest DatasetManifest::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("manifest: not found: " + path);
  json j;
  f >> j;
  if (j.at("schema_version").get<int>() != 1)
    throw std::runtime_error("manifest: unsupported schema_version");
  DatasetManifest m;
  m.config = dataset_cfg_from_json(j.at("dataset"));
  for (const auto& e : j.at("scenes"))
    m.scenes.push_back({e.at("scene_id"), e.at("seed"), e.at("split")});
  return m;
}

DatasetManifest build_manifest(const Dataset& ds, const DatasetConfig& cfg) {
  DatasetManifest m;
  m.config = cfg;
  for (const Scene& s : ds.labeled) m.scenes.push_back({s.scene_id, s.seed, "labeled"});
  for (const Scene& s : ds.unlabeled) m.scenes.push_back({s.scene_id, s.seed, "unlabeled"});
  for (const Scene& s : ds.test) m.scenes.push_back({s.scene_id, s.seed, "test"});
  return m;
}

std::vector<Scene> scenes_from_manifest(const DatasetManifest& m, const std::string& split) {
  std::vector<Scene> out;
  for (const SceneRecord& r : m.scenes)
    if (r.split == split) {
      Scene s = generate_scene(r.seed, m.config);
      s.scene_id = r.scene_id;
      out.push_back(std::move(s));
    }
  return out;
}

TrainerData trainer_data_from_manifest(const DatasetManifest& m, bool with_eval) {
  TrainerData data;
  data.labeled = scenes_from_manifest(m, "labeled");
  for (const Scene& s : scenes_from_manifest(m, "unlabeled"))
    data.unlabeled.push_back(strip_labels(s));
  if (with_eval) data.eval_scenes = scenes_from_manifest(m, "test");
  return data;
}

void write_npy(const std::string& path, const Image& img) {
  std::string header = "{'descr': '<f8', 'fortran_order': False, 'shape': (" +
                       std::to_string(img.h) + ", " + std::to_string(img.w) + ", 3), }";
  const size_t unpadded = 10 + header.size() + 1;
  const size_t padded = (unpadded + 63) / 64 * 64;
  header.append(padded - unpadded, ' ');
  header.push_back('\n');

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("npy: cannot write " + path);
  const char magic[8] = {'\x93', 'N', 'U', 'M', 'P', 'Y', 1, 0};
  f.write(magic, 8);
  const uint16_t hlen = static_cast<uint16_t>(header.size());
  f.write(reinterpret_cast<const char*>(&hlen), 2);
  f.write(header.data(), static_cast<std::streamsize>(header.size()));
  f.write(reinterpret_cast<const char*>(img.data.data()),
          static_cast<std::streamsize>(img.data.size() * sizeof(double)));
}

void export_scene_files(const std::string& dir, const DatasetManifest& m) {
  std::filesystem::create_directories(dir);
  for (const SceneRecord& r : m.scenes) {
    Scene s = generate_scene(r.seed, m.config);
    s.scene_id = r.scene_id;
    const std::string stem = dir + "/scene_" + std::to_string(r.scene_id);
    write_npy(stem + ".npy", s.image);
    nlohmann::json boxes = nlohmann::json::array();
    for (const LabeledBox& b : s.boxes)
      boxes.push_back({{"x1", b.box.x1}, {"y1", b.box.y1}, {"x2", b.box.x2}, {"y2", b.box.y2},
                       {"class_id", b.class_id}});
    nlohmann::json side = {{"scene_id", r.scene_id}, {"seed", r.seed}, {"split", r.split},
                           {"boxes", std::move(boxes)}};
    std::ofstream f(stem + ".json", std::ios::trunc);
    f << side.dump(2) << "\n";
  }
}

}  // namespace sed
