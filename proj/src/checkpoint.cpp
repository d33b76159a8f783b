#include "sed/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace sed {

namespace {

constexpr char kMagic[8] = {'S', 'E', 'D', 'C', 'K', 'P', 'T', '1'};
constexpr int kVersion = 1;

using nlohmann::json;

json arch_to_json(const ArchConfig& a) {
  return {{"stem_channels1", a.stem_channels1}, {"stem_channels2", a.stem_channels2},
          {"head_channels", a.head_channels},   {"num_levels", a.num_levels},
          {"num_classes", a.num_classes},       {"anchor_base", a.anchor_base}};
}

ArchConfig arch_from_json(const json& j) {
  ArchConfig a;
  a.stem_channels1 = j.at("stem_channels1");
  a.stem_channels2 = j.at("stem_channels2");
  a.head_channels = j.at("head_channels");
  a.num_levels = j.at("num_levels");
  a.num_classes = j.at("num_classes");
  a.anchor_base = j.at("anchor_base");
  return a;
}

void append_tensors(json& index, std::vector<const Tensor*>& blobs, int64_t& offset,
                    const std::string& ns, const ad::ParamVector& pv) {
  for (const auto& [name, t] : pv) {
    index.push_back({{"name", ns + "/" + name}, {"shape", t.shape}, {"offset", offset}, {"numel", t.size()}});
    blobs.push_back(&t);
    offset += t.size();
  }
}

}  // namespace

void Checkpoint::save(const std::string& path) const {
  json index = json::array();
  std::vector<const Tensor*> blobs;
  int64_t offset = 0;
  append_tensors(index, blobs, offset, "student", student);
  if (teacher) append_tensors(index, blobs, offset, "teacher", *teacher);
  if (optimizer) append_tensors(index, blobs, offset, "optimizer", *optimizer);

  json header = {
      {"version", kVersion},
      {"arch", arch_to_json(arch)},
      {"iteration", iteration},
      {"has_teacher", teacher.has_value()},
      {"has_optimizer", optimizer.has_value()},
      {"ema", {{"policy", to_string(ema.policy)},
               {"alpha_start", ema.alpha_start},
               {"alpha_end", ema.alpha_end},
               {"milestone_iteration", ema.milestone_iteration},
               {"total_iterations", ema.total_iterations}}},
      {"tensors", index},
  };
  const std::string hs = header.dump();

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("checkpoint: cannot open for write: " + path);
  f.write(kMagic, sizeof(kMagic));
  const uint64_t hlen = hs.size();
  f.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const Tensor* t : blobs)
    f.write(reinterpret_cast<const char*>(t->v.data()),
            static_cast<std::streamsize>(t->v.size() * sizeof(double)));
  if (!f) throw std::runtime_error("checkpoint: write failed: " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: not found: " + path);
  char magic[8];
  f.read(magic, sizeof(magic));
  if (!f || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  uint64_t hlen = 0;
  f.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  std::string hs(hlen, '\0');
  f.read(hs.data(), static_cast<std::streamsize>(hlen));
  const json header = json::parse(hs);
  if (header.at("version").get<int>() != kVersion)
    throw std::runtime_error("checkpoint: unsupported version " +
                             std::to_string(header.at("version").get<int>()));

  Checkpoint ck;
  ck.arch = arch_from_json(header.at("arch"));
  ck.iteration = header.at("iteration");
  ck.ema.policy = ema_policy_from_string(header.at("ema").at("policy"));
  ck.ema.alpha_start = header.at("ema").at("alpha_start");
  ck.ema.alpha_end = header.at("ema").at("alpha_end");
  ck.ema.milestone_iteration = header.at("ema").at("milestone_iteration");
  ck.ema.total_iterations = header.at("ema").at("total_iterations");
  if (header.at("has_teacher").get<bool>()) ck.teacher.emplace();
  if (header.at("has_optimizer").get<bool>()) ck.optimizer.emplace();

  for (const auto& e : header.at("tensors")) {
    const std::string full = e.at("name");
    const auto slash = full.find('/');
    const std::string ns = full.substr(0, slash);
    const std::string name = full.substr(slash + 1);
    Tensor t(e.at("shape").get<std::vector<int>>());
    f.read(reinterpret_cast<char*>(t.v.data()),
           static_cast<std::streamsize>(t.v.size() * sizeof(double)));
    if (!f) throw std::runtime_error("checkpoint: truncated blob in " + path);
    if (ns == "student")
      ck.student[name] = std::move(t);
    else if (ns == "teacher")
      ck.teacher->emplace(name, std::move(t));
    else if (ns == "optimizer")
      ck.optimizer->emplace(name, std::move(t));
    else
      throw std::runtime_error("checkpoint: unknown namespace " + ns);
  }
  return ck;
}

}  // namespace sed
