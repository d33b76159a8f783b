#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "sed/autodiff.hpp"
#include "sed/detector.hpp"
#include "sed/ema.hpp"

namespace sed {

// Versioned binary container: magic + JSON index + little-endian float64
// blob. Save/load round-trips are bit-exact.
struct Checkpoint {
  ArchConfig arch;
  int64_t iteration = 0;
  ad::ParamVector student;
  std::optional<ad::ParamVector> teacher;
  std::optional<ad::ParamVector> optimizer;  // momentum buffers
  EmaSchedule ema;

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);
};

}  // namespace sed
