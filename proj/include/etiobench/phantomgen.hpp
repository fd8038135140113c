#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "etiobench/datapipe.hpp"
#include "etiobench/voxvol.hpp"

namespace etio::phantomgen {

struct PhantomSpec {
  Etiology etiology = Etiology::aneurysm;
  std::uint64_t seed = 0;
  voxvol::Dims dims{64, 64, 16};
  voxvol::Spacing spacing{2.4, 2.4, 8.4};
  double noise_hu = 5.0;
};

inline constexpr int kMinPhantomExtent = 16;
inline constexpr int kMinAge = 4;
inline constexpr int kMaxAge = 94;
inline constexpr std::int16_t kBoneHu = 1000;
inline constexpr std::int16_t kParenchymaHu = 30;

struct PhantomCase {
  voxvol::Volume volume;
  voxvol::BrainMask brain;  // constructed parenchyma region
  voxvol::BrainMask lesion;
  datapipe::CaseRecord record;  // case_id and volume_path left empty
};

/// Throws std::invalid_argument when any axis is below kMinPhantomExtent or noise is negative.
PhantomCase generate_case(const PhantomSpec& spec);

struct CohortOptions {
  voxvol::Dims dims{64, 64, 16};
  voxvol::Spacing spacing{2.4, 2.4, 8.4};
  double noise_hu = 5.0;
};

/// Specs for each case of a cohort, in case order. Class counts follow
/// largest-remainder apportionment; labels are then shuffled by seed.
std::vector<PhantomSpec> plan_cohort(std::int64_t n, const ClassVector& proportions, std::uint64_t seed,
                                     const CohortOptions& options = {});

std::string case_id_for(std::size_t index);

/// Writes volumes/<case_id>.mvv and manifest.jsonl under out_dir.
datapipe::Manifest generate_cohort(std::int64_t n, const ClassVector& proportions, std::uint64_t seed,
                                   const std::filesystem::path& out_dir, const CohortOptions& options = {});

}  // namespace etio::phantomgen
