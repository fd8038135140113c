#include "etiobench/phantomgen.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <random>
#include <stdexcept>

#include "etiobench/seeding.hpp"

namespace etio::phantomgen {

namespace {

using voxvol::BrainMask;
using voxvol::Dims;
using voxvol::Volume;

// Head coordinates normalized to the inner (parenchyma) ellipsoid: |q| <= 1 is brain,
// q.z = -1 is the skull base.
struct Vec3 {
  double x, y, z;
};

double sq(double v) { return v * v; }

struct Ellipsoid {
  Vec3 center;
  Vec3 semi;
  bool contains(const Vec3& q) const {
    return sq((q.x - center.x) / semi.x) + sq((q.y - center.y) / semi.y) + sq((q.z - center.z) / semi.z) <= 1.0;
  }
};

struct ClassProfile {
  int lesion_hu;
  double age_mean;
  double female_rate;
  double hypertension_rate;
  double coagulopathy_rate;
};

constexpr std::array<ClassProfile, kClassCount> kProfiles = {{
    {60, 55.0, 0.60, 0.35, 0.03},  // aneurysm
    {68, 58.0, 0.30, 0.85, 0.05},  // hypertensive
    {76, 30.0, 0.45, 0.10, 0.02},  // AVM
    {64, 40.0, 0.55, 0.20, 0.02},  // MMD
    {80, 35.0, 0.50, 0.15, 0.02},  // CM
    {72, 50.0, 0.40, 0.30, 0.25},  // others
}};

constexpr std::array<const char*, 6> kComplaints = {"sudden headache", "limb weakness", "loss of consciousness",
                                                    "vomiting", "seizure", "dizziness"};

Vec3 polar(double radius, double angle, double z) { return {radius * std::cos(angle), radius * std::sin(angle), z}; }

// Returns a predicate over normalized coordinates marking the hyperdense signature.
std::function<bool(const Vec3&)> make_signature(Etiology e, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double angle = 2.0 * std::numbers::pi * unit(rng);
  switch (e) {
    case Etiology::hypertensive: {
      // Deep paracentral ellipsoid at mid height.
      const Ellipsoid blob{polar(0.34 + 0.06 * unit(rng), angle, -0.1 + 0.2 * unit(rng)), {0.3, 0.3, 0.4}};
      return [blob](const Vec3& q) { return blob.contains(q); };
    }
    case Etiology::aneurysm: {
      // Thin layer hugging the skull base.
      const double inner = 0.80 + 0.03 * unit(rng);
      const double z_top = -0.15 - 0.1 * unit(rng);
      return [inner, z_top](const Vec3& q) {
        const double r = std::sqrt(q.x * q.x + q.y * q.y + q.z * q.z);
        return r >= inner && r <= 1.0 && q.z <= z_top;
      };
    }
    case Etiology::avm: {
      // Superior lobar blob with a serpentine tail running toward the center.
      const double z = 0.3 + 0.2 * unit(rng);
      std::vector<Ellipsoid> parts;
      parts.push_back({polar(0.6, angle, z), {0.26, 0.26, 0.32}});
      const double phase = 2.0 * std::numbers::pi * unit(rng);
      for (int i = 1; i <= 8; ++i) {
        const double r = 0.6 - 0.06 * i;
        const double wiggle = 0.25 * std::sin(phase + 1.3 * i);
        parts.push_back({polar(r, angle + wiggle, z - 0.03 * i), {0.1, 0.1, 0.25}});
      }
      return [parts](const Vec3& q) {
        return std::any_of(parts.begin(), parts.end(), [&](const Ellipsoid& p) { return p.contains(q); });
      };
    }
    case Etiology::mmd: {
      // Midline, ventricular region.
      const Ellipsoid blob{{0.0, 0.0, 0.15 + 0.1 * unit(rng)}, {0.18, 0.38, 0.35}};
      const double c = std::cos(angle), s = std::sin(angle);
      return [blob, c, s](const Vec3& q) { return blob.contains({c * q.x + s * q.y, -s * q.x + c * q.y, q.z}); };
    }
    case Etiology::cm: {
      // Small, round, sharply bounded; low and near the axis (brainstem region).
      const Ellipsoid blob{polar(0.15 * unit(rng), angle, -0.5 + 0.15 * unit(rng)), {0.2, 0.2, 0.26}};
      return [blob](const Vec3& q) { return blob.contains(q); };
    }
    case Etiology::others: {
      // Peripheral lobar, irregular (two overlapping lobes).
      const double z = -0.2 + 0.3 * unit(rng);
      const Ellipsoid a{polar(0.68, angle, z), {0.28, 0.28, 0.36}};
      const Ellipsoid b{polar(0.62, angle + 0.4, z + 0.1), {0.22, 0.22, 0.3}};
      return [a, b](const Vec3& q) { return a.contains(q) || b.contains(q); };
    }
  }
  throw std::invalid_argument("unknown etiology");
}

datapipe::CaseRecord make_record(Etiology e, std::mt19937_64& rng) {
  const ClassProfile& p = kProfiles[index_of(e)];
  std::normal_distribution<double> age(p.age_mean, 14.0);
  std::bernoulli_distribution female(p.female_rate), htn(p.hypertension_rate), coag(p.coagulopathy_rate);
  std::uniform_int_distribution<std::size_t> complaint(0, kComplaints.size() - 1);
  datapipe::CaseRecord r;
  r.label = e;
  r.age = std::clamp(static_cast<int>(std::lround(age(rng))), kMinAge, kMaxAge);
  r.sex = female(rng) ? "F" : "M";
  r.known_hypertension = htn(rng);
  r.impaired_coagulation = coag(rng);
  r.complaint = kComplaints[complaint(rng)];
  return r;
}

}  // namespace

PhantomCase generate_case(const PhantomSpec& spec) {
  const Dims& d = spec.dims;
  if (d.nx < kMinPhantomExtent || d.ny < kMinPhantomExtent || d.nz < kMinPhantomExtent)
    throw std::invalid_argument("phantom dims must be at least 16 voxels on every axis");
  if (!(spec.noise_hu >= 0.0)) throw std::invalid_argument("noise_hu must be nonnegative");

  std::mt19937_64 shape_rng(derive_seed(spec.seed, {1}));
  std::mt19937_64 lesion_rng(derive_seed(spec.seed, {2}));
  std::mt19937_64 noise_rng(derive_seed(spec.seed, {3}));
  std::mt19937_64 record_rng(derive_seed(spec.seed, {4}));

  std::uniform_real_distribution<double> jitter(0.97, 1.03);
  const Vec3 center{(d.nx - 1) / 2.0, (d.ny - 1) / 2.0, (d.nz - 1) / 2.0};
  const Vec3 outer{0.45 * d.nx * jitter(shape_rng), 0.47 * d.ny * jitter(shape_rng), 0.44 * d.nz * jitter(shape_rng)};
  const Vec3 thickness{std::max(1.6, 0.05 * d.nx), std::max(1.6, 0.05 * d.ny), std::max(2.0, 0.05 * d.nz)};
  const Vec3 inner{outer.x - thickness.x, outer.y - thickness.y, outer.z - thickness.z};

  const auto signature = make_signature(spec.etiology, lesion_rng);
  const int lesion_hu = kProfiles[index_of(spec.etiology)].lesion_hu;

  PhantomCase out{Volume(d, spec.spacing), BrainMask(d), BrainMask(d), make_record(spec.etiology, record_rng)};
  std::normal_distribution<double> noise(0.0, 1.0);
  for (int z = 0; z < d.nz; ++z) {
    for (int y = 0; y < d.ny; ++y) {
      for (int x = 0; x < d.nx; ++x) {
        const double dx = x - center.x, dy = y - center.y, dz = z - center.z;
        const Vec3 q{dx / inner.x, dy / inner.y, dz / inner.z};
        const bool in_outer = sq(dx / outer.x) + sq(dy / outer.y) + sq(dz / outer.z) <= 1.0;
        const bool in_brain = sq(q.x) + sq(q.y) + sq(q.z) <= 1.0;
        if (in_brain) {
          const bool lesion = signature(q);
          out.brain.set(x, y, z);
          if (lesion) out.lesion.set(x, y, z);
          double hu = lesion ? lesion_hu : kParenchymaHu;
          if (spec.noise_hu > 0.0) hu += spec.noise_hu * noise(noise_rng);
          out.volume.set_clamped(x, y, z, hu);
        } else if (in_outer) {
          out.volume.at(x, y, z) = kBoneHu;
        }
      }
    }
  }
  return out;
}

std::string case_id_for(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "case_%05zu", index);
  return buf;
}

std::vector<PhantomSpec> plan_cohort(std::int64_t n, const ClassVector& proportions, std::uint64_t seed,
                                     const CohortOptions& options) {
  const bool all_nonzero = std::all_of(proportions.begin(), proportions.end(), [](double p) { return p > 0.0; });
  if (all_nonzero && n < kClassCount)
    throw std::invalid_argument("cohort needs at least 6 cases when every class has nonzero proportion");
  const ClassCounts counts = datapipe::apportion(n, proportions);

  std::vector<Etiology> labels;
  for (int c = 0; c < kClassCount; ++c) labels.insert(labels.end(), static_cast<std::size_t>(counts[c]), etiology_from_index(c));
  std::mt19937_64 rng(derive_seed(seed, {0xC0407}));
  std::shuffle(labels.begin(), labels.end(), rng);

  std::vector<PhantomSpec> specs;
  specs.reserve(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i)
    specs.push_back({labels[i], derive_seed(seed, {0xCA5E, i}), options.dims, options.spacing, options.noise_hu});
  return specs;
}

datapipe::Manifest generate_cohort(std::int64_t n, const ClassVector& proportions, std::uint64_t seed,
                                   const std::filesystem::path& out_dir, const CohortOptions& options) {
  const auto specs = plan_cohort(n, proportions, seed, options);
  std::filesystem::create_directories(out_dir / "volumes");
  datapipe::Manifest manifest;
  manifest.base_dir = out_dir;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    PhantomCase pc = generate_case(specs[i]);
    pc.record.case_id = case_id_for(i);
    pc.record.volume_path = "volumes/" + pc.record.case_id + ".mvv";
    voxvol::write_volume(pc.volume, out_dir / pc.record.volume_path);
    manifest.cases.push_back(std::move(pc.record));
  }
  datapipe::write_manifest(manifest, out_dir / "manifest.jsonl");
  return manifest;
}

}  // namespace etio::phantomgen
