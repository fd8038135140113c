#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "doctest.h"
#include "etiobench/phantomgen.hpp"

using namespace etio;
using namespace etio::phantomgen;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ClassVector uniform() { return {1 / 6.0, 1 / 6.0, 1 / 6.0, 1 / 6.0, 1 / 6.0, 1 / 6.0}; }

// Mean intensity over octree cells at depth 1 and 2 (8 + 64 features), HU scaled to ~unit range.
std::vector<double> octant_features(const voxvol::Volume& v) {
  std::vector<double> f;
  const auto& d = v.dims();
  for (int depth : {2, 4}) {
    for (int cz = 0; cz < depth; ++cz)
      for (int cy = 0; cy < depth; ++cy)
        for (int cx = 0; cx < depth; ++cx) {
          double sum = 0;
          int n = 0;
          for (int z = cz * d.nz / depth; z < (cz + 1) * d.nz / depth; ++z)
            for (int y = cy * d.ny / depth; y < (cy + 1) * d.ny / depth; ++y)
              for (int x = cx * d.nx / depth; x < (cx + 1) * d.nx / depth; ++x) {
                const int hu = std::clamp<int>(v.at(x, y, z), -100, 300);
                sum += hu;
                ++n;
              }
          f.push_back(sum / n / 100.0);
        }
  }
  return f;
}

}  // namespace

TEST_CASE("generate_case is deterministic in its seed") {
  PhantomSpec spec{Etiology::avm, 1234, {32, 32, 16}, {4.8, 4.8, 8.4}, 5.0};
  const auto a = generate_case(spec), b = generate_case(spec);
  CHECK(voxvol::encode_volume(a.volume) == voxvol::encode_volume(b.volume));
  CHECK(a.record == b.record);
  spec.seed = 1235;
  CHECK_FALSE(generate_case(spec).volume == a.volume);
}

TEST_CASE("noise-free hypertensive phantom has exactly 30 HU parenchyma outside the lesion") {
  const auto pc = generate_case({Etiology::hypertensive, 77, {48, 48, 16}, {3.2, 3.2, 8.4}, 0.0});
  std::size_t lesion = 0;
  for (std::size_t i = 0; i < pc.volume.dims().count(); ++i) {
    if (!pc.brain.test(i)) continue;
    if (pc.lesion.test(i)) {
      ++lesion;
      REQUIRE(pc.volume.voxels()[i] == 68);
    } else {
      REQUIRE(pc.volume.voxels()[i] == kParenchymaHu);
    }
  }
  CHECK(lesion > 0);
}

TEST_CASE("ground-truth mask equals the constructed parenchyma region") {
  for (int c = 0; c < kClassCount; ++c) {
    const auto pc = generate_case({etiology_from_index(c), 10u + c, {32, 32, 16}, {4.8, 4.8, 8.4}, 0.0});
    for (std::size_t i = 0; i < pc.volume.dims().count(); ++i) {
      const auto hu = pc.volume.voxels()[i];
      const bool parenchyma = hu >= 30 && hu <= 80;
      REQUIRE(pc.brain.test(i) == parenchyma);
      REQUIRE((hu == voxvol::kAirHu || hu == kBoneHu || parenchyma));
    }
    CHECK(pc.lesion.count() > 0);
  }
}

TEST_CASE("phantom dims below 16 voxels are rejected") {
  CHECK_THROWS_AS(generate_case({Etiology::cm, 1, {15, 32, 32}, {1, 1, 1}, 1.0}), std::invalid_argument);
  CHECK_THROWS_AS(generate_case({Etiology::cm, 1, {32, 32, 16}, {1, 1, 1}, -1.0}), std::invalid_argument);
}

TEST_CASE("skull_strip recovers the phantom brain with Dice at least 0.90") {
  for (int c = 0; c < kClassCount; ++c) {
    const auto pc = generate_case({etiology_from_index(c), 500u + c, {64, 64, 16}, {2.4, 2.4, 8.4}, 5.0});
    const auto stripped = voxvol::skull_strip(pc.volume);
    CHECK(voxvol::dice(stripped.mask, pc.brain) >= 0.90);
  }
}

TEST_CASE("clinical fields stay in valid ranges") {
  const auto specs = plan_cohort(300, development_cohort_proportions(), 3, {{16, 16, 16}, {1, 1, 1}, 0.0});
  for (const auto& s : specs) {
    const auto r = generate_case(s).record;
    REQUIRE(r.age >= kMinAge);
    REQUIRE(r.age <= kMaxAge);
    REQUIRE((r.sex == "F" || r.sex == "M"));
    REQUIRE(r.label == s.etiology);
    REQUIRE_FALSE(r.complaint.empty());
  }
}

TEST_CASE("600-case plan at development proportions matches the apportioned counts exactly") {
  const auto specs = plan_cohort(600, development_cohort_proportions(), 11);
  ClassCounts hist{};
  for (const auto& s : specs) ++hist[index_of(s.etiology)];
  CHECK(hist == datapipe::apportion(600, development_cohort_proportions()));
  CHECK(hist == ClassCounts{271, 202, 33, 14, 11, 69});
}

TEST_CASE("generate_cohort: counts, determinism and validation") {
  const auto dir = std::filesystem::temp_directory_path() / "etio_test_cohort";
  std::filesystem::remove_all(dir);
  const CohortOptions small{{16, 16, 16}, {2, 2, 2}, 3.0};

  const auto six = generate_cohort(6, uniform(), 5, dir / "six", small);
  CHECK(six.class_counts() == ClassCounts{1, 1, 1, 1, 1, 1});

  const auto a = generate_cohort(100, development_cohort_proportions(), 9, dir / "a", small);
  const auto b = generate_cohort(100, development_cohort_proportions(), 9, dir / "b", small);
  CHECK(a.class_counts() == ClassCounts{45, 34, 6, 2, 2, 11});
  CHECK(slurp(dir / "a" / "manifest.jsonl") == slurp(dir / "b" / "manifest.jsonl"));
  CHECK(slurp(dir / "a" / "volumes" / "case_00042.mvv") == slurp(dir / "b" / "volumes" / "case_00042.mvv"));

  const auto reread = datapipe::read_manifest(dir / "a" / "manifest.jsonl");
  CHECK(reread.cases == a.cases);
  CHECK(voxvol::read_volume(reread.resolve(reread.cases[3])).dims() == voxvol::Dims{16, 16, 16});

  CHECK_THROWS_AS(generate_cohort(5, uniform(), 1, dir / "bad", small), std::invalid_argument);
  CHECK_THROWS_AS(generate_cohort(10, {0.5, 0.6, 0, 0, 0, 0}, 1, dir / "bad", small), datapipe::DataError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("class signatures are linearly separable on octant intensity features") {
  const CohortOptions opts{{32, 32, 16}, {4.8, 4.8, 8.4}, 5.0};
  auto build = [&](std::int64_t n, std::uint64_t seed, std::vector<std::vector<double>>& x, std::vector<int>& y) {
    for (const auto& s : plan_cohort(n, uniform(), seed, opts)) {
      x.push_back(octant_features(generate_case(s).volume));
      y.push_back(index_of(s.etiology));
    }
  };
  std::vector<std::vector<double>> xtr, xte;
  std::vector<int> ytr, yte;
  build(600, 1, xtr, ytr);
  build(300, 2, xte, yte);

  // Standardize with training statistics.
  const std::size_t nf = xtr[0].size();
  std::vector<double> mu(nf, 0), sd(nf, 0);
  for (const auto& r : xtr)
    for (std::size_t j = 0; j < nf; ++j) mu[j] += r[j] / xtr.size();
  for (const auto& r : xtr)
    for (std::size_t j = 0; j < nf; ++j) sd[j] += (r[j] - mu[j]) * (r[j] - mu[j]) / xtr.size();
  for (auto& s : sd) s = std::sqrt(s) + 1e-9;
  for (auto* set : {&xtr, &xte})
    for (auto& r : *set)
      for (std::size_t j = 0; j < nf; ++j) r[j] = (r[j] - mu[j]) / sd[j];

  // Multinomial logistic regression, full-batch gradient descent.
  std::vector<double> w(kClassCount * (nf + 1), 0.0);
  auto logits = [&](const std::vector<double>& r) {
    std::array<double, kClassCount> z{};
    for (int c = 0; c < kClassCount; ++c) {
      z[c] = w[c * (nf + 1) + nf];
      for (std::size_t j = 0; j < nf; ++j) z[c] += w[c * (nf + 1) + j] * r[j];
    }
    return z;
  };
  for (int it = 0; it < 400; ++it) {
    std::vector<double> g(w.size(), 0.0);
    for (std::size_t i = 0; i < xtr.size(); ++i) {
      auto z = logits(xtr[i]);
      const double m = *std::max_element(z.begin(), z.end());
      double s = 0;
      for (auto& v : z) s += (v = std::exp(v - m));
      for (int c = 0; c < kClassCount; ++c) {
        const double d = z[c] / s - (ytr[i] == c ? 1.0 : 0.0);
        for (std::size_t j = 0; j < nf; ++j) g[c * (nf + 1) + j] += d * xtr[i][j];
        g[c * (nf + 1) + nf] += d;
      }
    }
    for (std::size_t k = 0; k < w.size(); ++k) w[k] -= 0.5 * g[k] / xtr.size();
  }
  int correct = 0;
  for (std::size_t i = 0; i < xte.size(); ++i) {
    const auto z = logits(xte[i]);
    correct += static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin()) == yte[i];
  }
  const double acc = static_cast<double>(correct) / xte.size();
  MESSAGE("octant probe held-out accuracy: " << acc);
  CHECK(acc > 0.50);
}
