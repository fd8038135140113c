#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <random>
#include <set>

#include "doctest.h"
#include "etiobench/datapipe.hpp"

using namespace etio;
using namespace etio::datapipe;

namespace {

Manifest synthetic_manifest(const ClassCounts& counts, std::uint64_t shuffle_seed = 0) {
  Manifest m;
  int id = 0;
  for (int c = 0; c < kClassCount; ++c)
    for (std::int64_t i = 0; i < counts[c]; ++i) {
      CaseRecord r;
      r.case_id = "c" + std::to_string(id++);
      r.volume_path = "volumes/" + r.case_id + ".mvv";
      r.label = etiology_from_index(c);
      r.age = 50;
      r.sex = "F";
      r.complaint = "headache";
      m.cases.push_back(r);
    }
  if (shuffle_seed) {
    std::mt19937 rng(static_cast<unsigned>(shuffle_seed));
    std::shuffle(m.cases.begin(), m.cases.end(), rng);
  }
  return m;
}

}  // namespace

TEST_CASE("etiology tokens follow canonical order") {
  CHECK(to_token(Etiology::aneurysm) == "aneurysm");
  CHECK(to_token(Etiology::others) == "others");
  CHECK(display_name(Etiology::avm) == "AVM");
  for (int i = 0; i < kClassCount; ++i) CHECK(parse_etiology(to_token(etiology_from_index(i))) == etiology_from_index(i));
  CHECK_FALSE(parse_etiology("stroke").has_value());
}

TEST_CASE("manifest JSON-lines round trip with exact field names") {
  Manifest m = synthetic_manifest({1, 1, 0, 0, 0, 1});
  m.cases[1].known_hypertension = true;
  m.cases[2].complaint = "sudden \"thunderclap\" headache";
  const std::string text = manifest_to_jsonl(m);
  CHECK(text.find(R"({"case_id":"c0","volume_path":"volumes/c0.mvv","label":"aneurysm","age":50,"sex":"F",)"
                  R"("known_hypertension":false,"impaired_coagulation":false,"complaint":"headache"})") == 0);
  const Manifest back = manifest_from_jsonl(text, "/data");
  CHECK(back.cases == m.cases);
  CHECK(back.resolve(back.cases[0]) == std::filesystem::path("/data/volumes/c0.mvv"));
}

TEST_CASE("manifest rejects duplicate ids and unknown labels") {
  CHECK_THROWS_AS(manifest_from_jsonl(R"({"case_id":"a","volume_path":"x","label":"stroke","age":1,"sex":"F","known_hypertension":false,"impaired_coagulation":false,"complaint":""})"),
                  DataError);
  const std::string line = R"({"case_id":"a","volume_path":"x","label":"cm","age":1,"sex":"F","known_hypertension":false,"impaired_coagulation":false,"complaint":""})";
  CHECK_THROWS_AS(manifest_from_jsonl(line + "\n" + line + "\n"), DataError);
}

TEST_CASE("stratified_kfold: 6 classes x 5 cases with k=5 puts one of each class per fold") {
  const Manifest m = synthetic_manifest({5, 5, 5, 5, 5, 5}, 3);
  const auto f = stratified_kfold(m, 5, 42);
  std::map<std::pair<int, int>, int> cell;
  for (const auto& c : m.cases) ++cell[{f.fold_of.at(c.case_id), index_of(c.label)}];
  for (int fold = 0; fold < 5; ++fold)
    for (int c = 0; c < kClassCount; ++c) CHECK(cell[{fold, c}] == 1);
}

TEST_CASE("stratified_kfold on the development cohort size yields folds of 373 or 374") {
  const Manifest m = synthetic_manifest(kDevelopmentCohortCounts, 5);
  REQUIRE(m.cases.size() == 1868);
  const auto f = stratified_kfold(m, 5, 1);
  std::array<int, 5> size{};
  for (const auto& [id, fold] : f.fold_of) ++size[fold];
  for (int s : size) CHECK((s == 373 || s == 374));
}

TEST_CASE("stratified_kfold is deterministic and validates inputs") {
  const Manifest m = synthetic_manifest({7, 3, 2, 1, 1, 4}, 9);
  CHECK(stratified_kfold(m, 3, 17) == stratified_kfold(m, 3, 17));
  CHECK_THROWS_AS(stratified_kfold(m, 1, 0), DataError);
  CHECK_THROWS_AS(stratified_kfold(Manifest{}, 5, 0), DataError);
}

TEST_CASE("property: folds partition the manifest with per-class imbalance at most one") {
  std::mt19937 rng(12);
  std::uniform_int_distribution<int> count(0, 40), kdist(2, 7);
  for (int trial = 0; trial < 60; ++trial) {
    ClassCounts counts{};
    for (auto& n : counts) n = count(rng);
    counts[0] += 1;
    const Manifest m = synthetic_manifest(counts, trial + 1);
    const int k = kdist(rng);
    const auto f = stratified_kfold(m, k, static_cast<std::uint64_t>(trial));
    REQUIRE(f.fold_of.size() == m.cases.size());
    std::set<std::string> seen;
    for (int fold = 0; fold < k; ++fold)
      for (const auto& id : f.members(m, fold)) REQUIRE(seen.insert(id).second);
    REQUIRE(seen.size() == m.cases.size());
    for (int c = 0; c < kClassCount; ++c) {
      std::vector<int> per(k, 0);
      for (const auto& r : m.cases)
        if (index_of(r.label) == c) ++per[f.fold_of.at(r.case_id)];
      REQUIRE(*std::max_element(per.begin(), per.end()) - *std::min_element(per.begin(), per.end()) <= 1);
    }
  }
}

TEST_CASE("fold file round trip") {
  const Manifest m = synthetic_manifest({3, 3, 3, 3, 3, 3});
  const auto f = stratified_kfold(m, 3, 5);
  const auto path = std::filesystem::temp_directory_path() / "etio_folds.json";
  write_folds(f, path);
  CHECK(read_folds(path) == f);
}

TEST_CASE("oversample applies the minority repeat factors") {
  std::vector<LabeledId> avm, cm, aneurysm;
  for (int i = 0; i < 10; ++i) avm.push_back({"a" + std::to_string(i), Etiology::avm});
  for (int i = 0; i < 3; ++i) cm.push_back({"c" + std::to_string(i), Etiology::cm});
  for (int i = 0; i < 4; ++i) aneurysm.push_back({"n" + std::to_string(i), Etiology::aneurysm});
  CHECK(oversample(avm).size() == 60);
  CHECK(oversample(cm).size() == 51);
  CHECK(oversample(aneurysm) == std::vector<std::string>{"n0", "n1", "n2", "n3"});

  const auto out = oversample(std::vector<LabeledId>{{"x", Etiology::mmd}, {"y", Etiology::others}});
  CHECK(out.size() == 17);
  CHECK(std::all_of(out.begin(), out.begin() + 14, [](const auto& s) { return s == "x"; }));
  CHECK(std::all_of(out.begin() + 14, out.end(), [](const auto& s) { return s == "y"; }));
}

TEST_CASE("property: oversampled class cardinality equals factor times count") {
  std::mt19937 rng(8);
  std::uniform_int_distribution<int> cls(0, kClassCount - 1);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<LabeledId> ids;
    ClassCounts n{};
    for (int i = 0; i < 80; ++i) {
      const int c = cls(rng);
      ++n[c];
      ids.push_back({"id" + std::to_string(i) + "_" + std::to_string(c), etiology_from_index(c)});
    }
    const auto out = oversample(ids);
    ClassCounts got{};
    for (const auto& s : out) ++got[s.back() - '0'];
    for (int c = 0; c < kClassCount; ++c) REQUIRE(got[c] == kOversampleFactors[c] * n[c]);
  }
}

TEST_CASE("class_weights") {
  for (double w : class_weights({7, 7, 7, 7, 7, 7})) CHECK(w == doctest::Approx(1.0));

  // Frozen from direct arithmetic: N/(6 n_c) with N = 1868.
  const ClassVector expect = {0.36844181, 0.49575371, 2.99358974, 7.07575758, 9.15686275, 1.46165884};
  const auto w = class_weights(kDevelopmentCohortCounts);
  for (int c = 0; c < kClassCount; ++c) CHECK(w[c] == doctest::Approx(expect[c]).epsilon(1e-7));

  // Doubling one count halves its weight relative to the new total.
  ClassCounts doubled = kDevelopmentCohortCounts;
  doubled[2] *= 2;
  const auto w2 = class_weights(doubled);
  const double n2 = 1868 + 104;
  CHECK(w2[2] == doctest::Approx(n2 / (6.0 * 208)));
  CHECK(w2[0] == doctest::Approx(w[0] * n2 / 1868.0));

  CHECK_THROWS_AS(class_weights({1, 1, 0, 1, 1, 1}), DataError);
}

TEST_CASE("property: class_weights are invariant to scaling all counts") {
  std::mt19937 rng(4);
  std::uniform_int_distribution<int> count(1, 500), scale(2, 9);
  for (int trial = 0; trial < 50; ++trial) {
    ClassCounts n{};
    for (auto& v : n) v = count(rng);
    ClassCounts m = n;
    const int s = scale(rng);
    for (auto& v : m) v *= s;
    const auto a = class_weights(n), b = class_weights(m);
    for (int c = 0; c < kClassCount; ++c) REQUIRE(a[c] == doctest::Approx(b[c]).epsilon(1e-12));
  }
}

TEST_CASE("augmented training size is 18 volumes per case") {
  CHECK(augmented_training_size(1868) == 33624);
  CHECK(augmented_training_size(0) == 0);
  CHECK(augmented_training_size(7) == 126);
}

TEST_CASE("largest-remainder apportionment") {
  CHECK(apportion(6, {1 / 6.0, 1 / 6.0, 1 / 6.0, 1 / 6.0, 1 / 6.0, 1 / 6.0}) == ClassCounts{1, 1, 1, 1, 1, 1});
  CHECK(apportion(100, {0.452, 0.336, 0.056, 0.024, 0.018, 0.114}) == ClassCounts{45, 34, 6, 2, 2, 11});
  CHECK(apportion(100, development_cohort_proportions()) == ClassCounts{45, 34, 6, 2, 2, 11});
  CHECK(apportion(1868, development_cohort_proportions()) == kDevelopmentCohortCounts);
  CHECK_THROWS_AS(apportion(10, {0.5, 0.5, 0.5, 0, 0, 0}), DataError);
}
