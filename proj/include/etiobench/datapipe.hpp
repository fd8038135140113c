#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace etio {

/// Canonical index order is fixed everywhere: probability vectors, reports, CSV columns.
enum class Etiology : int { aneurysm = 0, hypertensive = 1, avm = 2, mmd = 3, cm = 4, others = 5 };

inline constexpr int kClassCount = 6;
inline constexpr std::array<Etiology, kClassCount> kAllEtiologies = {
    Etiology::aneurysm, Etiology::hypertensive, Etiology::avm, Etiology::mmd, Etiology::cm, Etiology::others};

using ClassCounts = std::array<std::int64_t, kClassCount>;
using ClassVector = std::array<double, kClassCount>;

constexpr int index_of(Etiology e) { return static_cast<int>(e); }
Etiology etiology_from_index(int index);

/// Lowercase token used in manifests, CSV headers and the HTTP API.
std::string_view to_token(Etiology e);
/// Human-readable name as shown to raters ("Aneurysm", "Hypertensive", ...).
std::string_view display_name(Etiology e);
std::optional<Etiology> parse_etiology(std::string_view token);

/// Class proportions of the development cohort (845/628/104/44/34/213 of 1868).
inline constexpr ClassCounts kDevelopmentCohortCounts = {845, 628, 104, 44, 34, 213};
ClassVector development_cohort_proportions();

}  // namespace etio

namespace etio::datapipe {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CaseRecord {
  std::string case_id;
  std::string volume_path;
  Etiology label = Etiology::aneurysm;
  int age = 0;
  std::string sex;  // "F" or "M"
  bool known_hypertension = false;
  bool impaired_coagulation = false;
  std::string complaint;

  bool operator==(const CaseRecord&) const = default;
};

/// JSON-lines case list. Relative volume paths resolve against `base_dir`.
struct Manifest {
  std::vector<CaseRecord> cases;
  std::filesystem::path base_dir;

  std::filesystem::path resolve(const CaseRecord& c) const;
  const CaseRecord& find(const std::string& case_id) const;
  ClassCounts class_counts() const;
};

Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const Manifest& manifest, const std::filesystem::path& path);
std::string manifest_to_jsonl(const Manifest& manifest);
Manifest manifest_from_jsonl(std::string_view text, std::filesystem::path base_dir = {});

struct FoldAssignment {
  int k = 0;
  std::map<std::string, int> fold_of;

  std::vector<std::string> members(const Manifest& manifest, int fold) const;
  std::vector<std::string> complement(const Manifest& manifest, int fold) const;
  bool operator==(const FoldAssignment&) const = default;
};

FoldAssignment read_folds(const std::filesystem::path& path);
void write_folds(const FoldAssignment& folds, const std::filesystem::path& path);
std::string folds_to_json(const FoldAssignment& folds);

/// Per class: shuffle by seed, then deal round-robin. The dealing cursor carries
/// over between classes so fold sizes also differ by at most one.
FoldAssignment stratified_kfold(const Manifest& manifest, int k, std::uint64_t seed);

/// Repeat factors for aneurysm, hypertensive, AVM, MMD, CM, others.
inline constexpr std::array<int, kClassCount> kOversampleFactors = {1, 1, 6, 14, 17, 3};

struct LabeledId {
  std::string case_id;
  Etiology label;
};

/// Each id repeated factor(label) times, repeats adjacent, original order kept.
std::vector<std::string> oversample(const std::vector<LabeledId>& training);
std::vector<std::string> oversample(const std::vector<std::string>& ids, const Manifest& manifest);

/// w_c = N / (6 n_c).
ClassVector class_weights(const ClassCounts& counts);

inline constexpr std::int64_t augmented_training_size(std::int64_t case_count) { return 18 * case_count; }
inline std::int64_t augmented_training_size(const Manifest& m) {
  return augmented_training_size(static_cast<std::int64_t>(m.cases.size()));
}

/// Largest-remainder apportionment of n over the given proportions; ties go to
/// the lower canonical index.
ClassCounts apportion(std::int64_t n, const ClassVector& proportions);

}  // namespace etio::datapipe
