#include "etiobench/datapipe.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "etiobench/seeding.hpp"
#include "json.hpp"

namespace etio {

namespace {
constexpr std::array<std::string_view, kClassCount> kTokens = {"aneurysm", "hypertensive", "avm", "mmd", "cm", "others"};
constexpr std::array<std::string_view, kClassCount> kNames = {"Aneurysm", "Hypertensive", "AVM", "MMD", "CM", "Others"};
}  // namespace

Etiology etiology_from_index(int index) {
  if (index < 0 || index >= kClassCount) throw std::out_of_range("etiology index out of range");
  return static_cast<Etiology>(index);
}

std::string_view to_token(Etiology e) { return kTokens[index_of(e)]; }
std::string_view display_name(Etiology e) { return kNames[index_of(e)]; }

std::optional<Etiology> parse_etiology(std::string_view token) {
  for (int i = 0; i < kClassCount; ++i)
    if (kTokens[i] == token) return static_cast<Etiology>(i);
  return std::nullopt;
}

ClassVector development_cohort_proportions() {
  const double total = std::accumulate(kDevelopmentCohortCounts.begin(), kDevelopmentCohortCounts.end(), 0.0);
  ClassVector p{};
  for (int c = 0; c < kClassCount; ++c) p[c] = kDevelopmentCohortCounts[c] / total;
  return p;
}

}  // namespace etio

namespace etio::datapipe {

using ordered_json = nlohmann::ordered_json;

std::filesystem::path Manifest::resolve(const CaseRecord& c) const {
  std::filesystem::path p(c.volume_path);
  return p.is_absolute() || base_dir.empty() ? p : base_dir / p;
}

const CaseRecord& Manifest::find(const std::string& case_id) const {
  for (const auto& c : cases)
    if (c.case_id == case_id) return c;
  throw DataError("unknown case_id " + case_id);
}

ClassCounts Manifest::class_counts() const {
  ClassCounts n{};
  for (const auto& c : cases) ++n[index_of(c.label)];
  return n;
}

std::string manifest_to_jsonl(const Manifest& manifest) {
  std::string out;
  for (const auto& c : manifest.cases) {
    ordered_json j;
    j["case_id"] = c.case_id;
    j["volume_path"] = c.volume_path;
    j["label"] = std::string(to_token(c.label));
    j["age"] = c.age;
    j["sex"] = c.sex;
    j["known_hypertension"] = c.known_hypertension;
    j["impaired_coagulation"] = c.impaired_coagulation;
    j["complaint"] = c.complaint;
    out += j.dump();
    out += '\n';
  }
  return out;
}

Manifest manifest_from_jsonl(std::string_view text, std::filesystem::path base_dir) {
  Manifest m;
  m.base_dir = std::move(base_dir);
  std::set<std::string> seen;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      CaseRecord c;
      c.case_id = j.at("case_id").get<std::string>();
      c.volume_path = j.at("volume_path").get<std::string>();
      const auto token = j.at("label").get<std::string>();
      const auto label = parse_etiology(token);
      if (!label) throw DataError("unknown label '" + token + "'");
      c.label = *label;
      c.age = j.at("age").get<int>();
      c.sex = j.at("sex").get<std::string>();
      c.known_hypertension = j.at("known_hypertension").get<bool>();
      c.impaired_coagulation = j.at("impaired_coagulation").get<bool>();
      c.complaint = j.at("complaint").get<std::string>();
      if (!seen.insert(c.case_id).second) throw DataError("duplicate case_id " + c.case_id);
      m.cases.push_back(std::move(c));
    } catch (const nlohmann::json::exception& e) {
      throw DataError("manifest line " + std::to_string(line_no) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError("manifest line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return m;
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return manifest_from_jsonl(ss.str(), path.parent_path());
}

void write_manifest(const Manifest& manifest, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write manifest " + path.string());
  out << manifest_to_jsonl(manifest);
}

std::vector<std::string> FoldAssignment::members(const Manifest& manifest, int fold) const {
  std::vector<std::string> ids;
  for (const auto& c : manifest.cases) {
    auto it = fold_of.find(c.case_id);
    if (it == fold_of.end()) throw DataError("case " + c.case_id + " has no fold");
    if (it->second == fold) ids.push_back(c.case_id);
  }
  return ids;
}

std::vector<std::string> FoldAssignment::complement(const Manifest& manifest, int fold) const {
  std::vector<std::string> ids;
  for (const auto& c : manifest.cases) {
    auto it = fold_of.find(c.case_id);
    if (it == fold_of.end()) throw DataError("case " + c.case_id + " has no fold");
    if (it->second != fold) ids.push_back(c.case_id);
  }
  return ids;
}

std::string folds_to_json(const FoldAssignment& folds) {
  nlohmann::json j;
  j["k"] = folds.k;
  j["assignment"] = nlohmann::json::object();
  for (const auto& [id, f] : folds.fold_of) j["assignment"][id] = f;
  return j.dump();
}

FoldAssignment read_folds(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open fold file " + path.string());
  try {
    const auto j = nlohmann::json::parse(in);
    FoldAssignment f;
    f.k = j.at("k").get<int>();
    for (const auto& [id, v] : j.at("assignment").items()) {
      const int fold = v.get<int>();
      if (fold < 0 || fold >= f.k) throw DataError("fold index out of range for " + id);
      f.fold_of[id] = fold;
    }
    return f;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed fold file: " + std::string(e.what()));
  }
}

void write_folds(const FoldAssignment& folds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write fold file " + path.string());
  out << folds_to_json(folds) << '\n';
}

FoldAssignment stratified_kfold(const Manifest& manifest, int k, std::uint64_t seed) {
  if (k < 2) throw DataError("stratified_kfold: k must be at least 2");
  if (manifest.cases.empty()) throw DataError("stratified_kfold: empty manifest");

  FoldAssignment out;
  out.k = k;
  int cursor = 0;
  for (int c = 0; c < kClassCount; ++c) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < manifest.cases.size(); ++i)
      if (index_of(manifest.cases[i].label) == c) idx.push_back(i);
    std::mt19937_64 rng(derive_seed(seed, {static_cast<std::uint64_t>(c)}));
    std::shuffle(idx.begin(), idx.end(), rng);
    for (auto i : idx) {
      out.fold_of[manifest.cases[i].case_id] = cursor;
      cursor = (cursor + 1) % k;
    }
  }
  return out;
}

std::vector<std::string> oversample(const std::vector<LabeledId>& training) {
  std::vector<std::string> out;
  for (const auto& t : training) {
    const int c = index_of(t.label);
    if (c < 0 || c >= kClassCount) throw DataError("oversample: unknown label for " + t.case_id);
    out.insert(out.end(), static_cast<std::size_t>(kOversampleFactors[c]), t.case_id);
  }
  return out;
}

std::vector<std::string> oversample(const std::vector<std::string>& ids, const Manifest& manifest) {
  std::vector<LabeledId> labeled;
  labeled.reserve(ids.size());
  for (const auto& id : ids) labeled.push_back({id, manifest.find(id).label});
  return oversample(labeled);
}

ClassVector class_weights(const ClassCounts& counts) {
  double total = 0.0;
  for (auto n : counts) {
    if (n < 1) throw DataError("class_weights: every class needs at least one case");
    total += static_cast<double>(n);
  }
  ClassVector w{};
  for (int c = 0; c < kClassCount; ++c) w[c] = total / (kClassCount * static_cast<double>(counts[c]));
  return w;
}

ClassCounts apportion(std::int64_t n, const ClassVector& proportions) {
  if (n < 0) throw DataError("apportion: negative count");
  double sum = 0.0;
  for (auto p : proportions) {
    if (!(p >= 0.0)) throw DataError("apportion: proportions must be nonnegative");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-6) throw DataError("apportion: proportions must sum to 1");

  ClassCounts counts{};
  std::array<double, kClassCount> remainder{};
  std::int64_t assigned = 0;
  for (int c = 0; c < kClassCount; ++c) {
    const double exact = static_cast<double>(n) * proportions[c] / sum;
    counts[c] = static_cast<std::int64_t>(std::floor(exact + 1e-9));
    remainder[c] = exact - static_cast<double>(counts[c]);
    assigned += counts[c];
  }
  std::array<int, kClassCount> order{};
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return remainder[a] > remainder[b]; });
  for (std::int64_t left = n - assigned, i = 0; left > 0; --left, ++i) ++counts[order[i % kClassCount]];
  return counts;
}

}  // namespace etio::datapipe
