#include <algorithm>
#include <fstream>
#include <random>

#include "etiobench/seeding.hpp"
#include "etiobench/studysvc.hpp"

namespace etio::studysvc {

namespace {

bool valid_rater_id(const std::string& id) {
  return !id.empty() && std::all_of(id.begin(), id.end(), [](unsigned char c) {
    return std::isalnum(c) || c == '-' || c == '_';
  });
}

Etiology own_guess(Etiology truth, double accuracy, std::mt19937_64& rng) {
  if (std::uniform_real_distribution<double>(0.0, 1.0)(rng) < accuracy) return truth;
  const int wrong = std::uniform_int_distribution<int>(0, kClassCount - 2)(rng);
  return etiology_from_index(wrong < index_of(truth) ? wrong : wrong + 1);
}

}  // namespace

SimulatedStudy simulate_raters(const datapipe::Manifest& manifest, const std::map<std::string, ClassVector>& predictions,
                               const std::vector<RaterProfile>& profiles, std::uint64_t seed) {
  for (const auto& p : profiles) {
    if (!valid_rater_id(p.rater_id))
      throw StudyError(ErrorCode::bad_request, "rater id '" + p.rater_id + "' must be letters, digits, '-' or '_'");
    if (!(p.base_accuracy >= 0.0 && p.base_accuracy <= 1.0) || !(p.adoption >= 0.0 && p.adoption <= 1.0))
      throw StudyError(ErrorCode::bad_request, "rater " + p.rater_id + ": accuracy and adoption must lie in [0, 1]");
  }
  const bool with_model = !predictions.empty();
  SimulatedStudy study;
  for (const auto& p : profiles) {
    const std::uint64_t key = fnv1a(p.rater_id);
    auto& m1 = study[TaskMode::images_only][p.rater_id];
    auto& m2 = study[TaskMode::images_clinical][p.rater_id];
    for (std::size_t i = 0; i < manifest.cases.size(); ++i) {
      const auto& c = manifest.cases[i];
      const auto ts = static_cast<std::int64_t>(i);
      std::mt19937_64 r1(derive_seed(seed, {key, 0, i}));
      std::mt19937_64 r2(derive_seed(seed, {key, 1, i}));
      m1.push_back({p.rater_id, c.case_id, own_guess(c.label, p.base_accuracy, r1), TaskMode::images_only, ts});
      m2.push_back({p.rater_id, c.case_id, own_guess(c.label, p.base_accuracy, r2), TaskMode::images_clinical, ts});
      if (!with_model) continue;
      const auto it = predictions.find(c.case_id);
      if (it == predictions.end()) throw StudyError(ErrorCode::predictions_required, "no model prediction for case " + c.case_id);
      const auto& probs = it->second;
      const auto top = etiology_from_index(static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin()));
      std::mt19937_64 r3(derive_seed(seed, {key, 2, i}));
      const bool adopt = std::uniform_real_distribution<double>(0.0, 1.0)(r3) < p.adoption;
      study[TaskMode::images_clinical_ai][p.rater_id].push_back(
          {p.rater_id, c.case_id, adopt ? top : m2.back().label, TaskMode::images_clinical_ai, ts});
    }
  }
  return study;
}

std::vector<std::filesystem::path> write_responses(const SimulatedStudy& study, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  for (const auto& [mode, raters] : study)
    for (const auto& [rater, responses] : raters) {
      const auto path = dir / (std::string(to_string(mode)) + "__" + rater + ".jsonl");
      std::ofstream out(path, std::ios::binary | std::ios::trunc);
      for (const auto& r : responses) out << to_json(r).dump() << '\n';
      if (!out) throw std::runtime_error("cannot write " + path.string());
      written.push_back(path);
    }
  return written;
}

std::vector<RaterResponse> read_responses(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open response file " + path.string());
  std::vector<RaterResponse> out;
  std::string line;
  for (int n = 1; std::getline(in, line); ++n) {
    if (line.empty()) continue;
    try {
      out.push_back(response_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw StudyError(ErrorCode::bad_request, path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace etio::studysvc
