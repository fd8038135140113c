#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "etiobench/datapipe.hpp"
#include "etiobench/training.hpp"
#include "etiobench/voxvol.hpp"

namespace etio::inference {

class InferenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Largest entry; ties go to the lowest canonical index.
Etiology hard_diagnosis(const ClassVector& probs);

/// Averaged members sharing one architecture. Members are held in (fold, seed,
/// parameter) order regardless of the order they were passed in.
class Ensemble {
 public:
  explicit Ensemble(std::vector<nn::ModelCheckpoint> checkpoints);

  std::size_t size() const { return models_.size(); }
  const nn::IchNetConfig& config() const { return models_.front().config(); }
  const std::vector<int>& folds() const { return folds_; }

  /// Mean softmax output over members x rotation copies; rotations is 1 or 18.
  ClassVector predict(const voxvol::Volume& volume, int rotations) const;

 private:
  std::vector<nn::IchNet> models_;
  std::vector<int> folds_;
};

/// Loads every *.ichc under dir, in file name order.
std::vector<nn::ModelCheckpoint> load_checkpoints(const std::filesystem::path& dir);

ClassVector ensemble_predict(const Ensemble& ensemble, const voxvol::Volume& volume, int rotations);

struct CasePrediction {
  std::string case_id;
  std::optional<ClassVector> probs;  // empty when the case failed
  Etiology diagnosis = Etiology::aneurysm;
  int model_count = 0;
  int rotation_count = 0;
  std::string error;

  bool ok() const { return probs.has_value(); }
};

struct PredictionSet {
  std::vector<CasePrediction> rows;  // manifest order

  const CasePrediction* find(const std::string& case_id) const;
};

/// Cases whose volume cannot be read or shaped are marked failed; the rest still run.
PredictionSet predict_dataset(const Ensemble& ensemble, const datapipe::Manifest& manifest, int rotations);

inline constexpr const char* kPredictionsHeader =
    "case_id,p_aneurysm,p_hypertensive,p_avm,p_mmd,p_cm,p_others,diagnosis";

std::string predictions_csv(const PredictionSet& set);
void write_predictions_csv(const PredictionSet& set, const std::filesystem::path& path);
/// Reads a predictions CSV back; probabilities carry the file's 6-decimal precision.
PredictionSet read_predictions_csv(const std::filesystem::path& path);

}  // namespace etio::inference
