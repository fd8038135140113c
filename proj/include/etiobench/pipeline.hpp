#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "etiobench/datapipe.hpp"
#include "etiobench/inference.hpp"
#include "etiobench/phantomgen.hpp"
#include "etiobench/training.hpp"
#include "json.hpp"

namespace etio::pipeline {

/// Desk-scale defaults: 64x64x16 phantoms, resampled to 32x32x8 model input,
/// 8 epochs at learning rate 3e-3.
struct DeskProfile {
  phantomgen::CohortOptions phantoms{{64, 64, 16}, {2.4, 2.4, 8.4}, 5.0};
  voxvol::PrepParams prep{{4.8, 4.8, 16.8}, {32, 32, 8}, true};
  int folds = 5;
  int epochs = 8;
  double learning_rate = 3e-3;
  int rotations = voxvol::kRotationCount;

  nn::IchNetConfig model_config(std::uint64_t seed) const;
};

/// Preprocesses every volume into out_dir/volumes and writes out_dir/manifest.jsonl.
/// Failures name the offending case.
datapipe::Manifest prep_dataset(const datapipe::Manifest& input, const voxvol::PrepParams& params,
                                const std::filesystem::path& out_dir);

inline std::string checkpoint_name(int fold) { return "fold_" + std::to_string(fold) + ".ichc"; }

/// Trains one model per fold; writes fold_<k>.ichc and fold_<k>_log.json under out_dir.
std::vector<nn::TrainResult> train_folds(const datapipe::Manifest& manifest, const datapipe::FoldAssignment& folds,
                                         const nn::IchNetConfig& config, const std::filesystem::path& out_dir,
                                         const nn::TrainOptions& options = {});

/// Model report from a prediction set; failed rows are left out.
nlohmann::ordered_json evaluate_predictions(const datapipe::Manifest& manifest, const inference::PredictionSet& set);

struct DeskRun {
  nlohmann::ordered_json report;
  double accuracy = 0.0;
  ClassVector auc{};  // NaN where a class has no positives or no negatives
  double seconds = 0.0;
};

/// gen (development proportions) -> prep -> stratified k-fold -> train -> ensemble
/// prediction on a separately generated held-out cohort, all under out_dir.
DeskRun run_desk_experiment(std::uint64_t seed, std::int64_t development_cases, std::int64_t held_out_cases,
                            const DeskProfile& profile, const std::filesystem::path& out_dir);

}  // namespace etio::pipeline
