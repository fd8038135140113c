#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>

#include "etiobench/diagstats.hpp"
#include "etiobench/parallel.hpp"
#include "etiobench/pipeline.hpp"
#include "etiobench/seeding.hpp"

namespace etio::pipeline {

nn::IchNetConfig DeskProfile::model_config(std::uint64_t seed) const {
  nn::IchNetConfig c;
  c.input_dims = prep.crop;
  c.epochs = epochs;
  c.learning_rate = learning_rate;
  c.seed = seed;
  return c;
}

datapipe::Manifest prep_dataset(const datapipe::Manifest& input, const voxvol::PrepParams& params,
                                const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir / "volumes");
  datapipe::Manifest out{input.cases, out_dir};
  parallel_for(input.cases.size(), [&](std::size_t i) {
    auto& c = out.cases[i];
    try {
      const auto v = voxvol::preprocess(voxvol::read_volume(input.resolve(input.cases[i])), params);
      c.volume_path = "volumes/" + c.case_id + ".mvv";
      voxvol::write_volume(v, out_dir / c.volume_path);
    } catch (const std::exception& e) {
      throw datapipe::DataError("prep failed for case " + c.case_id + ": " + e.what());
    }
  });
  datapipe::write_manifest(out, out_dir / "manifest.jsonl");
  return out;
}

std::vector<nn::TrainResult> train_folds(const datapipe::Manifest& manifest, const datapipe::FoldAssignment& folds,
                                         const nn::IchNetConfig& config, const std::filesystem::path& out_dir,
                                         const nn::TrainOptions& options) {
  std::filesystem::create_directories(out_dir);
  std::vector<nn::TrainResult> results(static_cast<std::size_t>(folds.k));
  parallel_for(results.size(), [&](std::size_t f) {
    const int fold = static_cast<int>(f);
    results[f] = nn::train_fold(manifest, folds, fold, config, options);
    nn::write_checkpoint(results[f].checkpoint, out_dir / checkpoint_name(fold));
    std::ofstream(out_dir / ("fold_" + std::to_string(fold) + "_log.json")) << nn::training_log_json(results[f].log)
                                                                             << '\n';
  });
  return results;
}

nlohmann::ordered_json evaluate_predictions(const datapipe::Manifest& manifest, const inference::PredictionSet& set) {
  std::vector<std::string> ids;
  std::map<std::string, Etiology> truth;
  std::map<std::string, ClassVector> probs;
  for (const auto& row : set.rows) {
    if (!row.ok()) continue;
    ids.push_back(row.case_id);
    truth[row.case_id] = manifest.find(row.case_id).label;
    probs[row.case_id] = *row.probs;
  }
  auto report = diagstats::model_report(ids, truth, probs);
  report["failed_cases"] = set.rows.size() - ids.size();
  return report;
}

DeskRun run_desk_experiment(std::uint64_t seed, std::int64_t development_cases, std::int64_t held_out_cases,
                            const DeskProfile& profile, const std::filesystem::path& out_dir) {
  const auto start = std::chrono::steady_clock::now();
  const auto proportions = development_cohort_proportions();
  const auto dev_raw = phantomgen::generate_cohort(development_cases, proportions, derive_seed(seed, {0xD0}),
                                                   out_dir / "raw_dev", profile.phantoms);
  const auto test_raw = phantomgen::generate_cohort(held_out_cases, proportions, derive_seed(seed, {0x7E}),
                                                    out_dir / "raw_test", profile.phantoms);
  const auto dev = prep_dataset(dev_raw, profile.prep, out_dir / "prep_dev");
  const auto test = prep_dataset(test_raw, profile.prep, out_dir / "prep_test");
  const auto folds = datapipe::stratified_kfold(dev, profile.folds, seed);
  datapipe::write_folds(folds, out_dir / "folds.json");

  const auto trained = train_folds(dev, folds, profile.model_config(seed), out_dir / "models");
  std::vector<nn::ModelCheckpoint> members;
  for (const auto& t : trained) members.push_back(t.checkpoint);
  const inference::Ensemble ensemble(std::move(members));
  const auto predictions = inference::predict_dataset(ensemble, test, profile.rotations);
  inference::write_predictions_csv(predictions, out_dir / "predictions.csv");

  DeskRun run;
  run.report = evaluate_predictions(test, predictions);
  std::ofstream(out_dir / "report.json") << run.report.dump(2) << '\n';
  run.accuracy = run.report["accuracy"]["value"].get<double>();
  for (Etiology e : kAllEtiologies) {
    const auto& a = run.report["per_etiology"][std::string(to_token(e))]["auc"];
    run.auc[index_of(e)] = a.is_null() ? std::numeric_limits<double>::quiet_NaN() : a.get<double>();
  }
  run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return run;
}

}  // namespace etio::pipeline
