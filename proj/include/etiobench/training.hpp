#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "etiobench/datapipe.hpp"
#include "etiobench/ichnet.hpp"

namespace etio::nn {

struct AdamHyper {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t step = 0;
};

/// One bias-corrected Adam update. State buffers are sized on first use.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, const AdamHyper& hyper);

class Adam {
 public:
  explicit Adam(AdamHyper hyper) : hyper_(hyper) {}
  /// Updates every parameter that holds a gradient.
  void step(const std::vector<std::pair<std::string, Tensor>>& params);

 private:
  AdamHyper hyper_;
  std::map<std::string, AdamState> state_;
};

struct ModelCheckpoint {
  IchNetConfig config;
  std::string fingerprint;
  int fold = 0;
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, Tensor>> tensors;
};

ModelCheckpoint make_checkpoint(const IchNet& model, int fold, std::uint64_t seed);
/// Verifies the fingerprint and that every architecture parameter appears exactly once.
IchNet model_from_checkpoint(const ModelCheckpoint& checkpoint);

std::vector<std::uint8_t> encode_checkpoint(const ModelCheckpoint& checkpoint);
ModelCheckpoint decode_checkpoint(std::span<const std::uint8_t> bytes);
void write_checkpoint(const ModelCheckpoint& checkpoint, const std::filesystem::path& path);
ModelCheckpoint read_checkpoint(const std::filesystem::path& path);

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double train_cross_entropy = 0.0;
  double train_triplet = 0.0;
  double validation_loss = 0.0;  // mean weighted CE, unrotated
};

struct TrainingCase {
  voxvol::Volume volume;
  Etiology label;
};

struct TrainOptions {
  /// Draw one of the 18 axial rotations per sample; off means 0 degrees only.
  bool rotation_augment = true;
  std::function<void(const EpochLog&)> on_epoch;
  /// Called after each backward pass, before the optimizer step.
  std::function<void(const IchNet&)> after_backward;
};

struct TrainResult {
  ModelCheckpoint checkpoint;
  std::vector<EpochLog> log;
};

/// Trains on `train` (oversampled, optionally rotation-augmented) and reports
/// validation CE on `validation` each epoch. Class weights come from the
/// training counts before oversampling.
TrainResult train_model(std::span<const TrainingCase> train, std::span<const TrainingCase> validation,
                        const IchNetConfig& config, int fold, const TrainOptions& options = {});

/// Loads the manifest volumes and trains on all folds other than `fold_idx`.
TrainResult train_fold(const datapipe::Manifest& manifest, const datapipe::FoldAssignment& folds, int fold_idx,
                       const IchNetConfig& config, const TrainOptions& options = {});

std::string training_log_json(const std::vector<EpochLog>& log);

}  // namespace etio::nn
