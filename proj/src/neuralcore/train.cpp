#include <algorithm>
#include <random>
#include <string>

#include "etiobench/seeding.hpp"
#include "etiobench/training.hpp"

namespace etio::nn {

TrainResult train_model(std::span<const TrainingCase> train, std::span<const TrainingCase> validation,
                        const IchNetConfig& config, int fold, const TrainOptions& options) {
  config.validate();
  ClassCounts counts{};
  for (const auto& c : train) ++counts[index_of(c.label)];
  for (int c = 0; c < kClassCount; ++c)
    if (counts[c] == 0)
      throw NnError("empty training class after split: no " + std::string(to_token(etiology_from_index(c))) +
                    " cases in training folds");
  const ClassVector weights = datapipe::class_weights(counts);

  std::vector<datapipe::LabeledId> labeled;
  for (std::size_t i = 0; i < train.size(); ++i) labeled.push_back({std::to_string(i), train[i].label});
  std::vector<std::size_t> expanded;
  for (const auto& id : datapipe::oversample(labeled)) expanded.push_back(std::stoul(id));

  std::vector<Tensor> validation_inputs;
  for (const auto& c : validation) validation_inputs.push_back(normalize_hu(c.volume));

  IchNet model(config);
  model.initialize(derive_seed(config.seed, {0x1417, static_cast<std::uint64_t>(fold)}));
  Adam optimizer({config.learning_rate, config.beta1, config.beta2, config.epsilon});

  TrainResult result;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::mt19937_64 rng(derive_seed(config.seed, {0xE90C, static_cast<std::uint64_t>(fold), static_cast<std::uint64_t>(epoch)}));
    std::vector<std::size_t> order = expanded;
    std::shuffle(order.begin(), order.end(), rng);
    std::uniform_int_distribution<int> rotation(0, voxvol::kRotationCount - 1);

    EpochLog log;
    log.epoch = epoch;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      std::vector<LossItem> items;
      std::vector<Etiology> labels;
      for (std::size_t i = start; i < end; ++i) {
        const TrainingCase& c = train[order[i]];
        const int k = options.rotation_augment ? rotation(rng) : 0;
        const Tensor input = k == 0 ? normalize_hu(c.volume)
                                    : normalize_hu(voxvol::rotate_axial(c.volume, k * voxvol::kRotationStepDegrees));
        auto out = model.forward(input);
        items.push_back({out.probs, out.embedding, c.label});
        labels.push_back(c.label);
      }
      const auto triplets = mine_triplets(labels, rng);
      const LossTerms terms = total_loss(items, triplets, weights, config);
      model.zero_grad();
      backward(terms.total);
      if (options.after_backward) options.after_backward(model);
      optimizer.step(model.parameters());

      log.train_loss += terms.total.item();
      log.train_cross_entropy += terms.cross_entropy;
      log.train_triplet += terms.triplet;
      ++batches;
    }
    if (batches) {
      log.train_loss /= batches;
      log.train_cross_entropy /= batches;
      log.train_triplet /= batches;
    }
    if (!validation.empty()) {
      NoGradGuard no_grad;
      double total = 0.0;
      for (std::size_t i = 0; i < validation.size(); ++i)
        total += weighted_ce_value(model.forward(validation_inputs[i]).probs.values(), validation[i].label, weights);
      log.validation_loss = total / validation.size();
    }
    result.log.push_back(log);
    if (options.on_epoch) options.on_epoch(log);
  }
  result.checkpoint = make_checkpoint(model, fold, config.seed);
  return result;
}

TrainResult train_fold(const datapipe::Manifest& manifest, const datapipe::FoldAssignment& folds, int fold_idx,
                       const IchNetConfig& config, const TrainOptions& options) {
  if (fold_idx < 0 || fold_idx >= folds.k) throw NnError("train_fold: fold index out of range");
  std::vector<TrainingCase> train, validation;
  for (const auto& c : manifest.cases) {
    auto it = folds.fold_of.find(c.case_id);
    if (it == folds.fold_of.end()) throw NnError("train_fold: case " + c.case_id + " has no fold");
    TrainingCase tc{voxvol::read_volume(manifest.resolve(c)), c.label};
    const auto& d = tc.volume.dims();
    if (d != config.input_dims)
      throw NnError("train_fold: volume " + c.case_id + " is " + std::to_string(d.nx) + "x" + std::to_string(d.ny) +
                    "x" + std::to_string(d.nz) + ", model expects " + std::to_string(config.input_dims.nx) + "x" +
                    std::to_string(config.input_dims.ny) + "x" + std::to_string(config.input_dims.nz));
    (it->second == fold_idx ? validation : train).push_back(std::move(tc));
  }
  return train_model(train, validation, config, fold_idx, options);
}

std::string training_log_json(const std::vector<EpochLog>& log) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& e : log)
    j.push_back({{"epoch", e.epoch},
                 {"train_loss", e.train_loss},
                 {"train_cross_entropy", e.train_cross_entropy},
                 {"train_triplet", e.train_triplet},
                 {"validation_loss", e.validation_loss}});
  return j.dump(2);
}

}  // namespace etio::nn
