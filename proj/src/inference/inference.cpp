#include "etiobench/inference.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "etiobench/parallel.hpp"

namespace etio::inference {

Etiology hard_diagnosis(const ClassVector& probs) {
  int best = 0;
  for (int i = 1; i < kClassCount; ++i)
    if (probs[i] > probs[best]) best = i;
  return etiology_from_index(best);
}

namespace {

bool member_before(const nn::ModelCheckpoint& a, const nn::ModelCheckpoint& b) {
  if (a.fold != b.fold) return a.fold < b.fold;
  if (a.seed != b.seed) return a.seed < b.seed;
  // Same fold and seed: fall back to the weights so the order is still total.
  for (std::size_t k = 0; k < std::min(a.tensors.size(), b.tensors.size()); ++k) {
    const auto va = a.tensors[k].second.values(), vb = b.tensors[k].second.values();
    if (std::lexicographical_compare(va.begin(), va.end(), vb.begin(), vb.end())) return true;
    if (std::lexicographical_compare(vb.begin(), vb.end(), va.begin(), va.end())) return false;
  }
  return false;
}

}  // namespace

Ensemble::Ensemble(std::vector<nn::ModelCheckpoint> checkpoints) {
  if (checkpoints.empty()) throw InferenceError("ensemble needs at least one checkpoint");
  for (const auto& cp : checkpoints)
    if (cp.fingerprint != checkpoints.front().fingerprint)
      throw InferenceError("config fingerprint mismatch across checkpoints: " + checkpoints.front().fingerprint +
                           " vs " + cp.fingerprint);
  std::stable_sort(checkpoints.begin(), checkpoints.end(), member_before);
  for (const auto& cp : checkpoints) {
    models_.push_back(nn::model_from_checkpoint(cp));
    folds_.push_back(cp.fold);
  }
}

ClassVector Ensemble::predict(const voxvol::Volume& volume, int rotations) const {
  if (rotations != 1 && rotations != voxvol::kRotationCount)
    throw InferenceError("rotations must be 1 or " + std::to_string(voxvol::kRotationCount));
  if (volume.dims() != config().input_dims) throw InferenceError("volume dims do not match the model input");

  nn::NoGradGuard no_grad;
  // Running means, members within a rotation and then across rotations: identical members reproduce a
  // single member's output bit for bit.
  ClassVector mean{};
  for (int k = 0; k < rotations; ++k) {
    const nn::Tensor input =
        nn::normalize_hu(k == 0 ? volume : voxvol::rotate_axial(volume, k * voxvol::kRotationStepDegrees));
    ClassVector members{};
    for (std::size_t m = 0; m < models_.size(); ++m) {
      const nn::Tensor probs = models_[m].forward(input).probs;
      for (int c = 0; c < kClassCount; ++c) members[c] += (probs.values()[c] - members[c]) / (m + 1);
    }
    for (int c = 0; c < kClassCount; ++c) mean[c] += (members[c] - mean[c]) / (k + 1);
  }
  const double total = std::accumulate(mean.begin(), mean.end(), 0.0);
  if (std::abs(total - 1.0) > 1e-9)
    for (auto& p : mean) p /= total;
  return mean;
}

std::vector<nn::ModelCheckpoint> load_checkpoints(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw InferenceError("checkpoint directory not found: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".ichc") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw InferenceError("no .ichc checkpoints in " + dir.string());
  std::vector<nn::ModelCheckpoint> out;
  for (const auto& f : files) out.push_back(nn::read_checkpoint(f));
  return out;
}

ClassVector ensemble_predict(const Ensemble& ensemble, const voxvol::Volume& volume, int rotations) {
  return ensemble.predict(volume, rotations);
}

const CasePrediction* PredictionSet::find(const std::string& case_id) const {
  for (const auto& r : rows)
    if (r.case_id == case_id) return &r;
  return nullptr;
}

PredictionSet predict_dataset(const Ensemble& ensemble, const datapipe::Manifest& manifest, int rotations) {
  if (rotations != 1 && rotations != voxvol::kRotationCount)
    throw InferenceError("rotations must be 1 or " + std::to_string(voxvol::kRotationCount));
  PredictionSet set;
  set.rows.resize(manifest.cases.size());
  parallel_for(manifest.cases.size(), [&](std::size_t i) {
    const auto& c = manifest.cases[i];
    CasePrediction& row = set.rows[i];
    row.case_id = c.case_id;
    try {
      const ClassVector p = ensemble.predict(voxvol::read_volume(manifest.resolve(c)), rotations);
      row.probs = p;
      row.diagnosis = hard_diagnosis(p);
      row.model_count = static_cast<int>(ensemble.size());
      row.rotation_count = rotations;
    } catch (const std::exception& e) {
      row.error = e.what();
    }
  });
  return set;
}

std::string predictions_csv(const PredictionSet& set) {
  std::string out = std::string(kPredictionsHeader) + "\n";
  char buf[32];
  for (const auto& r : set.rows) {
    out += r.case_id;
    for (int c = 0; c < kClassCount; ++c) {
      out += ',';
      if (r.ok()) {
        std::snprintf(buf, sizeof buf, "%.6f", (*r.probs)[c]);
        out += buf;
      }
    }
    out += ',';
    out += r.ok() ? std::string(to_token(r.diagnosis)) : "failed";
    out += '\n';
  }
  return out;
}

void write_predictions_csv(const PredictionSet& set, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InferenceError("cannot write " + path.string());
  out << predictions_csv(set);
}

PredictionSet read_predictions_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InferenceError("cannot open predictions " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kPredictionsHeader)
    throw InferenceError(path.string() + ": unexpected predictions header");
  PredictionSet set;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    if (cells.size() != 8) throw InferenceError(path.string() + ":" + std::to_string(line_no) + ": expected 8 columns");
    CasePrediction row;
    row.case_id = cells[0];
    if (cells[7] == "failed") {
      row.error = "failed";
    } else {
      const auto label = parse_etiology(cells[7]);
      if (!label) throw InferenceError(path.string() + ":" + std::to_string(line_no) + ": unknown diagnosis " + cells[7]);
      ClassVector p{};
      try {
        for (int c = 0; c < kClassCount; ++c) p[c] = std::stod(cells[1 + c]);
      } catch (const std::exception&) {
        throw InferenceError(path.string() + ":" + std::to_string(line_no) + ": bad probability");
      }
      row.probs = p;
      row.diagnosis = *label;
    }
    set.rows.push_back(std::move(row));
  }
  return set;
}

}  // namespace etio::inference
