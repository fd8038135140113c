#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "etiobench/datapipe.hpp"
#include "etiobench/tensor.hpp"
#include "etiobench/voxvol.hpp"
#include "json.hpp"

namespace etio::nn {

struct IchNetConfig {
  voxvol::Dims input_dims{64, 64, 16};
  int slow_stride = 4;
  /// Fast pathway widths per stage; the slow pathway runs at 4x these.
  std::array<int, 3> fast_widths{2, 4, 8};
  int embedding_dim = 64;
  int class_count = kClassCount;
  double margin_main = 1.0;
  double margin_minor = 0.5;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int batch_size = 8;
  int epochs = 10;
  std::uint64_t seed = 0;

  static constexpr int kSlowWidthFactor = 4;
  int slow_width(int stage) const { return kSlowWidthFactor * fast_widths[stage]; }
  int lateral_width(int stage) const { return 2 * fast_widths[stage]; }

  /// Throws NnError on a broken invariant.
  void validate() const;
  bool operator==(const IchNetConfig&) const = default;
};

nlohmann::json config_to_json(const IchNetConfig& config);
IchNetConfig config_from_json(const nlohmann::json& j);
/// Hex FNV-1a digest of the architecture and hyperparameters (the seed is excluded).
std::string config_fingerprint(const IchNetConfig& config);

/// N(0, 2/fan_in) entries, deterministic in seed.
Tensor kaiming_init(const Shape& shape, int fan_in, std::uint64_t seed);

/// Brain window (level 40, width 80): clamp to [0, 80] HU, map onto [0, 1]; returns [1, Z, Y, X].
Tensor normalize_hu(const voxvol::Volume& volume);

struct ForwardOutput {
  Tensor probs;      // [6]
  Tensor embedding;  // [embedding_dim]
};

/// Two-pathway volumetric classifier. The fast pathway sees every slice at base
/// width; the slow pathway sees every slow_stride-th slice at 4x width and
/// receives slice-strided lateral connections after stages 1 and 2.
class IchNet {
 public:
  explicit IchNet(IchNetConfig config);

  const IchNetConfig& config() const { return config_; }

  /// Kaiming-normal weights, zero biases.
  void initialize(std::uint64_t seed);

  ForwardOutput forward(const Tensor& input) const;
  std::vector<ForwardOutput> forward(std::span<const Tensor> batch) const;

  /// Parameters in a fixed order; names are unique.
  const std::vector<std::pair<std::string, Tensor>>& parameters() const { return params_; }
  Tensor& parameter(const std::string& name);
  const Tensor& parameter(const std::string& name) const;
  void zero_grad();

 private:
  Tensor& add_param(const std::string& name, Shape shape);

  IchNetConfig config_;
  std::vector<std::pair<std::string, Tensor>> params_;
  std::map<std::string, std::size_t> index_;
};

inline constexpr double kProbabilityFloor = 1e-12;

/// -w_label * log(max(p_label, 1e-12)).
Tensor weighted_ce_loss(const Tensor& probs, Etiology label, const ClassVector& weights);
double weighted_ce_value(std::span<const double> probs, Etiology label, const ClassVector& weights);

/// max(0, |a-p|^2 - |a-n|^2 + margin).
Tensor triplet_loss(const Tensor& anchor, const Tensor& positive, const Tensor& negative, double margin);

/// Main classes use m_main; minority classes half of it.
double triplet_margin(Etiology anchor_class, const IchNetConfig& config);

struct LossItem {
  Tensor probs;
  Tensor embedding;
  Etiology label;
};

struct Triplet {
  std::size_t anchor, positive, negative;
};

/// For each anchor with at least one same-class partner and one other-class
/// item: one random positive and one random negative.
std::vector<Triplet> mine_triplets(std::span<const Etiology> labels, std::mt19937_64& rng);

struct LossTerms {
  Tensor total;
  double cross_entropy = 0.0;
  double triplet = 0.0;
  std::size_t triplet_count = 0;
};

/// Mean weighted CE over the batch plus mean triplet loss over `triplets`.
LossTerms total_loss(std::span<const LossItem> batch, std::span<const Triplet> triplets, const ClassVector& weights,
                     const IchNetConfig& config);

}  // namespace etio::nn
