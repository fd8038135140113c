#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "etiobench/datapipe.hpp"
#include "json.hpp"

namespace etio::diagstats {

class StatsError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Interval {
  double lower = 0.0;
  double upper = 0.0;
};

/// Mann-Whitney: (concordant + ties/2) / (n_pos * n_neg).
double auc(std::span<const double> pos, std::span<const double> neg);

struct RocPoint {
  double threshold;  // a case is called positive when score >= threshold
  double sensitivity;
  double specificity;
};

/// Points sorted by threshold: -inf, every distinct score, +inf.
struct RocCurve {
  std::vector<RocPoint> points;
};

RocCurve roc_curve(std::span<const double> pos, std::span<const double> neg);
/// Trapezoidal area in (1 - specificity, sensitivity) space.
double roc_area(const RocCurve& roc);

/// Regularized incomplete beta I_x(a, b).
double incomplete_beta(double a, double b, double x);
/// x with I_x(a, b) = p, by bisection to 1e-10.
double beta_quantile(double p, double a, double b);
/// Standard normal quantile.
double normal_quantile(double p);

Interval clopper_pearson(std::int64_t k, std::int64_t n, double confidence = 0.95);
/// Clipped to [0, 1].
Interval hanley_mcneil_ci(double auc, std::int64_t n_pos, std::int64_t n_neg, double confidence = 0.95);

/// high_spec maximizes sensitivity subject to specificity >= target (falling
/// back to the most specific point); high_sens is the mirror image.
struct OperatingPoints {
  RocPoint high_spec;
  RocPoint high_sens;
};
OperatingPoints operating_points(const RocCurve& roc, double target = 0.9);

/// Rows are the true class, columns the predicted class.
using ConfusionMatrix = std::array<std::array<std::int64_t, kClassCount>, kClassCount>;
ConfusionMatrix confusion_matrix(std::span<const Etiology> truth, std::span<const Etiology> predicted);

double cohen_kappa(std::span<const Etiology> a, std::span<const Etiology> b);
/// Fleiss (1971). Each row counts how many of the m raters chose each class.
double fleiss_kappa(std::span<const ClassCounts> ratings);

inline constexpr int kDefaultBootstrapReplicates = 2000;

/// One-sided paired bootstrap: fraction of case resamples in which mean(a) <= mean(b).
/// Cases are put in a canonical order first, so the result ignores case order.
double bootstrap_compare(std::span<const double> a, std::span<const double> b,
                         int replicates = kDefaultBootstrapReplicates, std::uint64_t seed = 0);

/// Reader-study task modes, in protocol order.
inline constexpr std::array<const char*, 3> kTaskModes = {"images_only", "images_clinical", "images_clinical_ai"};
int task_rank(const std::string& mode);

struct ReportInput {
  std::vector<std::string> case_ids;  // report order
  std::map<std::string, Etiology> truth;
  /// task mode -> rater id -> case id -> chosen label
  std::map<std::string, std::map<std::string, std::map<std::string, Etiology>>> responses;
  /// Model probabilities per case (optional).
  std::map<std::string, ClassVector> model;
  int bootstrap_replicates = kDefaultBootstrapReplicates;
  std::uint64_t seed = 0;
};

/// Per-task rater metrics, task-to-task increments with bootstrap p-values, and
/// model metrics when probabilities are given. Throws StatsError on missing responses.
nlohmann::ordered_json augmentation_report(const ReportInput& input);

/// Model-only evaluation: accuracy, confusion matrix, per-class AUC with CI and operating points.
nlohmann::ordered_json model_report(const std::vector<std::string>& case_ids, const std::map<std::string, Etiology>& truth,
                                    const std::map<std::string, ClassVector>& probs);

}  // namespace etio::diagstats
