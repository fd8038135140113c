#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>

#include "etiobench/diagstats.hpp"
#include "etiobench/seeding.hpp"

namespace etio::diagstats {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw StatsError(what);
}

// Continued fraction for the incomplete beta (modified Lentz).
double beta_fraction(double a, double b, double x) {
  constexpr double kTiny = 1e-300;
  constexpr double kEps = 1e-15;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 10000; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < kEps) return h;
  }
  return h;
}

}  // namespace

double auc(std::span<const double> pos, std::span<const double> neg) {
  require(!pos.empty() && !neg.empty(), "auc: both classes need at least one score");
  std::vector<double> sorted(neg.begin(), neg.end());
  std::sort(sorted.begin(), sorted.end());
  // Twice the Mann-Whitney U, kept integral: 2 * concordant + ties.
  std::int64_t twice_u = 0;
  for (double p : pos) {
    const auto [lo, hi] = std::equal_range(sorted.begin(), sorted.end(), p);
    twice_u += 2 * (lo - sorted.begin()) + (hi - lo);
  }
  const std::int64_t denom = 2 * static_cast<std::int64_t>(pos.size()) * static_cast<std::int64_t>(neg.size());
  // Compute the lower half directly and the upper half as a complement so that
  // auc(pos, neg) + auc(neg, pos) is exactly 1.
  if (2 * twice_u <= denom) return static_cast<double>(twice_u) / denom;
  return 1.0 - static_cast<double>(denom - twice_u) / denom;
}

RocCurve roc_curve(std::span<const double> pos, std::span<const double> neg) {
  require(!pos.empty() && !neg.empty(), "roc_curve: both classes need at least one score");
  std::vector<double> p(pos.begin(), pos.end()), n(neg.begin(), neg.end());
  std::sort(p.begin(), p.end());
  std::sort(n.begin(), n.end());
  std::vector<double> cuts(p);
  cuts.insert(cuts.end(), n.begin(), n.end());
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());

  const double inf = std::numeric_limits<double>::infinity();
  RocCurve roc;
  roc.points.push_back({-inf, 1.0, 0.0});
  for (double t : cuts) {
    const auto tp = p.end() - std::lower_bound(p.begin(), p.end(), t);
    const auto tn = std::lower_bound(n.begin(), n.end(), t) - n.begin();
    roc.points.push_back({t, static_cast<double>(tp) / p.size(), static_cast<double>(tn) / n.size()});
  }
  roc.points.push_back({inf, 0.0, 1.0});
  return roc;
}

double roc_area(const RocCurve& roc) {
  double area = 0.0;
  for (std::size_t i = 0; i + 1 < roc.points.size(); ++i) {
    const auto& a = roc.points[i];
    const auto& b = roc.points[i + 1];
    area += (b.specificity - a.specificity) * (a.sensitivity + b.sensitivity) / 2.0;
  }
  return area;
}

double incomplete_beta(double a, double b, double x) {
  require(a > 0.0 && b > 0.0, "incomplete_beta: shape parameters must be positive");
  require(x >= 0.0 && x <= 1.0, "incomplete_beta: x outside [0, 1]");
  if (x == 0.0 || x == 1.0) return x;
  const double front =
      std::exp(std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x));
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_fraction(a, b, x) / a;
  return 1.0 - front * beta_fraction(b, a, 1.0 - x) / b;
}

double beta_quantile(double p, double a, double b) {
  require(p >= 0.0 && p <= 1.0, "beta_quantile: p outside [0, 1]");
  double lo = 0.0, hi = 1.0;
  while (hi - lo > 1e-10) {
    const double mid = 0.5 * (lo + hi);
    (incomplete_beta(a, b, mid) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

double normal_quantile(double p) {
  require(p > 0.0 && p < 1.0, "normal_quantile: p outside (0, 1)");
  double lo = -40.0, hi = 40.0;
  for (int i = 0; i < 200 && hi - lo > 1e-15; ++i) {
    const double mid = 0.5 * (lo + hi);
    (0.5 * std::erfc(-mid / std::numbers::sqrt2) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

Interval clopper_pearson(std::int64_t k, std::int64_t n, double confidence) {
  require(n >= 1, "clopper_pearson: n must be at least 1");
  require(k >= 0 && k <= n, "clopper_pearson: k must lie in [0, n]");
  require(confidence > 0.0 && confidence < 1.0, "clopper_pearson: confidence outside (0, 1)");
  const double alpha = 1.0 - confidence;
  const double kd = static_cast<double>(k), nd = static_cast<double>(n);
  return {k == 0 ? 0.0 : beta_quantile(alpha / 2.0, kd, nd - kd + 1.0),
          k == n ? 1.0 : beta_quantile(1.0 - alpha / 2.0, kd + 1.0, nd - kd)};
}

Interval hanley_mcneil_ci(double a, std::int64_t n_pos, std::int64_t n_neg, double confidence) {
  require(a >= 0.0 && a <= 1.0, "hanley_mcneil_ci: auc outside [0, 1]");
  require(n_pos >= 1 && n_neg >= 1, "hanley_mcneil_ci: need at least one positive and one negative");
  require(confidence > 0.0 && confidence < 1.0, "hanley_mcneil_ci: confidence outside (0, 1)");
  const double q1 = a / (2.0 - a);
  const double q2 = 2.0 * a * a / (1.0 + a);
  const double var = (a * (1.0 - a) + (n_pos - 1.0) * (q1 - a * a) + (n_neg - 1.0) * (q2 - a * a)) /
                     (static_cast<double>(n_pos) * static_cast<double>(n_neg));
  const double se = std::sqrt(std::max(0.0, var));
  const double z = normal_quantile(1.0 - (1.0 - confidence) / 2.0);
  return {std::clamp(a - z * se, 0.0, 1.0), std::clamp(a + z * se, 0.0, 1.0)};
}

OperatingPoints operating_points(const RocCurve& roc, double target) {
  require(!roc.points.empty(), "operating_points: empty curve");
  auto pick = [&](auto constraint, auto primary, auto secondary) {
    const RocPoint* best = nullptr;
    for (const auto& p : roc.points)
      if (constraint(p) &&
          (!best || primary(p) > primary(*best) || (primary(p) == primary(*best) && secondary(p) > secondary(*best))))
        best = &p;
    return best;
  };
  auto sens = [](const RocPoint& p) { return p.sensitivity; };
  auto spec = [](const RocPoint& p) { return p.specificity; };
  auto any = [](const RocPoint&) { return true; };

  const RocPoint* hs = pick([&](const RocPoint& p) { return p.specificity >= target; }, sens, spec);
  if (!hs) hs = pick(any, spec, sens);
  const RocPoint* hn = pick([&](const RocPoint& p) { return p.sensitivity >= target; }, spec, sens);
  if (!hn) hn = pick(any, sens, spec);
  return {*hs, *hn};
}

ConfusionMatrix confusion_matrix(std::span<const Etiology> truth, std::span<const Etiology> predicted) {
  require(truth.size() == predicted.size(), "confusion_matrix: length mismatch");
  ConfusionMatrix m{};
  for (std::size_t i = 0; i < truth.size(); ++i) ++m[index_of(truth[i])][index_of(predicted[i])];
  return m;
}

double cohen_kappa(std::span<const Etiology> a, std::span<const Etiology> b) {
  require(a.size() == b.size(), "cohen_kappa: length mismatch");
  require(!a.empty(), "cohen_kappa: no cases");
  const double n = static_cast<double>(a.size());
  ClassCounts ca{}, cb{};
  std::int64_t agree = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ++ca[index_of(a[i])];
    ++cb[index_of(b[i])];
    agree += a[i] == b[i];
  }
  const double po = agree / n;
  double pe = 0.0;
  for (int c = 0; c < kClassCount; ++c) pe += (ca[c] / n) * (cb[c] / n);
  if (pe == 1.0) return 1.0;
  return (po - pe) / (1.0 - pe);
}

double fleiss_kappa(std::span<const ClassCounts> ratings) {
  require(!ratings.empty(), "fleiss_kappa: no cases");
  const std::int64_t m = std::accumulate(ratings[0].begin(), ratings[0].end(), std::int64_t{0});
  require(m >= 2, "fleiss_kappa: need at least 2 raters per case");
  const double n = static_cast<double>(ratings.size());
  ClassVector totals{};
  double agreement = 0.0;
  for (const auto& row : ratings) {
    std::int64_t sum = 0, squares = 0;
    for (int c = 0; c < kClassCount; ++c) {
      require(row[c] >= 0, "fleiss_kappa: negative count");
      sum += row[c];
      squares += row[c] * row[c];
      totals[c] += static_cast<double>(row[c]);
    }
    require(sum == m, "fleiss_kappa: every case must be rated by the same number of raters");
    agreement += static_cast<double>(squares - m) / static_cast<double>(m * (m - 1));
  }
  const double p_bar = agreement / n;
  double pe = 0.0;
  for (double t : totals) pe += (t / (n * m)) * (t / (n * m));
  if (pe == 1.0) return 1.0;
  return (p_bar - pe) / (1.0 - pe);
}

double bootstrap_compare(std::span<const double> a, std::span<const double> b, int replicates, std::uint64_t seed) {
  require(a.size() == b.size(), "bootstrap_compare: length mismatch");
  require(!a.empty(), "bootstrap_compare: no cases");
  require(replicates >= 100, "bootstrap_compare: need at least 100 replicates");
  std::vector<std::pair<double, double>> cases;
  for (std::size_t i = 0; i < a.size(); ++i) cases.emplace_back(a[i], b[i]);
  std::sort(cases.begin(), cases.end());

  std::int64_t not_better = 0;
  std::uniform_int_distribution<std::size_t> draw(0, cases.size() - 1);
  for (int r = 0; r < replicates; ++r) {
    std::mt19937_64 rng(derive_seed(seed, {static_cast<std::uint64_t>(r)}));
    double sa = 0.0, sb = 0.0;
    for (std::size_t i = 0; i < cases.size(); ++i) {
      const auto& c = cases[draw(rng)];
      sa += c.first;
      sb += c.second;
    }
    not_better += sa <= sb;
  }
  return static_cast<double>(not_better) / replicates;
}

}  // namespace etio::diagstats
