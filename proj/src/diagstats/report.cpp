#include <algorithm>
#include <cmath>

#include "etiobench/diagstats.hpp"
#include "etiobench/seeding.hpp"

namespace etio::diagstats {

using nlohmann::ordered_json;

namespace {

using RaterMap = std::map<std::string, std::map<std::string, Etiology>>;

// Running mean: exact when all values are equal.
double mean_of(const std::vector<double>& xs) {
  double m = 0.0;
  std::size_t n = 0;
  for (double x : xs) m += (x - m) / static_cast<double>(++n);
  return m;
}

ordered_json interval_json(Interval ci) { return ordered_json::array({ci.lower, ci.upper}); }

ordered_json matrix_json(const ConfusionMatrix& m) {
  ordered_json rows = ordered_json::array();
  for (const auto& r : m) rows.push_back(r);
  return rows;
}

ordered_json proportion_json(std::int64_t k, std::int64_t n) {
  ordered_json j;
  j["count"] = k;
  j["total"] = n;
  if (n == 0) {
    j["value"] = nullptr;
    j["ci"] = nullptr;
  } else {
    j["value"] = static_cast<double>(k) / static_cast<double>(n);
    j["ci"] = interval_json(clopper_pearson(k, n));
  }
  return j;
}

struct TaskLabels {
  std::vector<std::string> raters;
  std::vector<std::vector<Etiology>> chosen;  // [rater][case]
};

TaskLabels collect(const std::string& task, const RaterMap& raters, const std::vector<std::string>& case_ids) {
  TaskLabels t;
  for (const auto& [rater, answers] : raters) {
    t.raters.push_back(rater);
    auto& row = t.chosen.emplace_back();
    for (const auto& id : case_ids) {
      const auto it = answers.find(id);
      if (it == answers.end())
        throw StatsError("missing response: task " + task + ", rater " + rater + ", case " + id);
      row.push_back(it->second);
    }
  }
  return t;
}

// Per-case fraction of raters that were right, optionally restricted to one class.
std::vector<double> case_correct(const TaskLabels& t, const std::vector<Etiology>& truth) {
  std::vector<double> out(truth.size(), 0.0);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    std::vector<double> hits;
    for (const auto& row : t.chosen) hits.push_back(row[i] == truth[i] ? 1.0 : 0.0);
    out[i] = mean_of(hits);
  }
  return out;
}

std::vector<double> rater_correct(const std::vector<Etiology>& chosen, const std::vector<Etiology>& truth) {
  std::vector<double> out;
  for (std::size_t i = 0; i < truth.size(); ++i) out.push_back(chosen[i] == truth[i] ? 1.0 : 0.0);
  return out;
}

// Sensitivity scores live on the class's positives, specificity scores on its negatives
// (a negative counts as right when the rater did not choose the class).
std::vector<double> class_scores(const TaskLabels& t, const std::vector<Etiology>& truth, Etiology c, bool positives) {
  std::vector<double> out;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if ((truth[i] == c) != positives) continue;
    std::vector<double> hits;
    for (const auto& row : t.chosen) hits.push_back(positives ? row[i] == c : row[i] != c);
    out.push_back(mean_of(hits));
  }
  return out;
}

ordered_json task_section(const TaskLabels& t, const std::vector<Etiology>& truth) {
  const auto n = static_cast<std::int64_t>(truth.size());
  ordered_json j;
  j["raters"] = t.raters;

  ConfusionMatrix pooled{};
  std::int64_t pooled_correct = 0;
  ordered_json per_rater = ordered_json::object();
  std::vector<ConfusionMatrix> matrices;
  for (std::size_t r = 0; r < t.raters.size(); ++r) {
    const auto m = confusion_matrix(truth, t.chosen[r]);
    matrices.push_back(m);
    std::int64_t correct = 0;
    for (int c = 0; c < kClassCount; ++c) {
      correct += m[c][c];
      for (int p = 0; p < kClassCount; ++p) pooled[c][p] += m[c][p];
    }
    pooled_correct += correct;
    ordered_json rj;
    rj["accuracy"] = proportion_json(correct, n);
    per_rater[t.raters[r]] = rj;
  }
  const auto total = n * static_cast<std::int64_t>(t.raters.size());
  j["pooled_accuracy"] = proportion_json(pooled_correct, total);
  j["per_rater"] = per_rater;

  ordered_json per_class = ordered_json::object();
  for (Etiology e : kAllEtiologies) {
    const int c = index_of(e);
    std::int64_t pos = 0, neg = 0;
    for (auto x : truth) (x == e ? pos : neg) += 1;
    std::vector<double> sens, spec;
    std::int64_t tp = 0, tn = 0;
    for (const auto& m : matrices) {
      std::int64_t row_tp = m[c][c], row_fp = 0;
      for (int r = 0; r < kClassCount; ++r)
        if (r != c) row_fp += m[r][c];
      tp += row_tp;
      tn += neg - row_fp;
      if (pos > 0) sens.push_back(static_cast<double>(row_tp) / static_cast<double>(pos));
      if (neg > 0) spec.push_back(static_cast<double>(neg - row_fp) / static_cast<double>(neg));
    }
    const auto raters = static_cast<std::int64_t>(matrices.size());
    ordered_json cj;
    cj["positives"] = pos;
    cj["negatives"] = neg;
    cj["sensitivity"] = proportion_json(tp, pos * raters);
    cj["sensitivity"]["mean"] = sens.empty() ? ordered_json(nullptr) : ordered_json(mean_of(sens));
    cj["specificity"] = proportion_json(tn, neg * raters);
    cj["specificity"]["mean"] = spec.empty() ? ordered_json(nullptr) : ordered_json(mean_of(spec));
    per_class[std::string(to_token(e))] = cj;
  }
  j["per_etiology"] = per_class;
  j["confusion_matrix"] = matrix_json(pooled);

  if (t.raters.size() >= 2) {
    ordered_json kappa = ordered_json::array();
    for (std::size_t a = 0; a < t.raters.size(); ++a) {
      ordered_json row = ordered_json::array();
      for (std::size_t b = 0; b < t.raters.size(); ++b) row.push_back(cohen_kappa(t.chosen[a], t.chosen[b]));
      kappa.push_back(row);
    }
    j["cohen_kappa"] = kappa;
    std::vector<ClassCounts> counts(truth.size(), ClassCounts{});
    for (const auto& row : t.chosen)
      for (std::size_t i = 0; i < truth.size(); ++i) ++counts[i][index_of(row[i])];
    j["fleiss_kappa"] = fleiss_kappa(counts);
  }
  return j;
}

ordered_json increment_json(const std::vector<double>& base, const std::vector<double>& aug, int replicates,
                            std::uint64_t seed) {
  ordered_json j;
  if (base.empty()) {
    j["base"] = j["augmented"] = j["increment"] = j["p_value"] = nullptr;
    return j;
  }
  const double b = mean_of(base), a = mean_of(aug);
  j["base"] = b;
  j["augmented"] = a;
  j["increment"] = a - b;
  j["p_value"] = bootstrap_compare(aug, base, replicates, seed);
  return j;
}

ordered_json compare_tasks(const TaskLabels& base, const TaskLabels& aug, const std::vector<Etiology>& truth,
                           int replicates, std::uint64_t seed) {
  ordered_json j;
  std::uint64_t key = 0;
  auto next_seed = [&] { return derive_seed(seed, {key++}); };
  j["pooled_accuracy"] = increment_json(case_correct(base, truth), case_correct(aug, truth), replicates, next_seed());

  ordered_json per_rater = ordered_json::object();
  for (std::size_t r = 0; r < base.raters.size(); ++r) {
    const auto it = std::find(aug.raters.begin(), aug.raters.end(), base.raters[r]);
    const std::uint64_t s = next_seed();
    if (it == aug.raters.end()) continue;
    const auto& aug_row = aug.chosen[static_cast<std::size_t>(it - aug.raters.begin())];
    per_rater[base.raters[r]] =
        increment_json(rater_correct(base.chosen[r], truth), rater_correct(aug_row, truth), replicates, s);
  }
  j["per_rater"] = per_rater;

  ordered_json per_class = ordered_json::object();
  for (Etiology e : kAllEtiologies) {
    ordered_json cj;
    cj["sensitivity"] = increment_json(class_scores(base, truth, e, true), class_scores(aug, truth, e, true),
                                       replicates, next_seed());
    cj["specificity"] = increment_json(class_scores(base, truth, e, false), class_scores(aug, truth, e, false),
                                       replicates, next_seed());
    per_class[std::string(to_token(e))] = cj;
  }
  j["per_etiology"] = per_class;
  return j;
}

Etiology argmax(const ClassVector& p) {
  return etiology_from_index(static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin()));
}

std::vector<Etiology> truth_in_order(const std::vector<std::string>& case_ids,
                                     const std::map<std::string, Etiology>& truth) {
  std::vector<Etiology> out;
  for (const auto& id : case_ids) {
    const auto it = truth.find(id);
    if (it == truth.end()) throw StatsError("no ground truth for case " + id);
    out.push_back(it->second);
  }
  return out;
}

ordered_json point_json(const RocPoint& p) {
  ordered_json j;
  j["threshold"] = std::isfinite(p.threshold) ? ordered_json(p.threshold) : ordered_json(nullptr);
  j["sensitivity"] = p.sensitivity;
  j["specificity"] = p.specificity;
  return j;
}

}  // namespace

int task_rank(const std::string& mode) {
  for (std::size_t i = 0; i < kTaskModes.size(); ++i)
    if (mode == kTaskModes[i]) return static_cast<int>(i);
  throw StatsError("unknown task mode: " + mode);
}

ordered_json model_report(const std::vector<std::string>& case_ids, const std::map<std::string, Etiology>& truth,
                          const std::map<std::string, ClassVector>& probs) {
  if (case_ids.empty()) throw StatsError("model_report: no cases");
  const auto labels = truth_in_order(case_ids, truth);
  std::vector<ClassVector> p;
  std::vector<Etiology> predicted;
  for (const auto& id : case_ids) {
    const auto it = probs.find(id);
    if (it == probs.end()) throw StatsError("no model prediction for case " + id);
    p.push_back(it->second);
    predicted.push_back(argmax(it->second));
  }
  const auto m = confusion_matrix(labels, predicted);
  std::int64_t correct = 0;
  for (int c = 0; c < kClassCount; ++c) correct += m[c][c];
  const auto n = static_cast<std::int64_t>(labels.size());

  ordered_json j;
  j["case_count"] = n;
  j["accuracy"] = proportion_json(correct, n);
  j["confusion_matrix"] = matrix_json(m);
  ordered_json per_class = ordered_json::object();
  for (Etiology e : kAllEtiologies) {
    const int c = index_of(e);
    std::vector<double> pos, neg;
    std::int64_t tp = 0, tn = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == e) {
        pos.push_back(p[i][c]);
        tp += predicted[i] == e;
      } else {
        neg.push_back(p[i][c]);
        tn += predicted[i] != e;
      }
    }
    ordered_json cj;
    cj["positives"] = pos.size();
    cj["negatives"] = neg.size();
    cj["sensitivity"] = proportion_json(tp, static_cast<std::int64_t>(pos.size()));
    cj["specificity"] = proportion_json(tn, static_cast<std::int64_t>(neg.size()));
    if (pos.empty() || neg.empty()) {
      cj["auc"] = cj["auc_ci"] = cj["operating_points"] = nullptr;
    } else {
      const double a = auc(pos, neg);
      cj["auc"] = a;
      cj["auc_ci"] = interval_json(hanley_mcneil_ci(a, static_cast<std::int64_t>(pos.size()),
                                                    static_cast<std::int64_t>(neg.size())));
      const auto ops = operating_points(roc_curve(pos, neg));
      cj["operating_points"] = {{"high_specificity", point_json(ops.high_spec)},
                                {"high_sensitivity", point_json(ops.high_sens)}};
    }
    per_class[std::string(to_token(e))] = cj;
  }
  j["per_etiology"] = per_class;
  return j;
}

ordered_json augmentation_report(const ReportInput& input) {
  if (input.case_ids.empty()) throw StatsError("augmentation_report: no cases");
  const auto truth = truth_in_order(input.case_ids, input.truth);

  std::vector<std::pair<int, std::string>> tasks;
  for (const auto& [task, raters] : input.responses)
    if (!raters.empty()) tasks.emplace_back(task_rank(task), task);
  std::sort(tasks.begin(), tasks.end());

  std::map<std::string, TaskLabels> labels;
  ordered_json j;
  j["case_count"] = input.case_ids.size();
  j["bootstrap_replicates"] = input.bootstrap_replicates;
  j["seed"] = input.seed;
  ordered_json task_json = ordered_json::object();
  for (const auto& [rank, task] : tasks) {
    labels[task] = collect(task, input.responses.at(task), input.case_ids);
    task_json[task] = task_section(labels[task], truth);
  }
  j["tasks"] = task_json;

  ordered_json comparisons = ordered_json::array();
  for (std::size_t a = 0; a < tasks.size(); ++a)
    for (std::size_t b = a + 1; b < tasks.size(); ++b) {
      ordered_json c;
      c["base"] = tasks[a].second;
      c["augmented"] = tasks[b].second;
      const auto s = derive_seed(input.seed, {0xC0, static_cast<std::uint64_t>(tasks[a].first),
                                              static_cast<std::uint64_t>(tasks[b].first)});
      c.update(compare_tasks(labels[tasks[a].second], labels[tasks[b].second], truth, input.bootstrap_replicates, s));
      comparisons.push_back(c);
    }
  j["comparisons"] = comparisons;

  if (!input.model.empty()) {
    j["model"] = model_report(input.case_ids, input.truth, input.model);
    std::vector<double> model_hits;
    for (std::size_t i = 0; i < truth.size(); ++i)
      model_hits.push_back(argmax(input.model.at(input.case_ids[i])) == truth[i] ? 1.0 : 0.0);
    ordered_json vs = ordered_json::object();
    for (const auto& [rank, task] : tasks) {
      const auto s = derive_seed(input.seed, {0xA1, static_cast<std::uint64_t>(rank)});
      vs[task] = increment_json(case_correct(labels[task], truth), model_hits, input.bootstrap_replicates, s);
    }
    j["model_vs_raters"] = vs;
  }
  return j;
}

}  // namespace etio::diagstats
