#include "tgcn/metrics.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

namespace tgcn {

namespace {

struct Counts {
  std::size_t pos = 0, neg = 0;
};

Counts count_classes(const ScoredLabels& data) {
  Counts c;
  for (const auto& s : data) {
    if (s.label != 0 && s.label != 1)
      throw ValueError("labels must be 0 or 1");
    if (!std::isfinite(s.score)) throw ValueError("scores must be finite");
    (s.label ? c.pos : c.neg) += 1;
  }
  return c;
}

// Descending by score; within a group of equal scores the split into tp/fp
// is what matters, not the order.
ScoredLabels sorted_desc(const ScoredLabels& data) {
  ScoredLabels s = data;
  std::sort(s.begin(), s.end(), [](const ScoredSample& a, const ScoredSample& b) {
    return a.score > b.score;
  });
  return s;
}

// Candidate decision thresholds for "predict positive iff score >= tau":
// one below the minimum (everything positive), the midpoints between
// consecutive distinct scores, and one above the maximum (nothing positive).
// Ascending order.
std::vector<double> candidate_thresholds(const ScoredLabels& data) {
  std::vector<double> scores;
  scores.reserve(data.size());
  for (const auto& s : data) scores.push_back(s.score);
  std::sort(scores.begin(), scores.end());
  scores.erase(std::unique(scores.begin(), scores.end()), scores.end());
  std::vector<double> taus;
  taus.push_back(scores.front() - 1.0);
  for (std::size_t i = 0; i + 1 < scores.size(); ++i)
    taus.push_back(0.5 * (scores[i] + scores[i + 1]));
  taus.push_back(scores.back() + 1.0);
  return taus;
}

struct Confusion {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
};

Confusion confusion_at(const ScoredLabels& data, double tau) {
  Confusion c;
  for (const auto& s : data) {
    const bool pred = s.score >= tau;
    if (s.label == 1)
      (pred ? c.tp : c.fn) += 1;
    else
      (pred ? c.fp : c.tn) += 1;
  }
  return c;
}

}  // namespace

double au_roc(const ScoredLabels& data) {
  const Counts c = count_classes(data);
  if (c.pos == 0 || c.neg == 0)
    throw ValueError("au_roc needs at least one positive and one negative");
  const ScoredLabels s = sorted_desc(data);
  double area = 0.0;
  double tpr_prev = 0.0, fpr_prev = 0.0;
  std::size_t tp = 0, fp = 0;
  std::size_t i = 0;
  while (i < s.size()) {
    std::size_t j = i;
    while (j < s.size() && s[j].score == s[i].score) {
      (s[j].label ? tp : fp) += 1;
      ++j;
    }
    const double tpr = static_cast<double>(tp) / static_cast<double>(c.pos);
    const double fpr = static_cast<double>(fp) / static_cast<double>(c.neg);
    area += (fpr - fpr_prev) * 0.5 * (tpr + tpr_prev);
    tpr_prev = tpr;
    fpr_prev = fpr;
    i = j;
  }
  return area;
}

double au_pr(const ScoredLabels& data) {
  const Counts c = count_classes(data);
  if (c.pos == 0) throw ValueError("au_pr needs at least one positive");
  const ScoredLabels s = sorted_desc(data);
  double area = 0.0;
  double recall_prev = 0.0;
  std::size_t tp = 0, fp = 0;
  std::size_t i = 0;
  while (i < s.size()) {
    std::size_t j = i;
    while (j < s.size() && s[j].score == s[i].score) {
      (s[j].label ? tp : fp) += 1;
      ++j;
    }
    const double recall = static_cast<double>(tp) / static_cast<double>(c.pos);
    const double precision =
        static_cast<double>(tp) / static_cast<double>(tp + fp);
    area += (recall - recall_prev) * precision;
    recall_prev = recall;
    i = j;
  }
  return area;
}

F1Result best_f1(const ScoredLabels& data) {
  const Counts c = count_classes(data);
  if (c.pos == 0) throw ValueError("best_f1 needs at least one positive");
  F1Result best{-1.0, 0.0};
  for (double tau : candidate_thresholds(data)) {
    const Confusion cm = confusion_at(data, tau);
    const double denom = static_cast<double>(2 * cm.tp + cm.fp + cm.fn);
    const double f1 = denom == 0.0 ? 0.0 : 2.0 * static_cast<double>(cm.tp) / denom;
    if (f1 > best.f1) best = {f1, tau};  // strict: ties keep the lower threshold
  }
  return best;
}

SensitivityResult sensitivity_at_specificity(const ScoredLabels& data,
                                             double spec_target) {
  if (spec_target < 0.0 || spec_target > 1.0)
    throw ValueError("specificity target must be in [0, 1]");
  const Counts c = count_classes(data);
  if (c.pos == 0 || c.neg == 0)
    throw ValueError(
        "sensitivity_at_specificity needs at least one positive and one negative");
  // Sensitivity is non-increasing in the threshold, so the first threshold
  // (ascending) whose specificity clears the target is the best one.
  for (double tau : candidate_thresholds(data)) {
    const Confusion cm = confusion_at(data, tau);
    const double specificity =
        static_cast<double>(cm.tn) / static_cast<double>(c.neg);
    if (specificity >= spec_target) {
      const double sensitivity =
          static_cast<double>(cm.tp) / static_cast<double>(c.pos);
      return {sensitivity, tau, specificity};
    }
  }
  return {0.0, 0.0, 1.0};
}

std::string metrics_report_json(const ScoredLabels& data) {
  nlohmann::json report;
  const Counts c = count_classes(data);

  if (c.pos > 0 && c.neg > 0) {
    report["auroc"] = {{"value", au_roc(data)}};
  } else {
    report["auroc"] = {{"value", nullptr}, {"reason", "single-class input"}};
  }
  if (c.pos > 0) {
    report["aupr"] = {{"value", au_pr(data)}};
    const F1Result f1 = best_f1(data);
    report["f1"] = {{"value", f1.f1}, {"threshold", f1.threshold}};
  } else {
    report["aupr"] = {{"value", nullptr}, {"reason", "no positive examples"}};
    report["f1"] = {{"value", nullptr}, {"reason", "no positive examples"}};
  }
  for (const auto& [key, target] :
       {std::pair<const char*, double>{"sens_at_97", 0.97},
        std::pair<const char*, double>{"sens_at_99", 0.99}}) {
    if (c.pos > 0 && c.neg > 0) {
      const SensitivityResult r = sensitivity_at_specificity(data, target);
      report[key] = {{"value", r.sensitivity},
                     {"threshold", r.threshold},
                     {"specificity", r.specificity}};
    } else {
      report[key] = {{"value", nullptr}, {"reason", "single-class input"}};
    }
  }
  return report.dump(2) + "\n";
}

}  // namespace tgcn
