#pragma once

#include <string>
#include <vector>

#include "tgcn/errors.hpp"

namespace tgcn {

struct ScoredSample {
  double score = 0.0;
  int label = 0;  // 0 or 1
};

using ScoredLabels = std::vector<ScoredSample>;

// Mann-Whitney statistic: P(score_pos > score_neg) + half credit for ties.
// Computed by trapezoidal integration of the tie-grouped ROC curve, which is
// algebraically the same quantity. Throws on single-class input.
double au_roc(const ScoredLabels& data);

// Step-wise interpolation: precision held right-constant between recall
// points. Throws when there is no positive.
double au_pr(const ScoredLabels& data);

struct F1Result {
  double f1 = 0.0;
  double threshold = 0.0;  // predict positive iff score >= threshold
};

// Maximum F1 over thresholds at score midpoints (plus the all-positive and
// all-negative extremes); ties resolved toward the lower threshold.
F1Result best_f1(const ScoredLabels& data);

struct SensitivityResult {
  double sensitivity = 0.0;
  double threshold = 0.0;
  double specificity = 1.0;  // achieved at the chosen threshold
};

// Highest sensitivity subject to specificity >= target; 0 when unreachable.
SensitivityResult sensitivity_at_specificity(const ScoredLabels& data,
                                             double spec_target);

// JSON object with exactly the keys auroc, aupr, f1, sens_at_97, sens_at_99;
// each value carries the number plus threshold diagnostics, or a null value
// with a reason when the input is class-degenerate for that metric.
std::string metrics_report_json(const ScoredLabels& data);

}  // namespace tgcn
