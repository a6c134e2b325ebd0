#pragma once

#include <limits>
#include <string>
#include <vector>

#include "cargoscan/types.hpp"

namespace cargoscan::metrics {

struct RocPoint {
  double fpr;
  double tpr;
  double threshold;  // predict positive when score >= threshold; +inf at (0,0)
};

// Cost-ratio prior for the H-measure. Beta(2,2) is the frozen default; the
// class-prior-dependent Beta(pi1+1, pi0+1) variant is selectable.
enum class CostPrior {
  kSymmetricBeta22,
  kClassPrior,
};

struct EvalReport {
  std::vector<RocPoint> roc;
  double auc = 0.0;
  double h_measure = 0.0;
  double t90 = 0.0;
  double fpr90 = 0.0;
  int n_pos = 0;
  int n_neg = 0;

  std::string to_json(bool include_roc = true) const;
};

// ROC with thresholds at the distinct scores (descending), ties grouped,
// endpoints (0,0) and (1,1) included. Requires both classes present.
std::vector<RocPoint> roc_curve(const std::vector<double>& scores, const std::vector<int>& labels);

// Trapezoidal area under the curve.
double auc(const std::vector<RocPoint>& roc);

// H = 1 - L/L_ref with L the expected minimum misclassification loss over the
// ROC convex hull under the cost prior, L_ref the same for a score-free
// classifier.
double h_measure(const std::vector<double>& scores, const std::vector<int>& labels,
                 CostPrior prior = CostPrior::kSymmetricBeta22);

struct OperatingPoint {
  double threshold;  // largest threshold with TPR >= target
  double fpr;
};

OperatingPoint fpr_at_tpr(const std::vector<double>& scores, const std::vector<int>& labels,
                          double target = 0.90);

// Full report at the default 90% detection target.
EvalReport evaluate(const std::vector<double>& scores, const std::vector<int>& labels,
                    CostPrior prior = CostPrior::kSymmetricBeta22);

std::string roc_to_csv(const std::vector<RocPoint>& roc);

}  // namespace cargoscan::metrics
