#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "cargoscan/metrics.hpp"
#include "cargoscan/rng.hpp"

using namespace cargoscan;
using namespace cargoscan::metrics;

namespace {

// O(n^2) rank-statistic oracle: P(s_pos > s_neg) + 0.5 P(tie).
double auc_pairwise(const std::vector<double>& scores, const std::vector<int>& labels) {
  double wins = 0.0;
  long pairs = 0;
  for (size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] == 0) continue;
    for (size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      ++pairs;
      if (scores[i] > scores[j]) wins += 1.0;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  return wins / pairs;
}

double beta22_density(double c) { return 6.0 * c * (1.0 - c); }

double beta_density(double c, double a, double b) {
  return std::exp(std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                  (a - 1.0) * std::log(c) + (b - 1.0) * std::log(1.0 - c));
}

// Numeric-integration oracle for the H-measure: midpoint rule over the cost,
// minimum loss taken over all ROC points directly (no hull shortcut).
double h_numeric(const std::vector<double>& scores, const std::vector<int>& labels,
                 double a, double b, int grid = 100000) {
  const auto roc = roc_curve(scores, labels);
  int n_pos = 0, n_neg = 0;
  for (int y : labels) (y != 0 ? n_pos : n_neg)++;
  const double pi1 = static_cast<double>(n_pos) / (n_pos + n_neg);
  const double pi0 = 1.0 - pi1;

  double loss = 0.0, loss_ref = 0.0;
  for (int k = 0; k < grid; ++k) {
    const double c = (k + 0.5) / grid;
    const double u = (a == 2.0 && b == 2.0) ? beta22_density(c) : beta_density(c, a, b);
    double best = 1e300;
    for (const auto& p : roc)
      best = std::min(best, c * pi0 * p.fpr + (1.0 - c) * pi1 * (1.0 - p.tpr));
    loss += u * best;
    loss_ref += u * std::min(c * pi0, (1.0 - c) * pi1);
  }
  return 1.0 - loss / loss_ref;
}

// Exhaustive threshold-sweep oracle for the 90%-detection operating point.
std::pair<double, double> fpr90_sweep(const std::vector<double>& scores,
                                      const std::vector<int>& labels, double target) {
  std::set<double, std::greater<double>> thresholds(scores.begin(), scores.end());
  int n_pos = 0, n_neg = 0;
  for (int y : labels) (y != 0 ? n_pos : n_neg)++;
  for (double t : thresholds) {
    int tp = 0, fp = 0;
    for (size_t i = 0; i < scores.size(); ++i)
      if (scores[i] >= t) (labels[i] != 0 ? tp : fp)++;
    if (static_cast<double>(tp) / n_pos >= target)
      return {t, static_cast<double>(fp) / n_neg};
  }
  return {*thresholds.rbegin(), 1.0};
}

void random_set(Rng& rng, int n_pos, int n_neg, double sep, std::vector<double>& scores,
                std::vector<int>& labels, bool quantize = false) {
  scores.clear();
  labels.clear();
  for (int i = 0; i < n_pos; ++i) {
    double s = rng.uniform() * 0.8 + sep;
    if (quantize) s = std::round(s * 20) / 20;
    scores.push_back(s);
    labels.push_back(1);
  }
  for (int i = 0; i < n_neg; ++i) {
    double s = rng.uniform() * 0.8;
    if (quantize) s = std::round(s * 20) / 20;
    scores.push_back(s);
    labels.push_back(0);
  }
}

}  // namespace

TEST_CASE("roc passes through (0,1) under perfect separation") {
  std::vector<double> s{0.9, 0.8, 0.1, 0.2};
  std::vector<int> y{1, 1, 0, 0};
  auto roc = roc_curve(s, y);
  bool hit = false;
  for (const auto& p : roc)
    if (p.fpr == 0.0 && p.tpr == 1.0) hit = true;
  CHECK(hit);
}

TEST_CASE("roc of all-equal scores is the diagonal segment") {
  std::vector<double> s{0.5, 0.5, 0.5, 0.5};
  std::vector<int> y{1, 1, 0, 0};
  auto roc = roc_curve(s, y);
  REQUIRE(roc.size() == 2);
  CHECK(roc[0].fpr == 0.0);
  CHECK(roc[0].tpr == 0.0);
  CHECK(roc[1].fpr == 1.0);
  CHECK(roc[1].tpr == 1.0);
}

TEST_CASE("roc matches enumerated confusion matrices on a hand-built set") {
  std::vector<double> s{0.9, 0.7, 0.7, 0.4, 0.2};
  std::vector<int> y{1, 0, 1, 1, 0};
  auto roc = roc_curve(s, y);
  // thresholds: inf, 0.9, 0.7, 0.4, 0.2
  REQUIRE(roc.size() == 5);
  CHECK(roc[1].tpr == doctest::Approx(1.0 / 3));
  CHECK(roc[1].fpr == doctest::Approx(0.0));
  CHECK(roc[2].tpr == doctest::Approx(2.0 / 3));
  CHECK(roc[2].fpr == doctest::Approx(0.5));
  CHECK(roc[3].tpr == doctest::Approx(1.0));
  CHECK(roc[3].fpr == doctest::Approx(0.5));
  CHECK(roc[4].fpr == doctest::Approx(1.0));
}

TEST_CASE("roc requires both classes") {
  std::vector<double> s{0.9, 0.8};
  std::vector<int> y{1, 1};
  CHECK_THROWS_AS(roc_curve(s, y), Error);
}

TEST_CASE("auc endpoints: perfect separation and all-equal") {
  std::vector<double> s{0.9, 0.8, 0.1, 0.2};
  std::vector<int> y{1, 1, 0, 0};
  CHECK(auc(roc_curve(s, y)) == doctest::Approx(1.0));
  std::vector<double> e{0.3, 0.3, 0.3, 0.3};
  CHECK(auc(roc_curve(e, y)) == doctest::Approx(0.5));
}

TEST_CASE("auc trapezoid equals the pairwise oracle to 1e-12") {
  Rng rng(41);
  std::vector<double> s;
  std::vector<int> y;
  for (int trial = 0; trial < 200; ++trial) {
    random_set(rng, 50, 50, 0.1, s, y, trial % 2 == 1);
    CHECK(std::abs(auc(roc_curve(s, y)) - auc_pairwise(s, y)) < 1e-12);
  }
}

TEST_CASE("score negation with fixed labels flips the AUC") {
  Rng rng(43);
  std::vector<double> s;
  std::vector<int> y;
  random_set(rng, 30, 30, 0.05, s, y, true);
  std::vector<double> neg(s.size());
  for (size_t i = 0; i < s.size(); ++i) neg[i] = -s[i];
  CHECK(auc(roc_curve(neg, y)) == doctest::Approx(1.0 - auc(roc_curve(s, y))).epsilon(1e-12));
}

TEST_CASE("h-measure endpoints") {
  std::vector<int> y{1, 1, 0, 0};
  std::vector<double> perfect{0.9, 0.8, 0.1, 0.2};
  CHECK(h_measure(perfect, y) == doctest::Approx(1.0).epsilon(1e-9));
  std::vector<double> flat{0.4, 0.4, 0.4, 0.4};
  CHECK(h_measure(flat, y) == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("h-measure closed form equals numeric integration") {
  Rng rng(17);
  std::vector<double> s;
  std::vector<int> y;
  for (int trial = 0; trial < 10; ++trial) {
    random_set(rng, 12 + trial, 15, 0.15, s, y, trial % 2 == 0);
    const double closed = h_measure(s, y, CostPrior::kSymmetricBeta22);
    const double numeric = h_numeric(s, y, 2.0, 2.0);
    CHECK(closed == doctest::Approx(numeric).epsilon(1e-6));
  }
}

TEST_CASE("h-measure class-prior variant equals numeric integration") {
  Rng rng(19);
  std::vector<double> s;
  std::vector<int> y;
  for (int trial = 0; trial < 5; ++trial) {
    random_set(rng, 10, 20, 0.2, s, y);
    int n_pos = 10, n_neg = 20;
    const double pi1 = static_cast<double>(n_pos) / (n_pos + n_neg);
    const double closed = h_measure(s, y, CostPrior::kClassPrior);
    const double numeric = h_numeric(s, y, pi1 + 1.0, 1.0 - pi1 + 1.0);
    CHECK(closed == doctest::Approx(numeric).epsilon(1e-6));
  }
}

TEST_CASE("fpr90: perfect separation gives zero false positives") {
  std::vector<double> s{0.9, 0.8, 0.75, 0.1, 0.2};
  std::vector<int> y{1, 1, 1, 0, 0};
  auto op = fpr_at_tpr(s, y, 0.9);
  CHECK(op.fpr == 0.0);
}

TEST_CASE("fpr90 matches the brute-force sweep on the spec ladder") {
  std::vector<double> s;
  std::vector<int> y;
  for (int i = 0; i < 10; ++i) {
    s.push_back(0.9 - 0.1 * i);
    y.push_back(1);
    s.push_back(0.9 - 0.1 * i - 0.05);
    y.push_back(0);
  }
  auto op = fpr_at_tpr(s, y, 0.9);
  auto [t_ref, fpr_ref] = fpr90_sweep(s, y, 0.9);
  CHECK(op.threshold == doctest::Approx(t_ref));
  CHECK(op.fpr == doctest::Approx(fpr_ref));
}

TEST_CASE("fpr90 matches the brute-force sweep on random sets") {
  Rng rng(23);
  std::vector<double> s;
  std::vector<int> y;
  for (int trial = 0; trial < 100; ++trial) {
    random_set(rng, 20, 25, 0.05, s, y, trial % 3 == 0);
    auto op = fpr_at_tpr(s, y, 0.9);
    auto [t_ref, fpr_ref] = fpr90_sweep(s, y, 0.9);
    CHECK(op.threshold == t_ref);
    CHECK(op.fpr == fpr_ref);
  }
}

TEST_CASE("metrics are exactly invariant under strictly increasing transforms") {
  Rng rng(29);
  std::vector<double> s;
  std::vector<int> y;
  for (int trial = 0; trial < 20; ++trial) {
    random_set(rng, 15, 15, 0.1, s, y, true);
    std::vector<double> warped(s.size());
    for (size_t i = 0; i < s.size(); ++i) warped[i] = s[i] * s[i] * s[i] + 2.0;
    CHECK(auc(roc_curve(warped, y)) == auc(roc_curve(s, y)));
    CHECK(h_measure(warped, y) == h_measure(s, y));
    CHECK(fpr_at_tpr(warped, y).fpr == fpr_at_tpr(s, y).fpr);
  }
}

TEST_CASE("report serializes the required fields") {
  std::vector<double> s{0.9, 0.3, 0.8, 0.2};
  std::vector<int> y{1, 0, 1, 0};
  EvalReport r = evaluate(s, y);
  const std::string json = r.to_json();
  CHECK(json.find("\"auc\"") != std::string::npos);
  CHECK(json.find("\"h_measure\"") != std::string::npos);
  CHECK(json.find("\"t90\"") != std::string::npos);
  CHECK(json.find("\"fpr90\"") != std::string::npos);
  CHECK(r.n_pos == 2);
  CHECK(r.n_neg == 2);
}
