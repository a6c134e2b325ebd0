#include "cargoscan/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

namespace cargoscan::metrics {

namespace {

void check_both_classes(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw_domain("metrics: scores/labels length mismatch");
  int pos = 0, neg = 0;
  for (int y : labels) (y != 0 ? pos : neg)++;
  if (pos == 0 || neg == 0) throw_domain("metrics: both classes must be present");
}

// Regularized incomplete beta I_x(a,b) via the continued-fraction expansion.
double betacf(double a, double b, double x) {
  constexpr int kMaxIter = 300;
  constexpr double kEps = 3e-14, kFpMin = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0, d = 1.0 - qab * x / qap;
  if (std::abs(d) < kFpMin) d = kFpMin;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::abs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::abs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) break;
  }
  return h;
}

double inc_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double ln_bt = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                       a * std::log(x) + b * std::log(1.0 - x);
  const double bt = std::exp(ln_bt);
  if (x < (a + 1.0) / (a + b + 2.0)) return bt * betacf(a, b, x) / a;
  return 1.0 - bt * betacf(b, a, 1.0 - x) / b;
}

struct BetaPrior {
  double alpha, beta;

  // Unnormalized over the full density: integrals of c*u(c) and (1-c)*u(c)
  // over [0, x], with u the Beta(alpha, beta) density.
  double int_c(double x) const {
    // c * Beta(a,b) = Beta(a+1,b) * a/(a+b)
    return alpha / (alpha + beta) * inc_beta(alpha + 1.0, beta, x);
  }
  double int_1mc(double x) const {
    return beta / (alpha + beta) * inc_beta(alpha, beta + 1.0, x);
  }
};

}  // namespace

std::vector<RocPoint> roc_curve(const std::vector<double>& scores, const std::vector<int>& labels) {
  check_both_classes(scores, labels);
  const size_t n = scores.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return scores[a] > scores[b]; });

  int n_pos = 0, n_neg = 0;
  for (int y : labels) (y != 0 ? n_pos : n_neg)++;

  std::vector<RocPoint> roc;
  roc.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
  int tp = 0, fp = 0;
  size_t i = 0;
  while (i < n) {
    const double s = scores[order[i]];
    // consume the whole tie group at threshold s
    while (i < n && scores[order[i]] == s) {
      (labels[order[i]] != 0 ? tp : fp)++;
      ++i;
    }
    roc.push_back({static_cast<double>(fp) / n_neg, static_cast<double>(tp) / n_pos, s});
  }
  return roc;
}

double auc(const std::vector<RocPoint>& roc) {
  double area = 0.0;
  for (size_t i = 1; i < roc.size(); ++i)
    area += 0.5 * (roc[i].tpr + roc[i - 1].tpr) * (roc[i].fpr - roc[i - 1].fpr);
  return area;
}

double h_measure(const std::vector<double>& scores, const std::vector<int>& labels, CostPrior prior) {
  check_both_classes(scores, labels);
  const std::vector<RocPoint> roc = roc_curve(scores, labels);

  int n_pos = 0, n_neg = 0;
  for (int y : labels) (y != 0 ? n_pos : n_neg)++;
  const double pi1 = static_cast<double>(n_pos) / (n_pos + n_neg);
  const double pi0 = 1.0 - pi1;

  const BetaPrior u = (prior == CostPrior::kSymmetricBeta22)
                          ? BetaPrior{2.0, 2.0}
                          : BetaPrior{pi1 + 1.0, pi0 + 1.0};

  // Upper convex hull of the ROC (monotone chain over points already sorted
  // by fpr; keeps slopes strictly decreasing).
  std::vector<RocPoint> hull;
  for (const RocPoint& p : roc) {
    while (hull.size() >= 2) {
      const RocPoint& a = hull[hull.size() - 2];
      const RocPoint& b = hull[hull.size() - 1];
      const double cross = (b.fpr - a.fpr) * (p.tpr - a.tpr) - (b.tpr - a.tpr) * (p.fpr - a.fpr);
      if (cross >= 0.0) {
        hull.pop_back();
      } else {
        break;
      }
    }
    hull.push_back(p);
  }

  // Cost value at which a supporting line of slope s touches: the hull vertex
  // j is the loss minimizer for c in [cb(s_{j+1}), cb(s_j)], with s_j the
  // slope of the segment entering vertex j.
  const auto cost_break = [&](double slope) {
    if (std::isinf(slope)) return 1.0;
    return slope * pi1 / (pi0 + slope * pi1);
  };

  const size_t k = hull.size();
  double loss = 0.0;
  for (size_t j = 0; j < k; ++j) {
    const double s_in = (j == 0) ? std::numeric_limits<double>::infinity()
                                 : (hull[j].tpr - hull[j - 1].tpr) / (hull[j].fpr - hull[j - 1].fpr);
    const double s_out = (j + 1 == k) ? 0.0
                                      : (hull[j + 1].tpr - hull[j].tpr) / (hull[j + 1].fpr - hull[j].fpr);
    const double c_hi = cost_break(s_in);
    const double c_lo = cost_break(s_out);
    if (c_hi <= c_lo) continue;
    const double fnr = 1.0 - hull[j].tpr;
    loss += pi0 * hull[j].fpr * (u.int_c(c_hi) - u.int_c(c_lo)) +
            pi1 * fnr * (u.int_1mc(c_hi) - u.int_1mc(c_lo));
  }

  // Score-free reference: classify everything positive below c* = pi1,
  // everything negative above.
  const double c_star = pi1;
  const double loss_ref = pi0 * u.int_c(c_star) + pi1 * (u.int_1mc(1.0) - u.int_1mc(c_star));

  if (loss_ref <= 0.0) return 0.0;
  const double h = 1.0 - loss / loss_ref;
  return std::clamp(h, 0.0, 1.0);
}

OperatingPoint fpr_at_tpr(const std::vector<double>& scores, const std::vector<int>& labels,
                          double target) {
  const std::vector<RocPoint> roc = roc_curve(scores, labels);
  // Thresholds descend along the curve, so TPR is non-decreasing; the first
  // point reaching the target carries the largest qualifying threshold.
  for (const RocPoint& p : roc) {
    if (p.tpr >= target && std::isfinite(p.threshold)) return {p.threshold, p.fpr};
  }
  const RocPoint& last = roc.back();
  return {last.threshold, last.fpr};
}

EvalReport evaluate(const std::vector<double>& scores, const std::vector<int>& labels,
                    CostPrior prior) {
  EvalReport report;
  report.roc = roc_curve(scores, labels);
  report.auc = auc(report.roc);
  report.h_measure = h_measure(scores, labels, prior);
  const OperatingPoint op = fpr_at_tpr(scores, labels, 0.90);
  report.t90 = op.threshold;
  report.fpr90 = op.fpr;
  for (int y : labels) (y != 0 ? report.n_pos : report.n_neg)++;
  return report;
}

std::string EvalReport::to_json(bool include_roc) const {
  nlohmann::json j;
  j["auc"] = auc;
  j["h_measure"] = h_measure;
  j["t90"] = t90;
  j["fpr90"] = fpr90;
  j["n_pos"] = n_pos;
  j["n_neg"] = n_neg;
  if (include_roc) {
    nlohmann::json pts = nlohmann::json::array();
    for (const RocPoint& p : roc) {
      nlohmann::json pt;
      pt["fpr"] = p.fpr;
      pt["tpr"] = p.tpr;
      if (std::isfinite(p.threshold)) {
        pt["threshold"] = p.threshold;
      } else {
        pt["threshold"] = nullptr;
      }
      pts.push_back(pt);
    }
    j["roc"] = pts;
  }
  return j.dump();
}

std::string roc_to_csv(const std::vector<RocPoint>& roc) {
  std::ostringstream out;
  out << "fpr,tpr,threshold\n";
  out.precision(17);
  for (const RocPoint& p : roc) {
    out << p.fpr << "," << p.tpr << ",";
    if (std::isfinite(p.threshold)) out << p.threshold;
    out << "\n";
  }
  return out.str();
}

}  // namespace cargoscan::metrics
