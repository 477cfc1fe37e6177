#include "thlm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace thlm {

void RankedPrediction::check() const {
  if (predicted.size() != truth.size()) throw std::invalid_argument("ranked prediction: size mismatch");
  if (num_classes < 1) throw std::invalid_argument("ranked prediction: num_classes must be >= 1");
  std::vector<char> seen(static_cast<std::size_t>(num_classes));
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    std::fill(seen.begin(), seen.end(), 0);
    for (int c : predicted[i]) {
      if (c < 0 || c >= num_classes) throw std::out_of_range("ranked prediction: class id out of range");
      if (seen[c]) throw std::invalid_argument("ranked prediction: duplicate predicted id");
      seen[c] = 1;
    }
    if (truth[i].empty()) throw std::invalid_argument("ranked prediction: empty true label set");
    for (int c : truth[i]) {
      if (c < 0 || c >= num_classes) throw std::out_of_range("ranked prediction: class id out of range");
    }
  }
}

namespace {

void check_pair(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("metric inputs differ in length");
  if (a.empty()) throw std::invalid_argument("metric inputs are empty");
}

void check_k(int k) {
  if (k < 1) throw std::invalid_argument("K must be >= 1");
}

bool in_set(const std::vector<int>& s, int c) { return std::find(s.begin(), s.end(), c) != s.end(); }

double ratio(double num, double den) { return den > 0.0 ? num / den : 0.0; }

// Per-class TP/FP/FN at top-K.
struct Counts {
  std::vector<double> tp, fp, fn;
};

Counts count(const RankedPrediction& rp, int k) {
  rp.check();
  check_k(k);
  Counts c;
  const auto n = static_cast<std::size_t>(rp.num_classes);
  c.tp.assign(n, 0.0);
  c.fp.assign(n, 0.0);
  c.fn.assign(n, 0.0);
  for (std::size_t i = 0; i < rp.predicted.size(); ++i) {
    const auto& pred = rp.predicted[i];
    const auto& truth = rp.truth[i];
    const std::size_t top = std::min<std::size_t>(static_cast<std::size_t>(k), pred.size());
    std::vector<int> topk(pred.begin(), pred.begin() + static_cast<std::ptrdiff_t>(top));
    for (int p : topk) (in_set(truth, p) ? c.tp : c.fp)[p] += 1.0;
    for (int t : truth) {
      if (!in_set(topk, t)) c.fn[t] += 1.0;
    }
  }
  return c;
}

}  // namespace

double rmse(std::span<const double> pred, std::span<const double> truth) {
  check_pair(pred, truth);
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - truth[i]) * (pred[i] - truth[i]);
  return std::sqrt(s / static_cast<double>(pred.size()));
}

double mae(std::span<const double> pred, std::span<const double> truth) {
  check_pair(pred, truth);
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(pred[i] - truth[i]);
  return s / static_cast<double>(pred.size());
}

PrecisionRecall micro_pr_at_k(const RankedPrediction& rp, int k) {
  const Counts c = count(rp, k);
  const double tp = std::accumulate(c.tp.begin(), c.tp.end(), 0.0);
  const double fp = std::accumulate(c.fp.begin(), c.fp.end(), 0.0);
  const double fn = std::accumulate(c.fn.begin(), c.fn.end(), 0.0);
  return {ratio(tp, tp + fp), ratio(tp, tp + fn)};
}

PrecisionRecall macro_pr_at_k(const RankedPrediction& rp, int k) {
  const Counts c = count(rp, k);
  PrecisionRecall out;
  for (std::size_t j = 0; j < c.tp.size(); ++j) {
    out.precision += ratio(c.tp[j], c.tp[j] + c.fp[j]);
    out.recall += ratio(c.tp[j], c.tp[j] + c.fn[j]);
  }
  out.precision /= static_cast<double>(rp.num_classes);
  out.recall /= static_cast<double>(rp.num_classes);
  return out;
}

double ndcg_at_k(const RankedPrediction& rp, int k) {
  rp.check();
  check_k(k);
  if (rp.predicted.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < rp.predicted.size(); ++i) {
    const auto& pred = rp.predicted[i];
    const auto& truth = rp.truth[i];
    double dcg = 0.0, idcg = 0.0;
    const std::size_t top = std::min<std::size_t>(static_cast<std::size_t>(k), pred.size());
    for (std::size_t r = 0; r < top; ++r) {
      if (in_set(truth, pred[r])) dcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
    }
    const std::size_t ideal = std::min<std::size_t>(static_cast<std::size_t>(k), truth.size());
    for (std::size_t r = 0; r < ideal; ++r) idcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
    total += dcg / idcg;
  }
  return total / static_cast<double>(rp.predicted.size());
}

std::vector<std::vector<int>> rank_rows(const nn::Matrix& scores) {
  std::vector<std::vector<int>> out(static_cast<std::size_t>(scores.rows()));
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    auto& row = out[static_cast<std::size_t>(i)];
    row.resize(static_cast<std::size_t>(scores.cols()));
    std::iota(row.begin(), row.end(), 0);
    std::stable_sort(row.begin(), row.end(), [&](int a, int b) { return scores(i, a) > scores(i, b); });
  }
  return out;
}

}  // namespace thlm
