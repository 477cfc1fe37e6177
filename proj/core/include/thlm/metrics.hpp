#pragma once

#include <span>
#include <vector>

#include "thlm/tensor.hpp"

namespace thlm {

// Ranked label predictions for a batch of examples over classes 0..num_classes-1.
struct RankedPrediction {
  std::vector<std::vector<int>> predicted;  // descending score order, unique ids
  std::vector<std::vector<int>> truth;      // nonempty true label sets
  int num_classes = 0;

  void check() const;
};

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
};

double rmse(std::span<const double> pred, std::span<const double> truth);
double mae(std::span<const double> pred, std::span<const double> truth);

// Top-K counts pooled over all classes.
PrecisionRecall micro_pr_at_k(const RankedPrediction& rp, int k);
// Per-class precision and recall averaged over all num_classes classes; a
// class with a zero denominator contributes 0.
PrecisionRecall macro_pr_at_k(const RankedPrediction& rp, int k);
double ndcg_at_k(const RankedPrediction& rp, int k);

// Orders each row of `scores` by descending score (ties broken by lower id).
std::vector<std::vector<int>> rank_rows(const nn::Matrix& scores);

}  // namespace thlm
