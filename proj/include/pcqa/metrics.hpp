#pragma once

#include <vector>

namespace pcqa {

// Predicted scores paired with their subjective targets.
struct ScorePairs {
  std::vector<double> predictions;
  std::vector<double> targets;
};

// 1-based ranks; runs of equal values share the average of their positions.
std::vector<double> average_ranks(const std::vector<double>& values);

// Sample Pearson correlation. Throws std::domain_error when either sequence
// has zero variance (the coefficient is undefined), InputError on malformed
// pairs (length mismatch, fewer than two entries, non-finite values).
double plcc(const ScorePairs& pairs);

// Spearman rank correlation: Pearson over average ranks.
double srocc(const ScorePairs& pairs);

}  // namespace pcqa
