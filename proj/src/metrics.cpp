#include "pcqa/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>

#include "pcqa/errors.hpp"

namespace pcqa {

namespace {

void validate(const ScorePairs& pairs) {
  if (pairs.predictions.size() != pairs.targets.size())
    throw InputError("metrics: prediction/target length mismatch");
  if (pairs.predictions.size() < 2)
    throw InputError("metrics: need at least two score pairs");
  for (double v : pairs.predictions)
    if (!std::isfinite(v)) throw InputError("metrics: non-finite prediction");
  for (double v : pairs.targets)
    if (!std::isfinite(v)) throw InputError("metrics: non-finite target");
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / double(n);
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / double(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0)
    throw std::domain_error("correlation undefined: a sequence has zero variance");
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace

std::vector<double> average_ranks(const std::vector<double>& values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return values[a] != values[b] ? values[a] < values[b] : a < b;
  });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double shared = 0.5 * double(i + j) + 1.0;  // mean of positions i..j, 1-based
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = shared;
    i = j + 1;
  }
  return ranks;
}

double plcc(const ScorePairs& pairs) {
  validate(pairs);
  return pearson(pairs.predictions, pairs.targets);
}

double srocc(const ScorePairs& pairs) {
  validate(pairs);
  return pearson(average_ranks(pairs.predictions), average_ranks(pairs.targets));
}

}  // namespace pcqa
