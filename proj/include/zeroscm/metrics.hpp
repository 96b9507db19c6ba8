#pragma once

#include "zeroscm/tensor.hpp"

namespace zeroscm {

/// Per-sample root-mean-square error averaged over rows:
/// (1/n) * sum_i sqrt((1/d) * ||Y_i - Yhat_i||^2).
double rmse(const Tensor<double>& y, const Tensor<double>& yhat);

/// Biased squared-MMD estimator with an RBF kernel exp(-||x-y||^2 / (2 s^2)).
/// bandwidth <= 0 selects the median pairwise distance of A u B.
double mmd_rbf(const Tensor<double>& a, const Tensor<double>& b, double bandwidth = -1.0);

/// Median of all pairwise distances between distinct rows of A u B.
double median_pairwise_distance(const Tensor<double>& a, const Tensor<double>& b);

}  // namespace zeroscm
