#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "fedtput/error.hpp"

namespace fedtput {

/// Percentage coefficient of determination; negative values are kept.
inline double r2_score(std::span<const double> targets, std::span<const double> predictions) {
  if (targets.size() != predictions.size())
    throw Error(Errc::length_mismatch, std::to_string(targets.size()) + " vs " + std::to_string(predictions.size()));
  if (targets.size() < 2) throw Error(Errc::zero_variance, "need at least two targets");
  double mean = 0;
  for (double y : targets) mean += y;
  mean /= static_cast<double>(targets.size());
  double ss_res = 0, ss_tot = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    ss_res += (targets[i] - predictions[i]) * (targets[i] - predictions[i]);
    ss_tot += (targets[i] - mean) * (targets[i] - mean);
  }
  if (!(ss_tot > 0)) throw Error(Errc::zero_variance, "all targets equal");
  return 100.0 * (1.0 - ss_res / ss_tot);
}

inline double mean_absolute_error(std::span<const double> targets, std::span<const double> predictions) {
  if (targets.size() != predictions.size() || targets.empty())
    throw Error(Errc::length_mismatch, "MAE needs equal, non-empty inputs");
  double acc = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) acc += std::abs(targets[i] - predictions[i]);
  return acc / static_cast<double>(targets.size());
}

/// Predictions and targets in Mbps for one predictor on one dataset.
struct PredictionResult {
  std::vector<double> predictions;
  std::vector<double> targets;
  std::string predictor;
  std::string dataset;

  double r2() const { return r2_score(targets, predictions); }
  double mae() const { return mean_absolute_error(targets, predictions); }
};

// ---------------------------------------------------------------------------
// Baseline predictors over a throughput history (oldest first)

inline constexpr double kThroughputFloor = 0.001;  // Mbps

/// n / sum(1 / y_i) with each y_i floored at 0.001 Mbps.
inline double harmonic_mean_predict(std::span<const double> history) {
  if (history.empty()) throw Error(Errc::insufficient_history, "harmonic mean of empty history");
  double inv = 0;
  for (double y : history) inv += 1.0 / std::max(y, kThroughputFloor);
  return static_cast<double>(history.size()) / inv;
}

/// s_t = alpha * y_t + (1 - alpha) * s_{t-1}, seeded with the first value.
inline double ewma_predict(std::span<const double> history, double alpha) {
  if (history.empty()) throw Error(Errc::insufficient_history, "EWMA of empty history");
  if (!(alpha > 0 && alpha <= 1)) throw Error(Errc::invalid_argument, "alpha must lie in (0, 1]");
  double s = history.front();
  for (std::size_t i = 1; i < history.size(); ++i) s = alpha * history[i] + (1 - alpha) * s;
  return s;
}

/// AR(p) with intercept fitted by least squares over the lag matrix.
struct ArModel {
  double intercept = 0;
  std::vector<double> coefficients;  // coefficients[k] multiplies y_{t-1-k}

  double forecast(std::span<const double> history) const {
    const std::size_t p = coefficients.size();
    if (history.size() < p) throw Error(Errc::insufficient_history, "history shorter than AR order");
    double y = intercept;
    for (std::size_t k = 0; k < p; ++k) y += coefficients[k] * history[history.size() - 1 - k];
    return y;
  }
};

inline ArModel ar_fit(std::span<const double> history, std::size_t p) {
  if (p < 1) throw Error(Errc::invalid_argument, "AR order must be >= 1");
  if (history.size() < p + 1) throw Error(Errc::insufficient_history, "need at least p + 1 values");
  const auto rows = static_cast<Eigen::Index>(history.size() - p);
  Eigen::MatrixXd X(rows, static_cast<Eigen::Index>(p + 1));
  Eigen::VectorXd y(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const std::size_t t = p + static_cast<std::size_t>(r);
    X(r, 0) = 1.0;
    for (std::size_t k = 0; k < p; ++k) X(r, static_cast<Eigen::Index>(k + 1)) = history[t - 1 - k];
    y(r) = history[t];
  }
  // Minimum-norm solution covers rank-deficient windows (e.g. constant history).
  Eigen::VectorXd beta = X.completeOrthogonalDecomposition().solve(y);
  ArModel m;
  m.intercept = beta(0);
  for (std::size_t k = 0; k < p; ++k) m.coefficients.push_back(beta(static_cast<Eigen::Index>(k + 1)));
  return m;
}

/// One-step-ahead forecast of an AR(p) fitted on the history itself.
inline double ar_fit_predict(std::span<const double> history, std::size_t p) {
  return ar_fit(history, p).forecast(history);
}

}  // namespace fedtput
