#include "tsuae/monitor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace tsuae::monitor {

const char* to_string(Subspace s)
{
  return s == Subspace::process ? "process" : "quality";
}

const char* statistic_name(Subspace s)
{
  return s == Subspace::process ? "Dx" : "Dy";
}

StatisticSeries statistic_series(const Matrix& actual, const Matrix& predicted, Subspace subspace)
{
  require_same_shape(actual, predicted, "statistic_series");
  StatisticSeries s;
  s.subspace = subspace;
  s.values = (predicted - actual).rowwise().squaredNorm();
  return s;
}

// ---------------------------------------------------------------------------

GaussianKde::GaussianKde(const Vector& samples)
  : samples_(samples)
{
  const Index n = samples_.size();
  if (n < 2)
    throw DataError("GaussianKde: need at least 2 samples");
  if (!samples_.allFinite())
    throw DataError("GaussianKde: samples must be finite");
  const double mean = samples_.mean();
  const double var = (samples_.array() - mean).square().sum() / static_cast<double>(n - 1);
  const double sd = std::sqrt(var);
  min_ = samples_.minCoeff();
  max_ = samples_.maxCoeff();
  if (!(sd > 0) || min_ == max_)
    throw DataError("GaussianKde: all samples are identical");
  bandwidth_ = 1.06 * sd * std::pow(static_cast<double>(n), -0.2);
}

double GaussianKde::pdf(double x) const
{
  const double norm = 1.0 / (std::sqrt(2 * std::numbers::pi) * bandwidth_);
  const double inv_h = 1.0 / bandwidth_;
  double acc = 0;
  for (Index i = 0; i < samples_.size(); ++i) {
    const double u = (x - samples_[i]) * inv_h;
    acc += std::exp(-0.5 * u * u);
  }
  return norm * acc / static_cast<double>(samples_.size());
}

double GaussianKde::cdf(double x) const
{
  const double scale = 1.0 / (bandwidth_ * std::numbers::sqrt2);
  double acc = 0;
  for (Index i = 0; i < samples_.size(); ++i)
    acc += std::erfc(-(x - samples_[i]) * scale);
  return 0.5 * acc / static_cast<double>(samples_.size());
}

double GaussianKde::quantile(double level, Index grid_points) const
{
  if (!(level > 0 && level < 1))
    throw ContractError("GaussianKde::quantile: level must lie in (0, 1)");
  if (grid_points < 2)
    throw ContractError("GaussianKde::quantile: grid needs at least 2 points");

  double lo = min_ - 3 * bandwidth_;
  double hi = max_ + 3 * bandwidth_;
  // levels beyond the padded range: widen until the grid brackets the level
  for (int k = 0; k < 64 && cdf(hi) < level; ++k)
    hi += (hi - lo);
  for (int k = 0; k < 64 && cdf(lo) >= level; ++k)
    lo -= (hi - lo);

  const double step = (hi - lo) / static_cast<double>(grid_points - 1);
  auto grid = [&](Index k) { return lo + step * static_cast<double>(k); };

  // first grid index with cdf >= level
  Index left = 0;
  Index right = grid_points - 1;
  while (right - left > 1) {
    const Index mid = left + (right - left) / 2;
    if (cdf(grid(mid)) >= level)
      right = mid;
    else
      left = mid;
  }

  double a = grid(left);
  double b = grid(right);
  for (int k = 0; k < 200 && b - a > 1e-14 * std::max(1.0, std::abs(b)); ++k) {
    const double mid = 0.5 * (a + b);
    if (cdf(mid) >= level)
      b = mid;
    else
      a = mid;
  }
  return b;
}

double kde_threshold(const Vector& training_stats, double confidence)
{
  if (!(confidence > 0 && confidence < 1))
    throw ContractError("kde_threshold: confidence must lie in (0, 1)");
  if (training_stats.size() < 30)
    throw DataError("kde_threshold: need at least 30 samples, got " +
                    std::to_string(training_stats.size()));
  return GaussianKde(training_stats).quantile(confidence);
}

double kde_threshold(const StatisticSeries& training_stats, double confidence)
{
  return kde_threshold(training_stats.values, confidence);
}

// ---------------------------------------------------------------------------

DetectionReport evaluate(const StatisticSeries& series, double threshold, Index fault_start_index)
{
  const Index n = series.size();
  if (fault_start_index < 1 || fault_start_index > n + 1)
    throw ContractError("evaluate: fault start index " + std::to_string(fault_start_index) +
                        " outside [1, " + std::to_string(n + 1) + "]");
  DetectionReport r;
  r.subspace = series.subspace;
  r.normal_count = fault_start_index - 1;
  r.fault_count = n - r.normal_count;
  for (Index i = 0; i < n; ++i) {
    if (series.values[i] > threshold) {
      if (i < r.normal_count)
        ++r.false_alarms;
      else
        ++r.detections;
    }
  }
  r.far = r.normal_count > 0
            ? static_cast<double>(r.false_alarms) / static_cast<double>(r.normal_count)
            : 0.0;
  r.fdr = r.fault_count > 0
            ? static_cast<double>(r.detections) / static_cast<double>(r.fault_count)
            : 0.0;
  return r;
}

} // namespace tsuae::monitor
