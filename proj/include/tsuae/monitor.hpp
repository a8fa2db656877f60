#pragma once

// Error statistics, KDE control limits and FAR/FDR evaluation.

#include <optional>
#include <string>
#include <vector>

#include "tsuae/numcore.hpp"

namespace tsuae::monitor {

using numcore::Index;
using numcore::Matrix;
using numcore::Vector;

enum class Subspace
{
  process,
  quality
};

const char* to_string(Subspace s);
//! "Dx" / "Dy"
const char* statistic_name(Subspace s);

struct StatisticSeries
{
  Vector values;
  Subspace subspace = Subspace::process;

  Index size() const { return values.size(); }
};

//! Per-row squared Euclidean norm of (predicted - actual).
StatisticSeries statistic_series(const Matrix& actual,
                                 const Matrix& predicted,
                                 Subspace subspace = Subspace::process);

//! Gaussian KDE with Silverman bandwidth h = 1.06 * sd * n^(-1/5).
class GaussianKde
{
public:
  explicit GaussianKde(const Vector& samples);

  double bandwidth() const { return bandwidth_; }
  double min() const { return min_; }
  double max() const { return max_; }
  double pdf(double x) const;
  double cdf(double x) const;

  //! Smallest x with cdf(x) >= level: binary search over a uniform grid of
  //! `grid_points` on [min - 3h, max + 3h], then bisection inside the cell.
  double quantile(double level, Index grid_points = 4096) const;

private:
  Vector samples_;
  double bandwidth_ = 0;
  double min_ = 0;
  double max_ = 0;
};

//! Control limit at `confidence` from the KDE of normal-operation statistics.
//! Requires at least 30 samples that are not all identical.
double kde_threshold(const Vector& training_stats, double confidence = 0.99);
double kde_threshold(const StatisticSeries& training_stats, double confidence = 0.99);

struct ThresholdPair
{
  std::optional<double> process; //!< J_x,th
  std::optional<double> quality; //!< J_y,th
  double confidence = 0.99;

  std::optional<double> get(Subspace s) const
  {
    return s == Subspace::process ? process : quality;
  }
};

struct DetectionReport
{
  std::string method;
  std::string fault;
  Subspace subspace = Subspace::process;
  Index normal_count = 0;  //!< N_n
  Index fault_count = 0;   //!< N_f
  Index false_alarms = 0;  //!< N_fa
  Index detections = 0;    //!< N_fd
  double far = 0;
  double fdr = 0;
};

//! Samples with ordinal < fault_start_index (1-based) are normal, the rest
//! faulty; a sample alarms when its statistic exceeds `threshold`.
//! FAR (FDR) is 0 when there are no normal (faulty) samples.
DetectionReport evaluate(const StatisticSeries& series, double threshold, Index fault_start_index);

} // namespace tsuae::monitor
