#include "tsuae/numcore.hpp"

#include <algorithm>
#include <cmath>

namespace tsuae::numcore {

GradCheckReport grad_check(const Objective& loss,
                           const Vector& theta,
                           double step,
                           double tolerance,
                           double floor)
{
  if (!(step > 0))
    throw ContractError("grad_check: step must be positive");

  Vector analytic(theta.size());
  const double base = loss(theta, &analytic);
  if (!std::isfinite(base))
    throw TrainingError("grad_check: loss is not finite at the base point");
  if (analytic.size() != theta.size())
    throw ShapeError("grad_check: analytic gradient has " +
                     std::to_string(analytic.size()) + " entries for " +
                     std::to_string(theta.size()) + " parameters");

  GradCheckReport report;
  report.tolerance = tolerance;
  Vector probe = theta;
  for (Index i = 0; i < theta.size(); ++i) {
    probe[i] = theta[i] + step;
    const double up = loss(probe, nullptr);
    probe[i] = theta[i] - step;
    const double down = loss(probe, nullptr);
    probe[i] = theta[i];
    if (!std::isfinite(up) || !std::isfinite(down))
      throw TrainingError("grad_check: loss is not finite when perturbing "
                          "parameter " + std::to_string(i));
    const double numeric = (up - down) / (2 * step);
    const double a = analytic[i];
    const double denom = std::max({ std::abs(a), std::abs(numeric), floor });
    const double rel = std::abs(a - numeric) / denom;
    if (rel > report.max_relative_error || report.worst_index < 0) {
      report.max_relative_error = rel;
      report.worst_index = i;
    }
  }
  return report;
}

Vector flatten(std::span<const std::span<const double>> blocks)
{
  Index total = 0;
  for (const auto& b : blocks)
    total += static_cast<Index>(b.size());
  Vector out(total);
  Index k = 0;
  for (const auto& b : blocks)
    for (double v : b)
      out[k++] = v;
  return out;
}

void unflatten(const Vector& theta, std::span<const std::span<double>> blocks)
{
  Index total = 0;
  for (const auto& b : blocks)
    total += static_cast<Index>(b.size());
  if (total != theta.size())
    throw ShapeError("unflatten: " + std::to_string(theta.size()) +
                     " values for " + std::to_string(total) + " parameters");
  Index k = 0;
  for (const auto& b : blocks)
    for (double& v : b)
      v = theta[k++];
}

} // namespace tsuae::numcore
