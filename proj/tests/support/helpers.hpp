#pragma once

#include "tsuae/data.hpp"
#include "tsuae/tsuae.hpp"

namespace test_support {

using tsuae::numcore::Index;
using tsuae::numcore::Matrix;

inline Matrix random_matrix(Index rows, Index cols, tsuae::numcore::Rng& rng)
{
  std::normal_distribution<double> n;
  Matrix m(rows, cols);
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c)
      m(r, c) = n(rng);
  return m;
}

//! Standardized [x, y] rows of the numerical benchmark.
inline Matrix numerical_train(Index samples = 1000, std::uint64_t seed = 1)
{
  tsuae::data::GeneratorSpec spec;
  spec.samples = samples;
  spec.seed = seed;
  const auto raw = tsuae::data::generate_numerical(spec);
  return tsuae::data::apply_scaler(tsuae::data::fit_scaler(raw), raw).combined();
}

inline tsuae::ModelConfig small_config(Index m = 3, Index p = 1, Index v = 2, Index n_h = 4)
{
  tsuae::ModelConfig c;
  c.process_dim = m;
  c.quality_dim = p;
  c.feature_dim = v;
  c.hidden_dim = n_h;
  return c;
}

//! Finite-difference check of the teacher objective (teacher and decoder
//! parameters, fixed d_f) and the student objective (student parameters,
//! fixed z_t). Returns the worse of the two maximum relative errors.
inline double tsuae_gradient_error(tsuae::TsuaeModel model, const Matrix& x_t, const Matrix& d_f)
{
  using tsuae::numcore::Vector;
  auto teacher_params = [](tsuae::TsuaeModel& m) {
    auto p = m.teacher.parameters();
    auto d = m.decoder.parameters();
    p.insert(p.end(), d.begin(), d.end());
    return p;
  };
  auto as_const = [](const std::vector<std::span<double>>& v) {
    return std::vector<std::span<const double>>(v.begin(), v.end());
  };

  tsuae::numcore::Objective lt = [&](const Vector& theta, Vector* grad) {
    tsuae::numcore::unflatten(theta, teacher_params(model));
    auto g = tsuae::teacher_gradients(model, x_t, d_f);
    if (grad) {
      auto s = g.teacher.spans();
      auto d = g.decoder.spans();
      s.insert(s.end(), d.begin(), d.end());
      *grad = tsuae::numcore::flatten(s);
    }
    return g.loss;
  };
  const Vector theta_t = tsuae::numcore::flatten(as_const(teacher_params(model)));
  const double et = tsuae::numcore::grad_check(lt, theta_t).max_relative_error;

  const Matrix z_t = tsuae::encode_teacher(model, x_t);
  const Matrix x_s = x_t.leftCols(model.config.process_dim);
  tsuae::numcore::Objective ls = [&](const Vector& theta, Vector* grad) {
    tsuae::numcore::unflatten(theta, model.student.parameters());
    auto g = tsuae::student_gradients(model, x_s, z_t);
    if (grad)
      *grad = tsuae::numcore::flatten(g.student.spans());
    return g.loss;
  };
  const Vector theta_s = tsuae::numcore::flatten(as_const(model.student.parameters()));
  const double es = tsuae::numcore::grad_check(ls, theta_s).max_relative_error;
  return std::max(et, es);
}

} // namespace test_support
