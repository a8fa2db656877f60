#pragma once

// Dense numerical core: affine and Tanh layers with exact gradients, a
// two-layer Tanh network, an adaptive-moment optimizer and a central
// finite-difference gradient checker. Samples are stored one per row.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "tsuae/errors.hpp"

namespace tsuae::numcore {

template<typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template<typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Matrix = Mat<double>;
using Vector = Vec<double>;
using Index = Eigen::Index;
using Rng = std::mt19937_64;

template<typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m)
{
  return m.allFinite();
}

//! y = W x + b applied to every row of the input.
template<typename Scalar>
struct AffineLayer
{
  Mat<Scalar> weight; //!< out_dim x in_dim
  Vec<Scalar> bias;   //!< out_dim

  AffineLayer() = default;
  AffineLayer(Index in_dim, Index out_dim)
    : weight(Mat<Scalar>::Zero(out_dim, in_dim))
    , bias(Vec<Scalar>::Zero(out_dim))
  {}
  AffineLayer(Mat<Scalar> w, Vec<Scalar> b)
    : weight(std::move(w))
    , bias(std::move(b))
  {
    if (bias.size() != weight.rows())
      throw ShapeError("AffineLayer: bias of size " +
                       std::to_string(bias.size()) + " for weight " +
                       shape_str(weight.rows(), weight.cols()));
  }

  Index in_dim() const { return weight.cols(); }
  Index out_dim() const { return weight.rows(); }
  Index parameter_count() const { return weight.size() + bias.size(); }

  //! Uniform in +-sqrt(6 / (fan_in + fan_out)), zero bias.
  static AffineLayer glorot(Index in_dim, Index out_dim, Rng& rng)
  {
    AffineLayer layer(in_dim, out_dim);
    const Scalar limit = std::sqrt(Scalar(6) / Scalar(in_dim + out_dim));
    std::uniform_real_distribution<Scalar> dist(-limit, limit);
    // fill in a fixed (row-major) order so initialization does not depend
    // on Eigen's storage order
    for (Index r = 0; r < out_dim; ++r)
      for (Index c = 0; c < in_dim; ++c)
        layer.weight(r, c) = dist(rng);
    return layer;
  }

  bool operator==(const AffineLayer& o) const
  {
    return weight.rows() == o.weight.rows() &&
           weight.cols() == o.weight.cols() && weight == o.weight &&
           bias == o.bias;
  }

  std::vector<std::span<Scalar>> parameters()
  {
    return { { weight.data(), static_cast<std::size_t>(weight.size()) },
             { bias.data(), static_cast<std::size_t>(bias.size()) } };
  }
};

template<typename Scalar>
struct AffineGrad
{
  Mat<Scalar> weight;
  Vec<Scalar> bias;

  std::vector<std::span<const Scalar>> spans() const
  {
    return { { weight.data(), static_cast<std::size_t>(weight.size()) },
             { bias.data(), static_cast<std::size_t>(bias.size()) } };
  }
};

template<typename Scalar>
struct AffineBackward
{
  AffineGrad<Scalar> params;
  Mat<Scalar> input_grad;
};

template<typename Scalar, typename Derived>
Mat<Scalar> affine_forward(const AffineLayer<Scalar>& layer,
                           const Eigen::MatrixBase<Derived>& input)
{
  if (input.cols() != layer.in_dim())
    throw ShapeError("affine_forward: input " +
                     shape_str(input.rows(), input.cols()) +
                     " does not fit layer " +
                     shape_str(layer.out_dim(), layer.in_dim()));
  Mat<Scalar> out = input * layer.weight.transpose();
  out.rowwise() += layer.bias.transpose();
  return out;
}

template<typename Derived>
Mat<typename Derived::Scalar> tanh_forward(const Eigen::MatrixBase<Derived>& input)
{
  return input.array().tanh().matrix();
}

//! Gradients of an affine layer given the forward input and dLoss/dOutput.
template<typename Scalar, typename D1, typename D2>
AffineBackward<Scalar> affine_backward(const AffineLayer<Scalar>& layer,
                                       const Eigen::MatrixBase<D1>& input,
                                       const Eigen::MatrixBase<D2>& output_grad)
{
  if (input.cols() != layer.in_dim() || output_grad.cols() != layer.out_dim() ||
      input.rows() != output_grad.rows())
    throw ContractError("affine_backward: cached input " +
                        shape_str(input.rows(), input.cols()) +
                        " and output gradient " +
                        shape_str(output_grad.rows(), output_grad.cols()) +
                        " do not match layer " +
                        shape_str(layer.out_dim(), layer.in_dim()));
  AffineBackward<Scalar> out;
  out.params.weight = output_grad.transpose() * input;
  out.params.bias = output_grad.colwise().sum().transpose();
  out.input_grad = output_grad * layer.weight;
  return out;
}

//! dLoss/dInput of tanh given its forward *output*.
template<typename D1, typename D2>
Mat<typename D1::Scalar> tanh_backward(const Eigen::MatrixBase<D1>& tanh_output,
                                       const Eigen::MatrixBase<D2>& output_grad)
{
  require_same_shape(tanh_output, output_grad, "tanh_backward");
  return (output_grad.array() * (1 - tanh_output.array().square())).matrix();
}

//! Activations recorded by TanhMlp::forward, consumed by backward.
template<typename Scalar>
struct MlpTape
{
  Mat<Scalar> input;
  Mat<Scalar> hidden; //!< tanh output
  Mat<Scalar> output;
  std::uint64_t generation = 0;
};

template<typename Scalar>
struct MlpGrad
{
  AffineGrad<Scalar> hidden;
  AffineGrad<Scalar> output;
  Mat<Scalar> input_grad;

  std::vector<std::span<const Scalar>> spans() const
  {
    auto s = hidden.spans();
    auto o = output.spans();
    s.insert(s.end(), o.begin(), o.end());
    return s;
  }
};

//! affine -> tanh -> affine.
//!
//! Every mutable access to the parameters bumps a generation counter; a tape
//! recorded under an older generation is rejected by backward().
template<typename Scalar>
class TanhMlp
{
public:
  TanhMlp() = default;
  TanhMlp(AffineLayer<Scalar> hidden, AffineLayer<Scalar> output)
    : hidden_(std::move(hidden))
    , output_(std::move(output))
  {
    if (output_.in_dim() != hidden_.out_dim())
      throw ShapeError("TanhMlp: hidden layer produces " +
                       std::to_string(hidden_.out_dim()) +
                       " units, output layer expects " +
                       std::to_string(output_.in_dim()));
  }

  static TanhMlp glorot(Index in_dim, Index hidden_dim, Index out_dim, Rng& rng)
  {
    auto h = AffineLayer<Scalar>::glorot(in_dim, hidden_dim, rng);
    auto o = AffineLayer<Scalar>::glorot(hidden_dim, out_dim, rng);
    return TanhMlp(std::move(h), std::move(o));
  }

  Index in_dim() const { return hidden_.in_dim(); }
  Index hidden_dim() const { return hidden_.out_dim(); }
  Index out_dim() const { return output_.out_dim(); }

  const AffineLayer<Scalar>& hidden() const { return hidden_; }
  const AffineLayer<Scalar>& output() const { return output_; }
  AffineLayer<Scalar>& hidden_mut()
  {
    ++generation_;
    return hidden_;
  }
  AffineLayer<Scalar>& output_mut()
  {
    ++generation_;
    return output_;
  }
  std::uint64_t generation() const { return generation_; }

  template<typename Derived>
  Mat<Scalar> predict(const Eigen::MatrixBase<Derived>& input) const
  {
    return affine_forward(output_, tanh_forward(affine_forward(hidden_, input)));
  }

  template<typename Derived>
  MlpTape<Scalar> forward(const Eigen::MatrixBase<Derived>& input) const
  {
    MlpTape<Scalar> tape;
    tape.input = input;
    tape.hidden = tanh_forward(affine_forward(hidden_, tape.input));
    tape.output = affine_forward(output_, tape.hidden);
    tape.generation = generation_;
    return tape;
  }

  template<typename Derived>
  MlpGrad<Scalar> backward(const MlpTape<Scalar>& tape,
                           const Eigen::MatrixBase<Derived>& output_grad) const
  {
    if (tape.generation != generation_)
      throw ContractError("TanhMlp::backward: tape recorded at generation " +
                          std::to_string(tape.generation) +
                          ", parameters are at generation " +
                          std::to_string(generation_));
    if (tape.hidden.cols() != hidden_dim() || tape.input.cols() != in_dim())
      throw ContractError("TanhMlp::backward: tape does not belong to this network");
    require_same_shape(tape.output, output_grad, "TanhMlp::backward");
    MlpGrad<Scalar> g;
    auto out = affine_backward(output_, tape.hidden, output_grad);
    g.output = std::move(out.params);
    Mat<Scalar> pre_grad = tanh_backward(tape.hidden, out.input_grad);
    auto hid = affine_backward(hidden_, tape.input, pre_grad);
    g.hidden = std::move(hid.params);
    g.input_grad = std::move(hid.input_grad);
    return g;
  }

  std::vector<std::span<Scalar>> parameters()
  {
    ++generation_;
    auto s = hidden_.parameters();
    auto o = output_.parameters();
    s.insert(s.end(), o.begin(), o.end());
    return s;
  }

  bool operator==(const TanhMlp& o) const
  {
    return hidden_ == o.hidden_ && output_ == o.output_;
  }

private:
  AffineLayer<Scalar> hidden_;
  AffineLayer<Scalar> output_;
  std::uint64_t generation_ = 0;
};

//! Adaptive-moment (Adam) optimizer state for a fixed list of parameter
//! blocks. The update of each scalar depends only on that scalar's gradient
//! history.
template<typename Scalar>
class Adam
{
public:
  struct Options
  {
    Scalar learning_rate = Scalar(1e-3);
    Scalar beta1 = Scalar(0.9);
    Scalar beta2 = Scalar(0.999);
    Scalar epsilon = Scalar(1e-8);
  };

  Adam() = default;
  explicit Adam(Options options)
    : options_(options)
  {}

  const Options& options() const { return options_; }
  std::uint64_t steps() const { return steps_; }
  const std::vector<Vec<Scalar>>& first_moments() const { return m_; }
  const std::vector<Vec<Scalar>>& second_moments() const { return v_; }

  void step(std::span<const std::span<Scalar>> params,
            std::span<const std::span<const Scalar>> grads)
  {
    if (params.size() != grads.size())
      throw ShapeError("Adam::step: " + std::to_string(params.size()) +
                       " parameter blocks but " + std::to_string(grads.size()) +
                       " gradient blocks");
    if (m_.empty()) {
      for (const auto& p : params) {
        m_.push_back(Vec<Scalar>::Zero(static_cast<Index>(p.size())));
        v_.push_back(Vec<Scalar>::Zero(static_cast<Index>(p.size())));
      }
    }
    if (m_.size() != params.size())
      throw ShapeError("Adam::step: optimizer tracks " +
                       std::to_string(m_.size()) + " blocks, got " +
                       std::to_string(params.size()));
    for (std::size_t b = 0; b < params.size(); ++b) {
      if (params[b].size() != grads[b].size() ||
          static_cast<Index>(params[b].size()) != m_[b].size())
        throw ShapeError("Adam::step: block " + std::to_string(b) +
                         " has parameter size " +
                         std::to_string(params[b].size()) + ", gradient size " +
                         std::to_string(grads[b].size()) + ", state size " +
                         std::to_string(m_[b].size()));
    }

    ++steps_;
    const auto t = static_cast<Scalar>(steps_);
    const Scalar c1 = 1 - std::pow(options_.beta1, t);
    const Scalar c2 = 1 - std::pow(options_.beta2, t);
    for (std::size_t b = 0; b < params.size(); ++b) {
      Eigen::Map<Vec<Scalar>> p(params[b].data(), static_cast<Index>(params[b].size()));
      Eigen::Map<const Vec<Scalar>> g(grads[b].data(), static_cast<Index>(grads[b].size()));
      m_[b] = options_.beta1 * m_[b] + (1 - options_.beta1) * g;
      v_[b] = options_.beta2 * v_[b] + (1 - options_.beta2) * g.cwiseProduct(g);
      p.array() -= options_.learning_rate * (m_[b].array() / c1) /
                   ((v_[b].array() / c2).sqrt() + options_.epsilon);
    }
  }

  void step(const std::vector<std::span<Scalar>>& params,
            const std::vector<std::span<const Scalar>>& grads)
  {
    step(std::span<const std::span<Scalar>>(params),
         std::span<const std::span<const Scalar>>(grads));
  }

private:
  Options options_;
  std::uint64_t steps_ = 0;
  std::vector<Vec<Scalar>> m_;
  std::vector<Vec<Scalar>> v_;
};

//! Loss with optional analytic gradient: when `grad` is non-null it must be
//! filled with dLoss/dTheta.
using Objective = std::function<double(const Vector& theta, Vector* grad)>;

struct GradCheckReport
{
  double max_relative_error = 0;
  Index worst_index = -1;
  double tolerance = 0;
  bool passed() const { return max_relative_error <= tolerance; }
};

//! Compares the analytic gradient of `loss` at `theta` with central finite
//! differences. Relative error per coordinate is
//! |a - n| / max(|a|, |n|, floor).
GradCheckReport grad_check(const Objective& loss,
                           const Vector& theta,
                           double step = 1e-5,
                           double tolerance = 1e-5,
                           double floor = 1e-3);

//! Flattens parameter blocks into one vector (block order preserved).
Vector flatten(std::span<const std::span<const double>> blocks);
//! Inverse of flatten().
void unflatten(const Vector& theta, std::span<const std::span<double>> blocks);

} // namespace tsuae::numcore
