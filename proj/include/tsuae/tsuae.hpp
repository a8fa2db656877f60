#pragma once

// Teacher-student uncertainty autoencoder.
//
//   z_t = teacher(x_t)            linear, (m+p) -> v
//   z_s = student(x)              linear,  m    -> v
//   z   = reb(z_t, z_s, phase)    z_s when testing, z_t + d_f when training
//   x_t_hat = decoder(z)          affine -> tanh -> affine, v -> n_h -> m+p
//
// During training d_f ~ N(0, sigma2 I), with sigma2 re-estimated every
// iteration as the mean squared distance between teacher and student
// features.

#include <cstdint>
#include <optional>
#include <vector>

#include "tsuae/numcore.hpp"

namespace tsuae {

using numcore::Index;
using numcore::Matrix;
using numcore::Vector;
using Affine = numcore::AffineLayer<double>;
using Decoder = numcore::TanhMlp<double>;

enum class Phase
{
  training,
  testing
};

struct ModelConfig
{
  Index process_dim = 20;   //!< m
  Index quality_dim = 1;    //!< p
  Index feature_dim = 6;    //!< v
  Index hidden_dim = 16;    //!< n_h
  Index iterations = 2000;
  double stop_tolerance = 1e-5;
  Index stop_window = 10;
  std::uint64_t seed = 1;
  double initial_sigma2 = 1.0;
  double sigma2_floor = 1e-8;
  double teacher_learning_rate = 1e-3;
  double student_learning_rate = 1e-3;
  Index batch_size = 0; //!< 0 = full batch

  Index teacher_input_dim() const { return process_dim + quality_dim; }
  Index output_dim() const { return process_dim + quality_dim; }
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

struct TsuaeModel
{
  Affine teacher;  //!< phi_t
  Affine student;  //!< phi_s
  Decoder decoder; //!< theta_d
  double sigma2 = 1.0;
  ModelConfig config;

  //! Glorot-initialized model seeded from config.seed.
  static TsuaeModel initialize(const ModelConfig& config);

  //! Throws ShapeError when layer dimensions disagree with config.
  void check() const;

  bool same_parameters(const TsuaeModel& o) const
  {
    return teacher == o.teacher && student == o.student && decoder == o.decoder &&
           sigma2 == o.sigma2;
  }
};

Matrix encode_teacher(const TsuaeModel& model, const Matrix& x_t);
Matrix encode_student(const TsuaeModel& model, const Matrix& x_s);
Matrix decode(const TsuaeModel& model, const Matrix& z);

//! n x v draws from N(0, sigma2) per component.
Matrix sample_noise(double sigma2, Index rows, Index cols, numcore::Rng& rng);

//! Representation evaluation block. Testing returns z_s; training returns
//! z_t + d_f. The branch not taken is never read.
Matrix reb(const Matrix& z_t, const Matrix& z_s, Phase phase, const Matrix& d_f);

//! Mean over rows of ||z_t - z_s||^2.
double update_sigma2(const Matrix& z_t, const Matrix& z_s);

//! Mean over rows of ||x_t - decoder(teacher(x_t) + d_f)||^2.
double teacher_loss(const Matrix& x_t, const TsuaeModel& model, const Matrix& d_f);
//! Mean over rows of ||z_s - z_t||^2.
double student_loss(const Matrix& z_s, const Matrix& z_t);

struct TeacherGradients
{
  double loss = 0;
  numcore::AffineGrad<double> teacher;
  numcore::MlpGrad<double> decoder;
};

//! Loss and gradient of the teacher objective with respect to phi_t and
//! theta_d for the decoder input z = teacher_weight * z_t + offset. With
//! teacher_weight = 1 and offset = d_f this is the uncertainty objective;
//! negative feedback uses teacher_weight = 1 - k and offset = k * z_s, the
//! offset always being a constant.
TeacherGradients teacher_gradients(const TsuaeModel& model,
                                   const Matrix& x_t,
                                   const Matrix& offset,
                                   double teacher_weight = 1.0);

struct StudentGradients
{
  double loss = 0;
  numcore::AffineGrad<double> student;
};

//! Loss and gradient of the student objective with respect to phi_s; z_t is
//! a constant target.
StudentGradients student_gradients(const TsuaeModel& model,
                                   const Matrix& x_s,
                                   const Matrix& z_t);

struct IterationRecord
{
  Index iteration = 0;
  double teacher_loss = 0;
  double student_loss = 0;
  double sigma2 = 0;
  std::optional<double> heldout_process_error;
  std::optional<double> heldout_quality_error;
};

struct TrainingHistory
{
  std::vector<IterationRecord> records;
  bool converged = false;
};

//! Knobs that turn the trainer into its special cases.
struct TrainingControls
{
  bool update_teacher = true;  //!< step phi_t and theta_d
  bool update_student = true;  //!< step phi_s
  bool zero_noise = false;     //!< force d_f = 0 and sigma2 = 0 throughout
};

//! Optional held-out set evaluated through the student path every
//! `every` iterations.
struct HeldOut
{
  Matrix x_t;
  Index every = 100;
};

struct TrainResult
{
  TsuaeModel model;
  TrainingHistory history;
};

//! Asynchronous-iteration training. `x_t` holds standardized [x, y] rows.
TrainResult train(TsuaeModel model,
                  const Matrix& x_t,
                  const TrainingControls& controls = {},
                  const std::optional<HeldOut>& heldout = std::nullopt);

struct Inference
{
  Matrix combined; //!< x_t_hat
  Matrix process;  //!< x_hat
  Matrix quality;  //!< y_hat
};

//! Student path only: decoder(reb(., student(x_s), testing)).
Inference infer(const TsuaeModel& model, const Matrix& x_s);

//! Stop rule shared by all iterative trainers: relative change of every
//! watched loss over the last `window` iterations is below `tolerance`.
class PlateauDetector
{
public:
  PlateauDetector(Index window, double tolerance, std::size_t losses);
  //! Returns true once all watched losses have plateaued.
  bool push(std::span<const double> losses);

private:
  Index window_;
  double tolerance_;
  std::vector<std::vector<double>> history_;
};

//! Noise/batch stream used by the iterative trainers, independent of the
//! initialization stream.
numcore::Rng training_rng(std::uint64_t seed);

//! Batch row indices for one iteration (all rows when batch_size is 0 or
//! not smaller than n).
std::vector<Index> draw_batch(Index n, Index batch_size, numcore::Rng& rng);

} // namespace tsuae
