#pragma once

// Comparison methods (PCA, PLS, ridge regression, SAE, TSSAE), the
// negative-feedback REB variant, and the common detector interface every
// method (TSUAE included) is scored through.

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "tsuae/data.hpp"
#include "tsuae/monitor.hpp"
#include "tsuae/tsuae.hpp"

namespace tsuae::baselines {

using numcore::Index;
using numcore::Matrix;
using numcore::Vector;

// ---------------------------------------------------------------------------
// PCA

struct PcaModel
{
  Vector mean;
  Matrix loadings;    //!< d x r, orthonormal columns, descending variance
  Vector eigenvalues; //!< all d covariance eigenvalues, descending
  Index retained = 0;
};

//! Keeps the smallest number of components whose cumulative variance share
//! reaches `variance_fraction`.
PcaModel fit_pca(const Matrix& x, double variance_fraction);
PcaModel fit_pca_components(const Matrix& x, Index components);
Matrix reconstruct(const PcaModel& model, const Matrix& x);
//! Squared reconstruction residual per sample.
monitor::StatisticSeries score_pca(const PcaModel& model, const Matrix& x);

// ---------------------------------------------------------------------------
// PLS (NIPALS)

struct PlsModel
{
  Vector x_mean;
  Vector x_scale;
  Vector y_mean;
  Vector y_scale;
  Matrix weights;   //!< W, d x a
  Matrix x_loadings;//!< P, d x a
  Matrix y_loadings;//!< Q, q x a
  Matrix coefficients; //!< in scaled units, d x q
  Index components = 0;
};

PlsModel fit_pls(const Matrix& x,
                 const Matrix& y,
                 Index components,
                 const std::vector<std::string>& x_names = {});
Matrix predict_pls(const PlsModel& model, const Matrix& x);

// ---------------------------------------------------------------------------
// ridge regression

struct RidgeModel
{
  Matrix coefficients; //!< d x q
  Vector intercept;    //!< q
  double lambda = 0;
  bool centered = true;
};

//! Solves (Xc'Xc + lambda I) B = Xc'Yc. With centered = false the raw X and
//! Y are used and the intercept is zero.
RidgeModel fit_rr(const Matrix& x, const Matrix& y, double lambda, bool centered = true);
Matrix predict_rr(const RidgeModel& model, const Matrix& x);

// ---------------------------------------------------------------------------
// cross-validated hyperparameters

//! Contiguous k-fold split; fold f is rows [f*n/k, (f+1)*n/k).
Index select_pls_components(const Matrix& x, const Matrix& y, Index max_components, Index folds);
double select_ridge_lambda(const Matrix& x, const Matrix& y,
                           const std::vector<double>& grid, Index folds);
//! 1e-4, 1e-3, ..., 1e2
std::vector<double> default_ridge_grid();

// ---------------------------------------------------------------------------
// stacked autoencoder on process variables

struct SaeModel
{
  Affine encoder;  //!< m -> v
  Decoder decoder; //!< v -> n_h -> m
  ModelConfig config;

  bool operator==(const SaeModel& o) const
  {
    return encoder == o.encoder && decoder == o.decoder;
  }
};

struct SaeFit
{
  SaeModel model;
  std::vector<double> losses;
};

//! Uses config.process_dim, feature_dim, hidden_dim, iterations,
//! teacher_learning_rate, batch_size, seed and the stop rule.
SaeFit fit_sae(const Matrix& x, const ModelConfig& config);
Matrix reconstruct(const SaeModel& model, const Matrix& x);

// ---------------------------------------------------------------------------
// teacher-student stacked autoencoder and negative feedback

//! (1 - k) z_t + k z_s.
Matrix reb_negative_feedback(const Matrix& z_t, const Matrix& z_s, double k);

struct TssaeFit
{
  TsuaeModel model;
  TrainingHistory teacher_phase;
  TrainingHistory student_phase;
};

//! Phase 1 trains teacher and decoder on [x, y] with
//! z = reb_negative_feedback(z_t, z_s, k) (z = z_t for k = 0; for k > 0 the
//! student is trained concurrently). Phase 2 freezes the teacher and trains
//! the student to mimic its features. Each phase runs up to
//! config.iterations iterations.
TssaeFit fit_tssae(const Matrix& x_t, const ModelConfig& config, double k = 0.0);

// ---------------------------------------------------------------------------
// common detector interface

struct Prediction
{
  std::optional<Matrix> process; //!< x_hat
  std::optional<Matrix> quality; //!< y_hat
};

//! Flat, ordered parameter dump of a fitted method, used for persistence.
struct Archive
{
  std::string method;
  std::vector<std::pair<std::string, double>> scalars;
  std::vector<std::pair<std::string, Matrix>> matrices;

  double scalar(const std::string& name) const;
  const Matrix& matrix(const std::string& name) const;
};

class Detector
{
public:
  virtual ~Detector() = default;
  virtual std::string id() const = 0;
  virtual bool monitors(monitor::Subspace s) const = 0;
  //! `x` holds standardized process variables.
  virtual Prediction predict(const Matrix& x) const = 0;
  virtual Archive archive() const = 0;
};

std::unique_ptr<Detector> make_pca_detector(PcaModel model);
std::unique_ptr<Detector> make_pls_detector(PlsModel model);
std::unique_ptr<Detector> make_rr_detector(RidgeModel model);
std::unique_ptr<Detector> make_sae_detector(SaeModel model);
std::unique_ptr<Detector> make_ts_detector(std::string id, TsuaeModel model);

//! Rebuilds a detector from its archive.
std::unique_ptr<Detector> restore_detector(const Archive& archive);

// ---------------------------------------------------------------------------
// registry

struct MethodSettings
{
  ModelConfig model;
  double pca_variance = 0.98;
  Index pls_max_components = 10;
  Index cv_folds = 5;
  std::vector<double> ridge_grid = default_ridge_grid();
};

//! "pca", "pls", "rr", "sae", "tssae", "tsuae"
std::vector<std::string> known_methods();
//! True for the above and for "tssae-nf:<k>".
bool is_known_method(const std::string& id);
//! Parses k from "tssae-nf:<k>"; nullopt for other ids.
std::optional<double> feedback_rate(const std::string& id);
std::string feedback_id(double k);

//! Fits method `id` on standardized training data.
std::unique_ptr<Detector> fit_method(const std::string& id,
                                     const data::DataMatrix& train,
                                     const MethodSettings& settings);

// ---------------------------------------------------------------------------
// scoring

struct MonitoredSeries
{
  std::optional<monitor::StatisticSeries> process;
  std::optional<monitor::StatisticSeries> quality;
};

//! Dx (and Dy when the data carries quality columns) for every row.
MonitoredSeries score(const Detector& detector, const data::DataMatrix& data);

//! KDE limits fitted on the training statistics of every monitored subspace.
monitor::ThresholdPair fit_thresholds(const Detector& detector,
                                      const data::DataMatrix& train,
                                      double confidence);

//! Reports per monitored subspace. Quality reports need quality labels in
//! `data`; when `require_quality` is set and they are missing,
//! UnavailableError is thrown.
std::vector<monitor::DetectionReport> detect(const Detector& detector,
                                             const data::DataMatrix& data,
                                             const monitor::ThresholdPair& thresholds,
                                             Index fault_start_index,
                                             const std::string& fault_id = "",
                                             bool require_quality = false);

// ---------------------------------------------------------------------------
// negative-feedback sweep

struct FaultSeries
{
  std::string id;
  data::DataMatrix data;
  Index start_index = 1;
};

struct SweepRow
{
  double k = 0;
  monitor::ThresholdPair thresholds;
  std::vector<monitor::DetectionReport> reports;
};

std::vector<SweepRow> sweep_negative_feedback(const data::DataMatrix& train,
                                              const std::vector<FaultSeries>& faults,
                                              const std::vector<double>& k_values,
                                              const MethodSettings& settings,
                                              double confidence = 0.99);

} // namespace tsuae::baselines
