#include "tsuae/baselines.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <numeric>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/LU>
#include <Eigen/QR>

namespace tsuae::baselines {

namespace {

Vector column_stddev(const Matrix& x, const Vector& mean)
{
  const double denom = static_cast<double>(x.rows() - 1);
  return ((x.rowwise() - mean.transpose()).array().square().colwise().sum() / denom)
    .sqrt()
    .transpose();
}

std::string column_label(const std::vector<std::string>& names, Index j, const char* prefix)
{
  if (static_cast<std::size_t>(j) < names.size())
    return names[static_cast<std::size_t>(j)];
  return std::string(prefix) + std::to_string(j + 1);
}

// Fixes the sign of each eigenvector so that its largest-magnitude entry is
// positive, making PCA loadings reproducible across eigen solvers.
void canonical_signs(Matrix& vectors)
{
  for (Index c = 0; c < vectors.cols(); ++c) {
    Index arg = 0;
    vectors.col(c).cwiseAbs().maxCoeff(&arg);
    if (vectors(arg, c) < 0)
      vectors.col(c) *= -1.0;
  }
}

} // namespace

// ---------------------------------------------------------------------------
// PCA

PcaModel fit_pca_components(const Matrix& x, Index components)
{
  if (x.rows() < 2)
    throw DataError("fit_pca: need at least 2 samples, got " + std::to_string(x.rows()));
  if (x.cols() < 1)
    throw DataError("fit_pca: no variables");
  if (components < 0 || components > x.cols())
    throw ContractError("fit_pca: component count " + std::to_string(components) +
                        " outside [0, " + std::to_string(x.cols()) + "]");
  PcaModel m;
  m.mean = x.colwise().mean().transpose();
  const Matrix centered = x.rowwise() - m.mean.transpose();
  const Matrix cov = centered.transpose() * centered / static_cast<double>(x.rows() - 1);

  Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
  if (eig.info() != Eigen::Success)
    throw DataError("fit_pca: eigendecomposition failed");
  // Eigen returns ascending order
  m.eigenvalues = eig.eigenvalues().reverse();
  Matrix vectors = eig.eigenvectors().rowwise().reverse();
  canonical_signs(vectors);
  m.retained = components;
  m.loadings = vectors.leftCols(components);
  return m;
}

PcaModel fit_pca(const Matrix& x, double variance_fraction)
{
  if (!(variance_fraction > 0 && variance_fraction <= 1))
    throw ContractError("fit_pca: variance fraction must lie in (0, 1]");
  PcaModel full = fit_pca_components(x, x.cols());
  const Vector ev = full.eigenvalues.cwiseMax(0.0);
  const double total = ev.sum();
  Index r = x.cols();
  if (total > 0) {
    double acc = 0;
    for (Index k = 0; k < ev.size(); ++k) {
      acc += ev[k];
      // tiny slack so that "all variance" is reachable despite rounding
      if (acc >= variance_fraction * total * (1 - 1e-12)) {
        r = k + 1;
        break;
      }
    }
  }
  full.retained = r;
  full.loadings = full.loadings.leftCols(r).eval();
  return full;
}

Matrix reconstruct(const PcaModel& model, const Matrix& x)
{
  if (x.cols() != model.mean.size())
    throw ShapeError("pca reconstruct: data has " + std::to_string(x.cols()) +
                     " columns, model expects " + std::to_string(model.mean.size()));
  const Matrix centered = x.rowwise() - model.mean.transpose();
  return (centered * model.loadings * model.loadings.transpose()).rowwise() +
         model.mean.transpose();
}

monitor::StatisticSeries score_pca(const PcaModel& model, const Matrix& x)
{
  return monitor::statistic_series(x, reconstruct(model, x), monitor::Subspace::process);
}

// ---------------------------------------------------------------------------
// PLS

PlsModel fit_pls(const Matrix& x,
                 const Matrix& y,
                 Index components,
                 const std::vector<std::string>& x_names)
{
  const Index n = x.rows();
  const Index d = x.cols();
  const Index q = y.cols();
  if (y.rows() != n)
    throw ShapeError("fit_pls: X has " + std::to_string(n) + " rows, Y has " +
                     std::to_string(y.rows()));
  if (n < 2 || d < 1 || q < 1)
    throw DataError("fit_pls: need at least 2 samples, 1 input and 1 output");
  if (components < 1 || components > std::min(n - 1, d))
    throw ContractError("fit_pls: component count " + std::to_string(components) +
                        " outside [1, " + std::to_string(std::min(n - 1, d)) + "]");

  PlsModel m;
  m.x_mean = x.colwise().mean().transpose();
  m.y_mean = y.colwise().mean().transpose();
  m.x_scale = column_stddev(x, m.x_mean);
  m.y_scale = column_stddev(y, m.y_mean);
  for (Index j = 0; j < d; ++j)
    if (!(m.x_scale[j] > 0))
      throw DataError("fit_pls: column '" + column_label(x_names, j, "x") +
                      "' has zero variance");
  for (Index j = 0; j < q; ++j)
    if (!(m.y_scale[j] > 0))
      throw DataError("fit_pls: output column " + std::to_string(j + 1) + " has zero variance");

  Matrix e = ((x.rowwise() - m.x_mean.transpose()).array().rowwise() /
              m.x_scale.transpose().array())
               .matrix();
  Matrix f = ((y.rowwise() - m.y_mean.transpose()).array().rowwise() /
              m.y_scale.transpose().array())
               .matrix();

  m.weights.resize(d, components);
  m.x_loadings.resize(d, components);
  m.y_loadings.resize(q, components);
  const double x_norm0 = std::max(e.norm(), 1e-300);

  Index a = 0;
  for (; a < components; ++a) {
    if (e.norm() <= 1e-12 * x_norm0)
      break; // X fully explained, further components are undefined
    Index start = 0;
    f.colwise().squaredNorm().maxCoeff(&start);
    Vector u = f.col(start);
    Vector w, t, qv;
    for (int it = 0; it < 500; ++it) {
      w = e.transpose() * u;
      const double wn = w.norm();
      if (!(wn > 0))
        break;
      w /= wn;
      Vector t_new = e * w;
      qv = f.transpose() * t_new / t_new.squaredNorm();
      const double qn2 = qv.squaredNorm();
      u = qn2 > 0 ? Vector(f * qv / qn2) : t_new;
      const bool done = t.size() == t_new.size() &&
                        (t_new - t).norm() <= 1e-14 * std::max(1.0, t_new.norm());
      t = std::move(t_new);
      if (done || q == 1)
        break;
    }
    if (w.size() == 0 || !(w.norm() > 0))
      break;
    const double tt = t.squaredNorm();
    const Vector p = e.transpose() * t / tt;
    qv = f.transpose() * t / tt;
    m.weights.col(a) = w;
    m.x_loadings.col(a) = p;
    m.y_loadings.col(a) = qv;
    e -= t * p.transpose();
    f -= t * qv.transpose();
  }
  if (a < 1)
    throw DataError("fit_pls: inputs carry no variance to model");
  m.components = a;
  m.weights.conservativeResize(Eigen::NoChange, a);
  m.x_loadings.conservativeResize(Eigen::NoChange, a);
  m.y_loadings.conservativeResize(Eigen::NoChange, a);

  const Matrix ptw = m.x_loadings.transpose() * m.weights;
  m.coefficients = m.weights * ptw.lu().solve(m.y_loadings.transpose());
  return m;
}

Matrix predict_pls(const PlsModel& model, const Matrix& x)
{
  if (x.cols() != model.x_mean.size())
    throw ShapeError("predict_pls: data has " + std::to_string(x.cols()) +
                     " columns, model expects " + std::to_string(model.x_mean.size()));
  const Matrix xs = ((x.rowwise() - model.x_mean.transpose()).array().rowwise() /
                     model.x_scale.transpose().array())
                      .matrix();
  const Matrix ys = xs * model.coefficients;
  return (ys.array().rowwise() * model.y_scale.transpose().array()).matrix().rowwise() +
         model.y_mean.transpose();
}

// ---------------------------------------------------------------------------
// ridge

RidgeModel fit_rr(const Matrix& x, const Matrix& y, double lambda, bool centered)
{
  if (!(lambda >= 0) || !std::isfinite(lambda))
    throw ContractError("fit_rr: lambda must be finite and >= 0");
  if (y.rows() != x.rows())
    throw ShapeError("fit_rr: X has " + std::to_string(x.rows()) + " rows, Y has " +
                     std::to_string(y.rows()));
  if (x.rows() < 1 || x.cols() < 1 || y.cols() < 1)
    throw DataError("fit_rr: empty inputs");

  RidgeModel m;
  m.lambda = lambda;
  m.centered = centered;
  Vector xm = Vector::Zero(x.cols());
  Vector ym = Vector::Zero(y.cols());
  if (centered) {
    xm = x.colwise().mean().transpose();
    ym = y.colwise().mean().transpose();
  }
  const Matrix xc = x.rowwise() - xm.transpose();
  const Matrix yc = y.rowwise() - ym.transpose();

  if (lambda == 0) {
    Eigen::ColPivHouseholderQR<Matrix> qr(xc);
    qr.setThreshold(1e-10);
    if (qr.rank() < x.cols())
      throw SingularError("fit_rr: lambda = 0 with rank-deficient inputs (rank " +
                          std::to_string(qr.rank()) + " < " + std::to_string(x.cols()) +
                          ")");
    m.coefficients = qr.solve(yc);
  } else {
    Matrix gram = xc.transpose() * xc;
    gram.diagonal().array() += lambda;
    Eigen::LLT<Matrix> llt(gram);
    if (llt.info() != Eigen::Success)
      throw SingularError("fit_rr: regularized normal equations are not positive definite");
    m.coefficients = llt.solve(xc.transpose() * yc);
  }
  m.intercept = ym - m.coefficients.transpose() * xm;
  return m;
}

Matrix predict_rr(const RidgeModel& model, const Matrix& x)
{
  if (x.cols() != model.coefficients.rows())
    throw ShapeError("predict_rr: data has " + std::to_string(x.cols()) +
                     " columns, model expects " + std::to_string(model.coefficients.rows()));
  return (x * model.coefficients).rowwise() + model.intercept.transpose();
}

// ---------------------------------------------------------------------------
// cross-validation

namespace {

template<typename Fit>
double cv_error(const Matrix& x, const Matrix& y, Index folds, Fit&& fit_predict)
{
  const Index n = x.rows();
  double sse = 0;
  for (Index f = 0; f < folds; ++f) {
    const Index lo = f * n / folds;
    const Index hi = (f + 1) * n / folds;
    const Index held = hi - lo;
    Matrix xtr(n - held, x.cols()), ytr(n - held, y.cols());
    xtr << x.topRows(lo), x.bottomRows(n - hi);
    ytr << y.topRows(lo), y.bottomRows(n - hi);
    const Matrix pred = fit_predict(xtr, ytr, x.middleRows(lo, held).eval());
    sse += (pred - y.middleRows(lo, held)).squaredNorm();
  }
  return sse;
}

void check_folds(Index n, Index folds)
{
  if (folds < 2 || folds > n)
    throw ContractError("cross-validation: fold count " + std::to_string(folds) +
                        " outside [2, " + std::to_string(n) + "]");
}

} // namespace

Index select_pls_components(const Matrix& x, const Matrix& y, Index max_components, Index folds)
{
  check_folds(x.rows(), folds);
  const Index smallest_train = x.rows() - (x.rows() + folds - 1) / folds;
  const Index cap = std::min({ max_components, x.cols(), smallest_train - 1 });
  if (cap < 1)
    throw DataError("select_pls_components: too few samples for cross-validation");
  Index best = 1;
  double best_err = std::numeric_limits<double>::infinity();
  for (Index a = 1; a <= cap; ++a) {
    const double err = cv_error(x, y, folds, [a](const Matrix& xt, const Matrix& yt, const Matrix& xv) {
      return predict_pls(fit_pls(xt, yt, a), xv);
    });
    if (err < best_err) {
      best_err = err;
      best = a;
    }
  }
  return best;
}

double select_ridge_lambda(const Matrix& x, const Matrix& y,
                           const std::vector<double>& grid, Index folds)
{
  check_folds(x.rows(), folds);
  if (grid.empty())
    throw ContractError("select_ridge_lambda: empty grid");
  double best = grid.front();
  double best_err = std::numeric_limits<double>::infinity();
  for (double lambda : grid) {
    double err;
    try {
      err = cv_error(x, y, folds, [lambda](const Matrix& xt, const Matrix& yt, const Matrix& xv) {
        return predict_rr(fit_rr(xt, yt, lambda), xv);
      });
    } catch (const SingularError&) {
      continue;
    }
    if (err < best_err) {
      best_err = err;
      best = lambda;
    }
  }
  if (!std::isfinite(best_err))
    throw SingularError("select_ridge_lambda: no grid value yields a solvable system");
  return best;
}

std::vector<double> default_ridge_grid()
{
  return { 1e-4, 1e-3, 1e-2, 1e-1, 1e0, 1e1, 1e2 };
}

// ---------------------------------------------------------------------------
// SAE

SaeFit fit_sae(const Matrix& x, const ModelConfig& config)
{
  config.validate();
  if (x.cols() != config.process_dim)
    throw ShapeError("fit_sae: data has " + std::to_string(x.cols()) +
                     " columns, config expects " + std::to_string(config.process_dim));
  if (x.rows() < 1)
    throw DataError("fit_sae: empty training set");

  numcore::Rng init(config.seed);
  SaeFit fit;
  fit.model.config = config;
  fit.model.encoder = Affine::glorot(config.process_dim, config.feature_dim, init);
  fit.model.decoder = Decoder::glorot(config.feature_dim, config.hidden_dim, config.process_dim, init);
  if (config.iterations == 0)
    return fit;

  auto& enc = fit.model.encoder;
  auto& dec = fit.model.decoder;
  numcore::Rng rng = training_rng(config.seed);
  numcore::Adam<double> opt({ .learning_rate = config.teacher_learning_rate });
  PlateauDetector plateau(config.stop_window, config.stop_tolerance, 1);
  const bool full_batch = config.batch_size <= 0 || config.batch_size >= x.rows();
  Matrix batch_storage;

  for (Index it = 0; it < config.iterations; ++it) {
    const Matrix* batch = &x;
    if (!full_batch) {
      batch_storage = x(draw_batch(x.rows(), config.batch_size, rng), Eigen::all);
      batch = &batch_storage;
    }
    const Matrix& xb = *batch;
    const Matrix z = numcore::affine_forward(enc, xb);
    const auto tape = dec.forward(z);
    const Matrix diff = tape.output - xb;
    const double loss = diff.rowwise().squaredNorm().mean();
    if (!std::isfinite(loss))
      throw TrainingError("SAE training diverged at iteration " + std::to_string(it) +
                          ": loss=" + std::to_string(loss));
    const Matrix out_grad = (2.0 / static_cast<double>(xb.rows())) * diff;
    auto dg = dec.backward(tape, out_grad);
    auto eg = numcore::affine_backward(enc, xb, dg.input_grad);

    auto params = enc.parameters();
    auto dparams = dec.parameters();
    params.insert(params.end(), dparams.begin(), dparams.end());
    auto grads = eg.params.spans();
    auto dgrads = dg.spans();
    grads.insert(grads.end(), dgrads.begin(), dgrads.end());
    opt.step(params, grads);

    fit.losses.push_back(loss);
    const double watch[] = { loss };
    if (plateau.push(watch))
      break;
  }
  return fit;
}

Matrix reconstruct(const SaeModel& model, const Matrix& x)
{
  return model.decoder.predict(numcore::affine_forward(model.encoder, x));
}

// ---------------------------------------------------------------------------
// TSSAE and negative feedback

Matrix reb_negative_feedback(const Matrix& z_t, const Matrix& z_s, double k)
{
  require_same_shape(z_t, z_s, "reb_negative_feedback");
  if (!(k >= 0))
    throw ContractError("reb_negative_feedback: k must be >= 0");
  if (k == 0)
    return z_t;
  if (k == 1)
    return z_s;
  return (1 - k) * z_t + k * z_s;
}

namespace {

IterationRecord iteration_record(Index it, double lt, double ls)
{
  IterationRecord r;
  r.iteration = it;
  r.teacher_loss = lt;
  r.student_loss = ls;
  r.sigma2 = 0;
  return r;
}

std::vector<std::span<double>> teacher_params(TsuaeModel& model)
{
  auto params = model.teacher.parameters();
  auto dparams = model.decoder.parameters();
  params.insert(params.end(), dparams.begin(), dparams.end());
  return params;
}

std::vector<std::span<const double>> teacher_grads(const TeacherGradients& g)
{
  auto grads = g.teacher.spans();
  auto dgrads = g.decoder.spans();
  grads.insert(grads.end(), dgrads.begin(), dgrads.end());
  return grads;
}

} // namespace

TssaeFit fit_tssae(const Matrix& x_t, const ModelConfig& config, double k)
{
  if (!(k >= 0) || !std::isfinite(k))
    throw ContractError("fit_tssae: feedback rate must be finite and >= 0");
  config.validate();
  if (x_t.cols() != config.teacher_input_dim())
    throw ShapeError("fit_tssae: data has " + std::to_string(x_t.cols()) +
                     " columns, model expects " + std::to_string(config.teacher_input_dim()));
  if (x_t.rows() < 1)
    throw DataError("fit_tssae: empty training set");

  TssaeFit fit;
  fit.model = TsuaeModel::initialize(config);
  if (config.iterations == 0)
    return fit;
  TsuaeModel& model = fit.model;
  model.sigma2 = 0; // features are never perturbed by noise

  const Index m = config.process_dim;
  const bool full_batch = config.batch_size <= 0 || config.batch_size >= x_t.rows();
  const bool feedback = k > 0;

  // phase 1: teacher autoencoder, with the student trained alongside when its
  // features are fed back
  {
    numcore::Rng rng = training_rng(config.seed);
    numcore::Adam<double> opt_s({ .learning_rate = config.student_learning_rate });
    numcore::Adam<double> opt_t({ .learning_rate = config.teacher_learning_rate });
    PlateauDetector plateau(config.stop_window, config.stop_tolerance, feedback ? 2 : 1);
    Matrix batch_storage;
    for (Index it = 0; it < config.iterations; ++it) {
      const Matrix* batch = &x_t;
      if (!full_batch) {
        batch_storage = x_t(draw_batch(x_t.rows(), config.batch_size, rng), Eigen::all);
        batch = &batch_storage;
      }
      const Matrix& xb = *batch;
      const Matrix x_s = xb.leftCols(m);
      const Matrix z_t = encode_teacher(model, xb);

      TeacherGradients tg;
      if (feedback) {
        const Matrix z_s = encode_student(model, x_s);
        tg = teacher_gradients(model, xb, (k * z_s).eval(), 1 - k);
      } else {
        tg = teacher_gradients(model, xb, Matrix::Zero(xb.rows(), config.feature_dim));
      }
      auto sg = student_gradients(model, x_s, z_t);
      if (!std::isfinite(tg.loss) || !std::isfinite(sg.loss))
        throw TrainingError("TSSAE teacher phase diverged at iteration " + std::to_string(it) +
                            ": L_t=" + std::to_string(tg.loss) +
                            ", L_s=" + std::to_string(sg.loss));
      if (feedback)
        opt_s.step(model.student.parameters(), sg.student.spans());
      opt_t.step(teacher_params(model), teacher_grads(tg));

      fit.teacher_phase.records.push_back(
        iteration_record(it + 1, tg.loss, sg.loss));
      std::vector<double> watch{ tg.loss };
      if (feedback)
        watch.push_back(sg.loss);
      if (plateau.push(watch)) {
        fit.teacher_phase.converged = true;
        break;
      }
    }
  }

  // phase 2: student mimics the frozen teacher
  {
    numcore::Rng rng = training_rng(config.seed);
    numcore::Adam<double> opt_s({ .learning_rate = config.student_learning_rate });
    PlateauDetector plateau(config.stop_window, config.stop_tolerance, 1);
    Matrix batch_storage;
    for (Index it = 0; it < config.iterations; ++it) {
      const Matrix* batch = &x_t;
      if (!full_batch) {
        batch_storage = x_t(draw_batch(x_t.rows(), config.batch_size, rng), Eigen::all);
        batch = &batch_storage;
      }
      const Matrix& xb = *batch;
      const Matrix z_t = encode_teacher(model, xb);
      auto sg = student_gradients(model, xb.leftCols(m), z_t);
      if (!std::isfinite(sg.loss))
        throw TrainingError("TSSAE student phase diverged at iteration " + std::to_string(it) +
                            ": L_s=" + std::to_string(sg.loss));
      opt_s.step(model.student.parameters(), sg.student.spans());
      fit.student_phase.records.push_back(
        iteration_record(it + 1, 0.0, sg.loss));
      const double watch[] = { sg.loss };
      if (plateau.push(watch)) {
        fit.student_phase.converged = true;
        break;
      }
    }
  }
  if (!model.teacher.weight.allFinite() || !model.student.weight.allFinite())
    throw TrainingError("TSSAE training produced non-finite parameters");
  return fit;
}

// ---------------------------------------------------------------------------
// archives

double Archive::scalar(const std::string& name) const
{
  for (const auto& [k, v] : scalars)
    if (k == name)
      return v;
  throw IoError("model archive for '" + method + "' lacks scalar '" + name + "'");
}

const Matrix& Archive::matrix(const std::string& name) const
{
  for (const auto& [k, v] : matrices)
    if (k == name)
      return v;
  throw IoError("model archive for '" + method + "' lacks matrix '" + name + "'");
}

namespace {

Matrix as_column(const Vector& v)
{
  return Matrix(v);
}

Vector as_vector(const Matrix& m)
{
  if (m.cols() != 1)
    throw IoError("model archive: expected a column vector, got " + shape_str(m.rows(), m.cols()));
  return m.col(0);
}

void put_affine(Archive& a, const std::string& name, const Affine& l)
{
  a.matrices.emplace_back(name + ".weight", l.weight);
  a.matrices.emplace_back(name + ".bias", as_column(l.bias));
}

Affine get_affine(const Archive& a, const std::string& name)
{
  return Affine(a.matrix(name + ".weight"), as_vector(a.matrix(name + ".bias")));
}

void put_decoder(Archive& a, const std::string& name, const Decoder& d)
{
  put_affine(a, name + ".hidden", d.hidden());
  put_affine(a, name + ".output", d.output());
}

Decoder get_decoder(const Archive& a, const std::string& name)
{
  return Decoder(get_affine(a, name + ".hidden"), get_affine(a, name + ".output"));
}

void put_config(Archive& a, const ModelConfig& c)
{
  auto d = [](auto v) { return static_cast<double>(v); };
  a.scalars.insert(a.scalars.end(),
                   { { "config.process_dim", d(c.process_dim) },
                     { "config.quality_dim", d(c.quality_dim) },
                     { "config.feature_dim", d(c.feature_dim) },
                     { "config.hidden_dim", d(c.hidden_dim) },
                     { "config.iterations", d(c.iterations) },
                     { "config.stop_tolerance", c.stop_tolerance },
                     { "config.stop_window", d(c.stop_window) },
                     { "config.seed", d(c.seed) },
                     { "config.initial_sigma2", c.initial_sigma2 },
                     { "config.sigma2_floor", c.sigma2_floor },
                     { "config.teacher_learning_rate", c.teacher_learning_rate },
                     { "config.student_learning_rate", c.student_learning_rate },
                     { "config.batch_size", d(c.batch_size) } });
}

ModelConfig get_config(const Archive& a)
{
  auto i = [&](const char* k) { return static_cast<Index>(a.scalar(k)); };
  ModelConfig c;
  c.process_dim = i("config.process_dim");
  c.quality_dim = i("config.quality_dim");
  c.feature_dim = i("config.feature_dim");
  c.hidden_dim = i("config.hidden_dim");
  c.iterations = i("config.iterations");
  c.stop_tolerance = a.scalar("config.stop_tolerance");
  c.stop_window = i("config.stop_window");
  c.seed = static_cast<std::uint64_t>(a.scalar("config.seed"));
  c.initial_sigma2 = a.scalar("config.initial_sigma2");
  c.sigma2_floor = a.scalar("config.sigma2_floor");
  c.teacher_learning_rate = a.scalar("config.teacher_learning_rate");
  c.student_learning_rate = a.scalar("config.student_learning_rate");
  c.batch_size = i("config.batch_size");
  return c;
}

// ---------------------------------------------------------------------------
// detectors

class PcaDetector final : public Detector
{
public:
  explicit PcaDetector(PcaModel m)
    : m_(std::move(m))
  {}
  std::string id() const override { return "pca"; }
  bool monitors(monitor::Subspace s) const override { return s == monitor::Subspace::process; }
  Prediction predict(const Matrix& x) const override { return { reconstruct(m_, x), std::nullopt }; }
  Archive archive() const override
  {
    Archive a{ id(), { { "retained", static_cast<double>(m_.retained) } }, {} };
    a.matrices.emplace_back("mean", as_column(m_.mean));
    a.matrices.emplace_back("loadings", m_.loadings);
    a.matrices.emplace_back("eigenvalues", as_column(m_.eigenvalues));
    return a;
  }

private:
  PcaModel m_;
};

class PlsDetector final : public Detector
{
public:
  explicit PlsDetector(PlsModel m)
    : m_(std::move(m))
  {}
  std::string id() const override { return "pls"; }
  bool monitors(monitor::Subspace s) const override { return s == monitor::Subspace::quality; }
  Prediction predict(const Matrix& x) const override { return { std::nullopt, predict_pls(m_, x) }; }
  Archive archive() const override
  {
    Archive a{ id(), { { "components", static_cast<double>(m_.components) } }, {} };
    a.matrices.emplace_back("x_mean", as_column(m_.x_mean));
    a.matrices.emplace_back("x_scale", as_column(m_.x_scale));
    a.matrices.emplace_back("y_mean", as_column(m_.y_mean));
    a.matrices.emplace_back("y_scale", as_column(m_.y_scale));
    a.matrices.emplace_back("weights", m_.weights);
    a.matrices.emplace_back("x_loadings", m_.x_loadings);
    a.matrices.emplace_back("y_loadings", m_.y_loadings);
    a.matrices.emplace_back("coefficients", m_.coefficients);
    return a;
  }

private:
  PlsModel m_;
};

class RidgeDetector final : public Detector
{
public:
  explicit RidgeDetector(RidgeModel m)
    : m_(std::move(m))
  {}
  std::string id() const override { return "rr"; }
  bool monitors(monitor::Subspace s) const override { return s == monitor::Subspace::quality; }
  Prediction predict(const Matrix& x) const override { return { std::nullopt, predict_rr(m_, x) }; }
  Archive archive() const override
  {
    Archive a{ id(),
               { { "lambda", m_.lambda }, { "centered", m_.centered ? 1.0 : 0.0 } },
               {} };
    a.matrices.emplace_back("coefficients", m_.coefficients);
    a.matrices.emplace_back("intercept", as_column(m_.intercept));
    return a;
  }

private:
  RidgeModel m_;
};

class SaeDetector final : public Detector
{
public:
  explicit SaeDetector(SaeModel m)
    : m_(std::move(m))
  {}
  std::string id() const override { return "sae"; }
  bool monitors(monitor::Subspace s) const override { return s == monitor::Subspace::process; }
  Prediction predict(const Matrix& x) const override { return { reconstruct(m_, x), std::nullopt }; }
  Archive archive() const override
  {
    Archive a{ id(), {}, {} };
    put_config(a, m_.config);
    put_affine(a, "encoder", m_.encoder);
    put_decoder(a, "decoder", m_.decoder);
    return a;
  }

private:
  SaeModel m_;
};

class TsDetector final : public Detector
{
public:
  TsDetector(std::string id, TsuaeModel m)
    : id_(std::move(id))
    , m_(std::move(m))
  {
    m_.check();
  }
  std::string id() const override { return id_; }
  bool monitors(monitor::Subspace) const override { return true; }
  Prediction predict(const Matrix& x) const override
  {
    auto out = infer(m_, x);
    return { std::move(out.process), std::move(out.quality) };
  }
  Archive archive() const override
  {
    Archive a{ id_, { { "sigma2", m_.sigma2 } }, {} };
    put_config(a, m_.config);
    put_affine(a, "teacher", m_.teacher);
    put_affine(a, "student", m_.student);
    put_decoder(a, "decoder", m_.decoder);
    return a;
  }

private:
  std::string id_;
  TsuaeModel m_;
};

} // namespace

std::unique_ptr<Detector> make_pca_detector(PcaModel model)
{
  return std::make_unique<PcaDetector>(std::move(model));
}

std::unique_ptr<Detector> make_pls_detector(PlsModel model)
{
  return std::make_unique<PlsDetector>(std::move(model));
}

std::unique_ptr<Detector> make_rr_detector(RidgeModel model)
{
  return std::make_unique<RidgeDetector>(std::move(model));
}

std::unique_ptr<Detector> make_sae_detector(SaeModel model)
{
  return std::make_unique<SaeDetector>(std::move(model));
}

std::unique_ptr<Detector> make_ts_detector(std::string id, TsuaeModel model)
{
  return std::make_unique<TsDetector>(std::move(id), std::move(model));
}

std::unique_ptr<Detector> restore_detector(const Archive& a)
{
  try {
    if (a.method == "pca") {
      PcaModel m;
      m.retained = static_cast<Index>(a.scalar("retained"));
      m.mean = as_vector(a.matrix("mean"));
      m.loadings = a.matrix("loadings");
      m.eigenvalues = as_vector(a.matrix("eigenvalues"));
      return make_pca_detector(std::move(m));
    }
    if (a.method == "pls") {
      PlsModel m;
      m.components = static_cast<Index>(a.scalar("components"));
      m.x_mean = as_vector(a.matrix("x_mean"));
      m.x_scale = as_vector(a.matrix("x_scale"));
      m.y_mean = as_vector(a.matrix("y_mean"));
      m.y_scale = as_vector(a.matrix("y_scale"));
      m.weights = a.matrix("weights");
      m.x_loadings = a.matrix("x_loadings");
      m.y_loadings = a.matrix("y_loadings");
      m.coefficients = a.matrix("coefficients");
      return make_pls_detector(std::move(m));
    }
    if (a.method == "rr") {
      RidgeModel m;
      m.lambda = a.scalar("lambda");
      m.centered = a.scalar("centered") != 0;
      m.coefficients = a.matrix("coefficients");
      m.intercept = as_vector(a.matrix("intercept"));
      return make_rr_detector(std::move(m));
    }
    if (a.method == "sae") {
      SaeModel m;
      m.config = get_config(a);
      m.encoder = get_affine(a, "encoder");
      m.decoder = get_decoder(a, "decoder");
      return make_sae_detector(std::move(m));
    }
    if (is_known_method(a.method)) {
      TsuaeModel m;
      m.config = get_config(a);
      m.sigma2 = a.scalar("sigma2");
      m.teacher = get_affine(a, "teacher");
      m.student = get_affine(a, "student");
      m.decoder = get_decoder(a, "decoder");
      return make_ts_detector(a.method, std::move(m));
    }
  } catch (const ShapeError& e) {
    throw IoError(std::string("model archive is inconsistent: ") + e.what());
  }
  throw IoError("model archive names unknown method '" + a.method + "'");
}

// ---------------------------------------------------------------------------
// registry

std::vector<std::string> known_methods()
{
  return { "pca", "pls", "rr", "sae", "tssae", "tsuae" };
}

std::optional<double> feedback_rate(const std::string& id)
{
  static const std::string prefix = "tssae-nf:";
  if (id.size() <= prefix.size() || id.compare(0, prefix.size(), prefix) != 0)
    return std::nullopt;
  const char* first = id.data() + prefix.size();
  const char* last = id.data() + id.size();
  double k = 0;
  auto [ptr, ec] = std::from_chars(first, last, k);
  if (ec != std::errc() || ptr != last || !(k >= 0) || !std::isfinite(k))
    return std::nullopt;
  return k;
}

bool is_known_method(const std::string& id)
{
  const auto all = known_methods();
  return std::find(all.begin(), all.end(), id) != all.end() || feedback_rate(id).has_value();
}

std::string feedback_id(double k)
{
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, k);
  return "tssae-nf:" + std::string(buf, ptr);
}

std::unique_ptr<Detector> fit_method(const std::string& id,
                                     const data::DataMatrix& train,
                                     const MethodSettings& settings)
{
  if (!is_known_method(id))
    throw ConfigError("unknown method '" + id + "'");
  const Matrix x = train.process();
  if (id == "pca")
    return make_pca_detector(fit_pca(x, settings.pca_variance));
  if (id == "sae") {
    ModelConfig cfg = settings.model;
    cfg.process_dim = x.cols();
    return make_sae_detector(fit_sae(x, cfg).model);
  }

  if (train.quality_count() < 1)
    throw DataError("method '" + id + "' needs at least one quality column in the training data");
  const Matrix y = train.quality();
  if (id == "pls") {
    const Index a = select_pls_components(x, y, settings.pls_max_components, settings.cv_folds);
    std::vector<std::string> names;
    for (Index j : train.columns_with(data::Role::process))
      names.push_back(train.names()[static_cast<std::size_t>(j)]);
    return make_pls_detector(fit_pls(x, y, a, names));
  }
  if (id == "rr") {
    const double lambda = select_ridge_lambda(x, y, settings.ridge_grid, settings.cv_folds);
    return make_rr_detector(fit_rr(x, y, lambda));
  }

  ModelConfig cfg = settings.model;
  cfg.process_dim = x.cols();
  cfg.quality_dim = y.cols();
  const Matrix xt = train.combined();
  if (id == "tsuae")
    return make_ts_detector(id, tsuae::train(TsuaeModel::initialize(cfg), xt).model);
  const double k = id == "tssae" ? 0.0 : *feedback_rate(id);
  return make_ts_detector(id, fit_tssae(xt, cfg, k).model);
}

// ---------------------------------------------------------------------------
// scoring

MonitoredSeries score(const Detector& detector, const data::DataMatrix& data)
{
  const Matrix x = data.process();
  const Prediction pred = detector.predict(x);
  MonitoredSeries out;
  if (detector.monitors(monitor::Subspace::process) && pred.process)
    out.process = monitor::statistic_series(x, *pred.process, monitor::Subspace::process);
  if (detector.monitors(monitor::Subspace::quality) && pred.quality && data.quality_count() > 0)
    out.quality = monitor::statistic_series(data.quality(), *pred.quality, monitor::Subspace::quality);
  return out;
}

monitor::ThresholdPair fit_thresholds(const Detector& detector,
                                      const data::DataMatrix& train,
                                      double confidence)
{
  const auto s = score(detector, train);
  monitor::ThresholdPair t;
  t.confidence = confidence;
  if (s.process)
    t.process = monitor::kde_threshold(*s.process, confidence);
  if (s.quality)
    t.quality = monitor::kde_threshold(*s.quality, confidence);
  return t;
}

std::vector<monitor::DetectionReport> detect(const Detector& detector,
                                             const data::DataMatrix& data,
                                             const monitor::ThresholdPair& thresholds,
                                             Index fault_start_index,
                                             const std::string& fault_id,
                                             bool require_quality)
{
  if (require_quality && detector.monitors(monitor::Subspace::quality) && data.quality_count() < 1)
    throw UnavailableError("method '" + detector.id() +
                           "' monitors quality, but the data has no quality columns");
  const auto s = score(detector, data);
  std::vector<monitor::DetectionReport> out;
  for (const auto* series : { &s.process, &s.quality }) {
    if (!*series)
      continue;
    const auto th = thresholds.get((*series)->subspace);
    if (!th)
      throw ContractError(std::string("detect: no threshold for the ") +
                          monitor::to_string((*series)->subspace) + " subspace");
    auto r = monitor::evaluate(**series, *th, fault_start_index);
    r.method = detector.id();
    r.fault = fault_id;
    out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// sweep

std::vector<SweepRow> sweep_negative_feedback(const data::DataMatrix& train,
                                              const std::vector<FaultSeries>& faults,
                                              const std::vector<double>& k_values,
                                              const MethodSettings& settings,
                                              double confidence)
{
  if (k_values.empty())
    throw ContractError("sweep_negative_feedback: no feedback rates given");
  for (double k : k_values)
    if (!(k >= 0) || !std::isfinite(k))
      throw ContractError("sweep_negative_feedback: feedback rates must be finite and >= 0");
  std::vector<SweepRow> rows;
  for (double k : k_values) {
    auto det = fit_method(feedback_id(k), train, settings);
    SweepRow row;
    row.k = k;
    row.thresholds = fit_thresholds(*det, train, confidence);
    for (const auto& f : faults) {
      auto reps = detect(*det, f.data, row.thresholds, f.start_index, f.id);
      row.reports.insert(row.reports.end(), reps.begin(), reps.end());
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

} // namespace tsuae::baselines
