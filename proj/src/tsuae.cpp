#include "tsuae/tsuae.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace tsuae {

void ModelConfig::validate() const
{
  if (process_dim < 1 || quality_dim < 1 || feature_dim < 1 || hidden_dim < 1)
    throw ConfigError("model config: m, p, v and n_h must all be >= 1");
  if (iterations < 0)
    throw ConfigError("model config: iteration budget must be >= 0");
  if (stop_window < 1)
    throw ConfigError("model config: stop window must be >= 1");
  if (!(initial_sigma2 >= 0) || !(sigma2_floor >= 0))
    throw ConfigError("model config: sigma2 settings must be >= 0");
  if (!(teacher_learning_rate > 0) || !(student_learning_rate > 0))
    throw ConfigError("model config: learning rates must be > 0");
  if (batch_size < 0)
    throw ConfigError("model config: batch size must be >= 0");
}

TsuaeModel TsuaeModel::initialize(const ModelConfig& config)
{
  config.validate();
  numcore::Rng rng(config.seed);
  TsuaeModel m;
  m.config = config;
  m.teacher = Affine::glorot(config.teacher_input_dim(), config.feature_dim, rng);
  m.student = Affine::glorot(config.process_dim, config.feature_dim, rng);
  m.decoder = Decoder::glorot(config.feature_dim, config.hidden_dim, config.output_dim(), rng);
  m.sigma2 = config.initial_sigma2;
  return m;
}

void TsuaeModel::check() const
{
  const auto& c = config;
  auto expect = [](const Affine& l, Index in, Index out, const char* what) {
    if (l.in_dim() != in || l.out_dim() != out || l.bias.size() != out)
      throw ShapeError(std::string(what) + " is " + shape_str(l.out_dim(), l.in_dim()) +
                       ", config expects " + shape_str(out, in));
  };
  expect(teacher, c.teacher_input_dim(), c.feature_dim, "teacher encoder");
  expect(student, c.process_dim, c.feature_dim, "student encoder");
  expect(decoder.hidden(), c.feature_dim, c.hidden_dim, "decoder hidden layer");
  expect(decoder.output(), c.hidden_dim, c.output_dim(), "decoder output layer");
  if (!(sigma2 >= 0))
    throw ContractError("sigma2 must be >= 0");
}

Matrix encode_teacher(const TsuaeModel& model, const Matrix& x_t)
{
  return numcore::affine_forward(model.teacher, x_t);
}

Matrix encode_student(const TsuaeModel& model, const Matrix& x_s)
{
  return numcore::affine_forward(model.student, x_s);
}

Matrix decode(const TsuaeModel& model, const Matrix& z)
{
  return model.decoder.predict(z);
}

Matrix sample_noise(double sigma2, Index rows, Index cols, numcore::Rng& rng)
{
  if (!(sigma2 >= 0))
    throw ContractError("sample_noise: variance must be >= 0, got " + std::to_string(sigma2));
  Matrix d(rows, cols);
  if (sigma2 == 0) {
    d.setZero();
    return d;
  }
  std::normal_distribution<double> normal(0.0, std::sqrt(sigma2));
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c)
      d(r, c) = normal(rng);
  return d;
}

Matrix reb(const Matrix& z_t, const Matrix& z_s, Phase phase, const Matrix& d_f)
{
  if (phase == Phase::testing)
    return z_s;
  require_same_shape(z_t, d_f, "reb");
  return z_t + d_f;
}

double update_sigma2(const Matrix& z_t, const Matrix& z_s)
{
  require_same_shape(z_t, z_s, "update_sigma2");
  if (z_t.rows() < 1)
    throw ContractError("update_sigma2: need at least one row");
  return (z_t - z_s).rowwise().squaredNorm().mean();
}

double student_loss(const Matrix& z_s, const Matrix& z_t)
{
  require_same_shape(z_s, z_t, "student_loss");
  if (z_s.rows() < 1)
    throw ContractError("student_loss: need at least one row");
  return (z_s - z_t).rowwise().squaredNorm().mean();
}

double teacher_loss(const Matrix& x_t, const TsuaeModel& model, const Matrix& d_f)
{
  const Matrix z_t = encode_teacher(model, x_t);
  const Matrix recon = decode(model, reb(z_t, Matrix(), Phase::training, d_f));
  require_same_shape(recon, x_t, "teacher_loss");
  return (x_t - recon).rowwise().squaredNorm().mean();
}

TeacherGradients teacher_gradients(const TsuaeModel& model,
                                   const Matrix& x_t,
                                   const Matrix& offset,
                                   double teacher_weight)
{
  const Matrix z_t = encode_teacher(model, x_t);
  require_same_shape(z_t, offset, "teacher_gradients");
  const Matrix z = teacher_weight * z_t + offset;
  const auto tape = model.decoder.forward(z);
  require_same_shape(tape.output, x_t, "teacher_gradients");

  const Matrix diff = tape.output - x_t;
  const double n = static_cast<double>(x_t.rows());
  TeacherGradients g;
  g.loss = diff.rowwise().squaredNorm().mean();
  const Matrix out_grad = (2.0 / n) * diff;
  g.decoder = model.decoder.backward(tape, out_grad);
  auto enc = numcore::affine_backward(model.teacher, x_t,
                                      (teacher_weight * g.decoder.input_grad).eval());
  g.teacher = std::move(enc.params);
  return g;
}

StudentGradients student_gradients(const TsuaeModel& model,
                                   const Matrix& x_s,
                                   const Matrix& z_t)
{
  const Matrix z_s = encode_student(model, x_s);
  require_same_shape(z_s, z_t, "student_gradients");
  const double n = static_cast<double>(x_s.rows());
  StudentGradients g;
  g.loss = (z_s - z_t).rowwise().squaredNorm().mean();
  const Matrix out_grad = (2.0 / n) * (z_s - z_t);
  g.student = numcore::affine_backward(model.student, x_s, out_grad).params;
  return g;
}

// ---------------------------------------------------------------------------

PlateauDetector::PlateauDetector(Index window, double tolerance, std::size_t losses)
  : window_(window)
  , tolerance_(tolerance)
  , history_(losses)
{}

bool PlateauDetector::push(std::span<const double> losses)
{
  if (losses.size() != history_.size())
    throw ShapeError("PlateauDetector: expected " + std::to_string(history_.size()) +
                     " losses, got " + std::to_string(losses.size()));
  bool all_flat = !history_.empty();
  for (std::size_t k = 0; k < losses.size(); ++k) {
    auto& h = history_[k];
    h.push_back(losses[k]);
    if (static_cast<Index>(h.size()) > window_ + 1)
      h.erase(h.begin());
    if (static_cast<Index>(h.size()) <= window_) {
      all_flat = false;
      continue;
    }
    const double ref = std::max(std::abs(h.front()), 1e-12);
    for (double v : h)
      if (std::abs(v - h.front()) / ref >= tolerance_)
        all_flat = false;
  }
  return all_flat;
}

numcore::Rng training_rng(std::uint64_t seed)
{
  return numcore::Rng(seed ^ 0x9E3779B97F4A7C15ULL);
}

std::vector<Index> draw_batch(Index n, Index batch_size, numcore::Rng& rng)
{
  std::vector<Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Index(0));
  if (batch_size <= 0 || batch_size >= n)
    return idx;
  // partial Fisher-Yates, sampling without replacement
  for (Index i = 0; i < batch_size; ++i) {
    std::uniform_int_distribution<Index> pick(i, n - 1);
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(pick(rng))]);
  }
  idx.resize(static_cast<std::size_t>(batch_size));
  return idx;
}

namespace {

std::string diagnostic(Index it, double lt, double ls, double s2)
{
  std::ostringstream os;
  os << "training diverged at iteration " << it << ": L_t=" << lt << ", L_s=" << ls
     << ", sigma2=" << s2;
  return os.str();
}

} // namespace

TrainResult train(TsuaeModel model,
                  const Matrix& x_t,
                  const TrainingControls& controls,
                  const std::optional<HeldOut>& heldout)
{
  const ModelConfig& cfg = model.config;
  cfg.validate();
  model.check();
  if (x_t.cols() != cfg.teacher_input_dim())
    throw ShapeError("train: data has " + std::to_string(x_t.cols()) +
                     " columns, model expects " + std::to_string(cfg.teacher_input_dim()));
  if (x_t.rows() < 1)
    throw DataError("train: empty training set");

  TrainResult result;
  if (cfg.iterations == 0) {
    result.model = std::move(model);
    return result;
  }

  numcore::Rng rng = training_rng(cfg.seed);
  numcore::Adam<double> opt_s({ .learning_rate = cfg.student_learning_rate });
  numcore::Adam<double> opt_t({ .learning_rate = cfg.teacher_learning_rate });

  std::size_t watched = (controls.update_teacher ? 1 : 0) + (controls.update_student ? 1 : 0);
  PlateauDetector plateau(cfg.stop_window, cfg.stop_tolerance, watched);

  if (controls.zero_noise)
    model.sigma2 = 0;

  const Index m = cfg.process_dim;
  const bool full_batch = cfg.batch_size <= 0 || cfg.batch_size >= x_t.rows();
  Matrix batch_storage;

  for (Index it = 0; it < cfg.iterations; ++it) {
    const Matrix* batch = &x_t;
    if (!full_batch) {
      batch_storage = x_t(draw_batch(x_t.rows(), cfg.batch_size, rng), Eigen::all);
      batch = &batch_storage;
    }
    const Matrix& xb = *batch;
    const Matrix x_s = xb.leftCols(m);

    // (1) features
    const Matrix z_t = encode_teacher(model, xb);
    // (2) noise; (3) z = reb(z_t, z_s, training) happens inside the teacher
    // gradient as z_t + d_f
    const Matrix d_f = controls.zero_noise
                         ? Matrix::Zero(xb.rows(), cfg.feature_dim).eval()
                         : sample_noise(model.sigma2, xb.rows(), cfg.feature_dim, rng);
    // (4)-(5) reconstruction, both losses and their gradients at the current
    // parameters
    auto tg = teacher_gradients(model, xb, d_f);
    auto sg = student_gradients(model, x_s, z_t);

    if (!std::isfinite(tg.loss) || !std::isfinite(sg.loss))
      throw TrainingError(diagnostic(it, tg.loss, sg.loss, model.sigma2));

    // (6) uncertainty update
    if (!controls.zero_noise)
      model.sigma2 = std::max(sg.loss, cfg.sigma2_floor);

    // (7) student step, (8) teacher + decoder step
    if (controls.update_student)
      opt_s.step(model.student.parameters(), sg.student.spans());
    if (controls.update_teacher) {
      auto params = model.teacher.parameters();
      auto dparams = model.decoder.parameters();
      params.insert(params.end(), dparams.begin(), dparams.end());
      auto grads = tg.teacher.spans();
      auto dgrads = tg.decoder.spans();
      grads.insert(grads.end(), dgrads.begin(), dgrads.end());
      opt_t.step(params, grads);
    }

    IterationRecord rec;
    rec.iteration = it + 1;
    rec.teacher_loss = tg.loss;
    rec.student_loss = sg.loss;
    rec.sigma2 = model.sigma2;
    if (heldout && heldout->every > 0 && (it + 1) % heldout->every == 0) {
      const auto pred = infer(model, heldout->x_t.leftCols(m));
      rec.heldout_process_error =
        (pred.process - heldout->x_t.leftCols(m)).rowwise().squaredNorm().mean();
      rec.heldout_quality_error =
        (pred.quality - heldout->x_t.rightCols(cfg.quality_dim)).rowwise().squaredNorm().mean();
    }
    result.history.records.push_back(rec);

    std::vector<double> watch;
    if (controls.update_teacher)
      watch.push_back(tg.loss);
    if (controls.update_student)
      watch.push_back(sg.loss);
    if (plateau.push(watch)) {
      result.history.converged = true;
      break;
    }
  }
  if (!model.teacher.weight.allFinite() || !model.student.weight.allFinite())
    throw TrainingError("training produced non-finite parameters");
  result.model = std::move(model);
  return result;
}

Inference infer(const TsuaeModel& model, const Matrix& x_s)
{
  const Matrix z_s = encode_student(model, x_s);
  Inference out;
  out.combined = decode(model, reb(Matrix(), z_s, Phase::testing, Matrix()));
  out.process = out.combined.leftCols(model.config.process_dim);
  out.quality = out.combined.rightCols(model.config.quality_dim);
  return out;
}

} // namespace tsuae
