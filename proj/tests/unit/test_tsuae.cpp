#include <doctest.h>

#include <chrono>

#include "helpers.hpp"
#include "tsuae/tsuae.hpp"

using namespace tsuae;
using test_support::random_matrix;
using test_support::small_config;

namespace {

Matrix row(std::initializer_list<double> v)
{
  Matrix m(1, static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v)
    m(0, i++) = x;
  return m;
}

} // namespace

TEST_CASE("encoders: zero weights, identity and affine oracle")
{
  auto cfg = small_config(3, 1, 4, 5);
  auto model = TsuaeModel::initialize(cfg);
  numcore::Rng rng(1);
  const Matrix xt = random_matrix(6, 4, rng);

  auto zero = model;
  zero.teacher = Affine(4, 4);
  zero.student = Affine(3, 4);
  CHECK(encode_teacher(zero, xt).isZero(0.0));
  CHECK(encode_student(zero, xt.leftCols(3)).isZero(0.0));

  auto ident = model;
  ident.teacher = Affine(Matrix::Identity(4, 4), Vector::Zero(4));
  CHECK(encode_teacher(ident, xt) == xt);
  Matrix sw = Matrix::Zero(4, 3);
  sw.topRows(3).setIdentity();
  ident.student = Affine(sw, Vector::Zero(4));
  CHECK(encode_student(ident, xt.leftCols(3)).leftCols(3) == xt.leftCols(3));

  CHECK(encode_teacher(model, xt) == numcore::affine_forward(model.teacher, xt));
  CHECK(encode_student(model, xt.leftCols(3)) ==
        numcore::affine_forward(model.student, xt.leftCols(3).eval()));
  CHECK_THROWS_AS(encode_teacher(model, xt.leftCols(3).eval()), ShapeError);
  CHECK_THROWS_AS(encode_student(model, xt), ShapeError);
}

TEST_CASE("sample_noise")
{
  numcore::Rng rng(7);
  CHECK(sample_noise(0.0, 3, 2, rng).isZero(0.0));
  const Matrix d = sample_noise(4.0, 10000, 1, rng);
  const double mean = d.mean();
  const double var = (d.array() - mean).square().sum() / (d.size() - 1);
  CHECK(std::abs(mean) <= 0.1);
  CHECK(std::abs(var - 4.0) <= 0.2);

  numcore::Rng a(3), b(3);
  CHECK(sample_noise(2.0, 5, 3, a) == sample_noise(2.0, 5, 3, b));
  CHECK_THROWS_AS(sample_noise(-1.0, 1, 1, rng), ContractError);
}

TEST_CASE("reb branches")
{
  CHECK(reb(row({ 1, 2 }), row({ 3, 4 }), Phase::testing, row({ 0, 0 })) == row({ 3, 4 }));
  CHECK(reb(row({ 1, 2 }), row({ 3, 4 }), Phase::training, row({ 0, 0 })) == row({ 1, 2 }));
  CHECK(reb(row({ 1, -1 }), row({ 3, 4 }), Phase::training, row({ 0.5, 0.5 })) ==
        row({ 1.5, -0.5 }));
  CHECK_THROWS_AS(reb(row({ 1, 2 }), row({ 3, 4 }), Phase::training, row({ 0 })), ShapeError);
}

TEST_CASE("reb testing branch ignores z_t and d_f; training branch ignores z_s")
{
  numcore::Rng rng(5);
  const Matrix z_s = random_matrix(8, 3, rng);
  const Matrix z_t = random_matrix(8, 3, rng);
  const Matrix d_f = random_matrix(8, 3, rng);
  const Matrix base = reb(z_t, z_s, Phase::testing, d_f);
  for (int i = 0; i < 5; ++i) {
    const Matrix pert = reb(random_matrix(8, 3, rng), z_s, Phase::testing, random_matrix(8, 3, rng));
    CHECK(pert == base);
    CHECK(reb(z_t, random_matrix(8, 3, rng), Phase::training, d_f) == (z_t + d_f).eval());
  }
  CHECK(base == z_s);
}

TEST_CASE("update_sigma2: hand values, symmetry and oracle")
{
  CHECK(update_sigma2(row({ 1, 2 }), row({ 1, 2 })) == 0.0);
  CHECK(update_sigma2(row({ 1, 0 }), row({ 0, 0 })) == 1.0);
  Matrix a(2, 2);
  a << 1, 1, 0, 0;
  CHECK(update_sigma2(a, Matrix::Zero(2, 2)) == 1.0);

  numcore::Rng rng(11);
  for (int t = 0; t < 20; ++t) {
    const Matrix x = random_matrix(7, 3, rng);
    const Matrix y = random_matrix(7, 3, rng);
    double s = 0;
    for (Index r = 0; r < 7; ++r)
      for (Index c = 0; c < 3; ++c)
        s += (x(r, c) - y(r, c)) * (x(r, c) - y(r, c));
    CHECK(std::abs(update_sigma2(x, y) - s / 7) <= 1e-12);
    CHECK(update_sigma2(x, y) == update_sigma2(y, x));
    CHECK(update_sigma2(x, y) > 0);
    CHECK(student_loss(x, y) == update_sigma2(x, y));
  }
  CHECK(student_loss(a, a) == 0.0);
  CHECK_THROWS_AS(update_sigma2(a, row({ 1, 1 })), ShapeError);
}

TEST_CASE("decode: zero weights, hand network and composition oracle")
{
  auto cfg = small_config(1, 1, 1, 1);
  auto model = TsuaeModel::initialize(cfg);
  Vector ob(2);
  ob << 0.25, -3.0;
  model.decoder = Decoder(Affine(1, 1), Affine(Matrix::Zero(2, 1), ob));
  const Matrix z = Matrix::Constant(3, 1, 2.0);
  for (Index r = 0; r < 3; ++r)
    CHECK(decode(model, z).row(r) == ob.transpose());

  auto hand = TsuaeModel::initialize(small_config(1, 1, 1, 1));
  hand.decoder = Decoder(Affine(Matrix::Ones(1, 1), Vector::Zero(1)),
                         Affine(Matrix::Ones(2, 1), Vector::Zero(2)));
  CHECK(decode(hand, Matrix::Zero(1, 1)).isZero(0.0));

  auto rnd = TsuaeModel::initialize(small_config(3, 2, 4, 5));
  numcore::Rng rng(2);
  const Matrix zz = random_matrix(6, 4, rng);
  const Matrix oracle = numcore::affine_forward(
    rnd.decoder.output(), numcore::tanh_forward(numcore::affine_forward(rnd.decoder.hidden(), zz)));
  CHECK(decode(rnd, zz) == oracle);
  CHECK_THROWS_AS(decode(rnd, random_matrix(2, 3, rng)), ShapeError);
}

TEST_CASE("teacher_loss: constant offset toy and brute-force oracle")
{
  // teacher = identity + 1, decoder ~ identity (tiny tanh slope undone by a
  // large output weight), d_f = 0: every component is off by 1
  auto cfg = small_config(1, 1, 2, 2);
  auto model = TsuaeModel::initialize(cfg);
  model.teacher = Affine(Matrix::Identity(2, 2), Vector::Ones(2));
  const double eps = 1e-5;
  model.decoder = Decoder(Affine(eps * Matrix::Identity(2, 2), Vector::Zero(2)),
                          Affine(Matrix::Identity(2, 2) / eps, Vector::Zero(2)));
  Matrix x(3, 2);
  x << 0.1, -0.2, 0.3, 0.0, -0.4, 0.2;
  CHECK(teacher_loss(x, model, Matrix::Zero(3, 2)) == doctest::Approx(2.0).epsilon(1e-8));
  // same decoder, teacher shifted back by -1: reconstruction is the input
  model.teacher.bias.setZero();
  CHECK(teacher_loss(x, model, Matrix::Zero(3, 2)) <= 1e-15);

  auto rnd = TsuaeModel::initialize(small_config(3, 1, 2, 4));
  numcore::Rng rng(8);
  const Matrix xt = random_matrix(5, 4, rng);
  const Matrix df = random_matrix(5, 2, rng);
  double s = 0;
  for (Index r = 0; r < 5; ++r) {
    const Matrix zr = numcore::affine_forward(rnd.teacher, xt.row(r)) + df.row(r);
    const Matrix rec = decode(rnd, zr);
    for (Index c = 0; c < 4; ++c)
      s += (xt(r, c) - rec(0, c)) * (xt(r, c) - rec(0, c));
  }
  CHECK(teacher_loss(xt, rnd, df) == doctest::Approx(s / 5).epsilon(1e-13));
  CHECK(teacher_gradients(rnd, xt, df).loss == doctest::Approx(s / 5).epsilon(1e-13));
}

TEST_CASE("gradients of both losses agree with finite differences")
{
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    auto cfg = small_config(3 + seed % 2, 1 + seed % 2, 2 + seed % 3, 3 + seed);
    cfg.seed = seed;
    numcore::Rng rng(seed + 100);
    const Matrix xt = random_matrix(6, cfg.teacher_input_dim(), rng);
    const Matrix df = random_matrix(6, cfg.feature_dim, rng);
    CAPTURE(seed);
    CHECK(test_support::tsuae_gradient_error(TsuaeModel::initialize(cfg), xt, df) <= 1e-5);
  }
}

TEST_CASE("gradient isolation between teacher and student objectives")
{
  auto cfg = small_config(3, 1, 2, 4);
  auto model = TsuaeModel::initialize(cfg);
  numcore::Rng rng(4);
  const Matrix xt = random_matrix(5, 4, rng);
  const Matrix df = random_matrix(5, 2, rng);
  const auto before = teacher_gradients(model, xt, df);
  auto moved = model;
  moved.student.weight.array() += 1.0;
  const auto after = teacher_gradients(moved, xt, df);
  CHECK(before.loss == after.loss);
  CHECK(before.teacher.weight == after.teacher.weight);
  CHECK(before.decoder.output.weight == after.decoder.output.weight);

  // the student objective sees the teacher only through the constant target
  const Matrix z_t = encode_teacher(model, xt);
  auto other = model;
  other.teacher.weight.array() += 1.0;
  other.decoder.output_mut().bias.array() += 1.0;
  const auto s1 = student_gradients(model, xt.leftCols(3), z_t);
  const auto s2 = student_gradients(other, xt.leftCols(3), z_t);
  CHECK(s1.student.weight == s2.student.weight);
  CHECK(s1.loss == s2.loss);
}

TEST_CASE("train: zero budget returns the initial model")
{
  auto cfg = small_config(20, 1, 6, 8);
  cfg.iterations = 0;
  const auto init = TsuaeModel::initialize(cfg);
  const auto r = train(init, test_support::numerical_train(100));
  CHECK(r.model.same_parameters(init));
  CHECK(r.history.records.empty());
}

TEST_CASE("train: deterministic, ordered history, sigma2 tracks the student loss")
{
  auto cfg = small_config(20, 1, 6, 8);
  cfg.iterations = 60;
  const Matrix x = test_support::numerical_train(200);
  const auto a = train(TsuaeModel::initialize(cfg), x);
  const auto b = train(TsuaeModel::initialize(cfg), x);
  CHECK(a.model.same_parameters(b.model));
  REQUIRE(a.history.records.size() == b.history.records.size());
  for (std::size_t i = 0; i < a.history.records.size(); ++i) {
    const auto& r = a.history.records[i];
    CHECK(r.iteration == static_cast<Index>(i + 1));
    CHECK(r.teacher_loss == b.history.records[i].teacher_loss);
    CHECK(r.sigma2 == std::max(r.student_loss, cfg.sigma2_floor));
    CHECK(r.sigma2 >= 0);
  }

  auto c2 = cfg;
  c2.seed = 2;
  CHECK_FALSE(train(TsuaeModel::initialize(c2), x).model.same_parameters(a.model));
}

TEST_CASE("train: frozen student keeps its parameters, zero noise keeps sigma2 at 0")
{
  auto cfg = small_config(20, 1, 6, 8);
  cfg.iterations = 30;
  const auto init = TsuaeModel::initialize(cfg);
  TrainingControls ctl;
  ctl.update_student = false;
  ctl.zero_noise = true;
  const auto r = train(init, test_support::numerical_train(150), ctl);
  CHECK(r.model.student == init.student);
  CHECK_FALSE(r.model.teacher == init.teacher);
  for (const auto& rec : r.history.records)
    CHECK(rec.sigma2 == 0.0);
}

TEST_CASE("train: held-out errors are recorded at the requested cadence")
{
  auto cfg = small_config(20, 1, 6, 8);
  cfg.iterations = 25;
  cfg.stop_tolerance = 0;
  const Matrix x = test_support::numerical_train(120);
  const auto r = train(TsuaeModel::initialize(cfg), x, {}, HeldOut{ x.topRows(20), 10 });
  REQUIRE(r.history.records.size() == 25);
  CHECK(r.history.records[9].heldout_process_error.has_value());
  CHECK(r.history.records[9].heldout_quality_error.has_value());
  CHECK_FALSE(r.history.records[10].heldout_process_error.has_value());
}

TEST_CASE("train: width mismatch and non-finite data are reported")
{
  auto cfg = small_config(3, 1, 2, 4);
  cfg.iterations = 5;
  const auto init = TsuaeModel::initialize(cfg);
  CHECK_THROWS_AS(train(init, Matrix::Zero(4, 3)), ShapeError);
  Matrix bad = Matrix::Ones(4, 4);
  bad(1, 1) = std::numeric_limits<double>::infinity();
  try {
    (void)train(init, bad);
    FAIL("expected TrainingError");
  } catch (const TrainingError& e) {
    CHECK(std::string(e.what()).find("iteration") != std::string::npos);
  }
}

TEST_CASE("train: teacher loss halves on the numerical benchmark within 2000 iterations")
{
  ModelConfig cfg; // library defaults: v 6, n_h 16, learning rates 1e-3
  cfg.iterations = 2000;
  const auto r = train(TsuaeModel::initialize(cfg), test_support::numerical_train());
  const auto& h = r.history.records;
  REQUIRE(h.size() >= 2);
  CHECK(h.back().teacher_loss < 0.5 * h.front().teacher_loss);
  CHECK(h.back().student_loss < h.front().student_loss);
}

TEST_CASE("infer: composition identity, hand trace and determinism")
{
  auto cfg = small_config(3, 1, 2, 4);
  auto model = TsuaeModel::initialize(cfg);
  numcore::Rng rng(6);
  const Matrix xs = random_matrix(5, 3, rng);
  const auto out = infer(model, xs);
  CHECK(out.combined == decode(model, encode_student(model, xs)));
  CHECK(out.process == out.combined.leftCols(3));
  CHECK(out.quality == out.combined.rightCols(1));
  CHECK(infer(model, xs).combined == out.combined);

  auto hand = TsuaeModel::initialize(small_config(1, 1, 1, 1));
  hand.student = Affine(Matrix::Constant(1, 1, 2.0), Vector::Zero(1));
  Vector ob(2);
  ob << 0.0, 1.0;
  Matrix ow(2, 1);
  ow << 1.0, 3.0;
  hand.decoder = Decoder(Affine(Matrix::Ones(1, 1), Vector::Zero(1)), Affine(ow, ob));
  const auto h = infer(hand, Matrix::Constant(1, 1, 0.5));
  CHECK(h.process(0, 0) == doctest::Approx(std::tanh(1.0)));
  CHECK(h.quality(0, 0) == doctest::Approx(3 * std::tanh(1.0) + 1));
}

TEST_CASE("plateau detector stops on flat losses only")
{
  PlateauDetector p(3, 1e-5, 1);
  std::vector<double> l{ 1.0 };
  CHECK_FALSE(p.push(l));
  CHECK_FALSE(p.push(l));
  CHECK_FALSE(p.push(l));
  CHECK(p.push(l));
  PlateauDetector q(3, 1e-5, 2);
  for (int i = 0; i < 10; ++i) {
    std::vector<double> two{ 1.0, 1.0 / (i + 1) };
    CHECK_FALSE(q.push(two));
  }
}

TEST_CASE("per-iteration cost grows at most linearly in the hidden width")
{
  const Matrix x = test_support::numerical_train(1000);
  auto time_iterations = [&](Index n_h) {
    ModelConfig cfg;
    cfg.hidden_dim = n_h;
    cfg.iterations = 40;
    cfg.stop_tolerance = 0;
    double best = 1e300;
    for (int rep = 0; rep < 3; ++rep) {
      const auto t0 = std::chrono::steady_clock::now();
      (void)train(TsuaeModel::initialize(cfg), x);
      best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    return best;
  };
  const double t1 = time_iterations(64);
  const double t2 = time_iterations(128);
  CAPTURE(t1);
  CAPTURE(t2);
  CHECK(t2 <= 3.0 * t1);
}
