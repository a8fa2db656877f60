#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "tsuae/experiment.hpp"
#include "tsuae/persistence.hpp"

using namespace tsuae;
using namespace tsuae::cli;
namespace fs = std::filesystem;

namespace {

const char* small_ini = R"(
[experiment]
seed = 3
methods = pca, tsuae
fault_units = raw

[data]
source = generator
samples = 300

[fault.fault1]
column = x10
magnitude = 1.5
start = 101

[fault.fault2]
column = y1
magnitude = 0.7
start = 101

[model]
hidden_dim = 8
iterations = 40
learning_rate = 0.01
)";

fs::path scratch(const std::string& name)
{
  const auto p = fs::temp_directory_path() / ("tsuae_unit_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p)
{
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines(const std::string& text)
{
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);)
    out.push_back(l);
  return out;
}

SavedModel trained_tsuae()
{
  auto cfg = parse_config(small_ini);
  const auto data = prepare_data(cfg);
  const auto det = baselines::fit_method("tsuae", data.train, cfg.settings_for("tsuae"));
  SavedModel m;
  m.archive = det->archive();
  m.scaler = data.scaler;
  m.roles = data.raw_train.roles();
  m.thresholds = baselines::fit_thresholds(*det, data.train, cfg.confidence);
  return m;
}

} // namespace

TEST_CASE("config: parsing, defaults and canonical rendering")
{
  const auto c = parse_config(small_ini);
  CHECK(c.seed == 3);
  CHECK(c.methods == std::vector<std::string>{ "pca", "tsuae" });
  CHECK(c.fault_units == FaultUnits::raw);
  CHECK(c.generator.samples == 300);
  REQUIRE(c.faults.size() == 2);
  CHECK(c.faults[0].injection->column == "x10");
  CHECK(c.faults[1].start_index == 101);
  CHECK(c.confidence == 0.99);
  const auto s = c.settings_for("tsuae");
  CHECK(s.model.hidden_dim == 8);
  CHECK(s.model.teacher_learning_rate == 0.01);
  CHECK(s.model.student_learning_rate == 0.01);
  CHECK(s.model.seed == 3);

  const std::string text = render_config(c);
  CHECK(render_config(parse_config(text)) == text);

  const auto all = parse_config("[experiment]\nmethods = all\n");
  CHECK(all.methods == baselines::known_methods());
  CHECK(all.faults.size() == 2);
}

TEST_CASE("config: per-method overrides")
{
  const auto c = parse_config(std::string(small_ini) + "\n[model.tssae]\niterations = 7\n");
  CHECK(c.settings_for("tssae").model.iterations == 7);
  CHECK(c.settings_for(baselines::feedback_id(0.1)).model.iterations == 7);
  CHECK(c.settings_for("tsuae").model.iterations == 40);
}

TEST_CASE("config: violations are ConfigError")
{
  CHECK_THROWS_AS(parse_config("[experiment]\nbogus = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[nonsense]\na = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[experiment]\nconfidence = 1.5\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[experiment]\nmethods = pca, kpls\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[experiment]\nseed = -4\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[model]\nhidden_dim = zero\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[experiment\nseed = 1\n"), ConfigError);
  CHECK_THROWS_AS(load_config("/nonexistent/config.ini"), ConfigError);
}

TEST_CASE("persistence: bit-exact round trip and identical inference")
{
  const auto m = trained_tsuae();
  const std::string text = serialize_model(m);
  const auto back = deserialize_model(text);
  CHECK(serialize_model(back) == text);
  CHECK(back.scaler == m.scaler);
  CHECK(back.thresholds.process == m.thresholds.process);
  CHECK(back.thresholds.quality == m.thresholds.quality);
  REQUIRE(back.archive.matrices.size() == m.archive.matrices.size());
  for (std::size_t i = 0; i < m.archive.matrices.size(); ++i)
    CHECK(back.archive.matrices[i].second == m.archive.matrices[i].second);
  CHECK(back.archive.scalar("sigma2") == m.archive.scalar("sigma2"));

  const auto a = baselines::restore_detector(m.archive);
  const auto b = baselines::restore_detector(back.archive);
  numcore::Rng rng(1);
  std::normal_distribution<double> n;
  Matrix probe(25, 20);
  for (Index i = 0; i < probe.size(); ++i)
    probe.data()[i] = n(rng);
  CHECK(*a->predict(probe).process == *b->predict(probe).process);
  CHECK(*a->predict(probe).quality == *b->predict(probe).quality);

  const auto dir = scratch("persist");
  save_model(m, dir / "m.model");
  CHECK(serialize_model(load_model(dir / "m.model")) == text);
}

TEST_CASE("persistence: truncation, corruption, version and magic")
{
  const std::string text = serialize_model(trained_tsuae());
  CHECK_THROWS_AS(deserialize_model(text.substr(0, text.size() / 2)), ChecksumError);
  CHECK_THROWS_AS(deserialize_model(text.substr(0, text.size() - 5)), ChecksumError);

  std::string flipped = text;
  const auto pos = flipped.find("teacher.weight");
  flipped[pos + 20] = flipped[pos + 20] == '1' ? '2' : '1';
  CHECK_THROWS_AS(deserialize_model(flipped), ChecksumError);

  // re-seal a body that claims another version: the checksum passes and the
  // version check must reject it
  SavedModel tiny;
  tiny.archive.method = "pca";
  const std::string good = serialize_model(tiny);
  std::string body = good.substr(0, good.rfind("checksum "));
  body.replace(body.find(" 1\n"), 3, " 9\n");
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : body) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char sum[32];
  std::snprintf(sum, sizeof sum, "checksum %016llx\n", static_cast<unsigned long long>(h));
  CHECK_THROWS_AS(deserialize_model(body + sum), UnsupportedVersionError);

  CHECK_THROWS_AS(load_model("/nonexistent/file.model"), IoError);
}

TEST_CASE("git_blob_hash matches git hash-object")
{
  CHECK(git_blob_hash("hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a");
  CHECK(git_blob_hash("") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
}

TEST_CASE("exit codes by error class")
{
  CHECK(exit_code_for(ConfigError("x")) == 1);
  CHECK(exit_code_for(DataError("x")) == 2);
  CHECK(exit_code_for(TrainingError("x")) == 3);
  CHECK(exit_code_for(IoError("x")) == 4);
  CHECK(exit_code_for(ChecksumError("x")) == 4);
}

TEST_CASE("run_experiment: outputs, determinism, series layout and cross-run scoring")
{
  const auto cfg = parse_config(small_ini);
  const auto a = scratch("run_a");
  const auto b = scratch("run_b");
  const auto ma = run_experiment(cfg, a);
  const auto mb = run_experiment(cfg, b);
  CHECK(ma.status == "complete");
  for (const auto& f : { "metrics.csv", "report.csv", "thresholds.csv", "manifest.txt" })
    CHECK(fs::exists(a / f));
  for (const auto& [method, path] : ma.model_files)
    CHECK(fs::exists(a / path));
  CHECK(slurp(a / "metrics.csv") == slurp(b / "metrics.csv"));
  CHECK(slurp(a / "series" / "fault1_tsuae.csv") == slurp(b / "series" / "fault1_tsuae.csv"));
  CHECK(ma.input_hash == mb.input_hash);

  // metrics: pca has only Dx rows, tsuae both subspaces, for both faults
  const auto metric_lines = lines(slurp(a / "metrics.csv"));
  CHECK(metric_lines.size() == 1 + 2 * 1 + 2 * 2);
  for (const auto& l : metric_lines)
    if (l.rfind("pca,", 0) == 0)
      CHECK(l.find(",Dx,") != std::string::npos);

  // series: one row per sample, constant thresholds, empty Dy cells for pca
  const auto ts = lines(slurp(a / "series" / "fault1_tsuae.csv"));
  REQUIRE(ts.size() == 301);
  CHECK(ts[0] == "sample_index,D_x,J_x_th,D_y,J_y_th");
  auto field = [](const std::string& l, int k) {
    std::stringstream ss(l);
    std::string f;
    for (int i = 0; i <= k; ++i)
      std::getline(ss, f, ',');
    return f;
  };
  for (std::size_t i = 2; i < ts.size(); ++i)
    CHECK(field(ts[i], 2) == field(ts[1], 2));
  const auto ps = lines(slurp(a / "series" / "fault1_pca.csv"));
  REQUIRE(ps.size() == 301);
  CHECK(ps[5].substr(ps[5].size() - 2) == ",,");

  // a model saved in run A scores generated raw data exactly as run A did
  const auto gen = scratch("gen");
  generate_files(cfg, gen);
  const auto scored = scratch("scored");
  score_file(a / "models" / "tsuae.model", gen / "fault1.csv", scored, Index(101), "fault1");
  CHECK(slurp(scored / "fault1_tsuae.csv") == slurp(a / "series" / "fault1_tsuae.csv"));

  // the manifest hash follows the inputs
  auto changed = cfg;
  changed.seed = 4;
  changed.methods = { "pca" };
  const auto c = scratch("run_c");
  CHECK(run_experiment(changed, c).input_hash != ma.input_hash);
}

TEST_CASE("run_experiment with pca only has no quality cells")
{
  auto cfg = parse_config(small_ini);
  cfg.methods = { "pca" };
  const auto dir = scratch("pca_only");
  run_experiment(cfg, dir);
  const auto report = slurp(dir / "report.csv");
  CHECK(report.find("/") != std::string::npos);
  for (const auto& l : lines(slurp(dir / "metrics.csv")))
    CHECK(l.find(",Dy,") == std::string::npos);
}

TEST_CASE("score_file without labels or fault start writes only the series")
{
  const auto cfg = parse_config(small_ini);
  const auto run = scratch("score_src");
  run_experiment(cfg, run);
  const auto gen = scratch("score_gen");
  generate_files(cfg, gen);
  // drop the quality column
  auto rows = lines(slurp(gen / "fault2.csv"));
  std::ofstream out(gen / "unlabeled.csv");
  for (auto& r : rows)
    out << r.substr(0, r.rfind(',')) << '\n';
  out.close();
  const auto dest = scratch("score_out");
  const auto written = score_file(run / "models" / "tsuae.model", gen / "unlabeled.csv", dest,
                                  std::nullopt, "probe");
  REQUIRE(written.size() == 1);
  const auto series = lines(slurp(written[0]));
  CHECK(series.size() == 301);
  CHECK(series[1].substr(series[1].size() - 2) == ",,");
}
