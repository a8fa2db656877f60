#include "tsuae/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <openssl/evp.h>

namespace tsuae::cli {

namespace fs = std::filesystem;
using boost::property_tree::ptree;

namespace {

// ---------------------------------------------------------------------------
// small text helpers

std::string trim(std::string s)
{
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos)
    return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s)
{
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty())
      out.push_back(item);
  }
  return out;
}

std::string join(const std::vector<std::string>& items, const char* sep = ", ")
{
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i)
    out += (i ? sep : "") + items[i];
  return out;
}

std::string shortest(double v)
{
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string fixed4(double v)
{
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::string general8(double v)
{
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.8g", v);
  return buf;
}

double to_double(const std::string& key, const std::string& value)
{
  double v = 0;
  const char* first = value.data();
  const char* last = first + value.size();
  if (first != last && *first == '+')
    ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || first == last)
    throw ConfigError("config key '" + key + "': '" + value + "' is not a number");
  return v;
}

long long to_integer(const std::string& key, const std::string& value)
{
  long long v = 0;
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc() || ptr != value.data() + value.size() || value.empty())
    throw ConfigError("config key '" + key + "': '" + value + "' is not an integer");
  return v;
}

std::uint64_t to_unsigned(const std::string& key, const std::string& value)
{
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc() || ptr != value.data() + value.size() || value.empty())
    throw ConfigError("config key '" + key + "': '" + value +
                      "' is not a nonnegative integer");
  return v;
}

std::string sanitize(const std::string& id)
{
  std::string out = id;
  for (char& c : out)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.'))
      c = '_';
  return out;
}

std::string read_file(const fs::path& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& text)
{
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw IoError("cannot write '" + path.string() + "'");
  out << text;
  out.flush();
  if (!out)
    throw IoError("failed writing '" + path.string() + "'");
}

void make_dirs(const fs::path& dir)
{
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec)
    throw IoError("cannot create directory '" + dir.string() + "': " + ec.message());
}

// ---------------------------------------------------------------------------
// section readers

class Section
{
public:
  Section(std::string name, const ptree& tree)
    : name_(std::move(name))
    , tree_(tree)
  {
    for (const auto& [key, child] : tree_) {
      if (!child.empty())
        throw ConfigError("config section [" + name_ + "]: nested key '" + key + "'");
      if (!seen_.insert(key).second)
        throw ConfigError("config section [" + name_ + "]: duplicate key '" + key + "'");
    }
  }

  std::optional<std::string> get(const std::string& key)
  {
    used_.insert(key);
    for (const auto& [k, child] : tree_)
      if (k == key)
        return trim(child.data());
    return std::nullopt;
  }

  std::string qualified(const std::string& key) const { return name_ + "." + key; }

  template<typename T, typename Parse>
  void read(const std::string& key, T& target, Parse parse)
  {
    if (auto v = get(key))
      target = static_cast<T>(parse(qualified(key), *v));
  }

  void read_double(const std::string& key, double& t) { read(key, t, to_double); }
  void read_index(const std::string& key, Index& t) { read(key, t, to_integer); }

  //! Rejects keys nobody asked for; catches typos early.
  void finish() const
  {
    for (const auto& k : seen_)
      if (!used_.count(k))
        throw ConfigError("config section [" + name_ + "]: unknown key '" + k + "'");
  }

private:
  std::string name_;
  const ptree& tree_;
  std::set<std::string> seen_;
  std::set<std::string> used_;
};

void read_model(Section& s, ModelConfig& c)
{
  s.read_index("feature_dim", c.feature_dim);
  s.read_index("hidden_dim", c.hidden_dim);
  s.read_index("iterations", c.iterations);
  s.read_double("stop_tolerance", c.stop_tolerance);
  s.read_index("stop_window", c.stop_window);
  s.read_double("initial_sigma2", c.initial_sigma2);
  s.read_double("sigma2_floor", c.sigma2_floor);
  s.read_double("teacher_learning_rate", c.teacher_learning_rate);
  s.read_double("student_learning_rate", c.student_learning_rate);
  if (auto lr = s.get("learning_rate")) {
    c.teacher_learning_rate = to_double(s.qualified("learning_rate"), *lr);
    c.student_learning_rate = c.teacher_learning_rate;
  }
  s.read_index("batch_size", c.batch_size);
}

void render_model(std::ostringstream& os, const ModelConfig& c)
{
  os << "feature_dim = " << c.feature_dim << '\n'
     << "hidden_dim = " << c.hidden_dim << '\n'
     << "iterations = " << c.iterations << '\n'
     << "stop_tolerance = " << shortest(c.stop_tolerance) << '\n'
     << "stop_window = " << c.stop_window << '\n'
     << "initial_sigma2 = " << shortest(c.initial_sigma2) << '\n'
     << "sigma2_floor = " << shortest(c.sigma2_floor) << '\n'
     << "teacher_learning_rate = " << shortest(c.teacher_learning_rate) << '\n'
     << "student_learning_rate = " << shortest(c.student_learning_rate) << '\n'
     << "batch_size = " << c.batch_size << '\n';
}

fs::path resolve(const fs::path& base, const std::string& p)
{
  fs::path path(p);
  if (path.is_relative() && !base.empty())
    path = base / path;
  return path.lexically_normal();
}

std::string model_key(const std::string& method)
{
  return baselines::feedback_rate(method) ? std::string("tssae-nf") : method;
}

} // namespace

// ---------------------------------------------------------------------------
// configuration

void ExperimentConfig::validate() const
{
  if (methods.empty())
    throw ConfigError("config: at least one method is required");
  for (const auto& m : methods)
    if (!baselines::is_known_method(m))
      throw ConfigError("config: unknown method '" + m + "'");
  if (!(confidence > 0 && confidence < 1))
    throw ConfigError("config: confidence must lie in (0, 1)");
  if (source == DataSource::csv) {
    if (train_file.empty())
      throw ConfigError("config: csv data source needs [data] train");
    if (schema.process.empty())
      throw ConfigError("config: csv data source needs [data] process columns");
  } else {
    if (generator.samples < 2 || generator.process_dim < 1 || generator.quality_dim < 1 ||
        generator.latent_dim < 5 || !(generator.noise_variance >= 0))
      throw ConfigError("config: invalid generator settings");
  }
  std::set<std::string> ids;
  for (const auto& f : faults) {
    if (!ids.insert(f.id).second)
      throw ConfigError("config: duplicate fault id '" + f.id + "'");
    if (f.start_index < 1)
      throw ConfigError("config: fault '" + f.id + "' start must be >= 1");
    if (source == DataSource::csv && f.file.empty())
      throw ConfigError("config: fault '" + f.id + "' needs a file for csv data sources");
  }
  if (!(settings.pca_variance > 0 && settings.pca_variance <= 1))
    throw ConfigError("config: [pca] variance must lie in (0, 1]");
  if (settings.pls_max_components < 1)
    throw ConfigError("config: [pls] max_components must be >= 1");
  if (settings.cv_folds < 2)
    throw ConfigError("config: cross-validation folds must be >= 2");
  if (settings.ridge_grid.empty())
    throw ConfigError("config: [rr] grid must not be empty");
  for (double l : settings.ridge_grid)
    if (!(l >= 0))
      throw ConfigError("config: [rr] grid values must be >= 0");
  if (sweep_rates.empty())
    throw ConfigError("config: [sweep] rates must not be empty");
  for (double k : sweep_rates)
    if (!(k >= 0) || !std::isfinite(k))
      throw ConfigError("config: [sweep] rates must be finite and >= 0");
  try {
    settings.model.validate();
    for (const auto& [k, m] : model_overrides)
      m.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

baselines::MethodSettings ExperimentConfig::settings_for(const std::string& method) const
{
  baselines::MethodSettings s = settings;
  auto it = model_overrides.find(model_key(method));
  // feedback variants default to the plain TSSAE settings
  if (it == model_overrides.end() && baselines::feedback_rate(method))
    it = model_overrides.find("tssae");
  if (it != model_overrides.end())
    s.model = it->second;
  s.model.seed = seed;
  return s;
}

ExperimentConfig parse_config(const std::string& text, const fs::path& base_dir)
{
  ptree pt;
  try {
    std::istringstream in(text);
    boost::property_tree::ini_parser::read_ini(in, pt);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.message() + " at line " +
                      std::to_string(e.line()));
  }

  ExperimentConfig c;
  c.methods.clear();
  std::map<std::string, const ptree*> overrides;
  const ptree* model_section = nullptr;
  bool faults_given = false;

  for (const auto& [name, tree] : pt) {
    if (tree.empty() && !tree.data().empty())
      throw ConfigError("config: key '" + name + "' outside any section");
    if (name == "experiment") {
      Section s(name, tree);
      s.read("seed", c.seed, to_unsigned);
      s.read_double("confidence", c.confidence);
      if (auto m = s.get("methods")) {
        c.methods = split_list(*m);
        if (c.methods.size() == 1 && c.methods[0] == "all")
          c.methods = baselines::known_methods();
      }
      if (auto u = s.get("fault_units")) {
        if (*u == "standardized")
          c.fault_units = FaultUnits::standardized;
        else if (*u == "raw")
          c.fault_units = FaultUnits::raw;
        else
          throw ConfigError("config key 'experiment.fault_units': expected standardized or raw");
      }
      s.finish();
    } else if (name == "data") {
      Section s(name, tree);
      if (auto src = s.get("source")) {
        if (*src == "generator")
          c.source = DataSource::generator;
        else if (*src == "csv")
          c.source = DataSource::csv;
        else
          throw ConfigError("config key 'data.source': expected generator or csv");
      }
      s.read_index("samples", c.generator.samples);
      s.read_index("latent_dim", c.generator.latent_dim);
      s.read_index("process_dim", c.generator.process_dim);
      s.read_index("quality_dim", c.generator.quality_dim);
      s.read_double("noise_variance", c.generator.noise_variance);
      if (auto t = s.get("train"))
        c.train_file = resolve(base_dir, *t);
      if (auto p = s.get("process"))
        c.schema.process = split_list(*p);
      if (auto q = s.get("quality"))
        c.schema.quality = split_list(*q);
      s.finish();
    } else if (name.rfind("fault.", 0) == 0) {
      Section s(name, tree);
      FaultDefinition f;
      f.id = name.substr(6);
      if (f.id.empty())
        throw ConfigError("config: fault section needs an id, e.g. [fault.f1]");
      Index start = 1;
      s.read_index("start", start);
      f.start_index = start;
      if (auto file = s.get("file"))
        f.file = resolve(base_dir, *file);
      auto column = s.get("column");
      auto magnitude = s.get("magnitude");
      if (column.has_value() != magnitude.has_value())
        throw ConfigError("config section [" + name + "]: column and magnitude go together");
      if (column)
        f.injection = data::FaultSpec{ *column, to_double(s.qualified("magnitude"), *magnitude), start };
      s.finish();
      c.faults.push_back(std::move(f));
      faults_given = true;
    } else if (name == "model") {
      model_section = &tree;
    } else if (name.rfind("model.", 0) == 0) {
      const std::string method = name.substr(6);
      if (method != "tssae-nf" && !baselines::is_known_method(method))
        throw ConfigError("config: section [" + name + "] names an unknown method");
      overrides[method] = &tree;
    } else if (name == "pca") {
      Section s(name, tree);
      s.read_double("variance", c.settings.pca_variance);
      s.finish();
    } else if (name == "pls") {
      Section s(name, tree);
      s.read_index("max_components", c.settings.pls_max_components);
      s.read_index("folds", c.settings.cv_folds);
      s.finish();
    } else if (name == "rr") {
      Section s(name, tree);
      if (auto g = s.get("grid")) {
        c.settings.ridge_grid.clear();
        for (const auto& v : split_list(*g))
          c.settings.ridge_grid.push_back(to_double("rr.grid", v));
      }
      s.read_index("folds", c.settings.cv_folds);
      s.finish();
    } else if (name == "sweep") {
      Section s(name, tree);
      if (auto r = s.get("rates")) {
        c.sweep_rates.clear();
        for (const auto& v : split_list(*r))
          c.sweep_rates.push_back(to_double("sweep.rates", v));
      }
      s.finish();
    } else {
      throw ConfigError("config: unknown section [" + name + "]");
    }
  }

  if (model_section) {
    Section s("model", *model_section);
    read_model(s, c.settings.model);
    s.finish();
  }
  for (const auto& [method, tree] : overrides) {
    Section s("model." + method, *tree);
    ModelConfig m = c.settings.model;
    read_model(s, m);
    s.finish();
    c.model_overrides[method] = m;
  }

  if (!faults_given && c.source == DataSource::generator) {
    c.faults.push_back({ "fault1", data::FaultSpec{ "x10", 1.5, 201 }, {}, 201 });
    c.faults.push_back({ "fault2", data::FaultSpec{ "y1", 0.7, 201 }, {}, 201 });
  }
  if (c.schema.quality.empty() && c.source == DataSource::csv)
    c.schema.quality = {};
  c.settings.model.seed = c.seed;
  for (auto& [k, m] : c.model_overrides)
    m.seed = c.seed;
  c.validate();
  return c;
}

ExperimentConfig load_config(const fs::path& path)
{
  std::string text;
  try {
    text = read_file(path);
  } catch (const IoError& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return parse_config(text, path.parent_path());
}

ExperimentConfig default_config()
{
  ExperimentConfig c;
  c.methods = baselines::known_methods();
  c.settings.model.hidden_dim = 32;
  c.settings.model.iterations = 3000;
  c.settings.model.teacher_learning_rate = 1e-2;
  c.settings.model.student_learning_rate = 1e-2;
  c.faults.push_back({ "fault1", data::FaultSpec{ "x10", 1.5, 201 }, {}, 201 });
  c.faults.push_back({ "fault2", data::FaultSpec{ "y1", 0.7, 201 }, {}, 201 });
  return c;
}

std::string render_config(const ExperimentConfig& c)
{
  std::ostringstream os;
  os << "[experiment]\n"
     << "seed = " << c.seed << '\n'
     << "confidence = " << shortest(c.confidence) << '\n'
     << "methods = " << join(c.methods) << '\n'
     << "fault_units = " << (c.fault_units == FaultUnits::standardized ? "standardized" : "raw")
     << "\n\n";
  os << "[data]\n";
  if (c.source == DataSource::generator) {
    os << "source = generator\n"
       << "samples = " << c.generator.samples << '\n'
       << "latent_dim = " << c.generator.latent_dim << '\n'
       << "process_dim = " << c.generator.process_dim << '\n'
       << "quality_dim = " << c.generator.quality_dim << '\n'
       << "noise_variance = " << shortest(c.generator.noise_variance) << '\n';
  } else {
    os << "source = csv\n"
       << "train = " << c.train_file.string() << '\n'
       << "process = " << join(c.schema.process) << '\n'
       << "quality = " << join(c.schema.quality) << '\n';
  }
  for (const auto& f : c.faults) {
    os << "\n[fault." << f.id << "]\n";
    os << "start = " << f.start_index << '\n';
    if (!f.file.empty())
      os << "file = " << f.file.string() << '\n';
    if (f.injection)
      os << "column = " << f.injection->column << '\n'
         << "magnitude = " << shortest(f.injection->magnitude) << '\n';
  }
  os << "\n[model]\n";
  render_model(os, c.settings.model);
  for (const auto& [k, m] : c.model_overrides) {
    os << "\n[model." << k << "]\n";
    render_model(os, m);
  }
  os << "\n[pca]\nvariance = " << shortest(c.settings.pca_variance) << '\n';
  os << "\n[pls]\nmax_components = " << c.settings.pls_max_components << '\n'
     << "folds = " << c.settings.cv_folds << '\n';
  std::vector<std::string> grid;
  for (double l : c.settings.ridge_grid)
    grid.push_back(shortest(l));
  os << "\n[rr]\ngrid = " << join(grid) << '\n';
  std::vector<std::string> rates;
  for (double k : c.sweep_rates)
    rates.push_back(shortest(k));
  os << "\n[sweep]\nrates = " << join(rates) << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------
// data

PreparedData prepare_data(const ExperimentConfig& config)
{
  PreparedData d;
  std::vector<data::DataMatrix> raw_bases;
  if (config.source == DataSource::generator) {
    data::GeneratorSpec spec = config.generator;
    spec.seed = config.seed;
    data::NumericalPlant plant(spec);
    d.raw_train = plant.sample(spec.samples);
    for (std::size_t i = 0; i < config.faults.size(); ++i)
      raw_bases.push_back(plant.sample(spec.samples));
  } else {
    d.raw_train = data::load_csv(config.train_file, config.schema);
    d.input_files.push_back(config.train_file);
    for (const auto& f : config.faults) {
      raw_bases.push_back(data::load_csv(f.file, config.schema));
      d.input_files.push_back(f.file);
    }
  }

  d.scaler = data::fit_scaler(d.raw_train);
  d.train = data::apply_scaler(d.scaler, d.raw_train);
  for (std::size_t i = 0; i < config.faults.size(); ++i) {
    const auto& def = config.faults[i];
    const auto& base = raw_bases[i];
    if (def.start_index > base.rows() + 1)
      throw DataError("fault '" + def.id + "' starts at sample " +
                      std::to_string(def.start_index) + " but the series has " +
                      std::to_string(base.rows()) + " samples");
    data::DataMatrix raw = base;
    data::DataMatrix scaled = data::apply_scaler(d.scaler, base);
    if (def.injection) {
      data::FaultSpec step = *def.injection;
      step.start_index = def.start_index;
      const Index col = base.column_index(step.column);
      const double sd = d.scaler.stddev[col];
      data::FaultSpec raw_step = step;
      data::FaultSpec scaled_step = step;
      if (config.fault_units == FaultUnits::standardized)
        raw_step.magnitude = step.magnitude * sd;
      else
        scaled_step.magnitude = step.magnitude / sd;
      raw = data::inject_fault(base, raw_step);
      scaled = data::inject_fault(scaled, scaled_step);
    }
    d.raw_faults.push_back({ def.id, std::move(raw), def.start_index });
    d.faults.push_back({ def.id, std::move(scaled), def.start_index });
  }
  return d;
}

// ---------------------------------------------------------------------------
// running methods

MethodResult run_method(const std::string& method,
                        const ExperimentConfig& config,
                        const PreparedData& data)
{
  MethodResult r;
  r.method = method;
  const auto t0 = std::chrono::steady_clock::now();
  r.detector = baselines::fit_method(method, data.train, config.settings_for(method));
  r.thresholds = baselines::fit_thresholds(*r.detector, data.train, config.confidence);
  r.fit_seconds =
    std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  for (const auto& f : data.faults) {
    auto reps = baselines::detect(*r.detector, f.data, r.thresholds, f.start_index, f.id);
    r.reports.insert(r.reports.end(), reps.begin(), reps.end());
    r.series[f.id] = baselines::score(*r.detector, f.data);
  }
  return r;
}

ExperimentResult run_methods(const ExperimentConfig& config)
{
  config.validate();
  ExperimentResult out;
  out.data = prepare_data(config);
  for (const auto& m : config.methods)
    out.methods.push_back(run_method(m, config, out.data));
  return out;
}

// ---------------------------------------------------------------------------
// tables

std::string metrics_table(const std::vector<MethodResult>& results)
{
  std::ostringstream os;
  os << "method,fault,subspace,statistic,N_n,N_f,N_fa,N_fd,FAR,FDR\n";
  for (const auto& r : results)
    for (const auto& rep : r.reports)
      os << rep.method << ',' << rep.fault << ',' << monitor::to_string(rep.subspace) << ','
         << monitor::statistic_name(rep.subspace) << ',' << rep.normal_count << ','
         << rep.fault_count << ',' << rep.false_alarms << ',' << rep.detections << ','
         << fixed4(rep.far) << ',' << fixed4(rep.fdr) << '\n';
  return os.str();
}

std::string report_table(const std::vector<MethodResult>& results,
                         const std::vector<std::string>& fault_ids)
{
  std::ostringstream os;
  os << "method";
  for (const auto& f : fault_ids)
    os << ',' << f << " Dx," << f << " Dy";
  os << '\n';
  for (const auto& r : results) {
    os << r.method;
    for (const auto& f : fault_ids) {
      for (auto s : { monitor::Subspace::process, monitor::Subspace::quality }) {
        auto it = std::find_if(r.reports.begin(), r.reports.end(), [&](const auto& rep) {
          return rep.fault == f && rep.subspace == s;
        });
        os << ',';
        if (it == r.reports.end())
          os << '/';
        else
          os << fixed4(it->far) << '/' << fixed4(it->fdr);
      }
    }
    os << '\n';
  }
  return os.str();
}

std::string thresholds_table(const std::vector<MethodResult>& results)
{
  std::ostringstream os;
  os << "method,confidence,J_x_th,J_y_th\n";
  auto cell = [](const std::optional<double>& v) { return v ? fixed4(*v) : std::string("/"); };
  for (const auto& r : results)
    os << r.method << ',' << fixed4(r.thresholds.confidence) << ','
       << cell(r.thresholds.process) << ',' << cell(r.thresholds.quality) << '\n';
  return os.str();
}

std::string series_table(const baselines::MonitoredSeries& series,
                         const monitor::ThresholdPair& thresholds,
                         Index rows)
{
  std::ostringstream os;
  os << "sample_index,D_x,J_x_th,D_y,J_y_th\n";
  for (Index i = 0; i < rows; ++i) {
    os << (i + 1) << ',';
    if (series.process && thresholds.process)
      os << general8(series.process->values[i]) << ',' << general8(*thresholds.process);
    else
      os << ',';
    os << ',';
    if (series.quality && thresholds.quality)
      os << general8(series.quality->values[i]) << ',' << general8(*thresholds.quality);
    else
      os << ',';
    os << '\n';
  }
  return os.str();
}

std::string sweep_table(const std::vector<baselines::SweepRow>& rows)
{
  std::ostringstream os;
  os << "k,fault,subspace,statistic,threshold,FAR,FDR\n";
  for (const auto& row : rows)
    for (const auto& rep : row.reports)
      os << fixed4(row.k) << ',' << rep.fault << ',' << monitor::to_string(rep.subspace) << ','
         << monitor::statistic_name(rep.subspace) << ','
         << fixed4(row.thresholds.get(rep.subspace).value_or(NAN)) << ',' << fixed4(rep.far)
         << ',' << fixed4(rep.fdr) << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------
// files

std::string git_blob_hash(const std::string& content)
{
  const std::string header = "blob " + std::to_string(content.size()) + '\0';
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx)
    throw IoError("cannot allocate a hash context");
  const bool ok = EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
                  EVP_DigestUpdate(ctx, header.data(), header.size()) == 1 &&
                  EVP_DigestUpdate(ctx, content.data(), content.size()) == 1 &&
                  EVP_DigestFinal_ex(ctx, digest, &len) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok)
    throw IoError("SHA-1 computation failed");
  static const char* digits = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += digits[digest[i] >> 4];
    out += digits[digest[i] & 0xf];
  }
  return out;
}

namespace {

// Re-raises the exception in flight with the stage name prepended, keeping
// its type so the command line can map it to an exit code.
[[noreturn]] void rethrow_in_stage(const std::string& stage)
{
  const std::string p = "stage '" + stage + "': ";
  try {
    throw;
  } catch (const ConfigError& e) {
    throw ConfigError(p + e.what());
  } catch (const DataError& e) {
    throw DataError(p + e.what());
  } catch (const UnavailableError& e) {
    throw UnavailableError(p + e.what());
  } catch (const TrainingError& e) {
    throw TrainingError(p + e.what());
  } catch (const SingularError& e) {
    throw SingularError(p + e.what());
  } catch (const ChecksumError& e) {
    throw ChecksumError(p + e.what());
  } catch (const UnsupportedVersionError& e) {
    throw UnsupportedVersionError(p + e.what());
  } catch (const IoError& e) {
    throw IoError(p + e.what());
  } catch (const ShapeError& e) {
    throw ShapeError(p + e.what());
  } catch (const ContractError& e) {
    throw ContractError(p + e.what());
  } catch (const std::exception& e) {
    throw std::runtime_error(p + e.what());
  }
}

std::string render_manifest(const RunManifest& m, const std::vector<std::pair<fs::path, std::string>>& inputs)
{
  std::ostringstream os;
  os << "status " << m.status << '\n';
  if (!m.failed_stage.empty())
    os << "failed_stage " << m.failed_stage << '\n';
  os << "input_hash " << m.input_hash << '\n';
  for (const auto& [path, hash] : inputs)
    os << "input " << hash << ' ' << path.string() << '\n';
  for (const auto& [method, path] : m.model_files)
    os << "model " << method << ' ' << path.generic_string() << '\n';
  for (const auto& p : m.outputs)
    os << "output " << p.generic_string() << '\n';
  for (const auto& [what, secs] : m.timings) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", secs);
    os << "timing " << what << ' ' << buf << '\n';
  }
  os << "\n[config]\n" << m.config_snapshot;
  return os.str();
}

data::DataMatrix scaled_for_model(const SavedModel& model, const data::DataMatrix& raw)
{
  return data::apply_scaler(model.scaler, raw);
}

} // namespace

RunManifest run_experiment(const ExperimentConfig& config, const fs::path& out_dir)
{
  config.validate();
  RunManifest manifest;
  manifest.config_snapshot = render_config(config);
  std::vector<std::pair<fs::path, std::string>> inputs;

  make_dirs(out_dir);
  make_dirs(out_dir / "models");
  make_dirs(out_dir / "series");

  auto fail = [&](const std::string& stage) {
    manifest.status = "failed";
    manifest.failed_stage = stage;
    try {
      write_file(out_dir / "manifest.txt", render_manifest(manifest, inputs));
    } catch (const IoError&) {
      // the original failure is more informative than this one
    }
  };

  const auto t0 = std::chrono::steady_clock::now();
  PreparedData data;
  try {
    data = prepare_data(config);
  } catch (...) {
    fail("prepare-data");
    rethrow_in_stage("prepare-data");
  }
  std::string hash_input = manifest.config_snapshot;
  for (const auto& p : data.input_files) {
    const auto h = git_blob_hash(read_file(p));
    inputs.emplace_back(p, h);
    hash_input += "\n" + h;
  }
  manifest.input_hash = git_blob_hash(hash_input);
  manifest.timings.emplace_back(
    "prepare-data", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());

  std::vector<MethodResult> results;
  std::vector<std::string> fault_ids;
  for (const auto& f : data.faults)
    fault_ids.push_back(f.id);

  for (const auto& method : config.methods) {
    const std::string stage = "method " + method;
    try {
      const auto t = std::chrono::steady_clock::now();
      MethodResult r = run_method(method, config, data);
      SavedModel saved{ r.detector->archive(), data.scaler, data.raw_train.roles(), r.thresholds };
      const fs::path rel = fs::path("models") / (sanitize(method) + ".model");
      save_model(saved, out_dir / rel);
      manifest.model_files.emplace_back(method, rel);
      for (const auto& f : data.faults) {
        const fs::path srel = fs::path("series") / (sanitize(f.id) + "_" + sanitize(method) + ".csv");
        write_file(out_dir / srel, series_table(r.series.at(f.id), r.thresholds, f.data.rows()));
        manifest.outputs.push_back(srel);
      }
      manifest.timings.emplace_back(
        method, std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count());
      results.push_back(std::move(r));
    } catch (...) {
      fail(stage);
      rethrow_in_stage(stage);
    }
  }

  try {
    write_file(out_dir / "metrics.csv", metrics_table(results));
    write_file(out_dir / "report.csv", report_table(results, fault_ids));
    write_file(out_dir / "thresholds.csv", thresholds_table(results));
    manifest.outputs.insert(manifest.outputs.begin(),
                            { "metrics.csv", "report.csv", "thresholds.csv" });
    write_file(out_dir / "manifest.txt", render_manifest(manifest, inputs));
  } catch (...) {
    fail("write-outputs");
    rethrow_in_stage("write-outputs");
  }
  return manifest;
}

std::vector<fs::path> generate_files(const ExperimentConfig& config, const fs::path& out_dir)
{
  if (config.source != DataSource::generator)
    throw ConfigError("generate: the config's data source is not the generator");
  const PreparedData d = prepare_data(config);
  make_dirs(out_dir);
  std::vector<fs::path> written{ out_dir / "train.csv" };
  data::write_csv(written.back(), d.raw_train);
  for (const auto& f : d.raw_faults) {
    written.push_back(out_dir / (sanitize(f.id) + ".csv"));
    data::write_csv(written.back(), f.data);
  }
  return written;
}

std::vector<fs::path> score_file(const fs::path& model_path,
                                 const fs::path& csv_path,
                                 const fs::path& out_dir,
                                 std::optional<Index> fault_start,
                                 const std::string& fault_id)
{
  const SavedModel model = load_model(model_path);
  auto detector = baselines::restore_detector(model.archive);

  // quality columns are optional at scoring time; keep those present
  const std::string text = read_file(csv_path);
  std::string header = text.substr(0, text.find('\n'));
  if (header.rfind("\xEF\xBB\xBF", 0) == 0)
    header.erase(0, 3);
  std::set<std::string> present;
  for (const auto& h : split_list(header))
    present.insert(h);
  data::CsvSchema schema;
  for (std::size_t j = 0; j < model.scaler.names.size(); ++j) {
    const auto& n = model.scaler.names[j];
    if (model.roles[j] == data::Role::process)
      schema.process.push_back(n);
    else if (present.count(n))
      schema.quality.push_back(n);
  }
  const auto raw = data::parse_csv(text, schema, csv_path.string());
  const auto scaled = scaled_for_model(model, raw);

  make_dirs(out_dir);
  const auto series = baselines::score(*detector, scaled);
  const std::string tag = sanitize(fault_id.empty() ? std::string("scored") : fault_id);
  std::vector<fs::path> written{ out_dir / (tag + "_" + sanitize(detector->id()) + ".csv") };
  write_file(written.back(), series_table(series, model.thresholds, scaled.rows()));
  if (fault_start) {
    MethodResult r;
    r.method = detector->id();
    r.thresholds = model.thresholds;
    r.reports = baselines::detect(*detector, scaled, model.thresholds, *fault_start, tag);
    written.push_back(out_dir / "metrics.csv");
    std::vector<MethodResult> one;
    one.push_back(std::move(r));
    write_file(written.back(), metrics_table(one));
  }
  return written;
}

std::vector<baselines::SweepRow> run_sweep(const ExperimentConfig& config)
{
  config.validate();
  const PreparedData d = prepare_data(config);
  return baselines::sweep_negative_feedback(d.train, d.faults, config.sweep_rates,
                                            config.settings_for(baselines::feedback_id(0)),
                                            config.confidence);
}

fs::path sweep_experiment(const ExperimentConfig& config, const fs::path& out_dir)
{
  const auto rows = run_sweep(config);
  make_dirs(out_dir);
  const fs::path path = out_dir / "sweep.csv";
  write_file(path, sweep_table(rows));
  return path;
}

int exit_code_for(const std::exception& e)
{
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const ContractError*>(&e))
    return 1;
  if (dynamic_cast<const DataError*>(&e) || dynamic_cast<const UnavailableError*>(&e) ||
      dynamic_cast<const ShapeError*>(&e))
    return 2;
  if (dynamic_cast<const TrainingError*>(&e) || dynamic_cast<const SingularError*>(&e))
    return 3;
  if (dynamic_cast<const IoError*>(&e))
    return 4;
  return 3;
}

} // namespace tsuae::cli
