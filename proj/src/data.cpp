#include "tsuae/data.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <system_error>

namespace tsuae::data {

const char* to_string(Role role)
{
  return role == Role::process ? "process" : "quality";
}

DataMatrix::DataMatrix(Matrix values, std::vector<std::string> names, std::vector<Role> roles)
  : values_(std::move(values))
  , names_(std::move(names))
  , roles_(std::move(roles))
{
  if (static_cast<Index>(names_.size()) != values_.cols() ||
      static_cast<Index>(roles_.size()) != values_.cols())
    throw ShapeError("DataMatrix: " + std::to_string(values_.cols()) +
                     " columns but " + std::to_string(names_.size()) +
                     " names and " + std::to_string(roles_.size()) + " roles");
}

std::vector<Index> DataMatrix::columns_with(Role role) const
{
  std::vector<Index> idx;
  for (std::size_t c = 0; c < roles_.size(); ++c)
    if (roles_[c] == role)
      idx.push_back(static_cast<Index>(c));
  return idx;
}

Index DataMatrix::process_count() const
{
  return static_cast<Index>(columns_with(Role::process).size());
}

Index DataMatrix::quality_count() const
{
  return static_cast<Index>(columns_with(Role::quality).size());
}

Matrix DataMatrix::process() const
{
  return values_(Eigen::all, columns_with(Role::process));
}

Matrix DataMatrix::quality() const
{
  return values_(Eigen::all, columns_with(Role::quality));
}

Matrix DataMatrix::combined() const
{
  auto idx = columns_with(Role::process);
  auto q = columns_with(Role::quality);
  idx.insert(idx.end(), q.begin(), q.end());
  return values_(Eigen::all, idx);
}

std::vector<std::string> DataMatrix::combined_names() const
{
  std::vector<std::string> out;
  for (Index c : columns_with(Role::process))
    out.push_back(names_[c]);
  for (Index c : columns_with(Role::quality))
    out.push_back(names_[c]);
  return out;
}

Index DataMatrix::column_index(const std::string& name) const
{
  for (std::size_t c = 0; c < names_.size(); ++c)
    if (names_[c] == name)
      return static_cast<Index>(c);
  throw DataError("unknown column '" + name + "'");
}

DataMatrix DataMatrix::select(const std::vector<std::string>& names) const
{
  std::vector<Index> idx;
  std::vector<Role> roles;
  for (const auto& n : names) {
    idx.push_back(column_index(n));
    roles.push_back(roles_[idx.back()]);
  }
  return DataMatrix(values_(Eigen::all, idx), names, roles);
}

// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> generated_names(const GeneratorSpec& spec)
{
  std::vector<std::string> names;
  for (Index i = 1; i <= spec.process_dim; ++i)
    names.push_back("x" + std::to_string(i));
  for (Index i = 1; i <= spec.quality_dim; ++i)
    names.push_back("y" + std::to_string(i));
  return names;
}

std::vector<Role> generated_roles(const GeneratorSpec& spec)
{
  std::vector<Role> roles(static_cast<std::size_t>(spec.process_dim), Role::process);
  roles.insert(roles.end(), static_cast<std::size_t>(spec.quality_dim), Role::quality);
  return roles;
}

void validate(const GeneratorSpec& spec)
{
  if (spec.latent_dim < 5)
    throw ConfigError("generator: latent dimension must be at least 5 (the "
                      "quality response reads z1..z5), got " +
                      std::to_string(spec.latent_dim));
  if (spec.process_dim < 1 || spec.quality_dim < 1 || spec.samples < 1)
    throw ConfigError("generator: dimensions and sample count must be positive");
  if (!(spec.noise_variance >= 0))
    throw ConfigError("generator: noise variance must be nonnegative");
}

} // namespace

double quality_response(const Eigen::Ref<const Vector>& z)
{
  const double s = z[0] + z[1];
  return s * s + std::exp((z[2] - z[3]) / 2.0) + std::sin(z[4]);
}

NumericalPlant::NumericalPlant(const GeneratorSpec& spec)
  : spec_(spec)
  , rng_(spec.seed)
{
  validate(spec_);
  std::normal_distribution<double> normal(0.0, 1.0);
  mixing_.resize(spec_.process_dim, spec_.latent_dim);
  for (Index r = 0; r < mixing_.rows(); ++r)
    for (Index c = 0; c < mixing_.cols(); ++c)
      mixing_(r, c) = normal(rng_);
}

DataMatrix NumericalPlant::evaluate(const Matrix& latent, const Matrix& noise) const
{
  if (latent.cols() != spec_.latent_dim || noise.cols() != spec_.process_dim ||
      latent.rows() != noise.rows())
    throw ShapeError("NumericalPlant::evaluate: latent " +
                     shape_str(latent.rows(), latent.cols()) + ", noise " +
                     shape_str(noise.rows(), noise.cols()));
  const Index n = latent.rows();
  Matrix values(n, spec_.process_dim + spec_.quality_dim);
  values.leftCols(spec_.process_dim) = latent * mixing_.transpose() + noise;
  for (Index i = 0; i < n; ++i) {
    const double y = quality_response(latent.row(i).transpose());
    values.rightCols(spec_.quality_dim).row(i).setConstant(y);
  }
  return DataMatrix(std::move(values), generated_names(spec_), generated_roles(spec_));
}

DataMatrix NumericalPlant::sample(Index n)
{
  std::normal_distribution<double> normal(0.0, 1.0);
  const double noise_sd = std::sqrt(spec_.noise_variance);
  Matrix latent(n, spec_.latent_dim);
  Matrix noise(n, spec_.process_dim);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < spec_.latent_dim; ++j)
      latent(i, j) = normal(rng_);
    for (Index j = 0; j < spec_.process_dim; ++j)
      noise(i, j) = noise_sd * normal(rng_);
  }
  return evaluate(latent, noise);
}

DataMatrix generate_numerical(const GeneratorSpec& spec)
{
  NumericalPlant plant(spec);
  return plant.sample(spec.samples);
}

Benchmark generate_benchmark(const GeneratorSpec& spec)
{
  NumericalPlant plant(spec);
  Benchmark b;
  b.mixing = plant.mixing();
  b.train = plant.sample(spec.samples);
  b.fault1_base = plant.sample(spec.samples);
  b.fault2_base = plant.sample(spec.samples);
  return b;
}

// ---------------------------------------------------------------------------

DataMatrix inject_fault(const DataMatrix& series, const FaultSpec& fault)
{
  const Index col = series.column_index(fault.column);
  if (fault.start_index < 1 || fault.start_index > series.rows())
    throw DataError("inject_fault: start index " + std::to_string(fault.start_index) +
                    " outside series of length " + std::to_string(series.rows()));
  DataMatrix out = series;
  const Index first = fault.start_index - 1;
  out.values().col(col).tail(series.rows() - first).array() += fault.magnitude;
  return out;
}

// ---------------------------------------------------------------------------

Scaler fit_scaler(const DataMatrix& train)
{
  if (train.rows() < 2)
    throw DataError("fit_scaler: need at least 2 samples, got " +
                    std::to_string(train.rows()));
  Scaler s;
  s.names = train.names();
  const Matrix& x = train.values();
  s.mean = x.colwise().mean().transpose();
  s.stddev.resize(x.cols());
  for (Index c = 0; c < x.cols(); ++c) {
    const double var =
      (x.col(c).array() - s.mean[c]).square().sum() / static_cast<double>(x.rows() - 1);
    if (!(var > 0) || !std::isfinite(var))
      throw DataError("fit_scaler: column '" + train.names()[c] +
                      "' has zero variance");
    s.stddev[c] = std::sqrt(var);
  }
  return s;
}

namespace {

std::vector<Index> scaler_columns(const Scaler& scaler, const DataMatrix& data)
{
  std::vector<Index> idx;
  for (const auto& name : data.names()) {
    Index found = -1;
    for (std::size_t k = 0; k < scaler.names.size(); ++k)
      if (scaler.names[k] == name)
        found = static_cast<Index>(k);
    if (found < 0)
      throw DataError("scaler has no statistics for column '" + name + "'");
    idx.push_back(found);
  }
  return idx;
}

} // namespace

DataMatrix apply_scaler(const Scaler& scaler, const DataMatrix& data)
{
  const auto idx = scaler_columns(scaler, data);
  DataMatrix out = data;
  for (Index c = 0; c < data.cols(); ++c)
    out.values().col(c) =
      (data.values().col(c).array() - scaler.mean[idx[c]]) / scaler.stddev[idx[c]];
  return out;
}

DataMatrix inverse_scaler(const Scaler& scaler, const DataMatrix& data)
{
  const auto idx = scaler_columns(scaler, data);
  DataMatrix out = data;
  for (Index c = 0; c < data.cols(); ++c)
    out.values().col(c) =
      data.values().col(c).array() * scaler.stddev[idx[c]] + scaler.mean[idx[c]];
  return out;
}

// ---------------------------------------------------------------------------

namespace {

std::string trim(std::string_view s)
{
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos)
    return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_fields(const std::string& line)
{
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.push_back(trim(std::string_view(line).substr(start, pos - start)));
    if (pos == std::string::npos)
      break;
    start = pos + 1;
  }
  return out;
}

} // namespace

DataMatrix parse_csv(const std::string& text, const CsvSchema& schema, const std::string& source)
{
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;

  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 && line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0)
      line.erase(0, 3);
    if (!trim(line).empty()) {
      header = split_fields(line);
      break;
    }
  }
  if (header.empty())
    throw DataError(source + ": missing header row");

  std::map<std::string, std::size_t> position;
  for (std::size_t c = 0; c < header.size(); ++c)
    position.emplace(header[c], c);

  std::vector<std::string> names;
  std::vector<Role> roles;
  std::vector<std::size_t> source_cols;
  auto want = [&](const std::vector<std::string>& list, Role role) {
    for (const auto& n : list) {
      auto it = position.find(n);
      if (it == position.end())
        throw DataError(source + ": schema column '" + n + "' not found in header");
      names.push_back(n);
      roles.push_back(role);
      source_cols.push_back(it->second);
    }
  };
  want(schema.process, Role::process);
  want(schema.quality, Role::quality);
  if (names.empty())
    throw DataError(source + ": schema selects no columns");

  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty())
      continue;
    const auto fields = split_fields(line);
    if (fields.size() != header.size())
      throw DataError(source + ": line " + std::to_string(line_no) + " has " +
                      std::to_string(fields.size()) + " fields, header has " +
                      std::to_string(header.size()));
    std::vector<double> row;
    row.reserve(source_cols.size());
    for (std::size_t k = 0; k < source_cols.size(); ++k) {
      const std::string& f = fields[source_cols[k]];
      double v = 0;
      const char* first = f.data();
      const char* last = f.data() + f.size();
      if (!f.empty() && *first == '+')
        ++first;
      auto [ptr, ec] = std::from_chars(first, last, v);
      if (f.empty() || ec != std::errc() || ptr != last || !std::isfinite(v))
        throw DataError(source + ": line " + std::to_string(line_no) + ", column '" +
                        names[k] + "': cannot parse '" + f + "' as a number");
      row.push_back(v);
    }
    rows.push_back(std::move(row));
  }

  Matrix values(static_cast<Index>(rows.size()), static_cast<Index>(names.size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < names.size(); ++c)
      values(static_cast<Index>(r), static_cast<Index>(c)) = rows[r][c];
  return DataMatrix(std::move(values), std::move(names), std::move(roles));
}

DataMatrix load_csv(const std::filesystem::path& path, const CsvSchema& schema)
{
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_csv(buf.str(), schema, path.string());
}

void write_csv(const std::filesystem::path& path, const DataMatrix& data)
{
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw IoError("cannot write '" + path.string() + "'");
  for (std::size_t c = 0; c < data.names().size(); ++c)
    out << (c ? "," : "") << data.names()[c];
  out << '\n';
  char buf[64];
  for (Index r = 0; r < data.rows(); ++r) {
    for (Index c = 0; c < data.cols(); ++c) {
      auto res = std::to_chars(buf, buf + sizeof(buf), data.values()(r, c));
      if (c)
        out << ',';
      out.write(buf, res.ptr - buf);
    }
    out << '\n';
  }
  if (!out)
    throw IoError("failed writing '" + path.string() + "'");
}

} // namespace tsuae::data
