#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "tsuae/numcore.hpp"

namespace tsuae::data {

using numcore::Index;
using numcore::Matrix;
using numcore::Vector;

enum class Role
{
  process,
  quality
};

const char* to_string(Role role);

//! Sample table (one sample per row) whose columns are tagged as process or
//! quality variables.
class DataMatrix
{
public:
  DataMatrix() = default;
  DataMatrix(Matrix values, std::vector<std::string> names, std::vector<Role> roles);

  const Matrix& values() const { return values_; }
  Matrix& values() { return values_; }
  const std::vector<std::string>& names() const { return names_; }
  const std::vector<Role>& roles() const { return roles_; }

  Index rows() const { return values_.rows(); }
  Index cols() const { return values_.cols(); }

  std::vector<Index> columns_with(Role role) const;
  Index process_count() const;
  Index quality_count() const;

  //! Process columns, in table order.
  Matrix process() const;
  //! Quality columns, in table order. Empty (n x 0) when none.
  Matrix quality() const;
  //! [process, quality]: the teacher input layout.
  Matrix combined() const;
  std::vector<std::string> combined_names() const;

  //! Throws DataError when no column has this name.
  Index column_index(const std::string& name) const;
  //! Keeps the named columns, in the given order.
  DataMatrix select(const std::vector<std::string>& names) const;

private:
  Matrix values_;
  std::vector<std::string> names_;
  std::vector<Role> roles_;
};

// ---------------------------------------------------------------------------
// numerical benchmark

struct GeneratorSpec
{
  Index latent_dim = 6;
  Index process_dim = 20;
  Index quality_dim = 1;
  double noise_variance = 0.1;
  Index samples = 1000;
  std::uint64_t seed = 1;
};

//! The simulated plant: one mixing matrix W (process_dim x latent_dim) drawn
//! from the seed, shared by every series generated from it.
class NumericalPlant
{
public:
  explicit NumericalPlant(const GeneratorSpec& spec);

  const GeneratorSpec& spec() const { return spec_; }
  const Matrix& mixing() const { return mixing_; }

  //! Draws `n` fresh samples (new latent and noise draws) from the plant.
  DataMatrix sample(Index n);

  //! Deterministic map from explicit latent (n x latent_dim) and noise
  //! (n x process_dim) draws to a data table.
  DataMatrix evaluate(const Matrix& latent, const Matrix& noise) const;

private:
  GeneratorSpec spec_;
  Matrix mixing_;
  numcore::Rng rng_;
};

//! y = (z1 + z2)^2 + exp((z3 - z4) / 2) + sin(z5) for one latent row.
double quality_response(const Eigen::Ref<const Vector>& latent);

//! Training series of `spec.samples` rows.
DataMatrix generate_numerical(const GeneratorSpec& spec);

struct Benchmark
{
  Matrix mixing;
  DataMatrix train;
  DataMatrix fault1_base; //!< fresh normal draws, not yet faulted
  DataMatrix fault2_base;
};

//! Training series and two fault-series bases from the same plant.
Benchmark generate_benchmark(const GeneratorSpec& spec);

// ---------------------------------------------------------------------------
// faults

struct FaultSpec
{
  std::string column;     //!< column name, e.g. "x10" or "y1"
  double magnitude = 0;
  Index start_index = 1;  //!< 1-based ordinal of the first faulty sample
};

//! Step fault: adds `magnitude` to `column` for every sample with ordinal
//! >= start_index.
DataMatrix inject_fault(const DataMatrix& series, const FaultSpec& fault);

// ---------------------------------------------------------------------------
// standardization

struct Scaler
{
  std::vector<std::string> names;
  Vector mean;
  Vector stddev;

  bool operator==(const Scaler&) const = default;
};

Scaler fit_scaler(const DataMatrix& train);
DataMatrix apply_scaler(const Scaler& scaler, const DataMatrix& data);
DataMatrix inverse_scaler(const Scaler& scaler, const DataMatrix& data);

// ---------------------------------------------------------------------------
// CSV

struct CsvSchema
{
  std::vector<std::string> process;
  std::vector<std::string> quality;
};

//! Reads a comma-separated file with a mandatory header row. Only the
//! columns named in `schema` are kept, process columns first.
DataMatrix load_csv(const std::filesystem::path& path, const CsvSchema& schema);
DataMatrix parse_csv(const std::string& text, const CsvSchema& schema,
                     const std::string& source = "<memory>");

//! Writes all columns, shortest round-trip decimal formatting.
void write_csv(const std::filesystem::path& path, const DataMatrix& data);

} // namespace tsuae::data
