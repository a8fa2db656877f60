#pragma once

// Config-driven experiment runner behind the command-line verbs.
//
// Config files are INI-style:
//
//   [experiment]  seed, confidence, methods, fault_units
//   [data]        source = generator | csv, generator sizes, CSV paths and
//                 the process/quality column lists
//   [fault.<id>]  column, magnitude, start (and file for CSV sources)
//   [model]       shared network settings; [model.<method>] overrides
//   [pca] [pls] [rr] [sweep]

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "tsuae/baselines.hpp"
#include "tsuae/data.hpp"
#include "tsuae/monitor.hpp"
#include "tsuae/persistence.hpp"

namespace tsuae::cli {

enum class DataSource
{
  generator,
  csv
};

//! Whether fault magnitudes are expressed in standardized units (multiples
//! of the training standard deviation of the target column) or raw units.
enum class FaultUnits
{
  standardized,
  raw
};

struct FaultDefinition
{
  std::string id;
  std::optional<data::FaultSpec> injection; //!< step added to the series
  std::filesystem::path file;               //!< CSV sources only
  Index start_index = 1;                    //!< first faulty sample (1-based)
};

struct ExperimentConfig
{
  std::uint64_t seed = 1;
  double confidence = 0.99;
  std::vector<std::string> methods;
  FaultUnits fault_units = FaultUnits::standardized;

  DataSource source = DataSource::generator;
  data::GeneratorSpec generator;
  std::filesystem::path train_file;
  data::CsvSchema schema;
  std::vector<FaultDefinition> faults;

  baselines::MethodSettings settings;
  //! Per-method network settings, keyed by method id ("tsuae", "sae", ...;
  //! "tssae-nf" covers every feedback rate).
  std::map<std::string, ModelConfig> model_overrides;
  std::vector<double> sweep_rates{ 0.0, 0.05, 0.1, 0.15, 0.2 };

  //! Throws ConfigError on the first violated constraint.
  void validate() const;
  //! Network settings used for `method`, with the experiment seed applied.
  baselines::MethodSettings settings_for(const std::string& method) const;
};

//! Parses INI text. Relative paths resolve against `base_dir`.
ExperimentConfig parse_config(const std::string& text,
                              const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);
//! Built-in configuration for the numerical benchmark with every method.
ExperimentConfig default_config();
//! Canonical INI rendering of the effective configuration. Parsing it back
//! gives an equal configuration.
std::string render_config(const ExperimentConfig& config);

struct PreparedData
{
  data::Scaler scaler;
  data::DataMatrix raw_train;
  data::DataMatrix train; //!< standardized
  std::vector<baselines::FaultSeries> faults; //!< standardized, faults injected
  std::vector<baselines::FaultSeries> raw_faults;
  std::vector<std::filesystem::path> input_files;
};

PreparedData prepare_data(const ExperimentConfig& config);

struct MethodResult
{
  std::string method;
  std::unique_ptr<baselines::Detector> detector;
  monitor::ThresholdPair thresholds;
  std::vector<monitor::DetectionReport> reports;
  std::map<std::string, baselines::MonitoredSeries> series; //!< by fault id
  double fit_seconds = 0;
};

struct ExperimentResult
{
  PreparedData data;
  std::vector<MethodResult> methods;
};

//! Offline phase (fit and thresholds) then online phase (score every fault
//! series) for each configured method, entirely in memory.
ExperimentResult run_methods(const ExperimentConfig& config);
MethodResult run_method(const std::string& method,
                        const ExperimentConfig& config,
                        const PreparedData& data);

// ---------------------------------------------------------------------------
// output tables

//! One row per method x fault x monitored subspace, 4 decimals, sorted by
//! method, fault, subspace.
std::string metrics_table(const std::vector<MethodResult>& results);
//! Method x fault grid of "FAR/FDR" cells, "/" for unmonitored subspaces.
std::string report_table(const std::vector<MethodResult>& results,
                         const std::vector<std::string>& fault_ids);
std::string thresholds_table(const std::vector<MethodResult>& results);
//! sample_index, D_x, J_x_th, D_y, J_y_th; empty cells where a subspace is
//! not monitored.
std::string series_table(const baselines::MonitoredSeries& series,
                         const monitor::ThresholdPair& thresholds,
                         Index rows);

// ---------------------------------------------------------------------------
// file-level verbs

struct RunManifest
{
  std::string status = "complete"; //!< "complete" or "failed"
  std::string failed_stage;
  std::string config_snapshot;
  std::string input_hash; //!< SHA-1 over the config snapshot and input blobs
  std::vector<std::pair<std::string, std::filesystem::path>> model_files;
  std::vector<std::filesystem::path> outputs;
  std::vector<std::pair<std::string, double>> timings;
};

//! Git blob id: SHA-1 of "blob <size>\0<content>", lowercase hex.
std::string git_blob_hash(const std::string& content);

RunManifest run_experiment(const ExperimentConfig& config, const std::filesystem::path& out_dir);

//! Writes train.csv and one CSV per fault series, in raw units.
std::vector<std::filesystem::path> generate_files(const ExperimentConfig& config,
                                                  const std::filesystem::path& out_dir);

//! Loads a saved model, scores a raw CSV and writes the series file (and
//! metrics when `fault_start` is given). Returns the written paths.
std::vector<std::filesystem::path> score_file(const std::filesystem::path& model_path,
                                              const std::filesystem::path& csv_path,
                                              const std::filesystem::path& out_dir,
                                              std::optional<Index> fault_start,
                                              const std::string& fault_id);

std::vector<baselines::SweepRow> run_sweep(const ExperimentConfig& config);
std::string sweep_table(const std::vector<baselines::SweepRow>& rows);
std::filesystem::path sweep_experiment(const ExperimentConfig& config,
                                       const std::filesystem::path& out_dir);

//! Process exit code for an exception escaping a verb: 1 config, 2 data,
//! 3 training, 4 I/O.
int exit_code_for(const std::exception& e);

} // namespace tsuae::cli
