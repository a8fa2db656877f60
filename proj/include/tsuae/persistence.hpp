#pragma once

// Versioned text format for fitted detectors. Every floating-point value is
// written as a hexadecimal float, so a load reproduces the saved bits.

#include <filesystem>
#include <string>

#include "tsuae/baselines.hpp"
#include "tsuae/data.hpp"
#include "tsuae/monitor.hpp"

namespace tsuae::cli {

inline constexpr int model_format_version = 1;

//! Everything needed to score new raw data with a fitted method.
struct SavedModel
{
  baselines::Archive archive;
  data::Scaler scaler;
  std::vector<data::Role> roles; //!< role of each scaler column
  monitor::ThresholdPair thresholds;
};

std::string serialize_model(const SavedModel& model);
//! Throws ChecksumError for corrupted or truncated text and
//! UnsupportedVersionError for other format versions.
SavedModel deserialize_model(const std::string& text);

void save_model(const SavedModel& model, const std::filesystem::path& path);
SavedModel load_model(const std::filesystem::path& path);

} // namespace tsuae::cli
