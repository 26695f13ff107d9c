#pragma once

// Batch command-line front end: ingest, eof, fit, study, evaluate.

#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hss/config.hpp"
#include "hss/core.hpp"
#include "hss/sampler.hpp"

namespace hss::cli {

inline constexpr const char* kVersion = "0.1.0";

enum ExitCode : int { kOk = 0, kRuntimeError = 1, kUsageError = 2 };

/// Parses argv and runs one command; returns the process exit code.
int run(int argc, const char* const* argv);

/// Lower-case hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);

/// Counts and scores aligned on shared boxes and years.
struct FitInputs {
  core::CountField y;
  core::ScoreSet xi;
  Eigen::MatrixXd distances;
  std::vector<int> box_ids;
};

/// Keeps boxes present in the counts and valid in the grid, and the years of
/// the scores (which must all appear in the counts). Reduced variants fit
/// the total over strength classes.
FitInputs load_fit_inputs(const std::filesystem::path& counts, const std::filesystem::path& scores,
                          const std::filesystem::path& grid, config::Variant variant);

/// Long format `chain,iteration,param,index1,index2,index3,index4,value`.
/// Coefficients use index1 = group, index2 = box id, index3 = trimester;
/// alpha, pi and sigma use index1 = group; iterations are 1-based.
void write_chains_csv(const std::filesystem::path& path, const std::vector<sampler::PosteriorChain>& chains,
                      const std::vector<int>& box_ids);

/// Inverse of write_chains_csv given the fit dimensions.
std::vector<sampler::PosteriorChain> read_chains_csv(const std::filesystem::path& path, const FitInputs& inputs,
                                                     config::Variant variant);

}  // namespace hss::cli
