#pragma once

#include <cstdint>
#include <exception>
#include <filesystem>
#include <string>

#include "protoadapt/adaptation.hpp"
#include "protoadapt/keyval.hpp"

namespace protoadapt {

/// Process exit codes of the command-line tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitInternal = 1,
  kExitUsage = 2,
  kExitEstimation = 3,
  kExitSourceAccess = 4,
  kExitDivergence = 5,
};

int exit_code_for(const std::exception& e);

/// `data` may name a split directory or a dataset root; for a root the named
/// split below it is returned.
std::filesystem::path resolve_split(const std::filesystem::path& data, const std::string& split);

/// Canonical form used for path comparisons; works for paths that no longer exist.
std::filesystem::path normalized_path(const std::filesystem::path& p);

/// True when one path equals or contains the other.
bool paths_overlap(const std::filesystem::path& a, const std::filesystem::path& b);

/// Sidecar written next to a GMM1 file: where the mixture came from and the
/// source-phase diagnostics, so adaptation never needs the source data.
struct GmmManifest {
  std::filesystem::path source_dir;
  std::uint64_t source_images_fingerprint = 0;
  double tau_fit = 0.0;
  SourceSummary summary;
};

std::filesystem::path gmm_manifest_path(const std::filesystem::path& gmm_file);
void save_gmm_manifest(const std::filesystem::path& gmm_file, const GmmManifest& m);
GmmManifest load_gmm_manifest(const std::filesystem::path& gmm_file);

/// Throws SourceAccessError when `target_dir` overlaps the recorded source
/// directory, holds the source images under another name, or carries labels.
void check_source_free(const std::filesystem::path& target_dir, const GmmManifest& m);

}  // namespace protoadapt
