#pragma once

#include <filesystem>
#include <istream>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "evalverse/core.hpp"

namespace evalverse {

struct ResultQuery {
  // Empty means "all".
  std::set<std::string> models;
  BenchmarkSet benchmarks;
  // Keep only the newest record per (model, benchmark).
  bool latest_only = true;
};

struct DatabaseOptions {
  // fsync files and directories before put_* returns.
  bool sync = true;
};

// File-backed store for score records and artifacts.
//
// Layout under the root:
//   results/<url-encoded model>/<benchmark>/<job_id>.json
//   artifacts/<url-encoded key>
//
// Result files are append-only: a record is never overwritten, and newer runs
// of the same (model, benchmark) live next to older ones. Readers pick the
// newest by created_at, then job_id.
class Database {
 public:
  explicit Database(std::filesystem::path root, DatabaseOptions options = {});

  const std::filesystem::path& root() const noexcept { return root_; }

  // Throws ScaleViolation/InvalidArgument for invalid records,
  // DuplicateRecord when the job already stored this (model, benchmark),
  // IOFailure otherwise.
  void put_result(const ScoreRecord& record);

  // Ordered by model, then benchmark, then (created_at, job_id).
  std::vector<ScoreRecord> get_results(const ResultQuery& query = {}) const;

  // Distinct models with at least one record, sorted.
  std::vector<std::string> list_models() const;

  // Keys are free-form ("models/org/name", "data/mmlu"); empty keys and keys
  // with a ".." segment throw InvalidKey.
  void put_artifact(std::string_view key, std::string_view bytes);
  void put_artifact(std::string_view key, std::istream& in);
  std::optional<std::string> get_artifact(std::string_view key) const;
  // Local path of a stored artifact, if present.
  std::optional<std::filesystem::path> artifact_path(std::string_view key) const;

 private:
  std::filesystem::path results_dir() const { return root_ / "results"; }
  std::filesystem::path artifacts_dir() const { return root_ / "artifacts"; }

  std::filesystem::path root_;
  DatabaseOptions options_;
};

// Percent-encodes everything but [A-Za-z0-9-._~]; "." and ".." are encoded
// fully so the result is always a safe single path component.
std::string url_encode(std::string_view s);
std::string url_decode(std::string_view s);

}  // namespace evalverse
