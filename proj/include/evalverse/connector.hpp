#pragma once

// Benchmark runners: the registry mapping each benchmark to the program that
// evaluates it, the argument templating used to invoke it, the deterministic
// fixture runner, and shard merging.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "evalverse/core.hpp"
#include "evalverse/serialization.hpp"

namespace evalverse {

inline constexpr std::string_view kFixtureExecutable = "fixture";

struct RunnerSpec {
  Benchmark benchmark = Benchmark::arc;
  // Program path (PATH lookup applies when it has no '/'), or "fixture".
  std::string executable;
  // Tokens may embed {model} {num_fewshot} {engine} {dtype} {shard_index}
  // {shard_count} {output_path}; {model} and {output_path} appear exactly once.
  std::vector<std::string> arg_template;

  bool is_fixture() const noexcept { return executable == kFixtureExecutable; }
};

// Throws InvalidTemplate.
void validate_runner_spec(const RunnerSpec& spec);

// Fixture runner with the minimal template.
RunnerSpec fixture_runner_spec(Benchmark b);

// Runner config file: [{"benchmark": "mmlu", "executable": "...", "args": [...]}].
std::vector<RunnerSpec> runner_specs_from_json(const Json& j);
std::vector<RunnerSpec> load_runner_specs(const std::filesystem::path& path);

struct RunRequest {
  std::string job_id;
  ModelRef model;
  Benchmark benchmark = Benchmark::arc;
  EvalSettings settings;  // few-shot already resolved for `benchmark`
  int shard_index = 0;
  int shard_count = 1;
};

struct PartialScore {
  Benchmark benchmark = Benchmark::arc;
  int shard_index = 0;
  double score = 0.0;
  // Zero only for a shard that received no samples; such parts carry no
  // weight when merged.
  std::int64_t sample_count = 0;
  Subscores subscores;
};

struct MergedScore {
  double score = 0.0;
  std::int64_t sample_count = 0;
  Subscores subscores;
};

class RunnerRegistry {
 public:
  // Re-registering a benchmark replaces its spec. Throws InvalidTemplate.
  void register_runner(RunnerSpec spec);
  // Throws UnknownBenchmark.
  RunnerSpec resolve(Benchmark b) const;
  bool contains(Benchmark b) const;
  BenchmarkSet registered() const;

 private:
  mutable std::shared_mutex mutex_;
  std::map<Benchmark, RunnerSpec> specs_;
};

// Substitutes every placeholder. Throws BenchmarkMismatch.
std::vector<std::string> build_invocation(const RunRequest& req, const RunnerSpec& spec,
                                          const std::filesystem::path& output_path);

// Samples assigned to shard `index` of `count` over `total`:
// total*(index+1)/count - total*index/count in integer arithmetic.
std::int64_t shard_sample_count(std::int64_t total, int index, int count);

class FixtureManifest {
 public:
  struct Entry {
    double score = 0.0;
    std::int64_t sample_count = 1;
    Subscores subscores;
  };

  // Throws ScaleViolation / InvalidArgument on bad entries.
  void add(std::string model, Benchmark benchmark, Entry entry);
  const Entry* find(const std::string& model, Benchmark benchmark) const;

  std::size_t size() const noexcept { return entries_.size(); }
  const std::map<std::pair<std::string, Benchmark>, Entry>& entries() const noexcept {
    return entries_;
  }

  // [{"model", "benchmark", "score", "sample_count", "subscores"?}]
  static FixtureManifest from_json(const Json& j);
  static FixtureManifest load(const std::filesystem::path& path);

 private:
  std::map<std::pair<std::string, Benchmark>, Entry> entries_;
};

// Deterministic stand-in for a real evaluation. Throws FixtureMiss.
PartialScore fixture_run(const RunRequest& req, const FixtureManifest& manifest);

// Sample-weighted mean of shard results. Throws EmptyMerge, MixedBenchmarks,
// DuplicateShard.
MergedScore merge_partials(std::span<const PartialScore> parts);

struct ProcessRunOptions {
  std::chrono::milliseconds timeout = std::chrono::hours(1);
  // Directory for result files; a temp directory when empty.
  std::filesystem::path work_dir;
  // Added to the inherited environment.
  std::vector<std::pair<std::string, std::string>> extra_env;
};

// Runs an external runner and reads the JSON result it writes at
// {output_path}. Throws SpawnFailed, NonZeroExit, MalformedOutput, Timeout.
PartialScore spawn_process_runner(const RunRequest& req, const RunnerSpec& spec,
                                  const ProcessRunOptions& options = {});

// Parses a runner result file body: {"score", "sample_count", "subscores"?}.
PartialScore parse_runner_output(std::string_view text, const RunRequest& req);

}  // namespace evalverse
