#pragma once

// Shared domain types for the evaluation pipeline: model references,
// benchmark ids, evaluation settings, job lifecycle and score records.

#include <chrono>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>

#include "evalverse/error.hpp"

namespace evalverse {

// ---------------------------------------------------------------------------
// Model references
// ---------------------------------------------------------------------------

class ModelRef {
 public:
  enum class Kind { HubId, LocalPath };

  // Parses a hub id ("org/name") or a filesystem path. A string with exactly
  // one '/' and two plain segments is a hub id; everything else that is not
  // blank or whitespace-bearing is a path.
  static ModelRef parse(std::string_view raw);

  Kind kind() const noexcept { return kind_; }
  const std::string& str() const noexcept { return value_; }
  bool is_hub_id() const noexcept { return kind_ == Kind::HubId; }

  friend bool operator==(const ModelRef&, const ModelRef&) = default;

 private:
  ModelRef(Kind kind, std::string value) : kind_(kind), value_(std::move(value)) {}

  Kind kind_;
  std::string value_;
};

inline ModelRef parse_model_ref(std::string_view raw) { return ModelRef::parse(raw); }

// Model strings stored alongside results. Looser than ModelRef (display
// names such as "Solar 10.7B Instruct" are allowed) but must be non-empty
// and free of control characters.
void validate_model_label(std::string_view model);

// ---------------------------------------------------------------------------
// Benchmarks
// ---------------------------------------------------------------------------

enum class Benchmark {
  arc,
  hellaswag,
  mmlu,
  truthfulqa,
  winogrande,
  gsm8k,
  h6_en,
  mt_bench,
  eq_bench,
  ifeval,
};

using BenchmarkSet = std::set<Benchmark>;

std::string_view benchmark_name(Benchmark b) noexcept;
std::optional<Benchmark> parse_benchmark(std::string_view name) noexcept;

// Every id, composites included, in declaration order.
std::span<const Benchmark> all_benchmarks() noexcept;
// The six Open LLM Leaderboard members of h6_en.
std::span<const Benchmark> h6_members() noexcept;

constexpr bool is_composite(Benchmark b) noexcept { return b == Benchmark::h6_en; }

// Replaces composites by their members. Idempotent; never returns composites.
BenchmarkSet expand_benchmarks(const BenchmarkSet& requested);

struct ScoreScale {
  double min;
  double max;
  bool contains(double v) const noexcept { return v >= min && v <= max; }
};

// [0,100] for percentage benchmarks, [0,10] for mt_bench, [0,1] for ifeval.
ScoreScale score_scale(Benchmark b);

// ---------------------------------------------------------------------------
// Settings
// ---------------------------------------------------------------------------

enum class Engine { hf, vllm };
enum class Dtype { float16, int8 };

std::string_view engine_name(Engine e) noexcept;
std::string_view dtype_name(Dtype d) noexcept;
std::optional<Engine> parse_engine(std::string_view s) noexcept;
std::optional<Dtype> parse_dtype(std::string_view s) noexcept;

inline constexpr int kMaxFewshot = 64;

// Open LLM Leaderboard few-shot counts; 0 for the chat benchmarks.
int default_fewshot(Benchmark b);

struct EvalSettings {
  Engine engine = Engine::hf;
  Dtype dtype = Dtype::float16;
  std::optional<int> num_fewshot;  // unset: per-benchmark default

  // Same settings with the few-shot count made concrete for `b`.
  EvalSettings resolved_for(Benchmark b) const;

  friend bool operator==(const EvalSettings&, const EvalSettings&) = default;
};

// Throws InvalidFewshot when the count is outside [0, 64] and
// InvalidSettings when `b` is a composite.
void validate_settings(const EvalSettings& s, Benchmark b);

// ---------------------------------------------------------------------------
// Time
// ---------------------------------------------------------------------------

using Timestamp = std::chrono::sys_time<std::chrono::microseconds>;

Timestamp now_utc();
// "2024-04-15T08:30:00.123456Z"
std::string format_rfc3339(Timestamp t);
// Accepts the format above, optional fraction, and Z or +hh:mm offsets.
Timestamp parse_rfc3339(std::string_view s);

// ---------------------------------------------------------------------------
// Job lifecycle
// ---------------------------------------------------------------------------

enum class JobPhase { Pending, Scheduled, Fetching, Running, Completed, Failed };

std::string_view job_phase_name(JobPhase p) noexcept;

struct JobState {
  JobPhase phase = JobPhase::Pending;
  std::string reason;  // non-empty iff phase == Failed

  static JobState failed(std::string reason);

  bool terminal() const noexcept {
    return phase == JobPhase::Completed || phase == JobPhase::Failed;
  }

  friend bool operator==(const JobState&, const JobState&) = default;
};

// Pending -> Scheduled -> Fetching -> Running -> Completed, and any
// non-terminal phase -> Failed. Terminal phases are absorbing.
bool is_valid_transition(JobPhase from, JobPhase to) noexcept;

struct EvalJob {
  std::string job_id;
  ModelRef model;
  BenchmarkSet benchmarks;  // expanded, no composites
  EvalSettings settings;
  int data_parallel = 1;
  JobState state;
  Timestamp submitted_at;
  std::optional<Timestamp> finished_at;  // set iff state is terminal
};

// ---------------------------------------------------------------------------
// Results
// ---------------------------------------------------------------------------

using Subscores = std::map<std::string, double>;

struct ScoreRecord {
  std::string model;
  Benchmark benchmark = Benchmark::arc;
  double score = 0.0;
  std::int64_t sample_count = 1;
  Subscores subscores;
  EvalSettings settings;  // num_fewshot always set
  std::string job_id;
  Timestamp created_at;

  friend bool operator==(const ScoreRecord&, const ScoreRecord&) = default;
};

// Throws ScaleViolation for out-of-range scores, InvalidArgument for other
// field violations.
void validate_record(const ScoreRecord& r);

}  // namespace evalverse
