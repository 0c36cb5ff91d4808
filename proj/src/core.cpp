#include "evalverse/core.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdio>
#include <ctime>

namespace evalverse {

std::string_view errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::EmptyInput: return "EmptyInput";
    case Errc::MalformedRef: return "MalformedRef";
    case Errc::UnknownBenchmark: return "UnknownBenchmark";
    case Errc::InvalidFewshot: return "InvalidFewshot";
    case Errc::InvalidSettings: return "InvalidSettings";
    case Errc::InvalidTemplate: return "InvalidTemplate";
    case Errc::BenchmarkMismatch: return "BenchmarkMismatch";
    case Errc::FixtureMiss: return "FixtureMiss";
    case Errc::EmptyMerge: return "EmptyMerge";
    case Errc::MixedBenchmarks: return "MixedBenchmarks";
    case Errc::DuplicateShard: return "DuplicateShard";
    case Errc::SpawnFailed: return "SpawnFailed";
    case Errc::NonZeroExit: return "NonZeroExit";
    case Errc::MalformedOutput: return "MalformedOutput";
    case Errc::Timeout: return "Timeout";
    case Errc::ModelNotFound: return "ModelNotFound";
    case Errc::UnknownJob: return "UnknownJob";
    case Errc::UnknownSession: return "UnknownSession";
    case Errc::InvalidKey: return "InvalidKey";
    case Errc::IOFailure: return "IOFailure";
    case Errc::ScaleViolation: return "ScaleViolation";
    case Errc::DuplicateRecord: return "DuplicateRecord";
    case Errc::MissingComponent: return "MissingComponent";
    case Errc::NoData: return "NoData";
    case Errc::UnknownCriterion: return "UnknownCriterion";
    case Errc::MalformedEnvLine: return "MalformedEnvLine";
    case Errc::MalformedInput: return "MalformedInput";
    case Errc::AddressInUse: return "AddressInUse";
    case Errc::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

// ---------------------------------------------------------------------------
// ModelRef
// ---------------------------------------------------------------------------

namespace {

bool is_blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(),
                     [](unsigned char c) { return std::isspace(c) != 0; });
}

bool has_space_or_control(std::string_view s) {
  return std::any_of(s.begin(), s.end(), [](unsigned char c) {
    return std::isspace(c) != 0 || std::iscntrl(c) != 0;
  });
}

bool path_like_segment(std::string_view seg) {
  return seg.empty() || seg == "." || seg == ".." || seg.front() == '~';
}

}  // namespace

ModelRef ModelRef::parse(std::string_view raw) {
  if (is_blank(raw)) throw Error(Errc::EmptyInput, "model reference is empty");
  if (has_space_or_control(raw)) {
    throw Error(Errc::MalformedRef, "model reference contains whitespace: '" +
                                        std::string(raw) + "'");
  }
  std::string value(raw);
  if (raw.starts_with('/') || raw.starts_with("./") || raw.starts_with("../")) {
    return ModelRef(Kind::LocalPath, std::move(value));
  }
  const auto slashes = std::count(raw.begin(), raw.end(), '/');
  if (slashes == 1) {
    const auto pos = raw.find('/');
    if (!path_like_segment(raw.substr(0, pos)) && !path_like_segment(raw.substr(pos + 1))) {
      return ModelRef(Kind::HubId, std::move(value));
    }
  }
  return ModelRef(Kind::LocalPath, std::move(value));
}

void validate_model_label(std::string_view model) {
  if (is_blank(model)) throw Error(Errc::InvalidArgument, "model string is empty");
  const bool control = std::any_of(model.begin(), model.end(), [](unsigned char c) {
    return std::iscntrl(c) != 0;
  });
  if (control) throw Error(Errc::InvalidArgument, "model string contains control characters");
}

// ---------------------------------------------------------------------------
// Benchmarks
// ---------------------------------------------------------------------------

namespace {

constexpr std::array kAllBenchmarks = {
    Benchmark::arc,     Benchmark::hellaswag, Benchmark::mmlu,     Benchmark::truthfulqa,
    Benchmark::winogrande, Benchmark::gsm8k,  Benchmark::h6_en,    Benchmark::mt_bench,
    Benchmark::eq_bench, Benchmark::ifeval,
};

constexpr std::array kH6 = {
    Benchmark::arc,        Benchmark::hellaswag, Benchmark::mmlu,
    Benchmark::truthfulqa, Benchmark::winogrande, Benchmark::gsm8k,
};

}  // namespace

std::string_view benchmark_name(Benchmark b) noexcept {
  switch (b) {
    case Benchmark::arc: return "arc";
    case Benchmark::hellaswag: return "hellaswag";
    case Benchmark::mmlu: return "mmlu";
    case Benchmark::truthfulqa: return "truthfulqa";
    case Benchmark::winogrande: return "winogrande";
    case Benchmark::gsm8k: return "gsm8k";
    case Benchmark::h6_en: return "h6_en";
    case Benchmark::mt_bench: return "mt_bench";
    case Benchmark::eq_bench: return "eq_bench";
    case Benchmark::ifeval: return "ifeval";
  }
  return "?";
}

std::optional<Benchmark> parse_benchmark(std::string_view name) noexcept {
  for (Benchmark b : kAllBenchmarks) {
    if (benchmark_name(b) == name) return b;
  }
  return std::nullopt;
}

std::span<const Benchmark> all_benchmarks() noexcept { return kAllBenchmarks; }
std::span<const Benchmark> h6_members() noexcept { return kH6; }

BenchmarkSet expand_benchmarks(const BenchmarkSet& requested) {
  BenchmarkSet out;
  for (Benchmark b : requested) {
    if (b == Benchmark::h6_en) {
      out.insert(kH6.begin(), kH6.end());
    } else {
      out.insert(b);
    }
  }
  return out;
}

ScoreScale score_scale(Benchmark b) {
  switch (b) {
    case Benchmark::mt_bench: return {0.0, 10.0};
    case Benchmark::ifeval: return {0.0, 1.0};
    case Benchmark::h6_en:
      throw Error(Errc::InvalidArgument, "h6_en is a composite and has no score scale");
    default: return {0.0, 100.0};
  }
}

// ---------------------------------------------------------------------------
// Settings
// ---------------------------------------------------------------------------

std::string_view engine_name(Engine e) noexcept { return e == Engine::hf ? "hf" : "vllm"; }
std::string_view dtype_name(Dtype d) noexcept { return d == Dtype::float16 ? "float16" : "int8"; }

std::optional<Engine> parse_engine(std::string_view s) noexcept {
  if (s == "hf") return Engine::hf;
  if (s == "vllm") return Engine::vllm;
  return std::nullopt;
}

std::optional<Dtype> parse_dtype(std::string_view s) noexcept {
  if (s == "float16") return Dtype::float16;
  if (s == "int8") return Dtype::int8;
  return std::nullopt;
}

int default_fewshot(Benchmark b) {
  switch (b) {
    case Benchmark::arc: return 25;
    case Benchmark::hellaswag: return 10;
    case Benchmark::mmlu: return 5;
    case Benchmark::truthfulqa: return 0;
    case Benchmark::winogrande: return 5;
    case Benchmark::gsm8k: return 5;
    case Benchmark::mt_bench:
    case Benchmark::eq_bench:
    case Benchmark::ifeval: return 0;
    case Benchmark::h6_en: break;
  }
  throw Error(Errc::InvalidSettings, "h6_en has no single few-shot default");
}

EvalSettings EvalSettings::resolved_for(Benchmark b) const {
  EvalSettings out = *this;
  if (!out.num_fewshot) out.num_fewshot = default_fewshot(b);
  return out;
}

void validate_settings(const EvalSettings& s, Benchmark b) {
  if (is_composite(b)) {
    throw Error(Errc::InvalidSettings, "settings are validated per member benchmark, got h6_en");
  }
  if (s.num_fewshot && (*s.num_fewshot < 0 || *s.num_fewshot > kMaxFewshot)) {
    throw Error(Errc::InvalidFewshot, std::to_string(*s.num_fewshot) + " for " +
                                          std::string(benchmark_name(b)) +
                                          " (allowed 0.." + std::to_string(kMaxFewshot) + ")");
  }
}

// ---------------------------------------------------------------------------
// Time
// ---------------------------------------------------------------------------

Timestamp now_utc() {
  return std::chrono::time_point_cast<std::chrono::microseconds>(
      std::chrono::system_clock::now());
}

std::string format_rfc3339(Timestamp t) {
  using namespace std::chrono;
  const auto secs = floor<seconds>(t);
  const auto micros = (t - secs).count();
  const std::time_t tt = system_clock::to_time_t(secs);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[40];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%06lldZ", tm.tm_year + 1900,
                tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec,
                static_cast<long long>(micros));
  return buf;
}

Timestamp parse_rfc3339(std::string_view s) {
  const auto bad = [&] {
    return Error(Errc::MalformedInput, "not an RFC-3339 timestamp: '" + std::string(s) + "'");
  };
  std::tm tm{};
  int consumed = 0;
  const std::string str(s);
  if (std::sscanf(str.c_str(), "%4d-%2d-%2dT%2d:%2d:%2d%n", &tm.tm_year, &tm.tm_mon,
                  &tm.tm_mday, &tm.tm_hour, &tm.tm_min, &tm.tm_sec, &consumed) != 6 ||
      consumed != 19) {
    throw bad();
  }
  tm.tm_year -= 1900;
  tm.tm_mon -= 1;
  std::size_t pos = 19;
  long long micros = 0;
  if (pos < str.size() && str[pos] == '.') {
    ++pos;
    int digits = 0;
    while (pos < str.size() && std::isdigit(static_cast<unsigned char>(str[pos]))) {
      if (digits < 6) micros = micros * 10 + (str[pos] - '0');
      ++digits;
      ++pos;
    }
    if (digits == 0) throw bad();
    for (int d = digits; d < 6; ++d) micros *= 10;
  }
  long offset_seconds = 0;
  if (pos < str.size() && (str[pos] == 'Z' || str[pos] == 'z')) {
    ++pos;
  } else if (pos < str.size() && (str[pos] == '+' || str[pos] == '-')) {
    int hh = 0;
    int mm = 0;
    if (std::sscanf(str.c_str() + pos + 1, "%2d:%2d", &hh, &mm) != 2 || str.size() != pos + 6) {
      throw bad();
    }
    offset_seconds = (hh * 3600L + mm * 60L) * (str[pos] == '+' ? 1 : -1);
    pos += 6;
  } else {
    throw bad();
  }
  if (pos != str.size()) throw bad();
  const std::time_t epoch = timegm(&tm);
  return Timestamp(std::chrono::seconds(epoch - offset_seconds) +
                   std::chrono::microseconds(micros));
}

// ---------------------------------------------------------------------------
// Lifecycle
// ---------------------------------------------------------------------------

std::string_view job_phase_name(JobPhase p) noexcept {
  switch (p) {
    case JobPhase::Pending: return "pending";
    case JobPhase::Scheduled: return "scheduled";
    case JobPhase::Fetching: return "fetching";
    case JobPhase::Running: return "running";
    case JobPhase::Completed: return "completed";
    case JobPhase::Failed: return "failed";
  }
  return "?";
}

JobState JobState::failed(std::string reason) {
  if (reason.empty()) reason = "unspecified failure";
  return JobState{JobPhase::Failed, std::move(reason)};
}

bool is_valid_transition(JobPhase from, JobPhase to) noexcept {
  switch (from) {
    case JobPhase::Pending: return to == JobPhase::Scheduled || to == JobPhase::Failed;
    case JobPhase::Scheduled: return to == JobPhase::Fetching || to == JobPhase::Failed;
    case JobPhase::Fetching: return to == JobPhase::Running || to == JobPhase::Failed;
    case JobPhase::Running: return to == JobPhase::Completed || to == JobPhase::Failed;
    case JobPhase::Completed:
    case JobPhase::Failed: return false;
  }
  return false;
}

// ---------------------------------------------------------------------------
// Records
// ---------------------------------------------------------------------------

void validate_record(const ScoreRecord& r) {
  validate_model_label(r.model);
  if (is_composite(r.benchmark)) {
    throw Error(Errc::InvalidArgument, "score records are stored per member benchmark, got h6_en");
  }
  const auto scale = score_scale(r.benchmark);
  if (!scale.contains(r.score)) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%s score %g outside [%g, %g]",
                  std::string(benchmark_name(r.benchmark)).c_str(), r.score, scale.min,
                  scale.max);
    throw Error(Errc::ScaleViolation, buf);
  }
  if (r.sample_count < 1) throw Error(Errc::InvalidArgument, "sample_count must be >= 1");
  if (r.job_id.empty()) throw Error(Errc::InvalidArgument, "job_id is empty");
  if (!r.settings.num_fewshot) throw Error(Errc::InvalidArgument, "record settings lack num_fewshot");
  validate_settings(r.settings, r.benchmark);
}

}  // namespace evalverse
