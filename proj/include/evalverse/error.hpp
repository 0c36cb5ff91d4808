#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace evalverse {

enum class Errc {
  EmptyInput,
  MalformedRef,
  UnknownBenchmark,
  InvalidFewshot,
  InvalidSettings,
  InvalidTemplate,
  BenchmarkMismatch,
  FixtureMiss,
  EmptyMerge,
  MixedBenchmarks,
  DuplicateShard,
  SpawnFailed,
  NonZeroExit,
  MalformedOutput,
  Timeout,
  ModelNotFound,
  UnknownJob,
  UnknownSession,
  InvalidKey,
  IOFailure,
  ScaleViolation,
  DuplicateRecord,
  MissingComponent,
  NoData,
  UnknownCriterion,
  MalformedEnvLine,
  MalformedInput,
  AddressInUse,
  InvalidArgument,
};

std::string_view errc_name(Errc code) noexcept;

// Every failure surfaced by the library carries one of the codes above; the
// message is prefixed with the code name so it can be shown verbatim.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& detail)
      : std::runtime_error(std::string(errc_name(code)) +
                           (detail.empty() ? "" : ": " + detail)),
        code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace evalverse
