#pragma once

// JSON forms of the core types. Field names and shapes are part of the
// on-disk and wire contracts; change them only together with the readers.

#include "json.hpp"

#include "evalverse/core.hpp"

namespace evalverse {

// Insertion-ordered so serialized field order matches the documented layouts.
using Json = nlohmann::ordered_json;

// {"engine": "hf", "dtype": "float16", "num_fewshot": 5}
Json settings_to_json(const EvalSettings& s);
EvalSettings settings_from_json(const Json& j);

// Result file: {"model", "benchmark", "score", "sample_count", "subscores",
// "settings", "job_id", "created_at"}.
Json record_to_json(const ScoreRecord& r);
ScoreRecord record_from_json(const Json& j);

// Job snapshot as served by GET /jobs/{id}.
Json job_to_json(const EvalJob& job);

Json subscores_to_json(const Subscores& s);
// Requires an object whose values are all numbers.
Subscores subscores_from_json(const Json& j);

}  // namespace evalverse
