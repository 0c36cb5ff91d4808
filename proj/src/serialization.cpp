#include "evalverse/serialization.hpp"

namespace evalverse {

namespace {

Error malformed(const std::string& what) { return Error(Errc::MalformedInput, what); }

const Json& field(const Json& j, const char* key) {
  if (!j.is_object()) throw malformed("expected a JSON object");
  auto it = j.find(key);
  if (it == j.end()) throw malformed(std::string("missing field '") + key + "'");
  return *it;
}

std::string string_field(const Json& j, const char* key) {
  const Json& v = field(j, key);
  if (!v.is_string()) throw malformed(std::string("field '") + key + "' must be a string");
  return v.get<std::string>();
}

}  // namespace

Json settings_to_json(const EvalSettings& s) {
  Json j = {{"engine", engine_name(s.engine)}, {"dtype", dtype_name(s.dtype)}};
  j["num_fewshot"] = s.num_fewshot ? Json(*s.num_fewshot) : Json(nullptr);
  return j;
}

EvalSettings settings_from_json(const Json& j) {
  EvalSettings s;
  const auto engine = parse_engine(string_field(j, "engine"));
  if (!engine) throw malformed("unknown engine");
  const auto dtype = parse_dtype(string_field(j, "dtype"));
  if (!dtype) throw malformed("unknown dtype");
  s.engine = *engine;
  s.dtype = *dtype;
  const Json& shots = field(j, "num_fewshot");
  if (shots.is_number_integer()) {
    s.num_fewshot = shots.get<int>();
  } else if (!shots.is_null()) {
    throw malformed("num_fewshot must be an integer");
  }
  return s;
}

Json subscores_to_json(const Subscores& s) {
  Json j = Json::object();
  for (const auto& [k, v] : s) j[k] = v;
  return j;
}

Subscores subscores_from_json(const Json& j) {
  if (!j.is_object()) throw malformed("subscores must be an object");
  Subscores out;
  for (const auto& [k, v] : j.items()) {
    if (!v.is_number()) throw malformed("subscore '" + k + "' is not a number");
    out.emplace(k, v.get<double>());
  }
  return out;
}

Json record_to_json(const ScoreRecord& r) {
  return Json{
      {"model", r.model},
      {"benchmark", benchmark_name(r.benchmark)},
      {"score", r.score},
      {"sample_count", r.sample_count},
      {"subscores", subscores_to_json(r.subscores)},
      {"settings", settings_to_json(r.settings)},
      {"job_id", r.job_id},
      {"created_at", format_rfc3339(r.created_at)},
  };
}

ScoreRecord record_from_json(const Json& j) {
  ScoreRecord r;
  r.model = string_field(j, "model");
  const auto bench = parse_benchmark(string_field(j, "benchmark"));
  if (!bench) throw malformed("unknown benchmark");
  r.benchmark = *bench;
  const Json& score = field(j, "score");
  if (!score.is_number()) throw malformed("score must be a number");
  r.score = score.get<double>();
  const Json& n = field(j, "sample_count");
  if (!n.is_number_integer()) throw malformed("sample_count must be an integer");
  r.sample_count = n.get<std::int64_t>();
  r.subscores = subscores_from_json(field(j, "subscores"));
  r.settings = settings_from_json(field(j, "settings"));
  r.job_id = string_field(j, "job_id");
  r.created_at = parse_rfc3339(string_field(j, "created_at"));
  return r;
}

Json job_to_json(const EvalJob& job) {
  Json benchmarks = Json::array();
  for (Benchmark b : job.benchmarks) benchmarks.push_back(benchmark_name(b));
  Json j = {
      {"job_id", job.job_id},
      {"model", job.model.str()},
      {"benchmarks", std::move(benchmarks)},
      {"settings", settings_to_json(job.settings)},
      {"data_parallel", job.data_parallel},
      {"state", job_phase_name(job.state.phase)},
      {"submitted_at", format_rfc3339(job.submitted_at)},
  };
  j["reason"] = job.state.phase == JobPhase::Failed ? Json(job.state.reason) : Json(nullptr);
  j["finished_at"] = job.finished_at ? Json(format_rfc3339(*job.finished_at)) : Json(nullptr);
  return j;
}

}  // namespace evalverse
