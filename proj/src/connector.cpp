#include "evalverse/connector.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <mutex>
#include <set>

namespace evalverse {

namespace {

constexpr std::array<std::string_view, 7> kPlaceholders = {
    "model", "num_fewshot", "engine", "dtype", "shard_index", "shard_count", "output_path",
};

// Calls `on_name` for every "{name}" in `token`; returns false on an
// unterminated brace.
template <typename Fn>
bool scan_placeholders(std::string_view token, Fn&& on_name) {
  std::size_t pos = 0;
  while ((pos = token.find('{', pos)) != std::string_view::npos) {
    const auto close = token.find('}', pos);
    if (close == std::string_view::npos) return false;
    on_name(token.substr(pos + 1, close - pos - 1));
    pos = close + 1;
  }
  return true;
}

void replace_all(std::string& s, std::string_view from, std::string_view to) {
  std::size_t pos = 0;
  while ((pos = s.find(from, pos)) != std::string::npos) {
    s.replace(pos, from.size(), to);
    pos += to.size();
  }
}

}  // namespace

void validate_runner_spec(const RunnerSpec& spec) {
  if (is_composite(spec.benchmark)) {
    throw Error(Errc::InvalidTemplate, "runners are registered per member benchmark, got h6_en");
  }
  if (spec.executable.empty()) throw Error(Errc::InvalidTemplate, "executable is empty");
  std::map<std::string, int> seen;
  for (const auto& token : spec.arg_template) {
    std::string unknown;
    const bool closed = scan_placeholders(token, [&](std::string_view name) {
      if (std::find(kPlaceholders.begin(), kPlaceholders.end(), name) == kPlaceholders.end()) {
        unknown = name;
      }
      ++seen[std::string(name)];
    });
    if (!closed) throw Error(Errc::InvalidTemplate, "unterminated '{' in token '" + token + "'");
    if (!unknown.empty()) throw Error(Errc::InvalidTemplate, "unknown placeholder {" + unknown + "}");
    if (token.find('}') != std::string::npos &&
        std::count(token.begin(), token.end(), '}') != std::count(token.begin(), token.end(), '{')) {
      throw Error(Errc::InvalidTemplate, "stray '}' in token '" + token + "'");
    }
  }
  for (const char* required : {"model", "output_path"}) {
    if (seen[required] != 1) {
      throw Error(Errc::InvalidTemplate, std::string("{") + required +
                                             "} must appear exactly once, found " +
                                             std::to_string(seen[required]));
    }
  }
}

RunnerSpec fixture_runner_spec(Benchmark b) {
  return RunnerSpec{b, std::string(kFixtureExecutable),
                    {"--model", "{model}", "--shard", "{shard_index}/{shard_count}", "--out",
                     "{output_path}"}};
}

std::vector<RunnerSpec> runner_specs_from_json(const Json& j) {
  if (!j.is_array()) throw Error(Errc::MalformedInput, "runner config must be a JSON array");
  std::vector<RunnerSpec> out;
  for (const auto& item : j) {
    if (!item.is_object() || !item.contains("benchmark") || !item.contains("executable") ||
        !item.contains("args")) {
      throw Error(Errc::MalformedInput, "runner entries need benchmark, executable and args");
    }
    RunnerSpec spec;
    const auto bench = parse_benchmark(item.at("benchmark").get<std::string>());
    if (!bench) {
      throw Error(Errc::UnknownBenchmark, item.at("benchmark").get<std::string>());
    }
    spec.benchmark = *bench;
    spec.executable = item.at("executable").get<std::string>();
    spec.arg_template = item.at("args").get<std::vector<std::string>>();
    out.push_back(std::move(spec));
  }
  return out;
}

std::vector<RunnerSpec> load_runner_specs(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IOFailure, "cannot open runner config " + path.string());
  try {
    return runner_specs_from_json(Json::parse(in));
  } catch (const Json::exception& e) {
    throw Error(Errc::MalformedInput, path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Registry
// ---------------------------------------------------------------------------

void RunnerRegistry::register_runner(RunnerSpec spec) {
  validate_runner_spec(spec);
  std::unique_lock lock(mutex_);
  specs_.insert_or_assign(spec.benchmark, std::move(spec));
}

RunnerSpec RunnerRegistry::resolve(Benchmark b) const {
  std::shared_lock lock(mutex_);
  auto it = specs_.find(b);
  if (it == specs_.end()) {
    throw Error(Errc::UnknownBenchmark,
                "no runner registered for " + std::string(benchmark_name(b)));
  }
  return it->second;
}

bool RunnerRegistry::contains(Benchmark b) const {
  std::shared_lock lock(mutex_);
  return specs_.contains(b);
}

BenchmarkSet RunnerRegistry::registered() const {
  std::shared_lock lock(mutex_);
  BenchmarkSet out;
  for (const auto& [b, _] : specs_) out.insert(b);
  return out;
}

// ---------------------------------------------------------------------------
// Invocation
// ---------------------------------------------------------------------------

std::vector<std::string> build_invocation(const RunRequest& req, const RunnerSpec& spec,
                                          const std::filesystem::path& output_path) {
  if (req.benchmark != spec.benchmark) {
    throw Error(Errc::BenchmarkMismatch, "request is for " +
                                             std::string(benchmark_name(req.benchmark)) +
                                             ", runner serves " +
                                             std::string(benchmark_name(spec.benchmark)));
  }
  const auto settings = req.settings.resolved_for(req.benchmark);
  const std::pair<std::string_view, std::string> values[] = {
      {"{model}", req.model.str()},
      {"{num_fewshot}", std::to_string(*settings.num_fewshot)},
      {"{engine}", std::string(engine_name(settings.engine))},
      {"{dtype}", std::string(dtype_name(settings.dtype))},
      {"{shard_index}", std::to_string(req.shard_index)},
      {"{shard_count}", std::to_string(req.shard_count)},
      {"{output_path}", output_path.string()},
  };
  std::vector<std::string> out;
  out.reserve(spec.arg_template.size());
  for (const auto& token : spec.arg_template) {
    // Substitute left to right so that substituted text is never rescanned.
    std::string rendered;
    std::size_t pos = 0;
    while (pos < token.size()) {
      const auto open = token.find('{', pos);
      if (open == std::string::npos) {
        rendered.append(token, pos);
        break;
      }
      rendered.append(token, pos, open - pos);
      const auto close = token.find('}', open);
      const std::string_view key(token.data() + open, close - open + 1);
      bool matched = false;
      for (const auto& [name, value] : values) {
        if (name == key) {
          rendered += value;
          matched = true;
          break;
        }
      }
      if (!matched) rendered.append(key);
      pos = close + 1;
    }
    out.push_back(std::move(rendered));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Fixture runner
// ---------------------------------------------------------------------------

std::int64_t shard_sample_count(std::int64_t total, int index, int count) {
  if (count < 1 || index < 0 || index >= count) {
    throw Error(Errc::InvalidArgument, "shard " + std::to_string(index) + " of " +
                                           std::to_string(count) + " is out of range");
  }
  return total * (index + 1) / count - total * index / count;
}

void FixtureManifest::add(std::string model, Benchmark benchmark, Entry entry) {
  validate_model_label(model);
  if (is_composite(benchmark)) {
    throw Error(Errc::InvalidArgument, "fixture entries are per member benchmark, got h6_en");
  }
  if (!score_scale(benchmark).contains(entry.score)) {
    throw Error(Errc::ScaleViolation, "fixture score for " + model + "/" +
                                          std::string(benchmark_name(benchmark)) +
                                          " is outside the benchmark scale");
  }
  if (entry.sample_count < 1) {
    throw Error(Errc::InvalidArgument, "fixture sample_count must be >= 1");
  }
  entries_.insert_or_assign({std::move(model), benchmark}, std::move(entry));
}

const FixtureManifest::Entry* FixtureManifest::find(const std::string& model,
                                                    Benchmark benchmark) const {
  auto it = entries_.find({model, benchmark});
  return it == entries_.end() ? nullptr : &it->second;
}

FixtureManifest FixtureManifest::from_json(const Json& j) {
  if (!j.is_array()) throw Error(Errc::MalformedInput, "fixture manifest must be a JSON array");
  FixtureManifest manifest;
  for (const auto& item : j) {
    try {
      const auto name = item.at("benchmark").get<std::string>();
      const auto bench = parse_benchmark(name);
      if (!bench) throw Error(Errc::UnknownBenchmark, name);
      Entry entry;
      entry.score = item.at("score").get<double>();
      if (!item.at("sample_count").is_number_integer()) {
        throw Error(Errc::MalformedInput, "sample_count must be an integer");
      }
      entry.sample_count = item.at("sample_count").get<std::int64_t>();
      if (item.contains("subscores")) entry.subscores = subscores_from_json(item.at("subscores"));
      manifest.add(item.at("model").get<std::string>(), *bench, std::move(entry));
    } catch (const Json::exception& e) {
      throw Error(Errc::MalformedInput, std::string("fixture entry: ") + e.what());
    }
  }
  return manifest;
}

FixtureManifest FixtureManifest::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IOFailure, "cannot open fixture manifest " + path.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::exception& e) {
    throw Error(Errc::MalformedInput, path.string() + ": " + e.what());
  }
  return from_json(j);
}

PartialScore fixture_run(const RunRequest& req, const FixtureManifest& manifest) {
  const auto* entry = manifest.find(req.model.str(), req.benchmark);
  if (entry == nullptr) {
    throw Error(Errc::FixtureMiss, "no fixture entry for model '" + req.model.str() +
                                       "' benchmark " + std::string(benchmark_name(req.benchmark)));
  }
  const auto n = shard_sample_count(entry->sample_count, req.shard_index, req.shard_count);
  PartialScore out{req.benchmark, req.shard_index, entry->score, n, entry->subscores};
  if (n == 0) {
    out.score = 0.0;
    out.subscores.clear();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Merge
// ---------------------------------------------------------------------------

MergedScore merge_partials(std::span<const PartialScore> parts) {
  if (parts.empty()) throw Error(Errc::EmptyMerge, "no shard results to merge");
  std::vector<const PartialScore*> ordered;
  ordered.reserve(parts.size());
  std::set<int> shards;
  for (const auto& p : parts) {
    if (p.benchmark != parts.front().benchmark) {
      throw Error(Errc::MixedBenchmarks, std::string(benchmark_name(parts.front().benchmark)) +
                                             " and " + std::string(benchmark_name(p.benchmark)));
    }
    if (!shards.insert(p.shard_index).second) {
      throw Error(Errc::DuplicateShard, "shard " + std::to_string(p.shard_index));
    }
    if (p.sample_count < 0) throw Error(Errc::InvalidArgument, "negative sample_count");
    if (p.sample_count > 0) ordered.push_back(&p);
  }
  if (ordered.empty()) throw Error(Errc::EmptyMerge, "all shards are empty");
  std::sort(ordered.begin(), ordered.end(),
            [](const PartialScore* a, const PartialScore* b) { return a->shard_index < b->shard_index; });

  // Weighted mean about the first shard's value: equal inputs merge exactly.
  MergedScore out;
  const double ref = ordered.front()->score;
  double weighted_delta = 0.0;
  for (const auto* p : ordered) {
    out.sample_count += p->sample_count;
    weighted_delta += static_cast<double>(p->sample_count) * (p->score - ref);
  }
  out.score = ref + weighted_delta / static_cast<double>(out.sample_count);

  struct Acc {
    double ref = 0.0;
    double delta = 0.0;
    std::int64_t weight = 0;
  };
  std::map<std::string, Acc> subs;
  for (const auto* p : ordered) {
    for (const auto& [key, value] : p->subscores) {
      auto [it, fresh] = subs.try_emplace(key);
      if (fresh) it->second.ref = value;
      it->second.delta += static_cast<double>(p->sample_count) * (value - it->second.ref);
      it->second.weight += p->sample_count;
    }
  }
  for (const auto& [key, acc] : subs) {
    out.subscores.emplace(key, acc.ref + acc.delta / static_cast<double>(acc.weight));
  }
  return out;
}

}  // namespace evalverse
