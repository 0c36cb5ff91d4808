#include "evalverse/evaluator.hpp"

#include <algorithm>
#include <cstdio>
#include <ctime>

namespace evalverse {

// ---------------------------------------------------------------------------
// Artifacts and local execution
// ---------------------------------------------------------------------------

ArtifactPaths fetch_artifacts(const ModelRef& model, Benchmark benchmark, const Database& db) {
  ArtifactPaths out;
  if (model.kind() == ModelRef::Kind::LocalPath) {
    std::error_code ec;
    if (!std::filesystem::exists(model.str(), ec)) {
      throw Error(Errc::ModelNotFound, "no model at local path " + model.str());
    }
    out.model = std::filesystem::path(model.str());
  } else {
    out.model = db.artifact_path("models/" + model.str());
    if (!out.model) {
      throw Error(Errc::ModelNotFound, model.str() + " is not in the artifact store");
    }
  }
  out.data_cache = db.artifact_path("data/" + std::string(benchmark_name(benchmark)));
  return out;
}

LocalShardExecutor::LocalShardExecutor(const Database& db, Options options)
    : db_(db), options_(std::move(options)) {}

ArtifactPaths LocalShardExecutor::fetch(const RunRequest& req, const RunnerSpec& spec) {
  // The fixture stands in for the model itself; there is nothing to fetch.
  if (spec.is_fixture()) return {};
  return fetch_artifacts(req.model, req.benchmark, db_);
}

PartialScore LocalShardExecutor::execute(const RunRequest& req, const RunnerSpec& spec,
                                         const ArtifactPaths& artifacts) {
  if (spec.is_fixture()) {
    if (!options_.manifest) throw Error(Errc::FixtureMiss, "no fixture manifest loaded");
    return fixture_run(req, *options_.manifest);
  }
  auto process = options_.process;
  if (artifacts.model) process.extra_env.emplace_back("EVALVERSE_MODEL_DIR", artifacts.model->string());
  if (artifacts.data_cache) {
    process.extra_env.emplace_back("EVALVERSE_DATA_DIR", artifacts.data_cache->string());
  }
  return spawn_process_runner(req, spec, process);
}

// ---------------------------------------------------------------------------
// Evaluator
// ---------------------------------------------------------------------------

struct Evaluator::JobEntry {
  explicit JobEntry(EvalJob j) : job(std::move(j)) {}

  EvalJob job;
  std::map<Benchmark, RunnerSpec> runners;
  std::map<Benchmark, std::vector<PartialScore>> partials;
  std::vector<ScoreRecord> merged;
  std::size_t outstanding = 0;
  std::size_t total_items = 0;
  // Held while the job's records are written; cancel() takes it first so a
  // cancelled job never ends up with stored results.
  std::mutex persist_mutex;
};

namespace {

std::string default_prefix() {
  const auto now = std::chrono::floor<std::chrono::seconds>(std::chrono::system_clock::now());
  const std::time_t tt = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d%02d%02dT%02d%02d%02d", tm.tm_year + 1900, tm.tm_mon + 1,
                tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec);
  return buf;
}

bool retryable(Errc code) { return code == Errc::SpawnFailed || code == Errc::Timeout; }

}  // namespace

Evaluator::Evaluator(const RunnerRegistry& registry, Database& db,
                     std::shared_ptr<ShardExecutor> executor, EvaluatorOptions options)
    : registry_(registry), db_(db), executor_(std::move(executor)), options_(std::move(options)) {
  if (options_.worker_count < 1) {
    throw Error(Errc::InvalidArgument, "worker_count must be >= 1");
  }
  if (!executor_) throw Error(Errc::InvalidArgument, "no shard executor");
  if (options_.max_retries < 0) options_.max_retries = 0;
  if (options_.job_id_prefix.empty()) options_.job_id_prefix = default_prefix();
  workers_.resize(static_cast<std::size_t>(options_.worker_count));
}

Evaluator::~Evaluator() { stop(); }

void Evaluator::start() {
  std::lock_guard lock(mutex_);
  if (!threads_.empty()) return;
  stopping_ = false;
  for (std::size_t w = 0; w < workers_.size(); ++w) {
    threads_.emplace_back([this, w] { worker_loop(w); });
  }
}

void Evaluator::stop() {
  {
    std::lock_guard lock(mutex_);
    stopping_ = true;
  }
  work_cv_.notify_all();
  for (auto& t : threads_) {
    if (t.joinable()) t.join();
  }
  threads_.clear();
}

std::string Evaluator::submit(const ModelRef& model, const BenchmarkSet& benchmarks,
                              const EvalSettings& settings, int data_parallel) {
  if (benchmarks.empty()) throw Error(Errc::InvalidArgument, "no benchmarks requested");
  if (data_parallel < 1) throw Error(Errc::InvalidArgument, "data_parallel must be >= 1");

  const auto expanded = expand_benchmarks(benchmarks);
  std::map<Benchmark, RunnerSpec> runners;
  for (Benchmark b : expanded) {
    runners.emplace(b, registry_.resolve(b));
    try {
      validate_settings(settings, b);
    } catch (const Error& e) {
      throw Error(Errc::InvalidSettings, e.what());
    }
  }

  std::lock_guard lock(mutex_);
  char counter[16];
  std::snprintf(counter, sizeof counter, "%06zu", next_job_++);
  EvalJob job{options_.job_id_prefix + "-" + counter, model, expanded, settings,
              data_parallel, JobState{}, now_utc(), std::nullopt};
  auto entry = std::make_unique<JobEntry>(std::move(job));
  entry->runners = std::move(runners);
  entry->total_items = expanded.size() * static_cast<std::size_t>(data_parallel);
  entry->outstanding = entry->total_items;

  const std::string id = entry->job.job_id;
  for (Benchmark b : expanded) {
    for (int shard = 0; shard < data_parallel; ++shard) {
      queue_.push_back(WorkItem{WorkKey{id, b, shard}, entry.get()});
    }
  }
  stats_.work_items_enqueued += entry->total_items;
  jobs_.emplace(id, std::move(entry));
  work_cv_.notify_all();
  return id;
}

Evaluator::JobEntry& Evaluator::find(const std::string& job_id) const {
  auto it = jobs_.find(job_id);
  if (it == jobs_.end()) throw Error(Errc::UnknownJob, job_id);
  return *it->second;
}

EvalJob Evaluator::job_status(const std::string& job_id) const {
  std::lock_guard lock(mutex_);
  return find(job_id).job;
}

void Evaluator::cancel(const std::string& job_id) {
  JobEntry* entry = nullptr;
  {
    std::lock_guard lock(mutex_);
    entry = &find(job_id);
  }
  std::lock_guard persist(entry->persist_mutex);
  std::lock_guard lock(mutex_);
  if (entry->job.state.terminal()) return;
  fail(*entry, "cancelled");
}

EvalJob Evaluator::wait(const std::string& job_id,
                        std::optional<std::chrono::milliseconds> timeout) const {
  std::unique_lock lock(mutex_);
  const JobEntry& entry = find(job_id);
  const auto done = [&] { return entry.job.state.terminal(); };
  if (timeout) {
    done_cv_.wait_for(lock, *timeout, done);
  } else {
    done_cv_.wait(lock, done);
  }
  return entry.job;
}

bool Evaluator::wait_all(std::chrono::milliseconds timeout) const {
  std::unique_lock lock(mutex_);
  return done_cv_.wait_for(lock, timeout, [&] {
    return std::all_of(jobs_.begin(), jobs_.end(),
                       [](const auto& kv) { return kv.second->job.state.terminal(); });
  });
}

std::size_t Evaluator::work_items(const std::string& job_id) const {
  std::lock_guard lock(mutex_);
  return find(job_id).total_items;
}

std::size_t Evaluator::queued() const {
  std::lock_guard lock(mutex_);
  return queue_.size();
}

std::vector<WorkerStatus> Evaluator::workers() const {
  std::lock_guard lock(mutex_);
  return workers_;
}

std::vector<std::string> Evaluator::job_ids() const {
  std::lock_guard lock(mutex_);
  std::vector<std::string> out;
  for (const auto& [id, _] : jobs_) out.push_back(id);
  return out;
}

std::map<WorkKey, int> Evaluator::attempt_counts() const {
  std::lock_guard lock(mutex_);
  return attempts_;
}

EvaluatorStats Evaluator::stats() const {
  std::lock_guard lock(mutex_);
  return stats_;
}

void Evaluator::advance(JobEntry& entry, JobPhase target) {
  auto& state = entry.job.state;
  while (!state.terminal() && state.phase < target) {
    const auto next = static_cast<JobPhase>(static_cast<int>(state.phase) + 1);
    if (!is_valid_transition(state.phase, next)) break;
    state.phase = next;
  }
  if (state.phase == JobPhase::Completed && !entry.job.finished_at) {
    entry.job.finished_at = now_utc();
    done_cv_.notify_all();
  }
}

void Evaluator::fail(JobEntry& entry, std::string reason) {
  if (entry.job.state.terminal()) return;
  entry.job.state = JobState::failed(std::move(reason));
  entry.job.finished_at = now_utc();
  entry.partials.clear();
  entry.merged.clear();
  std::erase_if(queue_, [&](const WorkItem& item) { return item.job == &entry; });
  done_cv_.notify_all();
}

void Evaluator::persist_and_complete(JobEntry& entry, std::unique_lock<std::mutex>& lock) {
  lock.unlock();
  std::lock_guard persist(entry.persist_mutex);
  lock.lock();
  if (entry.job.state.terminal()) return;
  const auto records = entry.merged;
  lock.unlock();

  std::string failure;
  try {
    for (const auto& r : records) db_.put_result(r);
  } catch (const std::exception& e) {
    failure = e.what();
  }

  lock.lock();
  if (!failure.empty()) {
    fail(entry, failure);
  } else {
    advance(entry, JobPhase::Completed);
  }
}

void Evaluator::worker_loop(std::size_t worker) {
  std::unique_lock lock(mutex_);
  for (;;) {
    work_cv_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
    if (stopping_) return;

    WorkItem item = std::move(queue_.front());
    queue_.pop_front();
    JobEntry& entry = *item.job;
    if (entry.job.state.terminal()) continue;

    workers_[worker].busy_with = item.key;
    const auto busy = static_cast<std::size_t>(std::count_if(
        workers_.begin(), workers_.end(), [](const WorkerStatus& w) { return w.busy_with.has_value(); }));
    stats_.max_busy_workers = std::max(stats_.max_busy_workers, busy);
    advance(entry, JobPhase::Scheduled);

    const RunnerSpec spec = entry.runners.at(item.key.benchmark);
    const RunRequest req{entry.job.job_id, entry.job.model, item.key.benchmark,
                         entry.job.settings.resolved_for(item.key.benchmark), item.key.shard,
                         entry.job.data_parallel};

    std::optional<PartialScore> result;
    std::string failure;
    for (int attempt = 0;; ++attempt) {
      ++attempts_[item.key];
      ++stats_.shard_attempts;
      advance(entry, JobPhase::Fetching);
      lock.unlock();
      std::optional<Errc> code;
      try {
        const auto artifacts = executor_->fetch(req, spec);
        lock.lock();
        advance(entry, JobPhase::Running);
        lock.unlock();
        result = executor_->execute(req, spec, artifacts);
      } catch (const Error& e) {
        code = e.code();
        failure = e.what();
      } catch (const std::exception& e) {
        failure = e.what();
      }
      lock.lock();
      if (result || entry.job.state.terminal()) break;
      if (!(code && retryable(*code) && attempt < options_.max_retries)) break;
      failure.clear();
    }

    workers_[worker].busy_with.reset();

    if (entry.job.state.terminal()) continue;  // cancelled or failed meanwhile
    if (!result) {
      fail(entry, failure);
      continue;
    }

    auto& parts = entry.partials[item.key.benchmark];
    parts.push_back(std::move(*result));
    --entry.outstanding;
    if (parts.size() == static_cast<std::size_t>(entry.job.data_parallel)) {
      try {
        const auto merged = merge_partials(parts);
        ScoreRecord record{entry.job.model.str(),
                           item.key.benchmark,
                           merged.score,
                           merged.sample_count,
                           merged.subscores,
                           req.settings,
                           entry.job.job_id,
                           now_utc()};
        validate_record(record);
        entry.merged.push_back(std::move(record));
      } catch (const std::exception& e) {
        fail(entry, e.what());
        continue;
      }
    }
    if (entry.outstanding == 0) persist_and_complete(entry, lock);
  }
}

}  // namespace evalverse
