#pragma once

// Job intake and the scheduler driving shard execution on a pool of workers
// (the simulated compute cluster).

#include <chrono>
#include <compare>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "evalverse/connector.hpp"
#include "evalverse/core.hpp"
#include "evalverse/database.hpp"

namespace evalverse {

struct ArtifactPaths {
  std::optional<std::filesystem::path> model;       // absent for fixture runs
  std::optional<std::filesystem::path> data_cache;  // benchmark cache, if stored
};

// Local paths: must exist. Hub ids: must be cached in the artifact store under
// "models/<id>". Benchmark caches ("data/<benchmark>") are optional.
// Throws ModelNotFound.
ArtifactPaths fetch_artifacts(const ModelRef& model, Benchmark benchmark, const Database& db);

// Executes one shard on one worker. The scheduler only talks to this
// interface, so a remote executor can stand in for the local one.
class ShardExecutor {
 public:
  virtual ~ShardExecutor() = default;
  virtual ArtifactPaths fetch(const RunRequest& req, const RunnerSpec& spec) = 0;
  virtual PartialScore execute(const RunRequest& req, const RunnerSpec& spec,
                               const ArtifactPaths& artifacts) = 0;
};

class LocalShardExecutor : public ShardExecutor {
 public:
  struct Options {
    std::shared_ptr<const FixtureManifest> manifest;  // required for "fixture" runners
    ProcessRunOptions process;
  };

  LocalShardExecutor(const Database& db, Options options);

  ArtifactPaths fetch(const RunRequest& req, const RunnerSpec& spec) override;
  PartialScore execute(const RunRequest& req, const RunnerSpec& spec,
                       const ArtifactPaths& artifacts) override;

 private:
  const Database& db_;
  Options options_;
};

struct EvaluatorOptions {
  int worker_count = 1;
  // Extra attempts for SpawnFailed/Timeout; other failures are final.
  int max_retries = 1;
  // Job ids are "<prefix>-<000001>"; defaults to the start time in UTC.
  std::string job_id_prefix;
};

struct WorkKey {
  std::string job_id;
  Benchmark benchmark = Benchmark::arc;
  int shard = 0;

  friend auto operator<=>(const WorkKey&, const WorkKey&) = default;
};

struct WorkerStatus {
  std::optional<WorkKey> busy_with;  // nullopt when idle
};

struct EvaluatorStats {
  std::size_t work_items_enqueued = 0;
  std::size_t shard_attempts = 0;
  std::size_t max_busy_workers = 0;
};

class Evaluator {
 public:
  // Throws InvalidArgument when worker_count < 1.
  Evaluator(const RunnerRegistry& registry, Database& db,
            std::shared_ptr<ShardExecutor> executor, EvaluatorOptions options = {});
  ~Evaluator();

  Evaluator(const Evaluator&) = delete;
  Evaluator& operator=(const Evaluator&) = delete;

  // Starts the worker threads. Work submitted earlier stays queued until then.
  void start();
  // Lets running shards finish, then joins the workers. Queued work is kept.
  void stop();

  // Enqueues one work item per (expanded benchmark, shard). Throws
  // UnknownBenchmark, InvalidSettings, InvalidArgument.
  std::string submit(const ModelRef& model, const BenchmarkSet& benchmarks,
                     const EvalSettings& settings, int data_parallel);

  // Throws UnknownJob.
  EvalJob job_status(const std::string& job_id) const;

  // Drops queued shards and discards results of running ones; the job ends
  // Failed("cancelled"). No-op for terminal jobs. Throws UnknownJob.
  void cancel(const std::string& job_id);

  // Blocks until the job is terminal or the timeout elapses; returns the
  // latest snapshot either way. Throws UnknownJob.
  EvalJob wait(const std::string& job_id,
               std::optional<std::chrono::milliseconds> timeout = std::nullopt) const;

  // True once every submitted job is terminal.
  bool wait_all(std::chrono::milliseconds timeout) const;

  std::size_t work_items(const std::string& job_id) const;
  std::size_t queued() const;
  std::vector<WorkerStatus> workers() const;
  std::vector<std::string> job_ids() const;
  // Number of starts per work item, retries included.
  std::map<WorkKey, int> attempt_counts() const;
  EvaluatorStats stats() const;

 private:
  struct JobEntry;
  struct WorkItem {
    WorkKey key;
    JobEntry* job;
  };

  void worker_loop(std::size_t worker);
  void advance(JobEntry& job, JobPhase target);
  void fail(JobEntry& job, std::string reason);
  void persist_and_complete(JobEntry& job, std::unique_lock<std::mutex>& lock);
  JobEntry& find(const std::string& job_id) const;

  const RunnerRegistry& registry_;
  Database& db_;
  std::shared_ptr<ShardExecutor> executor_;
  EvaluatorOptions options_;

  mutable std::mutex mutex_;
  std::condition_variable work_cv_;
  mutable std::condition_variable done_cv_;
  bool stopping_ = false;
  std::deque<WorkItem> queue_;
  std::map<std::string, std::unique_ptr<JobEntry>> jobs_;
  std::vector<WorkerStatus> workers_;
  std::map<WorkKey, int> attempts_;
  EvaluatorStats stats_;
  std::size_t next_job_ = 1;
  std::vector<std::thread> threads_;
};

}  // namespace evalverse
