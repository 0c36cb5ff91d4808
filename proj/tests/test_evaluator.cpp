#include <gtest/gtest.h>

#include <atomic>
#include <condition_variable>
#include <functional>
#include <mutex>
#include <set>
#include <thread>

#include "evalverse/connector.hpp"
#include "evalverse/database.hpp"
#include "evalverse/error.hpp"
#include "evalverse/evaluator.hpp"
#include "test_support.hpp"

using namespace evalverse;
using namespace std::chrono_literals;
using evalverse::testing::TempDir;

namespace {

Errc code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return Errc::InvalidArgument;
}

// Runs a caller-supplied function per shard; fetch is a no-op.
class ScriptedExecutor : public ShardExecutor {
 public:
  explicit ScriptedExecutor(std::function<PartialScore(const RunRequest&)> run) : run_(std::move(run)) {}
  ArtifactPaths fetch(const RunRequest&, const RunnerSpec&) override { return {}; }
  PartialScore execute(const RunRequest& req, const RunnerSpec&, const ArtifactPaths&) override {
    return run_(req);
  }

 private:
  std::function<PartialScore(const RunRequest&)> run_;
};

PartialScore constant(const RunRequest& req, double score = 50.0) {
  return PartialScore{req.benchmark, req.shard_index, score,
                      shard_sample_count(800, req.shard_index, req.shard_count), {}};
}

class Gate {
 public:
  void open() {
    std::lock_guard lock(m_);
    open_ = true;
    cv_.notify_all();
  }
  void wait() {
    std::unique_lock lock(m_);
    cv_.wait(lock, [&] { return open_; });
  }

 private:
  std::mutex m_;
  std::condition_variable cv_;
  bool open_ = false;
};

struct Rig {
  TempDir dir;
  RunnerRegistry registry;
  Database db{dir.path(), {false}};

  Rig() {
    for (const auto b : all_benchmarks()) {
      if (!is_composite(b) && b != Benchmark::eq_bench) registry.register_runner(fixture_runner_spec(b));
    }
  }

  std::unique_ptr<Evaluator> make(std::shared_ptr<ShardExecutor> exec, int workers, int retries = 1) {
    EvaluatorOptions o;
    o.worker_count = workers;
    o.max_retries = retries;
    o.job_id_prefix = "test";
    return std::make_unique<Evaluator>(registry, db, std::move(exec), o);
  }
};

const ModelRef kSolar = ModelRef::parse("upstage/SOLAR-10.7B-Instruct-v1.0");

}  // namespace

TEST(Submit, PaperCommandCreates56Items) {
  Rig rig;
  auto ev = rig.make(std::make_shared<ScriptedExecutor>([](const RunRequest& r) { return constant(r); }), 1);
  const auto id = ev->submit(kSolar, {Benchmark::h6_en, Benchmark::mt_bench}, {}, 8);
  EXPECT_EQ(ev->work_items(id), 56u);
  EXPECT_EQ(ev->queued(), 56u);
  EXPECT_EQ(ev->job_status(id).benchmarks.size(), 7u);
  EXPECT_EQ(ev->job_status(id).state.phase, JobPhase::Pending);
}

TEST(Submit, SingleItem) {
  Rig rig;
  auto ev = rig.make(std::make_shared<ScriptedExecutor>([](const RunRequest& r) { return constant(r, 0.5); }), 1);
  const auto id = ev->submit(kSolar, {Benchmark::ifeval}, {}, 1);
  EXPECT_EQ(ev->work_items(id), 1u);
}

TEST(Submit, Rejections) {
  Rig rig;
  auto ev = rig.make(std::make_shared<ScriptedExecutor>([](const RunRequest& r) { return constant(r); }), 1);
  EXPECT_EQ(code_of([&] { ev->submit(kSolar, {Benchmark::eq_bench}, {}, 1); }), Errc::UnknownBenchmark);
  EvalSettings bad;
  bad.num_fewshot = 99;
  EXPECT_EQ(code_of([&] { ev->submit(kSolar, {Benchmark::mmlu}, bad, 1); }), Errc::InvalidSettings);
  EXPECT_EQ(code_of([&] { ev->submit(kSolar, {}, {}, 1); }), Errc::InvalidArgument);
  EXPECT_EQ(code_of([&] { ev->submit(kSolar, {Benchmark::mmlu}, {}, 0); }), Errc::InvalidArgument);
  EXPECT_EQ(ev->queued(), 0u);
  EXPECT_TRUE(ev->job_ids().empty());
}

TEST(Submit, ZeroWorkersRejected) {
  Rig rig;
  EXPECT_EQ(code_of([&] { rig.make(std::make_shared<ScriptedExecutor>([](const RunRequest& r) { return constant(r); }), 0); }),
            Errc::InvalidArgument);
}

TEST(Submit, UniqueIds) {
  Rig rig;
  auto ev = rig.make(std::make_shared<ScriptedExecutor>([](const RunRequest& r) { return constant(r); }), 1);
  std::set<std::string> ids;
  for (int i = 0; i < 50; ++i) ids.insert(ev->submit(kSolar, {Benchmark::arc}, {}, 1));
  EXPECT_EQ(ids.size(), 50u);
}

TEST(Status, UnknownJob) {
  Rig rig;
  auto ev = rig.make(std::make_shared<ScriptedExecutor>([](const RunRequest& r) { return constant(r); }), 1);
  EXPECT_EQ(code_of([&] { ev->job_status("nope"); }), Errc::UnknownJob);
  EXPECT_EQ(code_of([&] { ev->cancel("nope"); }), Errc::UnknownJob);
}

TEST(Scheduler, EightShardsRunConcurrently) {
  Rig rig;
  std::atomic<int> arrived{0};
  Gate all_in;
  auto exec = std::make_shared<ScriptedExecutor>([&](const RunRequest& r) {
    if (++arrived == 8) all_in.open();
    all_in.wait();
    return constant(r, 65.28);
  });
  auto ev = rig.make(exec, 8);
  const auto id = ev->submit(kSolar, {Benchmark::mmlu}, {}, 8);
  ev->start();
  const auto job = ev->wait(id, 10s);
  EXPECT_EQ(job.state.phase, JobPhase::Completed);
  EXPECT_EQ(ev->stats().max_busy_workers, 8u);
  const auto records = rig.db.get_results({{kSolar.str()}, {}, false});
  ASSERT_EQ(records.size(), 1u);
  EXPECT_EQ(records[0].sample_count, 800);
  EXPECT_NEAR(records[0].score, 65.28, 1e-12);
  EXPECT_EQ(records[0].job_id, id);
  EXPECT_EQ(records[0].settings.num_fewshot, 5);
  ASSERT_TRUE(job.finished_at.has_value());
}

TEST(Scheduler, FailingShardFailsJob) {
  Rig rig;
  auto exec = std::make_shared<ScriptedExecutor>([](const RunRequest& r) {
    if (r.shard_index == 5) throw Error(Errc::FixtureMiss, r.model.str() + " / mmlu");
    return constant(r);
  });
  auto ev = rig.make(exec, 4);
  const auto id = ev->submit(kSolar, {Benchmark::mmlu}, {}, 8);
  ev->start();
  const auto job = ev->wait(id, 10s);
  EXPECT_EQ(job.state.phase, JobPhase::Failed);
  EXPECT_EQ(job.state.reason.rfind("FixtureMiss", 0), 0u) << job.state.reason;
  EXPECT_TRUE(rig.db.get_results({{}, {}, false}).empty());
  EXPECT_EQ(ev->attempt_counts().at({id, Benchmark::mmlu, 5}), 1);
}

TEST(Scheduler, RetriesTransientOnce) {
  Rig rig;
  std::atomic<int> calls{0};
  auto exec = std::make_shared<ScriptedExecutor>([&](const RunRequest& r) {
    if (calls++ == 0) throw Error(Errc::SpawnFailed, "transient");
    return constant(r);
  });
  auto ev = rig.make(exec, 1);
  const auto id = ev->submit(kSolar, {Benchmark::arc}, {}, 1);
  ev->start();
  EXPECT_EQ(ev->wait(id, 10s).state.phase, JobPhase::Completed);
  EXPECT_EQ(ev->attempt_counts().at({id, Benchmark::arc, 0}), 2);
}

TEST(Scheduler, RetryBoundRespected) {
  Rig rig;
  auto exec = std::make_shared<ScriptedExecutor>([](const RunRequest&) -> PartialScore {
    throw Error(Errc::Timeout, "slow");
  });
  auto ev = rig.make(exec, 1, 1);
  const auto id = ev->submit(kSolar, {Benchmark::arc}, {}, 1);
  ev->start();
  const auto job = ev->wait(id, 10s);
  EXPECT_EQ(job.state.phase, JobPhase::Failed);
  EXPECT_EQ(ev->attempt_counts().at({id, Benchmark::arc, 0}), 2);
}

TEST(Scheduler, MalformedOutputNotRetried) {
  Rig rig;
  auto exec = std::make_shared<ScriptedExecutor>([](const RunRequest&) -> PartialScore {
    throw Error(Errc::MalformedOutput, "bad");
  });
  auto ev = rig.make(exec, 1, 3);
  const auto id = ev->submit(kSolar, {Benchmark::arc}, {}, 1);
  ev->start();
  EXPECT_EQ(ev->wait(id, 10s).state.reason.rfind("MalformedOutput", 0), 0u);
  EXPECT_EQ(ev->attempt_counts().at({id, Benchmark::arc, 0}), 1);
}

TEST(Scheduler, FailureDiscardsQueuedShards) {
  Rig rig;
  std::atomic<int> runs{0};
  auto exec = std::make_shared<ScriptedExecutor>([&](const RunRequest& r) -> PartialScore {
    ++runs;
    if (r.shard_index == 0) throw Error(Errc::NonZeroExit, "1");
    return constant(r);
  });
  auto ev = rig.make(exec, 1);
  const auto id = ev->submit(kSolar, {Benchmark::arc}, {}, 16);
  ev->start();
  EXPECT_EQ(ev->wait(id, 10s).state.phase, JobPhase::Failed);
  ev->stop();
  EXPECT_EQ(runs.load(), 1);
  EXPECT_EQ(ev->queued(), 0u);
}

TEST(Cancel, PendingJob) {
  Rig rig;
  auto ev = rig.make(std::make_shared<ScriptedExecutor>([](const RunRequest& r) { return constant(r); }), 2);
  const auto id = ev->submit(kSolar, {Benchmark::h6_en}, {}, 2);
  ev->cancel(id);
  const auto job = ev->job_status(id);
  EXPECT_EQ(job.state, JobState::failed("cancelled"));
  EXPECT_TRUE(job.finished_at.has_value());
  EXPECT_EQ(ev->queued(), 0u);
  ev->start();
  EXPECT_TRUE(ev->wait_all(5s));
  EXPECT_TRUE(rig.db.get_results({{}, {}, false}).empty());
}

TEST(Cancel, CompletedIsNoOp) {
  Rig rig;
  auto ev = rig.make(std::make_shared<ScriptedExecutor>([](const RunRequest& r) { return constant(r); }), 2);
  const auto id = ev->submit(kSolar, {Benchmark::arc}, {}, 1);
  ev->start();
  const auto before = ev->wait(id, 10s);
  ASSERT_EQ(before.state.phase, JobPhase::Completed);
  ev->cancel(id);
  EXPECT_EQ(ev->job_status(id).state, before.state);
  EXPECT_EQ(ev->job_status(id).finished_at, before.finished_at);
}

TEST(Cancel, MidRunPersistsNothing) {
  Rig rig;
  Gate started;
  Gate release;
  auto exec = std::make_shared<ScriptedExecutor>([&](const RunRequest& r) {
    started.open();
    release.wait();
    return constant(r);
  });
  auto ev = rig.make(exec, 4);
  const auto id = ev->submit(kSolar, {Benchmark::arc, Benchmark::mmlu}, {}, 2);
  ev->start();
  started.wait();
  ev->cancel(id);
  release.open();
  EXPECT_TRUE(ev->wait_all(5s));
  ev->stop();
  EXPECT_EQ(ev->job_status(id).state.reason, "cancelled");
  EXPECT_TRUE(rig.db.get_results({{}, {}, false}).empty());
}

TEST(Scheduler, StatusIsMonotoneAndWorkersConserved) {
  Rig rig;
  auto exec = std::make_shared<ScriptedExecutor>([](const RunRequest& r) {
    std::this_thread::sleep_for(1ms);
    return constant(r, score_scale(r.benchmark).max / 2);
  });
  auto ev = rig.make(exec, 3);
  const auto id = ev->submit(kSolar, {Benchmark::h6_en, Benchmark::mt_bench}, {}, 4);
  ev->start();
  int last = 0;
  for (;;) {
    const auto workers = ev->workers();
    EXPECT_EQ(workers.size(), 3u);
    std::set<WorkKey> busy;
    for (const auto& w : workers) {
      if (w.busy_with) {
        EXPECT_TRUE(busy.insert(*w.busy_with).second);
      }
    }
    const auto job = ev->job_status(id);
    EXPECT_GE(static_cast<int>(job.state.phase), last);
    last = static_cast<int>(job.state.phase);
    if (job.state.terminal()) break;
    std::this_thread::sleep_for(200us);
  }
  EXPECT_EQ(last, static_cast<int>(JobPhase::Completed));
  EXPECT_EQ(rig.db.get_results({{}, {}, false}).size(), 7u);
}

TEST(Scheduler, FifoAcrossJobs) {
  Rig rig;
  std::mutex m;
  std::vector<std::string> order;
  auto exec = std::make_shared<ScriptedExecutor>([&](const RunRequest& r) {
    std::lock_guard lock(m);
    order.push_back(r.job_id);
    return constant(r);
  });
  auto ev = rig.make(exec, 1);
  const auto a = ev->submit(kSolar, {Benchmark::arc}, {}, 3);
  const auto b = ev->submit(kSolar, {Benchmark::arc}, {}, 3);
  ev->start();
  EXPECT_TRUE(ev->wait_all(5s));
  EXPECT_EQ(order, (std::vector<std::string>{a, a, a, b, b, b}));
}

TEST(FetchArtifacts, Rules) {
  TempDir dir;
  Database db(dir.path());
  const auto local = fetch_artifacts(ModelRef::parse(dir.path().string()), Benchmark::mmlu, db);
  EXPECT_EQ(local.model, dir.path());
  EXPECT_FALSE(local.data_cache.has_value());

  EXPECT_EQ(code_of([&] { fetch_artifacts(ModelRef::parse("/nonexistent/model"), Benchmark::mmlu, db); }),
            Errc::ModelNotFound);
  EXPECT_EQ(code_of([&] { fetch_artifacts(kSolar, Benchmark::mmlu, db); }), Errc::ModelNotFound);

  db.put_artifact("models/" + kSolar.str(), "weights");
  db.put_artifact("data/mmlu", "cache");
  const auto hub = fetch_artifacts(kSolar, Benchmark::mmlu, db);
  ASSERT_TRUE(hub.model.has_value());
  EXPECT_EQ(evalverse::testing::read_file(*hub.model), "weights");
  ASSERT_TRUE(hub.data_cache.has_value());
  EXPECT_FALSE(fetch_artifacts(kSolar, Benchmark::arc, db).data_cache.has_value());
}

TEST(LocalExecutor, FixtureRunEndToEnd) {
  Rig rig;
  auto manifest = std::make_shared<FixtureManifest>(FixtureManifest::load(evalverse::testing::data_dir() / "t6.json"));
  auto exec = std::make_shared<LocalShardExecutor>(rig.db, LocalShardExecutor::Options{manifest, {}});
  auto ev = rig.make(exec, 8);
  const auto id = ev->submit(kSolar, {Benchmark::h6_en, Benchmark::mt_bench}, {}, 8);
  ev->start();
  EXPECT_EQ(ev->wait(id, 10s).state.phase, JobPhase::Completed);
  const auto records = rig.db.get_results({{kSolar.str()}, {}, true});
  ASSERT_EQ(records.size(), 7u);
  for (const auto& r : records) {
    EXPECT_EQ(r.score, manifest->find(kSolar.str(), r.benchmark)->score);
    EXPECT_EQ(r.sample_count, manifest->find(kSolar.str(), r.benchmark)->sample_count);
  }
}

TEST(LocalExecutor, ProcessRunnerNeedsModel) {
  Rig rig;
  rig.registry.register_runner({Benchmark::arc, evalverse::testing::fake_runner_path().string(),
                                {"env", "--model", "{model}", "--out", "{output_path}"}});
  LocalShardExecutor::Options opts;
  opts.process.extra_env = {{"FAKE_SCORE", "61.77"}};
  auto exec = std::make_shared<LocalShardExecutor>(rig.db, opts);
  auto ev = rig.make(exec, 2);
  const auto missing = ev->submit(kSolar, {Benchmark::arc}, {}, 1);
  ev->start();
  const auto failed = ev->wait(missing, 10s);
  EXPECT_EQ(failed.state.phase, JobPhase::Failed);
  EXPECT_EQ(failed.state.reason.rfind("ModelNotFound", 0), 0u);

  rig.db.put_artifact("models/" + kSolar.str(), "weights");
  const auto ok = ev->submit(kSolar, {Benchmark::arc}, {}, 2);
  EXPECT_EQ(ev->wait(ok, 10s).state.phase, JobPhase::Completed);
  const auto records = rig.db.get_results({{kSolar.str()}, {Benchmark::arc}, true});
  ASSERT_EQ(records.size(), 1u);
  EXPECT_EQ(records[0].score, 61.77);
  EXPECT_EQ(records[0].subscores.at("has_model_dir"), 1.0);
}
