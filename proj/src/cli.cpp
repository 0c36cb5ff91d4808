#include "evalverse/cli.hpp"

#include <csignal>
#include <iomanip>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>

#include <pthread.h>

#include "CLI11.hpp"
#include "evalverse/config.hpp"
#include "evalverse/connector.hpp"
#include "evalverse/database.hpp"
#include "evalverse/error.hpp"
#include "evalverse/evaluator.hpp"
#include "evalverse/gateway.hpp"
#include "evalverse/reporter.hpp"
#include "evalverse/server.hpp"

namespace evalverse {

namespace {

struct CommonOptions {
  std::string storage;
  std::string env_file;
  std::string fixture;
  std::string runners;
  int workers = 0;  // 0: from config
  int timeout_s = 3600;
};

void add_common(CLI::App& cmd, CommonOptions& o, bool runners) {
  cmd.add_option("--storage", o.storage, "Storage root (default from EVALVERSE_STORAGE_ROOT)");
  cmd.add_option("--env-file", o.env_file, "KEY=value file with secrets and settings");
  if (!runners) return;
  cmd.add_option("--fixture", o.fixture, "Fixture manifest; registers the fixture runner for every benchmark");
  cmd.add_option("--runners", o.runners, "Runner config file");
  cmd.add_option("--workers", o.workers, "Worker count")->check(CLI::PositiveNumber);
  cmd.add_option("--timeout", o.timeout_s, "Per-shard runner timeout in seconds")
      ->check(CLI::PositiveNumber);
}

Config load(const CommonOptions& o) {
  auto cfg = load_config(o.env_file.empty() ? std::nullopt : std::optional<std::filesystem::path>(o.env_file),
                         process_environment());
  if (!o.storage.empty()) cfg.storage_root = o.storage;
  if (o.workers > 0) cfg.worker_count = o.workers;
  return cfg;
}

struct Runtime {
  RunnerRegistry registry;
  std::unique_ptr<Database> db;
  std::shared_ptr<LocalShardExecutor> executor;
  std::unique_ptr<Evaluator> evaluator;
};

// Registers runner specs from the config file first; the fixture runner
// covers every benchmark left over.
std::unique_ptr<Runtime> make_runtime(const CommonOptions& o, const Config& cfg) {
  if (o.fixture.empty() && o.runners.empty()) {
    throw CLI::ValidationError("runners", "pass --fixture and/or --runners");
  }
  auto rt = std::make_unique<Runtime>();
  std::shared_ptr<const FixtureManifest> manifest;
  if (!o.fixture.empty()) {
    manifest = std::make_shared<FixtureManifest>(FixtureManifest::load(o.fixture));
    for (const auto b : all_benchmarks()) {
      if (!is_composite(b)) rt->registry.register_runner(fixture_runner_spec(b));
    }
  }
  if (!o.runners.empty()) {
    for (auto& spec : load_runner_specs(o.runners)) rt->registry.register_runner(std::move(spec));
  }
  rt->db = std::make_unique<Database>(cfg.storage_root);

  LocalShardExecutor::Options exec;
  exec.manifest = manifest;
  exec.process.timeout = std::chrono::seconds(o.timeout_s);
  if (cfg.openai_api_key) exec.process.extra_env.emplace_back("OPENAI_API_KEY", *cfg.openai_api_key);
  rt->executor = std::make_shared<LocalShardExecutor>(*rt->db, std::move(exec));

  EvaluatorOptions eo;
  eo.worker_count = cfg.worker_count;
  rt->evaluator = std::make_unique<Evaluator>(rt->registry, *rt->db, rt->executor, eo);
  return rt;
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

int eval_command(const CommonOptions& o, const std::string& ckpt, const BenchmarkSet& benchmarks,
                 int data_parallel, const EvalSettings& settings, std::ostream& out, std::ostream& err) {
  const auto cfg = load(o);
  const auto model = ModelRef::parse(ckpt);
  if (benchmarks.empty()) throw CLI::ValidationError("benchmarks", "select at least one benchmark flag");
  auto rt = make_runtime(o, cfg);

  const auto job_id = rt->evaluator->submit(model, benchmarks, settings, data_parallel);
  err << "job " << job_id << ": " << rt->evaluator->work_items(job_id) << " work items\n";
  rt->evaluator->start();
  const auto job = rt->evaluator->wait(job_id);
  rt->evaluator->stop();

  if (job.state.phase != JobPhase::Completed) {
    err << "job " << job_id << " " << job_phase_name(job.state.phase) << ": " << job.state.reason << "\n";
    return 1;
  }

  ResultQuery q;
  q.models = {model.str()};
  q.latest_only = false;
  std::vector<ScoreRecord> records;
  for (auto& r : rt->db->get_results(q)) {
    if (r.job_id == job_id) records.push_back(std::move(r));
  }
  out << "job " << job_id << " completed, " << records.size() << " records\n";
  out << std::left << std::setw(12) << "Benchmark" << std::right << std::setw(10) << "Score"
      << std::setw(10) << "Samples" << "\n";
  for (const auto& r : records) {
    out << std::left << std::setw(12) << benchmark_name(r.benchmark) << std::right << std::setw(10)
        << format_score(r.score, r.benchmark == Benchmark::ifeval ? 4 : 2) << std::setw(10)
        << r.sample_count << "\n";
  }
  return 0;
}

int report_command(const CommonOptions& o, const std::string& models_csv,
                   const std::string& criteria_csv, bool json, std::ostream& out) {
  const auto cfg = load(o);
  std::vector<Criterion> criteria;
  if (criteria_csv.empty()) {
    criteria.assign(all_criteria().begin(), all_criteria().end());
  } else {
    for (const auto& name : split_csv(criteria_csv)) {
      const auto c = parse_criterion(name);
      if (!c) throw Error(Errc::UnknownCriterion, name);
      criteria.push_back(*c);
    }
  }
  const Database db(cfg.storage_root);
  auto models = split_csv(models_csv);
  if (models.empty()) models = db.list_models();
  if (models.empty()) throw Error(Errc::NoData, "the store has no results");
  const auto report = build_report(models, criteria, db);
  if (json) {
    out << report_to_json(report).dump(2) << "\n";
  } else {
    out << render_table(report);
  }
  return 0;
}

int import_command(const CommonOptions& o, std::ostream& out) {
  const auto cfg = load(o);
  const auto manifest = FixtureManifest::load(o.fixture);
  Database db(cfg.storage_root);
  const auto created = now_utc();
  const auto job_id = "import-" + format_rfc3339(created);
  std::size_t written = 0;
  for (const auto& [key, entry] : manifest.entries()) {
    ScoreRecord r{key.first,
                  key.second,
                  entry.score,
                  entry.sample_count,
                  entry.subscores,
                  EvalSettings{}.resolved_for(key.second),
                  job_id,
                  created};
    db.put_result(r);
    ++written;
  }
  out << "imported " << written << " records as " << job_id << "\n";
  return 0;
}

int serve_command(const CommonOptions& o, const std::string& listen, std::ostream& out) {
  auto cfg = load(o);
  if (!listen.empty()) cfg.listen_address = listen;
  const auto addr = parse_listen_address(cfg.listen_address);
  auto rt = make_runtime(o, cfg);

  GatewayOptions go;
  go.data_parallel = cfg.data_parallel;
  Gateway gateway(*rt->evaluator, *rt->db, rt->registry, go);
  ServerOptions so;
  so.host = addr.host;
  so.port = addr.port;
  Server server(gateway, *rt->evaluator, *rt->db, so);

  // Block the signals before any thread starts so only sigwait sees them.
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);

  try {
    server.start();
  } catch (...) {
    pthread_sigmask(SIG_UNBLOCK, &set, nullptr);
    throw;
  }
  rt->evaluator->start();
  out << "listening on " << addr.host << ":" << server.port() << std::endl;
  int sig = 0;
  sigwait(&set, &sig);
  out << "shutting down" << std::endl;
  server.stop();
  rt->evaluator->stop();
  pthread_sigmask(SIG_UNBLOCK, &set, nullptr);
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Evaluation orchestration for language models", "evalverse"};
  app.require_subcommand(1);

  CommonOptions common;

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on selected benchmarks");
  std::string ckpt;
  int data_parallel = 1;
  std::string engine = "hf";
  std::string dtype = "float16";
  std::optional<int> num_fewshot;
  std::map<Benchmark, bool> flags;
  eval->add_option("--ckpt_path,--ckpt-path", ckpt, "Hub id or local path")->required();
  for (const auto b : all_benchmarks()) {
    const auto name = std::string(benchmark_name(b));
    eval->add_flag("--" + name, flags[b], "Run " + name);
  }
  eval->add_option("--data_parallel,--data-parallel", data_parallel, "Shards per benchmark")
      ->check(CLI::PositiveNumber);
  eval->add_option("--engine", engine, "hf or vllm")->check(CLI::IsMember({"hf", "vllm"}));
  eval->add_option("--dtype", dtype, "float16 or int8")->check(CLI::IsMember({"float16", "int8"}));
  eval->add_option("--num_fewshot,--num-fewshot", num_fewshot, "Override the per-benchmark few-shot count");
  add_common(*eval, common, true);

  auto* report = app.add_subcommand("report", "Compare stored results");
  std::string models_csv;
  std::string criteria_csv;
  bool json = false;
  report->add_option("--models", models_csv, "Comma-separated models (default: all)");
  report->add_option("--criteria", criteria_csv, "Comma-separated criteria (default: all)");
  report->add_flag("--json", json, "Print the report payload as JSON");
  add_common(*report, common, false);

  auto* import = app.add_subcommand("import", "Store fixture scores as results");
  import->add_option("--fixture", common.fixture, "Fixture manifest")->required();
  add_common(*import, common, false);

  auto* serve = app.add_subcommand("serve", "Run the HTTP and WebSocket server");
  std::string listen;
  serve->add_option("--listen", listen, "host:port (default from EVALVERSE_LISTEN_ADDRESS)");
  add_common(*serve, common, true);

  std::vector<std::string> argv = args;
  if (!argv.empty() && argv.front().starts_with("-") && argv.front() != "-h" && argv.front() != "--help") {
    argv.insert(argv.begin(), "eval");
  }
  std::reverse(argv.begin(), argv.end());

  try {
    app.parse(argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : 2;
  }

  try {
    if (eval->parsed()) {
      BenchmarkSet benchmarks;
      for (const auto& [b, on] : flags) {
        if (on) benchmarks.insert(b);
      }
      EvalSettings settings;
      settings.engine = *parse_engine(engine);
      settings.dtype = *parse_dtype(dtype);
      settings.num_fewshot = num_fewshot;
      return eval_command(common, ckpt, benchmarks, data_parallel, settings, out, err);
    }
    if (report->parsed()) return report_command(common, models_csv, criteria_csv, json, out);
    if (import->parsed()) return import_command(common, out);
    if (serve->parsed()) return serve_command(common, listen, out);
  } catch (const CLI::ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    switch (e.code()) {
      case Errc::EmptyInput:
      case Errc::MalformedRef:
      case Errc::UnknownCriterion:
      case Errc::InvalidFewshot:
      case Errc::InvalidSettings:
      case Errc::MalformedEnvLine:
        return 2;
      default:
        return 1;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace evalverse
