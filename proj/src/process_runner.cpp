#include <fcntl.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <sstream>
#include <thread>

#include "evalverse/connector.hpp"

extern char** environ;

namespace evalverse {

namespace {

constexpr std::size_t kStderrTail = 2048;

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string tail(std::string s, std::size_t n) {
  if (s.size() > n) s.erase(0, s.size() - n);
  while (!s.empty() && (s.back() == '\n' || s.back() == '\r')) s.pop_back();
  return s;
}

// Unique scratch names across threads of this process.
std::string scratch_stem(const RunRequest& req) {
  static std::atomic<unsigned long> counter{0};
  std::string stem = req.job_id + "-" + std::string(benchmark_name(req.benchmark)) + "-" +
                     std::to_string(req.shard_index) + "-" + std::to_string(getpid()) + "-" +
                     std::to_string(counter.fetch_add(1));
  for (char& c : stem) {
    if (c == '/' || c == '\\') c = '_';
  }
  return stem;
}

struct ScratchFiles {
  std::filesystem::path output;
  std::filesystem::path stderr_log;
  ~ScratchFiles() {
    std::error_code ec;
    std::filesystem::remove(output, ec);
    std::filesystem::remove(stderr_log, ec);
  }
};

class SpawnAttributes {
 public:
  SpawnAttributes() {
    posix_spawn_file_actions_init(&actions_);
    posix_spawnattr_init(&attr_);
  }
  ~SpawnAttributes() {
    posix_spawn_file_actions_destroy(&actions_);
    posix_spawnattr_destroy(&attr_);
  }
  SpawnAttributes(const SpawnAttributes&) = delete;
  SpawnAttributes& operator=(const SpawnAttributes&) = delete;

  posix_spawn_file_actions_t* actions() { return &actions_; }
  posix_spawnattr_t* attr() { return &attr_; }

 private:
  posix_spawn_file_actions_t actions_;
  posix_spawnattr_t attr_;
};

}  // namespace

PartialScore parse_runner_output(std::string_view text, const RunRequest& req) {
  const auto malformed = [](const std::string& why) {
    return Error(Errc::MalformedOutput, why);
  };
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::exception& e) {
    throw malformed(std::string("result is not JSON: ") + e.what());
  }
  if (!j.is_object()) throw malformed("result must be a JSON object");
  if (!j.contains("score") || !j["score"].is_number()) throw malformed("missing numeric 'score'");
  if (!j.contains("sample_count") || !j["sample_count"].is_number_integer()) {
    throw malformed("missing integer 'sample_count'");
  }
  PartialScore out;
  out.benchmark = req.benchmark;
  out.shard_index = req.shard_index;
  out.score = j["score"].get<double>();
  out.sample_count = j["sample_count"].get<std::int64_t>();
  if (out.sample_count < 0) throw malformed("negative sample_count");
  if (out.sample_count > 0 && !score_scale(req.benchmark).contains(out.score)) {
    throw malformed("score " + std::to_string(out.score) + " outside the " +
                    std::string(benchmark_name(req.benchmark)) + " scale");
  }
  if (j.contains("subscores")) {
    try {
      out.subscores = subscores_from_json(j["subscores"]);
    } catch (const Error& e) {
      throw malformed(e.what());
    }
  }
  return out;
}

PartialScore spawn_process_runner(const RunRequest& req, const RunnerSpec& spec,
                                  const ProcessRunOptions& options) {
  if (spec.is_fixture()) {
    throw Error(Errc::SpawnFailed, "the fixture runner is not an executable");
  }
  std::error_code ec;
  auto dir = options.work_dir.empty() ? std::filesystem::temp_directory_path(ec) : options.work_dir;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(Errc::SpawnFailed, "cannot create work dir " + dir.string());

  const auto stem = scratch_stem(req);
  ScratchFiles files{dir / (stem + ".json"), dir / (stem + ".stderr")};

  std::vector<std::string> args;
  args.push_back(spec.executable);
  for (auto& token : build_invocation(req, spec, files.output)) args.push_back(std::move(token));
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  argv.push_back(nullptr);

  std::vector<std::string> env_storage;
  for (char** e = environ; *e != nullptr; ++e) {
    std::string_view kv(*e);
    const auto key = kv.substr(0, kv.find('='));
    bool overridden = false;
    for (const auto& [k, _] : options.extra_env) overridden |= (k == key);
    if (!overridden) env_storage.emplace_back(kv);
  }
  for (const auto& [k, v] : options.extra_env) env_storage.push_back(k + "=" + v);
  std::vector<char*> envp;
  for (auto& e : env_storage) envp.push_back(e.data());
  envp.push_back(nullptr);

  SpawnAttributes sa;
  posix_spawn_file_actions_addopen(sa.actions(), STDIN_FILENO, "/dev/null", O_RDONLY, 0);
  posix_spawn_file_actions_addopen(sa.actions(), STDOUT_FILENO, "/dev/null", O_WRONLY, 0);
  posix_spawn_file_actions_addopen(sa.actions(), STDERR_FILENO, files.stderr_log.c_str(),
                                   O_WRONLY | O_CREAT | O_TRUNC, 0644);
  // Own process group so a timeout can take down the runner's children too.
  posix_spawnattr_setflags(sa.attr(), POSIX_SPAWN_SETPGROUP);
  posix_spawnattr_setpgroup(sa.attr(), 0);

  pid_t pid = -1;
  const int rc = posix_spawnp(&pid, argv[0], sa.actions(), sa.attr(), argv.data(), envp.data());
  if (rc != 0) {
    throw Error(Errc::SpawnFailed, spec.executable + ": " + std::strerror(rc));
  }

  const auto deadline = std::chrono::steady_clock::now() + options.timeout;
  int status = 0;
  auto poll = std::chrono::milliseconds(1);
  for (;;) {
    const pid_t done = waitpid(pid, &status, WNOHANG);
    if (done == pid) break;
    if (done < 0 && errno != EINTR) {
      throw Error(Errc::SpawnFailed, std::string("waitpid: ") + std::strerror(errno));
    }
    if (std::chrono::steady_clock::now() >= deadline) {
      kill(-pid, SIGKILL);
      kill(pid, SIGKILL);
      while (waitpid(pid, &status, 0) < 0 && errno == EINTR) {
      }
      throw Error(Errc::Timeout, spec.executable + " exceeded " +
                                     std::to_string(options.timeout.count()) + " ms");
    }
    std::this_thread::sleep_for(poll);
    poll = std::min(poll * 2, std::chrono::milliseconds(50));
  }

  if (WIFSIGNALED(status)) {
    throw Error(Errc::NonZeroExit, "killed by signal " + std::to_string(WTERMSIG(status)) + ": " +
                                       tail(read_file(files.stderr_log), kStderrTail));
  }
  const int code = WEXITSTATUS(status);
  if (code == 127 && !std::filesystem::exists(spec.executable) &&
      spec.executable.find('/') != std::string::npos) {
    throw Error(Errc::SpawnFailed, spec.executable + ": not found");
  }
  if (code != 0) {
    throw Error(Errc::NonZeroExit, "exit code " + std::to_string(code) + ": " +
                                       tail(read_file(files.stderr_log), kStderrTail));
  }
  if (!std::filesystem::exists(files.output)) {
    throw Error(Errc::MalformedOutput, "runner wrote no result file at " + files.output.string());
  }
  return parse_runner_output(read_file(files.output), req);
}

}  // namespace evalverse
