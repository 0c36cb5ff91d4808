#include "evalverse/database.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <cctype>
#include <atomic>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <sstream>

#include "evalverse/serialization.hpp"

namespace evalverse {

namespace fs = std::filesystem;

std::string url_encode(std::string_view s) {
  static constexpr char kHex[] = "0123456789ABCDEF";
  const bool dots_only = !s.empty() && s.find_first_not_of('.') == std::string_view::npos;
  std::string out;
  out.reserve(s.size());
  for (unsigned char c : s) {
    const bool unreserved = std::isalnum(c) != 0 || c == '-' || c == '_' || c == '~' ||
                            (c == '.' && !dots_only);
    if (unreserved) {
      out.push_back(static_cast<char>(c));
    } else {
      out.push_back('%');
      out.push_back(kHex[c >> 4]);
      out.push_back(kHex[c & 0xF]);
    }
  }
  return out;
}

std::string url_decode(std::string_view s) {
  const auto hex = [&](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    throw Error(Errc::MalformedInput, "bad percent-encoding in '" + std::string(s) + "'");
  };
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '%') {
      if (i + 2 >= s.size()) {
        throw Error(Errc::MalformedInput, "truncated percent-encoding");
      }
      out.push_back(static_cast<char>(hex(s[i + 1]) * 16 + hex(s[i + 2])));
      i += 2;
    } else {
      out.push_back(s[i]);
    }
  }
  return out;
}

namespace {

Error io_error(const std::string& what, const fs::path& p) {
  return Error(Errc::IOFailure, what + " " + p.string() + ": " + std::strerror(errno));
}

class FileDescriptor {
 public:
  explicit FileDescriptor(int fd) : fd_(fd) {}
  ~FileDescriptor() {
    if (fd_ >= 0) ::close(fd_);
  }
  FileDescriptor(const FileDescriptor&) = delete;
  FileDescriptor& operator=(const FileDescriptor&) = delete;
  int get() const noexcept { return fd_; }
  explicit operator bool() const noexcept { return fd_ >= 0; }

 private:
  int fd_;
};

void sync_dir(const fs::path& dir) {
  FileDescriptor fd(::open(dir.c_str(), O_RDONLY | O_DIRECTORY));
  if (fd) ::fsync(fd.get());
}

void write_all(int fd, const char* data, std::size_t size, const fs::path& p) {
  while (size > 0) {
    const ssize_t n = ::write(fd, data, size);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw io_error("write", p);
    }
    data += n;
    size -= static_cast<std::size_t>(n);
  }
}

fs::path scratch_name(const fs::path& final_path) {
  static std::atomic<unsigned long> counter{0};
  return final_path.parent_path() /
         ("." + final_path.filename().string() + ".tmp-" + std::to_string(::getpid()) + "-" +
          std::to_string(counter.fetch_add(1)));
}

// Publishes `fill`'s output at `final_path` atomically. With no_replace the
// publish fails with DuplicateRecord if the target exists.
template <typename Fill>
void publish_file(const fs::path& final_path, bool no_replace, bool sync, Fill&& fill) {
  const auto tmp = scratch_name(final_path);
  {
    FileDescriptor fd(::open(tmp.c_str(), O_WRONLY | O_CREAT | O_EXCL | O_CLOEXEC, 0644));
    if (!fd) throw io_error("create", tmp);
    try {
      fill(fd.get(), tmp);
      if (sync && ::fsync(fd.get()) != 0) throw io_error("fsync", tmp);
    } catch (...) {
      ::unlink(tmp.c_str());
      throw;
    }
  }
  if (no_replace) {
    if (::link(tmp.c_str(), final_path.c_str()) != 0) {
      const int err = errno;
      ::unlink(tmp.c_str());
      if (err == EEXIST) throw Error(Errc::DuplicateRecord, final_path.string());
      errno = err;
      throw io_error("link", final_path);
    }
    ::unlink(tmp.c_str());
  } else if (::rename(tmp.c_str(), final_path.c_str()) != 0) {
    ::unlink(tmp.c_str());
    throw io_error("rename", final_path);
  }
  if (sync) sync_dir(final_path.parent_path());
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(Errc::IOFailure, "mkdir " + dir.string() + ": " + ec.message());
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw io_error("open", p);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool hidden(const fs::directory_entry& e) {
  return e.path().filename().string().starts_with('.');
}

void validate_key(std::string_view key) {
  if (key.empty()) throw Error(Errc::InvalidKey, "artifact key is empty");
  std::size_t start = 0;
  for (;;) {
    const auto end = key.find('/', start);
    const auto seg = key.substr(start, end == std::string_view::npos ? key.npos : end - start);
    if (seg == "..") {
      throw Error(Errc::InvalidKey, "artifact key '" + std::string(key) + "' contains '..'");
    }
    if (end == std::string_view::npos) break;
    start = end + 1;
  }
  if (url_encode(key).size() > 255) throw Error(Errc::InvalidKey, "artifact key too long");
}

bool newer(const ScoreRecord& a, const ScoreRecord& b) {
  if (a.created_at != b.created_at) return a.created_at > b.created_at;
  return a.job_id > b.job_id;
}

}  // namespace

Database::Database(fs::path root, DatabaseOptions options)
    : root_(std::move(root)), options_(options) {
  ensure_dir(results_dir());
  ensure_dir(artifacts_dir());
}

void Database::put_result(const ScoreRecord& record) {
  validate_record(record);
  const auto dir = results_dir() / url_encode(record.model) / benchmark_name(record.benchmark);
  ensure_dir(dir);

  // Writers of one (model, benchmark) serialize on the directory lock file.
  const auto lock_path = dir / ".lock";
  FileDescriptor lock(::open(lock_path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644));
  if (!lock) throw io_error("open", lock_path);
  while (::flock(lock.get(), LOCK_EX) != 0) {
    if (errno != EINTR) throw io_error("flock", lock_path);
  }

  const std::string body = record_to_json(record).dump() + "\n";
  publish_file(dir / (url_encode(record.job_id) + ".json"), true, options_.sync,
               [&](int fd, const fs::path& p) { write_all(fd, body.data(), body.size(), p); });
  ::flock(lock.get(), LOCK_UN);
}

std::vector<ScoreRecord> Database::get_results(const ResultQuery& query) const {
  std::vector<fs::path> model_dirs;
  std::error_code ec;
  if (query.models.empty()) {
    for (const auto& e : fs::directory_iterator(results_dir(), ec)) {
      if (e.is_directory() && !hidden(e)) model_dirs.push_back(e.path());
    }
  } else {
    for (const auto& m : query.models) {
      auto p = results_dir() / url_encode(m);
      if (fs::is_directory(p)) model_dirs.push_back(std::move(p));
    }
  }

  std::vector<ScoreRecord> out;
  for (const auto& mdir : model_dirs) {
    for (const auto& bdir : fs::directory_iterator(mdir, ec)) {
      if (!bdir.is_directory() || hidden(bdir)) continue;
      const auto bench = parse_benchmark(bdir.path().filename().string());
      if (!bench) continue;
      if (!query.benchmarks.empty() && !query.benchmarks.contains(*bench)) continue;

      std::vector<ScoreRecord> group;
      for (const auto& f : fs::directory_iterator(bdir.path(), ec)) {
        if (!f.is_regular_file() || hidden(f) || f.path().extension() != ".json") continue;
        try {
          group.push_back(record_from_json(Json::parse(read_file(f.path()))));
        } catch (const Json::exception& e) {
          throw Error(Errc::IOFailure, "corrupt result file " + f.path().string() + ": " + e.what());
        } catch (const Error& e) {
          throw Error(Errc::IOFailure, "corrupt result file " + f.path().string() + ": " + e.what());
        }
      }
      if (group.empty()) continue;
      if (query.latest_only) {
        out.push_back(*std::min_element(group.begin(), group.end(), newer));
      } else {
        std::move(group.begin(), group.end(), std::back_inserter(out));
      }
    }
  }
  std::sort(out.begin(), out.end(), [](const ScoreRecord& a, const ScoreRecord& b) {
    if (a.model != b.model) return a.model < b.model;
    if (a.benchmark != b.benchmark) return a.benchmark < b.benchmark;
    if (a.created_at != b.created_at) return a.created_at < b.created_at;
    return a.job_id < b.job_id;
  });
  return out;
}

std::vector<std::string> Database::list_models() const {
  std::vector<std::string> out;
  std::error_code ec;
  for (const auto& mdir : fs::directory_iterator(results_dir(), ec)) {
    if (!mdir.is_directory() || hidden(mdir)) continue;
    bool has_record = false;
    for (const auto& bdir : fs::directory_iterator(mdir.path(), ec)) {
      if (!bdir.is_directory() || hidden(bdir)) continue;
      for (const auto& f : fs::directory_iterator(bdir.path(), ec)) {
        if (f.is_regular_file() && !hidden(f) && f.path().extension() == ".json") {
          has_record = true;
          break;
        }
      }
      if (has_record) break;
    }
    if (has_record) out.push_back(url_decode(mdir.path().filename().string()));
  }
  std::sort(out.begin(), out.end());
  return out;
}

void Database::put_artifact(std::string_view key, std::string_view bytes) {
  validate_key(key);
  publish_file(artifacts_dir() / url_encode(key), false, options_.sync,
               [&](int fd, const fs::path& p) { write_all(fd, bytes.data(), bytes.size(), p); });
}

void Database::put_artifact(std::string_view key, std::istream& in) {
  validate_key(key);
  publish_file(artifacts_dir() / url_encode(key), false, options_.sync,
               [&](int fd, const fs::path& p) {
                 char buf[64 * 1024];
                 while (in) {
                   in.read(buf, sizeof buf);
                   write_all(fd, buf, static_cast<std::size_t>(in.gcount()), p);
                 }
                 if (in.bad()) throw Error(Errc::IOFailure, "read error while storing artifact");
               });
}

std::optional<std::string> Database::get_artifact(std::string_view key) const {
  auto p = artifact_path(key);
  if (!p) return std::nullopt;
  return read_file(*p);
}

std::optional<fs::path> Database::artifact_path(std::string_view key) const {
  validate_key(key);
  auto p = artifacts_dir() / url_encode(key);
  if (!fs::exists(p)) return std::nullopt;
  return p;
}

}  // namespace evalverse
