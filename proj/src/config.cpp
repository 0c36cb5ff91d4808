#include "evalverse/config.hpp"

#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

#include "evalverse/error.hpp"

extern char** environ;

namespace evalverse {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

bool valid_key(std::string_view key) {
  if (key.empty() || std::isdigit(static_cast<unsigned char>(key.front()))) return false;
  for (unsigned char c : key) {
    if (std::isalnum(c) == 0 && c != '_') return false;
  }
  return true;
}

int positive_int(const EnvMap& env, const char* key, int fallback) {
  auto it = env.find(key);
  if (it == env.end() || it->second.empty()) return fallback;
  int value = 0;
  const auto& s = it->second;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size() || value < 1) {
    throw Error(Errc::InvalidArgument, std::string(key) + " must be an integer >= 1, got '" + s + "'");
  }
  return value;
}

std::optional<std::string> optional_value(const EnvMap& env, const char* key) {
  auto it = env.find(key);
  if (it == env.end() || it->second.empty()) return std::nullopt;
  return it->second;
}

}  // namespace

EnvMap parse_env_file(std::string_view content) {
  EnvMap out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= content.size()) {
    const auto end = content.find('\n', pos);
    auto line = content.substr(pos, end == std::string_view::npos ? content.npos : end - pos);
    pos = end == std::string_view::npos ? content.size() + 1 : end + 1;
    ++line_no;

    line = trim(line);
    if (line.empty() || line.front() == '#') continue;
    if (line.starts_with("export ")) line = trim(line.substr(7));
    const auto eq = line.find('=');
    const auto key = eq == std::string_view::npos ? line : trim(line.substr(0, eq));
    if (eq == std::string_view::npos || !valid_key(key)) {
      throw Error(Errc::MalformedEnvLine, "line " + std::to_string(line_no) + ": '" +
                                              std::string(line) + "'");
    }
    auto value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && (value.front() == '"' || value.front() == '\'') &&
        value.back() == value.front()) {
      value = value.substr(1, value.size() - 2);
    }
    out.insert_or_assign(std::string(key), std::string(value));
  }
  return out;
}

EnvMap read_env_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) return {};
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_env_file(ss.str());
}

EnvMap process_environment() {
  EnvMap out;
  for (char** e = environ; *e != nullptr; ++e) {
    std::string_view kv(*e);
    const auto eq = kv.find('=');
    if (eq == std::string_view::npos) continue;
    out.insert_or_assign(std::string(kv.substr(0, eq)), std::string(kv.substr(eq + 1)));
  }
  return out;
}

Config config_from_env(const EnvMap& env) {
  Config c;
  c.openai_api_key = optional_value(env, "OPENAI_API_KEY");
  c.chat_bot_token = optional_value(env, "SLACK_BOT_TOKEN");
  c.chat_app_token = optional_value(env, "SLACK_APP_TOKEN");
  if (auto root = optional_value(env, "EVALVERSE_STORAGE_ROOT")) c.storage_root = *root;
  c.worker_count = positive_int(env, "EVALVERSE_WORKER_COUNT", c.worker_count);
  c.data_parallel = positive_int(env, "EVALVERSE_DATA_PARALLEL", c.data_parallel);
  if (auto listen = optional_value(env, "EVALVERSE_LISTEN_ADDRESS")) {
    parse_listen_address(*listen);
    c.listen_address = *listen;
  }
  return c;
}

Config load_config(const std::optional<std::filesystem::path>& env_file, const EnvMap& process_env) {
  EnvMap merged = env_file ? read_env_file(*env_file) : EnvMap{};
  for (const auto& [k, v] : process_env) merged.insert_or_assign(k, v);
  return config_from_env(merged);
}

ListenAddress parse_listen_address(std::string_view s) {
  const auto colon = s.rfind(':');
  if (colon == std::string_view::npos || colon == 0) {
    throw Error(Errc::InvalidArgument, "listen address must be host:port, got '" + std::string(s) + "'");
  }
  ListenAddress out;
  out.host = std::string(s.substr(0, colon));
  const auto port = s.substr(colon + 1);
  unsigned value = 0;
  const auto [ptr, ec] = std::from_chars(port.data(), port.data() + port.size(), value);
  if (ec != std::errc() || ptr != port.data() + port.size() || value > 65535) {
    throw Error(Errc::InvalidArgument, "bad port in listen address '" + std::string(s) + "'");
  }
  out.port = static_cast<unsigned short>(value);
  return out;
}

}  // namespace evalverse
