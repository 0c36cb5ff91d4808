#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>

namespace evalverse {

using EnvMap = std::map<std::string, std::string>;

struct Config {
  std::optional<std::string> openai_api_key;  // OPENAI_API_KEY, judge-based runners
  std::optional<std::string> chat_bot_token;  // SLACK_BOT_TOKEN
  std::optional<std::string> chat_app_token;  // SLACK_APP_TOKEN
  std::filesystem::path storage_root = "evalverse_db";  // EVALVERSE_STORAGE_ROOT
  int worker_count = 8;                                 // EVALVERSE_WORKER_COUNT
  std::string listen_address = "127.0.0.1:8080";        // EVALVERSE_LISTEN_ADDRESS
  int data_parallel = 1;  // EVALVERSE_DATA_PARALLEL, for no-code requests

  friend bool operator==(const Config&, const Config&) = default;
};

// KEY=value lines; '#' comments and blank lines are skipped, an optional
// "export " prefix is accepted and matching quotes around the value are
// stripped. Throws MalformedEnvLine naming the 1-based line number.
EnvMap parse_env_file(std::string_view content);

// A missing file reads as empty.
EnvMap read_env_file(const std::filesystem::path& path);

EnvMap process_environment();

// File values first, then `process_env` on top. Throws MalformedEnvLine or
// InvalidArgument for unusable values.
Config load_config(const std::optional<std::filesystem::path>& env_file, const EnvMap& process_env);
Config config_from_env(const EnvMap& env);

struct ListenAddress {
  std::string host;
  unsigned short port = 0;
};

// "host:port"; throws InvalidArgument.
ListenAddress parse_listen_address(std::string_view s);

}  // namespace evalverse
