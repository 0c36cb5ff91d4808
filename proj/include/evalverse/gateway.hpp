#pragma once

// No-code interaction surface: per-user conversations that turn
// "Request!" / "Report!" messages into evaluation jobs and reports.

#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "evalverse/connector.hpp"
#include "evalverse/core.hpp"
#include "evalverse/database.hpp"
#include "evalverse/evaluator.hpp"
#include "evalverse/reporter.hpp"
#include "evalverse/serialization.hpp"

namespace evalverse {

inline constexpr std::string_view kRequestTrigger = "Request!";
inline constexpr std::string_view kReportTrigger = "Report!";

namespace session_state {
struct Idle {};
struct AwaitModel {};
struct AwaitConfirm {
  ModelRef model;
};
struct AwaitModelSelection {};
struct AwaitCriteriaSelection {
  std::vector<std::string> models;
};
struct WatchingJob {
  std::string job_id;
};
}  // namespace session_state

using SessionState =
    std::variant<session_state::Idle, session_state::AwaitModel, session_state::AwaitConfirm,
                 session_state::AwaitModelSelection, session_state::AwaitCriteriaSelection,
                 session_state::WatchingJob>;

std::string_view session_state_name(const SessionState& s) noexcept;

struct GatewaySession {
  std::string session_id;
  std::string user_id;
  SessionState state;
};

struct GatewayEvent {
  enum class Kind { Text, Select, Confirm, Deny };

  Kind kind = Kind::Text;
  std::string text;                  // Text
  std::vector<std::string> options;  // Select; never empty when valid

  static GatewayEvent text_event(std::string t) { return {Kind::Text, std::move(t), {}}; }
  static GatewayEvent select(std::vector<std::string> o) { return {Kind::Select, {}, std::move(o)}; }
  static GatewayEvent confirm() { return {Kind::Confirm, {}, {}}; }
  static GatewayEvent deny() { return {Kind::Deny, {}, {}}; }
};

struct GatewayReply {
  enum class Kind { Prompt, Choices, JobLaunched, JobFinished, ReportPayload, Error };

  Kind kind = Kind::Prompt;
  std::string text;
  std::vector<std::string> options;  // Choices
  std::string job_id;                // JobLaunched, JobFinished
  std::optional<Report> report;      // ReportPayload
};

std::string_view reply_kind_name(GatewayReply::Kind k) noexcept;

// {"kind":"text"|"select"|"confirm"|"deny","text"?,"options"?}. Throws
// MalformedInput.
GatewayEvent event_from_json(const Json& j);
Json event_to_json(const GatewayEvent& e);
// {"kind":"prompt"|"choices"|"job_launched"|"job_finished"|"report"|"error", ...}
Json reply_to_json(const GatewayReply& r);
GatewayReply reply_from_json(const Json& j);

struct GatewayOptions {
  int data_parallel = 1;
  EvalSettings settings;
};

class Gateway {
 public:
  // Receives every reply produced for a session, in emission order.
  using ReplySink = std::function<void(const std::string& session_id, const GatewayReply&)>;

  Gateway(Evaluator& evaluator, const Database& db, const RunnerRegistry& registry,
          GatewayOptions options = {});

  std::string open_session(std::string user_id = {});
  bool has_session(const std::string& session_id) const;
  // Throws UnknownSession.
  GatewaySession session(const std::string& session_id) const;

  // Advances one session. Failures come back as Error replies; the only
  // exception is UnknownSession.
  std::vector<GatewayReply> handle_event(const std::string& session_id, const GatewayEvent& event);

  // Emits one JobFinished (or Error for a failed job) per watched job that
  // has become terminal and returns those sessions to Idle.
  std::vector<std::pair<std::string, GatewayReply>> notify_completions();

  void set_sink(ReplySink sink);

  static std::string help_text();

 private:
  struct Slot {
    std::mutex mutex;
    GatewaySession session;
  };

  std::shared_ptr<Slot> slot(const std::string& session_id) const;
  std::vector<GatewayReply> transition(GatewaySession& session, const GatewayEvent& event);
  void emit(const std::string& session_id, const GatewayReply& reply);

  Evaluator& evaluator_;
  const Database& db_;
  const RunnerRegistry& registry_;
  GatewayOptions options_;

  mutable std::shared_mutex sessions_mutex_;
  std::map<std::string, std::shared_ptr<Slot>> sessions_;
  std::size_t next_session_ = 1;

  std::mutex sink_mutex_;
  ReplySink sink_;
};

}  // namespace evalverse
