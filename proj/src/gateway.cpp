#include "evalverse/gateway.hpp"

#include <algorithm>
#include <cctype>
#include <set>

namespace evalverse {

namespace ss = session_state;

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

std::string trim(std::string_view s) {
  auto b = s.begin();
  auto e = s.end();
  while (b != e && std::isspace(static_cast<unsigned char>(*b))) ++b;
  while (e != b && std::isspace(static_cast<unsigned char>(*(e - 1)))) --e;
  return std::string(b, e);
}

GatewayReply prompt(std::string text) {
  GatewayReply r;
  r.kind = GatewayReply::Kind::Prompt;
  r.text = std::move(text);
  return r;
}

GatewayReply error(std::string text) {
  GatewayReply r;
  r.kind = GatewayReply::Kind::Error;
  r.text = std::move(text);
  return r;
}

GatewayReply choices(std::string text, std::vector<std::string> options) {
  GatewayReply r;
  r.kind = GatewayReply::Kind::Choices;
  r.text = std::move(text);
  r.options = std::move(options);
  return r;
}

GatewayReply job_reply(GatewayReply::Kind kind, std::string job_id, std::string text) {
  GatewayReply r;
  r.kind = kind;
  r.job_id = std::move(job_id);
  r.text = std::move(text);
  return r;
}

bool is_trigger(std::string_view text) { return text == kRequestTrigger || text == kReportTrigger; }

}  // namespace

std::string_view session_state_name(const SessionState& s) noexcept {
  return std::visit(overloaded{
                        [](const ss::Idle&) { return std::string_view("idle"); },
                        [](const ss::AwaitModel&) { return std::string_view("await_model"); },
                        [](const ss::AwaitConfirm&) { return std::string_view("await_confirm"); },
                        [](const ss::AwaitModelSelection&) {
                          return std::string_view("await_model_selection");
                        },
                        [](const ss::AwaitCriteriaSelection&) {
                          return std::string_view("await_criteria_selection");
                        },
                        [](const ss::WatchingJob&) { return std::string_view("watching_job"); },
                    },
                    s);
}

std::string_view reply_kind_name(GatewayReply::Kind k) noexcept {
  switch (k) {
    case GatewayReply::Kind::Prompt: return "prompt";
    case GatewayReply::Kind::Choices: return "choices";
    case GatewayReply::Kind::JobLaunched: return "job_launched";
    case GatewayReply::Kind::JobFinished: return "job_finished";
    case GatewayReply::Kind::ReportPayload: return "report";
    case GatewayReply::Kind::Error: return "error";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

GatewayEvent event_from_json(const Json& j) {
  const auto bad = [](const std::string& why) { return Error(Errc::MalformedInput, why); };
  if (!j.is_object()) throw bad("event must be a JSON object");
  if (!j.contains("kind") || !j["kind"].is_string()) throw bad("event needs a string 'kind'");
  const auto kind = j["kind"].get<std::string>();
  GatewayEvent e;
  if (kind == "text") {
    if (!j.contains("text") || !j["text"].is_string()) throw bad("text event needs 'text'");
    e.kind = GatewayEvent::Kind::Text;
    e.text = j["text"].get<std::string>();
  } else if (kind == "select") {
    if (!j.contains("options") || !j["options"].is_array()) throw bad("select event needs 'options'");
    e.kind = GatewayEvent::Kind::Select;
    for (const auto& o : j["options"]) {
      if (!o.is_string()) throw bad("options must be strings");
      e.options.push_back(o.get<std::string>());
    }
    if (e.options.empty()) throw bad("select event needs at least one option");
  } else if (kind == "confirm") {
    e.kind = GatewayEvent::Kind::Confirm;
  } else if (kind == "deny") {
    e.kind = GatewayEvent::Kind::Deny;
  } else {
    throw bad("unknown event kind '" + kind + "'");
  }
  return e;
}

Json event_to_json(const GatewayEvent& e) {
  switch (e.kind) {
    case GatewayEvent::Kind::Text: return Json{{"kind", "text"}, {"text", e.text}};
    case GatewayEvent::Kind::Select: return Json{{"kind", "select"}, {"options", e.options}};
    case GatewayEvent::Kind::Confirm: return Json{{"kind", "confirm"}};
    case GatewayEvent::Kind::Deny: return Json{{"kind", "deny"}};
  }
  return Json{};
}

Json reply_to_json(const GatewayReply& r) {
  Json j{{"kind", reply_kind_name(r.kind)}};
  switch (r.kind) {
    case GatewayReply::Kind::Prompt:
    case GatewayReply::Kind::Error:
      j["text"] = r.text;
      break;
    case GatewayReply::Kind::Choices:
      j["text"] = r.text;
      j["options"] = r.options;
      break;
    case GatewayReply::Kind::JobLaunched:
    case GatewayReply::Kind::JobFinished:
      j["job_id"] = r.job_id;
      j["text"] = r.text;
      break;
    case GatewayReply::Kind::ReportPayload:
      j["report"] = r.report ? report_to_json(*r.report) : Json(nullptr);
      break;
  }
  return j;
}

GatewayReply reply_from_json(const Json& j) {
  try {
    GatewayReply r;
    const auto kind = j.at("kind").get<std::string>();
    bool known = false;
    for (auto k : {GatewayReply::Kind::Prompt, GatewayReply::Kind::Choices,
                   GatewayReply::Kind::JobLaunched, GatewayReply::Kind::JobFinished,
                   GatewayReply::Kind::ReportPayload, GatewayReply::Kind::Error}) {
      if (reply_kind_name(k) == kind) {
        r.kind = k;
        known = true;
      }
    }
    if (!known) throw Error(Errc::MalformedInput, "unknown reply kind '" + kind + "'");
    r.text = j.value("text", std::string{});
    r.job_id = j.value("job_id", std::string{});
    if (j.contains("options")) r.options = j.at("options").get<std::vector<std::string>>();
    if (j.contains("report") && !j.at("report").is_null()) r.report = report_from_json(j.at("report"));
    return r;
  } catch (const Json::exception& e) {
    throw Error(Errc::MalformedInput, std::string("reply: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Gateway
// ---------------------------------------------------------------------------

Gateway::Gateway(Evaluator& evaluator, const Database& db, const RunnerRegistry& registry,
                 GatewayOptions options)
    : evaluator_(evaluator), db_(db), registry_(registry), options_(std::move(options)) {
  if (options_.data_parallel < 1) options_.data_parallel = 1;
}

std::string Gateway::help_text() {
  return "Type \"Request!\" to evaluate a model, or \"Report!\" to compare evaluated models.";
}

std::string Gateway::open_session(std::string user_id) {
  std::unique_lock lock(sessions_mutex_);
  std::string id = "session-" + std::to_string(next_session_++);
  auto slot = std::make_shared<Slot>();
  slot->session = GatewaySession{id, std::move(user_id), ss::Idle{}};
  sessions_.emplace(id, std::move(slot));
  return id;
}

bool Gateway::has_session(const std::string& session_id) const {
  std::shared_lock lock(sessions_mutex_);
  return sessions_.contains(session_id);
}

std::shared_ptr<Gateway::Slot> Gateway::slot(const std::string& session_id) const {
  std::shared_lock lock(sessions_mutex_);
  auto it = sessions_.find(session_id);
  if (it == sessions_.end()) throw Error(Errc::UnknownSession, session_id);
  return it->second;
}

GatewaySession Gateway::session(const std::string& session_id) const {
  auto s = slot(session_id);
  std::lock_guard lock(s->mutex);
  return s->session;
}

void Gateway::set_sink(ReplySink sink) {
  std::lock_guard lock(sink_mutex_);
  sink_ = std::move(sink);
}

void Gateway::emit(const std::string& session_id, const GatewayReply& reply) {
  ReplySink sink;
  {
    std::lock_guard lock(sink_mutex_);
    sink = sink_;
  }
  if (sink) sink(session_id, reply);
}

std::vector<GatewayReply> Gateway::handle_event(const std::string& session_id,
                                                const GatewayEvent& event) {
  auto s = slot(session_id);
  std::lock_guard lock(s->mutex);
  std::vector<GatewayReply> replies;
  try {
    replies = transition(s->session, event);
  } catch (const std::exception& e) {
    replies = {error(e.what())};
  }
  for (const auto& r : replies) emit(session_id, r);
  return replies;
}

std::vector<GatewayReply> Gateway::transition(GatewaySession& session, const GatewayEvent& event) {
  using Kind = GatewayEvent::Kind;
  const std::string text = event.kind == Kind::Text ? trim(event.text) : std::string{};
  if (event.kind == Kind::Select && event.options.empty()) {
    return {error("Select at least one option.")};
  }

  return std::visit(
      overloaded{
          [&](const ss::Idle&) -> std::vector<GatewayReply> {
            if (event.kind == Kind::Text && text == kRequestTrigger) {
              session.state = ss::AwaitModel{};
              return {prompt("Please enter the model name on the Hugging Face hub or a local "
                             "model directory path.")};
            }
            if (event.kind == Kind::Text && text == kReportTrigger) {
              auto models = db_.list_models();
              if (models.empty()) return {error("No evaluation results are stored yet.")};
              session.state = ss::AwaitModelSelection{};
              return {choices("Select the models to include in the report.", std::move(models))};
            }
            return {error(help_text())};
          },
          [&](const ss::AwaitModel&) -> std::vector<GatewayReply> {
            if (event.kind == Kind::Deny) {
              session.state = ss::Idle{};
              return {prompt("Request cancelled.")};
            }
            if (event.kind != Kind::Text) {
              return {error("Please type a model name or local path.")};
            }
            if (is_trigger(text)) {
              return {error("Please type a model name or local path, or deny to cancel.")};
            }
            try {
              auto model = parse_model_ref(text);
              std::string benchmarks;
              for (Benchmark b : registry_.registered()) {
                if (!benchmarks.empty()) benchmarks += ", ";
                benchmarks += benchmark_name(b);
              }
              if (benchmarks.empty()) benchmarks = "(no benchmarks registered)";
              session.state = ss::AwaitConfirm{model};
              return {prompt("Evaluate " + model.str() + " on " + benchmarks +
                             " with data_parallel " + std::to_string(options_.data_parallel) +
                             "? Confirm or deny.")};
            } catch (const Error& e) {
              return {error(e.what())};
            }
          },
          [&](const ss::AwaitConfirm& st) -> std::vector<GatewayReply> {
            if (event.kind == Kind::Deny) {
              session.state = ss::Idle{};
              return {prompt("Request cancelled.")};
            }
            if (event.kind != Kind::Confirm) return {error("Please confirm or deny the evaluation.")};
            const ModelRef model = st.model;
            try {
              const auto id = evaluator_.submit(model, registry_.registered(), options_.settings,
                                                options_.data_parallel);
              session.state = ss::WatchingJob{id};
              return {job_reply(GatewayReply::Kind::JobLaunched, id,
                                "Evaluation job " + id + " launched for " + model.str() + ".")};
            } catch (const std::exception& e) {
              session.state = ss::Idle{};
              return {error(std::string("Could not launch the evaluation: ") + e.what())};
            }
          },
          [&](const ss::AwaitModelSelection&) -> std::vector<GatewayReply> {
            if (event.kind == Kind::Deny) {
              session.state = ss::Idle{};
              return {prompt("Report cancelled.")};
            }
            if (event.kind != Kind::Select) return {error("Please select one or more models.")};
            const auto known = db_.list_models();
            for (const auto& m : event.options) {
              if (!std::binary_search(known.begin(), known.end(), m)) {
                return {error("Unknown model '" + m + "'.")};
              }
            }
            session.state = ss::AwaitCriteriaSelection{event.options};
            std::vector<std::string> names;
            for (Criterion c : all_criteria()) names.emplace_back(criterion_name(c));
            return {choices("Select the evaluation criteria.", std::move(names))};
          },
          [&](const ss::AwaitCriteriaSelection& st) -> std::vector<GatewayReply> {
            if (event.kind == Kind::Deny) {
              session.state = ss::Idle{};
              return {prompt("Report cancelled.")};
            }
            if (event.kind != Kind::Select) return {error("Please select one or more criteria.")};
            std::vector<Criterion> criteria;
            for (const auto& name : event.options) {
              auto c = parse_criterion(name);
              if (!c) return {error("Unknown criterion '" + name + "'.")};
              criteria.push_back(*c);
            }
            try {
              GatewayReply r;
              r.kind = GatewayReply::Kind::ReportPayload;
              r.report = build_report(st.models, criteria, db_);
              session.state = ss::Idle{};
              return {std::move(r)};
            } catch (const Error& e) {
              return {error(e.what())};
            }
          },
          [&](const ss::WatchingJob& st) -> std::vector<GatewayReply> {
            return {error("Evaluation job " + st.job_id +
                          " is still running; you will be notified when it finishes.")};
          },
      },
      session.state);
}

std::vector<std::pair<std::string, GatewayReply>> Gateway::notify_completions() {
  std::vector<std::shared_ptr<Slot>> slots;
  {
    std::shared_lock lock(sessions_mutex_);
    for (const auto& [_, s] : sessions_) slots.push_back(s);
  }
  std::vector<std::pair<std::string, GatewayReply>> out;
  for (const auto& s : slots) {
    std::lock_guard lock(s->mutex);
    const auto* watching = std::get_if<ss::WatchingJob>(&s->session.state);
    if (watching == nullptr) continue;
    std::optional<EvalJob> job;
    try {
      job = evaluator_.job_status(watching->job_id);
    } catch (const Error& e) {
      // Job unknown to this evaluator; release the session rather than spin.
      GatewayReply r = error(e.what());
      s->session.state = ss::Idle{};
      emit(s->session.session_id, r);
      out.emplace_back(s->session.session_id, std::move(r));
      continue;
    }
    if (!job->state.terminal()) continue;
    GatewayReply r =
        job->state.phase == JobPhase::Completed
            ? job_reply(GatewayReply::Kind::JobFinished, job->job_id,
                        "Evaluation job " + job->job_id + " finished.")
            : error("Evaluation job " + job->job_id + " failed: " + job->state.reason);
    s->session.state = ss::Idle{};
    emit(s->session.session_id, r);
    out.emplace_back(s->session.session_id, std::move(r));
  }
  return out;
}

}  // namespace evalverse
