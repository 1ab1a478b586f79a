#include "judgeaudit/judge_client.hpp"

#include "judgeaudit/error.hpp"

#include <httplib.h>

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <regex>
#include <thread>

namespace judgeaudit::judge {

using nlohmann::json;

namespace {

const std::string kTemplate =
#include "judge_template.inc"
    ;

struct Url {
  std::string origin;  // scheme://host[:port]
  std::string path;    // without trailing slash
};

Url split_url(const std::string& base) {
  static const std::regex re(R"(^(https?://[^/]+)(/.*)?$)", std::regex::icase);
  std::smatch m;
  if (!std::regex_match(base, m, re)) throw InputError("endpoint base_url must start with http:// or https://");
  Url u{m[1].str(), m[2].str()};
  while (!u.path.empty() && u.path.back() == '/') u.path.pop_back();
  return u;
}

std::string user_message(const JudgmentTask& task) {
  return "<|User Prompt|>\n" + task.question_text + "\n\n<|The Start of Assistant A's Answer|>\n" + task.response_a +
         "\n<|The End of Assistant A's Answer|>\n\n<|The Start of Assistant B's Answer|>\n" + task.response_b +
         "\n<|The End of Assistant B's Answer|>";
}

void check_task(const JudgmentTask& task) {
  if (task.response_a.empty()) throw InputError("task '" + task.question_id + "': response_a is empty");
  if (task.response_b.empty()) throw InputError("task '" + task.question_id + "': response_b is empty");
}

void check_budget(const Prompt& p, std::size_t budget, const JudgmentTask& task) {
  const auto tokens = estimate_tokens(p.system) + estimate_tokens(p.user);
  if (tokens > budget) {
    throw InputError("task '" + task.question_id + "': prompt needs ~" + std::to_string(tokens) +
                     " tokens, over the budget of " + std::to_string(budget));
  }
}

std::string task_identity(const JudgmentTask& t) {
  return "question '" + t.question_id + "' (" + t.model_a + " vs " + t.model_b + ")";
}

// Sends one chat request and returns the assistant message content.
std::string complete(const Prompt& prompt, const EndpointConfig& endpoint, const JudgmentTask& task) {
  const char* key = std::getenv(endpoint.api_key_env.c_str());
  if (!key || !*key) throw InputError("environment variable " + endpoint.api_key_env + " is not set");
  const Url url = split_url(endpoint.base_url);
  const std::string body = request_body(prompt, endpoint).dump();
  httplib::Headers headers{{"Authorization", std::string("Bearer ") + key}};

  std::string last_error;
  auto delay = endpoint.backoff;
  for (int attempt = 0; attempt <= endpoint.max_retries; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(delay);
      delay *= 2;
    }
    httplib::Client client(url.origin);
    client.set_connection_timeout(endpoint.timeout);
    client.set_read_timeout(endpoint.timeout);
    client.set_write_timeout(endpoint.timeout);
    auto res = client.Post(url.path + "/chat/completions", headers, body, "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status >= 400 && res->status < 500) {
      throw NetworkError(task_identity(task) + ": HTTP " + std::to_string(res->status) + " " + res->body, false);
    }
    if (res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    try {
      const auto reply = json::parse(res->body);
      const auto& content = reply.at("choices").at(0).at("message").at("content");
      return content.is_string() ? content.get<std::string>() : std::string();
    } catch (const json::exception& e) {
      throw NetworkError(task_identity(task) + ": malformed completion response: " + e.what(), false);
    }
  }
  throw NetworkError(task_identity(task) + ": giving up after " + std::to_string(endpoint.max_retries + 1) +
                         " attempts (" + last_error + ")",
                     true);
}

}  // namespace

const std::string& judge_template() { return kTemplate; }

std::size_t estimate_tokens(std::string_view text) noexcept { return (text.size() + 3) / 4; }

Prompt render_prompt(const JudgmentTask& task, std::size_t token_budget) {
  check_task(task);
  Prompt p{kTemplate, user_message(task)};
  check_budget(p, token_budget, task);
  return p;
}

std::string render_template(const JudgmentTask& task, std::size_t token_budget) {
  return render_prompt(task, token_budget).text();
}

Prompt render_criterion_prompt(const JudgmentTask& task, std::string_view criterion, std::size_t token_budget) {
  check_task(task);
  const std::string name(criterion);
  Prompt p;
  p.system = kTemplate +
             "\n\nFor this request, judge ONLY the criterion " + name +
             ". Give a brief justification and end with a single verdict in the form " + name + ": ((A>B)), using one of "
             "A>>B, A>B, A=B, B>A, B>>A.";
  p.user = user_message(task);
  check_budget(p, token_budget, task);
  return p;
}

json request_body(const Prompt& prompt, const EndpointConfig& endpoint) {
  json body;
  body["model"] = endpoint.model;
  body["temperature"] = endpoint.temperature;
  std::string user = prompt.user;
  if (endpoint.reasoning_enabled) {
    body["reasoning_effort"] = endpoint.reasoning_effort;
  } else {
    user += "\n/no_think";
  }
  body["messages"] = json::array({{{"role", "system"}, {"content", prompt.system}}, {{"role", "user"}, {"content", user}}});
  return body;
}

JudgmentRecord request_judgment(const JudgmentTask& task, const EndpointConfig& endpoint) {
  const auto criteria = rubric_criteria();
  JudgmentRecord rec;
  rec.question_id = task.question_id;
  rec.model_a = task.model_a;
  rec.model_b = task.model_b;
  rec.judge = task.judge.empty() ? endpoint.model : task.judge;
  rec.setting = task.setting.empty() ? "default" : task.setting;

  const Prompt full = render_prompt(task, endpoint.token_budget);
  if (!endpoint.per_criterion) {
    rec.raw_text = complete(full, endpoint, task);
    parse_raw_verdicts(rec, criteria);
    return rec;
  }

  std::vector<Prompt> prompts;
  for (const auto& c : criteria) prompts.push_back(render_criterion_prompt(task, c, endpoint.token_budget));
  std::string raw;
  rec.deviation_flags.assign(criteria.size() + 1, false);
  for (std::size_t j = 0; j < criteria.size(); ++j) {
    const std::string reply = complete(prompts[j], endpoint, task);
    raw += "### " + criteria[j] + "\n" + reply + "\n\n";
    rec.factor_verdicts.push_back(parse_verdict(reply, VerdictMarker::FactorParens, criteria[j]));
    rec.deviation_flags[j] = !rec.factor_verdicts.back();
  }
  const std::string reply = complete(full, endpoint, task);
  raw += "### overall\n" + reply;
  rec.overall_verdict = parse_verdict(reply, VerdictMarker::OverallBrackets);
  rec.deviation_flags.back() = !rec.overall_verdict;
  rec.raw_text = raw;
  return rec;
}

RunSummary run_tasks(const std::vector<JudgmentTask>& tasks, const EndpointConfig& endpoint,
                     const std::filesystem::path& out_path) {
  RunSummary summary;
  summary.tasks = tasks.size();
  const char* key = std::getenv(endpoint.api_key_env.c_str());
  if (!key || !*key) throw InputError("environment variable " + endpoint.api_key_env + " is not set");
  // Render everything first so budget and input errors surface before any request.
  for (const auto& t : tasks) {
    const auto p = render_prompt(t, endpoint.token_budget);
    summary.prompt_tokens_estimate += estimate_tokens(p.system) + estimate_tokens(p.user);
  }

  std::ofstream out(out_path, std::ios::binary | std::ios::app);
  if (!out) throw InputError("cannot open " + out_path.string() + " for appending");
  const auto criteria = rubric_criteria();

  std::mutex mu;
  std::vector<std::optional<std::string>> done(tasks.size());
  std::vector<bool> finished(tasks.size(), false);
  std::size_t next_to_write = 0;
  std::size_t next_task = 0;
  std::exception_ptr fatal;

  auto flush_ready = [&] {
    while (next_to_write < tasks.size() && finished[next_to_write]) {
      if (done[next_to_write]) {
        out << *done[next_to_write];
        out.flush();
        ++summary.written;
      }
      done[next_to_write].reset();
      ++next_to_write;
    }
  };

  auto worker = [&] {
    for (;;) {
      std::size_t i;
      {
        std::lock_guard lock(mu);
        if (fatal || next_task >= tasks.size()) return;
        i = next_task++;
      }
      std::optional<std::string> line;
      std::string error;
      try {
        line = record_to_json(request_judgment(tasks[i], endpoint), criteria).dump() + "\n";
      } catch (const NetworkError& e) {
        error = e.what();
      } catch (...) {
        std::lock_guard lock(mu);
        if (!fatal) fatal = std::current_exception();
        return;
      }
      std::lock_guard lock(mu);
      done[i] = std::move(line);
      finished[i] = true;
      if (!error.empty()) {
        ++summary.failed;
        summary.errors.push_back(error);
      }
      flush_ready();
    }
  };

  {
    std::vector<std::jthread> pool;
    const auto n = std::max<unsigned>(1, std::min<unsigned>(endpoint.max_in_flight, static_cast<unsigned>(tasks.size())));
    for (unsigned w = 0; w < n; ++w) pool.emplace_back(worker);
  }
  if (fatal) std::rethrow_exception(fatal);
  flush_ready();
  std::sort(summary.errors.begin(), summary.errors.end());
  return summary;
}

std::vector<JudgmentTask> load_tasks(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open task file " + path.string());
  std::vector<JudgmentTask> tasks;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = json::parse(line);
      JudgmentTask t;
      t.question_id = j.at("question_id").get<std::string>();
      t.question_text = j.value("question", j.value("question_text", std::string()));
      t.response_a = j.at("response_a").get<std::string>();
      t.response_b = j.at("response_b").get<std::string>();
      t.model_a = j.at("model_a").get<std::string>();
      t.model_b = j.at("model_b").get<std::string>();
      t.judge = j.value("judge", std::string());
      t.setting = j.value("setting", std::string());
      tasks.push_back(std::move(t));
    } catch (const json::exception& e) {
      throw InputError("task file row " + std::to_string(row) + ": " + e.what());
    }
  }
  if (tasks.empty()) throw InputError("task file " + path.string() + " has no tasks");
  return tasks;
}

EndpointConfig endpoint_from_json(const json& j) {
  if (!j.is_object()) throw InputError("judge config must be a mapping");
  if (j.contains("api_key")) throw InputError("judge config: put the key in an environment variable and name it in api_key_env");
  EndpointConfig c;
  try {
    c.base_url = j.at("base_url").get<std::string>();
    c.model = j.at("model").get<std::string>();
    c.api_key_env = j.value("api_key_env", c.api_key_env);
    c.temperature = j.value("temperature", c.temperature);
    c.max_retries = j.value("max_retries", c.max_retries);
    c.timeout = std::chrono::milliseconds(static_cast<long>(j.value("timeout_seconds", 120.0) * 1000.0));
    c.backoff = std::chrono::milliseconds(j.value("backoff_ms", 500));
    c.reasoning_enabled = j.value("reasoning_enabled", c.reasoning_enabled);
    c.reasoning_effort = j.value("reasoning_effort", c.reasoning_effort);
    c.token_budget = j.value("token_budget", c.token_budget);
    c.max_in_flight = j.value("max_in_flight", c.max_in_flight);
    c.per_criterion = j.value("per_criterion", c.per_criterion);
  } catch (const json::exception& e) {
    throw InputError(std::string("judge config: ") + e.what());
  }
  split_url(c.base_url);
  if (c.max_retries < 0) throw InputError("judge config: max_retries must be non-negative");
  if (c.max_in_flight < 1) throw InputError("judge config: max_in_flight must be at least 1");
  return c;
}

}  // namespace judgeaudit::judge
