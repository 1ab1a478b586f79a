#pragma once
// Pairwise judging against an OpenAI-compatible chat-completions endpoint.
// This is the only component that touches the network.

#include "judgeaudit/judgment.hpp"

#include <chrono>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace judgeaudit::judge {

struct EndpointConfig {
  std::string base_url;  // e.g. https://api.example.com/v1
  std::string model;
  std::string api_key_env = "JUDGE_API_KEY";
  double temperature = 0.0;
  int max_retries = 3;
  std::chrono::milliseconds timeout{120000};
  std::chrono::milliseconds backoff{500};  // doubled after every failed attempt
  bool reasoning_enabled = false;
  std::string reasoning_effort = "medium";
  std::size_t token_budget = 32000;  // prompt estimate, chars / 4
  unsigned max_in_flight = 4;
  bool per_criterion = false;
};

struct JudgmentTask {
  std::string question_id;
  std::string question_text;
  std::string response_a;
  std::string response_b;
  std::string model_a;
  std::string model_b;
  std::string judge;
  std::string setting;
};

struct Prompt {
  std::string system;
  std::string user;

  std::string text() const { return system + "\n\n" + user; }
};

const std::string& judge_template();

/// Single-pass prompt; InputError for an empty response or a prompt over budget.
Prompt render_prompt(const JudgmentTask& task, std::size_t token_budget = 32000);
std::string render_template(const JudgmentTask& task, std::size_t token_budget = 32000);
/// Prompt scoring one rubric criterion in isolation.
Prompt render_criterion_prompt(const JudgmentTask& task, std::string_view criterion, std::size_t token_budget = 32000);

std::size_t estimate_tokens(std::string_view text) noexcept;

/// Chat-completions body for `prompt`, including the reasoning toggle.
nlohmann::json request_body(const Prompt& prompt, const EndpointConfig& endpoint);

/// One judgment: parses the five factor verdicts and the overall verdict;
/// unparseable verdicts become deviations. Throws NetworkError after
/// max_retries transport/5xx failures or immediately on a 4xx.
JudgmentRecord request_judgment(const JudgmentTask& task, const EndpointConfig& endpoint);

struct RunSummary {
  std::size_t tasks = 0;
  std::size_t written = 0;
  std::size_t failed = 0;
  std::size_t prompt_tokens_estimate = 0;
  std::vector<std::string> errors;
};

/// Judges every task with up to max_in_flight concurrent requests and appends
/// one JSONL record per successful task to `out`, in task order.
RunSummary run_tasks(const std::vector<JudgmentTask>& tasks, const EndpointConfig& endpoint,
                     const std::filesystem::path& out);

std::vector<JudgmentTask> load_tasks(const std::filesystem::path& path);
EndpointConfig endpoint_from_json(const nlohmann::json& j);

}  // namespace judgeaudit::judge
