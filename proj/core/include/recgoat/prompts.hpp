#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace recgoat {

struct PromptRecord {
    std::int32_t user_id = 0;
    std::string prompt_text;
    std::string answer_text;         // empty until filled
    bool answer_structured = true;   // false when the reply had no <answer> tags
};

// Template placeholders: {user_id} and {history}. History entries render as
// "- Item <id>: <description>" lines, order preserved.
std::string default_prompt_template();
std::string load_prompt_template(const std::string& path);

PromptRecord build_user_prompt(std::int32_t user_id,
                               const std::vector<std::pair<std::int32_t, std::string>>& history,
                               const std::string& tmpl = default_prompt_template());

struct ChatClientConfig {
    std::string endpoint;      // e.g. http://host:port/v1/chat/completions
    std::string auth_token;    // sent as "Authorization: Bearer <token>" when non-empty
    std::string model = "qwq-32b";
    int max_retries = 3;
    int backoff_initial_ms = 200;  // doubled per retry
    int timeout_sec = 60;
    int max_concurrency = 4;
};

// POSTs the prompt to a chat-completions endpoint and stores the content
// between <answer> and </answer> into answer_text. Retries transient failures
// (connection errors and 5xx) with exponential backoff. A reply without
// answer tags is kept verbatim with answer_structured=false.
PromptRecord fetch_user_preference(const PromptRecord& record, const ChatClientConfig& cfg);

// Concurrent batch variant, bounded by cfg.max_concurrency.
std::vector<PromptRecord> fetch_user_preferences(const std::vector<PromptRecord>& records,
                                                 const ChatClientConfig& cfg);

// Exposed for tests: pulls choices[0].message.content out of a chat-completions
// reply body and extracts the <answer> block.
std::string extract_chat_content(const std::string& response_body);
std::pair<std::string, bool> extract_answer_block(const std::string& content);

}  // namespace recgoat
